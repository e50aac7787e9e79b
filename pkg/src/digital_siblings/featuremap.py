"""Multi-individual feature maps and the migration / union / merge algebra over them."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

from .dynamics import DrivingModelConfig, EpisodeLimits, Outcome, SimulatorConfig, run_episode
from .errors import MismatchedBinning, MismatchedCells, MismatchedTestSets
from .road import RoadSpec, features_of, interpolate_catmull_rom
from .seeding import episode_seed

log = logging.getLogger(__name__)

Cell = tuple  # (turn_count, curvature_bin)


class MetricKind(str, enum.Enum):
    FAILURE_PROBABILITY = "failure_probability"
    LACK_OF_QUALITY = "lack_of_quality"


def curvature_bin(curvature: float, width: float) -> int:
    return int(math.floor(curvature / width + 1e-9))


def cell_key(cell: Cell) -> str:
    return f"{cell[0]}:{cell[1]}"


def parse_cell_key(key: str) -> Cell:
    a, b = key.split(":")
    return int(a), int(b)


@dataclass(frozen=True)
class TestRecord:
    """One execution of one road on one simulator."""

    __test__ = False  # not a pytest class

    test_id: str
    spec: RoadSpec
    simulator: str
    turn_count: int
    curvature: float
    outcome: Outcome
    fitness: float
    max_lateral_position: float
    episode_seed: int

    @property
    def failed(self) -> bool:
        return self.outcome is Outcome.OOB

    def cell(self, bin_width: float) -> Cell:
        return (self.turn_count, curvature_bin(self.curvature, bin_width))

    def to_dict(self) -> dict:
        return {
            "test_id": self.test_id,
            "simulator": self.simulator,
            "turn_count": self.turn_count,
            "curvature": self.curvature,
            "outcome": self.outcome.value,
            "fitness": self.fitness,
            "max_lateral_position": self.max_lateral_position,
            "episode_seed": self.episode_seed,
            "spec": self.spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TestRecord:
        return cls(
            d["test_id"],
            RoadSpec.from_dict(d["spec"]),
            d["simulator"],
            int(d["turn_count"]),
            float(d["curvature"]),
            Outcome(d["outcome"]),
            float(d["fitness"]),
            float(d["max_lateral_position"]),
            int(d["episode_seed"]),
        )


@dataclass
class CellStatistic:
    n_tests: int
    n_failures: int
    failure_probability: float | None
    lack_of_quality: float | None
    n_excluded: int = 0
    flagged: bool = False

    def value(self, metric: MetricKind) -> float | None:
        if MetricKind(metric) is MetricKind.FAILURE_PROBABILITY:
            return self.failure_probability
        return self.lack_of_quality

    def to_dict(self) -> dict:
        return {
            "n_tests": self.n_tests,
            "n_failures": self.n_failures,
            "failure_probability": self.failure_probability,
            "lack_of_quality": self.lack_of_quality,
            "n_excluded": self.n_excluded,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CellStatistic:
        return cls(**d)


def normalize(value: float, normalization: tuple[float, float]) -> float:
    lo, hi = normalization
    if hi <= lo:
        return 0.0
    return (value - lo) / (hi - lo)


@dataclass
class FeatureMap:
    """Feature map over (turn count, curvature bin) holding every execution per cell.

    ``stats`` carries both cell metrics; ``excluded`` keeps timed-out executions,
    which never enter the statistics.
    """

    simulator: str
    bin_width: float
    kind: str = "native"
    cells: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    normalization: tuple | None = None

    @classmethod
    def from_records(cls, records, simulator: str, bin_width: float, normalization=None, kind: str = "native") -> FeatureMap:
        fm = cls(simulator, bin_width, kind)
        for r in records:
            target = fm.excluded if r.outcome is Outcome.TIMEOUT else fm.cells
            target.setdefault(r.cell(bin_width), []).append(r)
        if normalization is None:
            normalization = lp_range([fm])
        fm.normalization = tuple(normalization)
        fm.stats = {c: _cell_stat(fm.cells.get(c, []), len(fm.excluded.get(c, [])), fm.normalization) for c in fm.cell_set()}
        return fm

    def cell_set(self) -> set:
        return set(self.cells) | set(self.excluded) | set(self.stats)

    def records(self) -> list:
        return [r for c in sorted(self.cells) for r in self.cells[c]]

    def all_records(self) -> list:
        out = self.records()
        out += [r for c in sorted(self.excluded) for r in self.excluded[c]]
        return out

    def test_ids(self) -> set:
        return {r.test_id for r in self.all_records()}

    @property
    def n_tests(self) -> int:
        return sum(len(v) for v in self.cells.values())

    def value(self, cell: Cell, metric: MetricKind) -> float | None:
        st = self.stats.get(cell)
        return None if st is None else st.value(metric)

    def values(self, metric: MetricKind) -> dict:
        return {c: v for c in sorted(self.stats) if (v := self.stats[c].value(metric)) is not None}

    def bounds(self) -> dict:
        keys = self.cell_set()
        if not keys:
            return {"turns": None, "curvature_bins": None}
        turns = [c[0] for c in keys]
        bins = [c[1] for c in keys]
        return {"turns": [min(turns), max(turns)], "curvature_bins": [min(bins), max(bins)]}

    def renormalized(self, normalization) -> FeatureMap:
        if self.kind in ("union", "merge"):
            raise ValueError("only execution maps can be renormalized")
        return FeatureMap.from_records(self.all_records(), self.simulator, self.bin_width, normalization, self.kind)

    def to_dict(self, metric: MetricKind | None = None) -> dict:
        cells = {}
        for c in sorted(self.cell_set()):
            entry = {"turn_count": c[0], "curvature_bin": c[1]}
            st = self.stats.get(c)
            if st is not None:
                entry.update(st.to_dict())
            if metric is not None:
                entry["value"] = None if st is None else st.value(metric)
            entry["individuals"] = [r.to_dict() for r in self.cells.get(c, [])]
            entry["excluded"] = [r.to_dict() for r in self.excluded.get(c, [])]
            cells[cell_key(c)] = entry
        return {
            "simulator": self.simulator,
            "kind": self.kind,
            "metric": None if metric is None else MetricKind(metric).value,
            "bin_width": self.bin_width,
            "bounds": self.bounds(),
            "normalization": None if self.normalization is None else list(self.normalization),
            "cells": cells,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FeatureMap:
        fm = cls(d["simulator"], float(d["bin_width"]), d.get("kind", "native"))
        fm.normalization = None if d.get("normalization") is None else tuple(d["normalization"])
        stat_fields = ("n_tests", "n_failures", "failure_probability", "lack_of_quality", "n_excluded", "flagged")
        for key, entry in d["cells"].items():
            c = parse_cell_key(key)
            if entry["individuals"]:
                fm.cells[c] = [TestRecord.from_dict(r) for r in entry["individuals"]]
            if entry["excluded"]:
                fm.excluded[c] = [TestRecord.from_dict(r) for r in entry["excluded"]]
            if "n_tests" in entry:
                fm.stats[c] = CellStatistic(**{k: entry[k] for k in stat_fields})
        return fm


def lp_range(maps) -> tuple[float, float]:
    """Global min/max of the raw maximum lateral position over every valid record."""
    vals = [r.max_lateral_position for m in maps for r in m.records()]
    if not vals:
        return (0.0, 0.0)
    return (min(vals), max(vals))


def _cell_stat(records, n_excluded, normalization) -> CellStatistic:
    n = len(records)
    if n == 0:
        return CellStatistic(0, 0, None, None, n_excluded, flagged=n_excluded > 0)
    fails = sum(r.failed for r in records)
    qm = sum(normalize(r.max_lateral_position, normalization) for r in records) / n
    return CellStatistic(n, fails, fails / n, qm, n_excluded)


def _check_binning(maps):
    widths = {m.bin_width for m in maps}
    if len(widths) != 1:
        raise MismatchedBinning(f"maps use different curvature bin widths: {sorted(widths)}")


# ------------------------------------------------------------ operations


def execute_test(test_id: str, spec: RoadSpec, model: DrivingModelConfig, cfg: SimulatorConfig, global_seed: int,
                 limits: EpisodeLimits | None = None, angle_threshold: float = 5.0):
    """Run one road on one simulator; returns (TestRecord, EpisodeResult)."""
    poly = interpolate_catmull_rom(spec)
    feats = features_of(spec, angle_threshold)
    seed = episode_seed(global_seed, cfg.physics_fingerprint(), test_id)
    ep = run_episode(model, cfg, poly, limits, seed=seed, lane_width=spec.lane_width)
    rec = TestRecord(test_id, spec, cfg.name, feats.turn_count, feats.curvature, ep.outcome, ep.fitness,
                     ep.max_lateral_position, seed)
    return rec, ep


def _execute_record(args):
    return execute_test(*args)[0]


def migrate(tests, model: DrivingModelConfig, target: SimulatorConfig, *, global_seed: int, bin_width: float,
            limits: EpisodeLimits | None = None, executor=None, normalization=None) -> FeatureMap:
    """Re-execute ``tests`` (TestRecords or (test_id, RoadSpec) pairs) on ``target``."""
    jobs = []
    for t in tests:
        test_id, spec = (t.test_id, t.spec) if isinstance(t, TestRecord) else t
        jobs.append((test_id, spec, model, target, global_seed, limits))
    mapper = executor.map if executor is not None else map
    records = list(mapper(_execute_record, jobs))
    for r in records:
        if r.outcome is Outcome.TIMEOUT:
            log.warning("test %s timed out on %s; excluded from statistics", r.test_id, target.name)
    return FeatureMap.from_records(records, target.name, bin_width, normalization, kind="migrated")


def union_maps(maps, normalization=None) -> FeatureMap:
    """Pool executions made on one simulator (native + migrated maps).

    Failure probability is recomputed from the pooled counts; lack of quality
    is the mean of the input maps' cell means.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("union of zero maps")
    _check_binning(maps)
    sims = {m.simulator for m in maps}
    if len(sims) != 1:
        raise MismatchedTestSets(f"union needs executions from one simulator, got {sorted(sims)}")
    if normalization is None:
        normalization = lp_range(maps)
    normalization = tuple(normalization)
    per_map = [m.renormalized(normalization) if m.kind not in ("union", "merge") else m for m in maps]

    out = FeatureMap(maps[0].simulator, maps[0].bin_width, "union", normalization=normalization)
    for m in per_map:
        for c, recs in m.cells.items():
            out.cells.setdefault(c, []).extend(recs)
        for c, recs in m.excluded.items():
            out.excluded.setdefault(c, []).extend(recs)
    for c in sorted(set().union(*(m.cell_set() for m in per_map))):
        n_fail = n_tot = n_exc = 0
        qms = []
        flagged = False
        for m in per_map:
            st = m.stats.get(c)
            if st is None:
                continue
            n_fail += st.n_failures
            n_tot += st.n_tests
            n_exc += st.n_excluded
            if st.n_tests == 0:
                flagged = True
            elif st.lack_of_quality is not None:
                qms.append(st.lack_of_quality)
        fp = n_fail / n_tot if n_tot else None
        qm = sum(qms) / len(qms) if qms else None
        out.stats[c] = CellStatistic(n_tot, n_fail, fp, qm, n_exc, flagged)
    return out


def merge_maps(maps) -> FeatureMap:
    """Conservative merge of per-sibling union maps: product of failure
    probabilities, minimum of lack of quality."""
    maps = list(maps)
    if not maps:
        raise ValueError("merge of zero maps")
    _check_binning(maps)
    keys = [m.cell_set() for m in maps]
    if any(k != keys[0] for k in keys[1:]):
        raise MismatchedCells("merged maps must cover identical cells")
    out = FeatureMap("+".join(m.simulator for m in maps), maps[0].bin_width, "merge", normalization=maps[0].normalization)
    for c in sorted(keys[0]):
        sts = [m.stats[c] for m in maps]
        fps = [s.failure_probability for s in sts]
        qms = [s.lack_of_quality for s in sts]
        fp = None if any(v is None for v in fps) else math.prod(fps)
        qm = None if any(v is None for v in qms) else min(qms)
        flagged = any(s.flagged for s in sts) or fp is None
        out.stats[c] = CellStatistic(min(s.n_tests for s in sts), 0 if fp is None else min(s.n_failures for s in sts),
                                     fp, qm, max(s.n_excluded for s in sts), flagged)
    return out


def binarize_twin(fm: FeatureMap) -> dict:
    """Failure label per cell with at least one valid twin execution: fp > 0."""
    return {c: fp > 0.0 for c, fp in fm.values(MetricKind.FAILURE_PROBABILITY).items()}
