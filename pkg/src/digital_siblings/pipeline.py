"""End-to-end orchestration: search per sibling, migrate + union, merge,
evaluation against the twin, reporting and replay.

Artifacts live under ``<out>/run-<config hash>/``; every stage writes its
files atomically and records them in ``manifest.json``.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import jsonschema

from . import __version__
from .config import ExperimentConfig
from .dynamics import Outcome, run_episode
from .errors import DegenerateVariance, DigsibError, ManifestCorrupt, NoNegatives, NoPositives
from .featuremap import (
    FeatureMap,
    MetricKind,
    binarize_twin,
    lp_range,
    merge_maps,
    migrate,
    union_maps,
)
from .offline import collect_dataset, offline_eval, offline_roads
from .report import axes_for, comparison_table, heatmap_csv, heatmap_svg, text_summary
from .road import interpolate_catmull_rom
from .search import Archive, combine_runs, run_search
from .seeding import episode_seed
from .stats import PairedSeries, auc_prc, make_density, pearson, wasserstein_1d, wilcoxon_signed_rank

log = logging.getLogger(__name__)

DSS = "DSS"
STAGES = ("search", "migrate", "merge", "evaluate", "report")

_NUM = {"type": ["number", "null"]}
_INT = {"type": ["integer", "null"]}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "config_hash", "seed", "normalization", "twin", "comparisons"],
    "properties": {
        "config_hash": {"type": "string"},
        "seed": {"type": "integer"},
        "comparisons": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["rq", "metric", "candidate", "reference", "distance", "wilcoxon_p", "pearson_r",
                             "pearson_p", "auc_prc", "n_cells", "n_samples"],
                "properties": {
                    "rq": {"enum": ["RQ1", "RQ2", "RQ3"]},
                    "metric": {"enum": ["steering_error", "failure_probability", "lack_of_quality"]},
                    "candidate": {"type": "string"},
                    "reference": {"type": "string"},
                    "distance": _NUM,
                    "wilcoxon_p": _NUM,
                    "pearson_r": _NUM,
                    "pearson_p": _NUM,
                    "auc_prc": _NUM,
                    "n_cells": _INT,
                    "n_samples": _INT,
                },
            },
        },
    },
}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["version", "config_hash", "config", "seeds", "stages"],
    "properties": {
        "config_hash": {"type": "string"},
        "config": {"type": "object"},
        "seeds": {"type": "object", "required": ["global"]},
        "stages": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["artifacts", "completed_at"],
                "properties": {"artifacts": {"type": "array", "items": {"type": "string"}}},
            },
        },
    },
}


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, out_dir=None, jobs: int = 1, stage_cache: bool = True):
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg.out_dir)
        self.jobs = max(1, int(jobs))
        self.stage_cache = stage_cache
        self.hash = cfg.config_hash()
        self.run_dir = self.out / f"run-{self.hash[:12]}"
        self.sibling_names = [s.name for s in cfg.siblings]

    # ------------------------------------------------------------ plumbing

    @contextmanager
    def _executor(self):
        if self.jobs == 1:
            yield None
        else:
            with ProcessPoolExecutor(self.jobs) as ex:
                yield ex

    def path(self, *parts) -> Path:
        return self.run_dir.joinpath(*parts)

    def _write(self, rel: str, text: str) -> str:
        atomic_write(self.path(rel), text)
        return rel

    def _read_json(self, rel: str):
        p = self.path(rel)
        if not p.exists():
            raise ManifestCorrupt(f"missing artifact {p}; run the earlier stages first")
        with open(p) as fh:
            return json.load(fh)

    def _cached(self, stage: str) -> bool:
        if not self.stage_cache:
            return False
        m = self.load_manifest(missing_ok=True)
        entry = (m or {}).get("stages", {}).get(stage)
        return entry is not None and all(self.path(a).exists() for a in entry["artifacts"])

    def load_manifest(self, missing_ok: bool = False):
        p = self.path("manifest.json")
        if not p.exists():
            if missing_ok:
                return None
            raise ManifestCorrupt(f"no manifest at {p}")
        with open(p) as fh:
            return json.load(fh)

    def _record_stage(self, stage: str, artifacts: list, seeds: dict | None = None):
        m = self.load_manifest(missing_ok=True) or {
            "version": __version__,
            "config_hash": self.hash,
            "config": self.cfg.to_dict(),
            "seeds": {"global": self.cfg.seed, "episode_rule": "sha256(global, 'episode', physics fingerprint, test id)"},
            "stages": {},
        }
        if seeds:
            m["seeds"].update(seeds)
        m["stages"][stage] = {
            "artifacts": sorted(artifacts),
            "completed_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        atomic_write(self.path("manifest.json"), dumps(m))

    # -------------------------------------------------------------- stages

    def search(self) -> dict:
        """Repeated MapElites runs per sibling, combined into one map per sibling."""
        if self._cached("search"):
            return self.load_sibling_maps()
        cfg = self.cfg
        maps, artifacts, runs = {}, [], {}
        with self._executor() as ex:
            for sim in cfg.siblings:
                archives = []
                runs[sim.name] = []
                for rep in range(cfg.repetitions):
                    run_id = f"{sim.name}-r{rep}"
                    res = run_search(cfg.model, sim, cfg.search, run_id=run_id, limits=cfg.limits, executor=ex)
                    archives.append(res.archive)
                    runs[sim.name].append(run_id)
                    base = f"search/{sim.name}/rep{rep}"
                    artifacts.append(self._write(f"{base}/archive.json", dumps(res.archive.to_dict())))
                    lines = "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in res.log)
                    artifacts.append(self._write(f"{base}/placements.jsonl", lines))
                fm = combine_runs(archives)
                maps[sim.name] = fm
                artifacts.append(self._write(f"search/{sim.name}/combined.json", dumps(fm.to_dict())))
        self._record_stage("search", artifacts, {"search_runs": runs})
        return maps

    def load_sibling_maps(self) -> dict:
        return {n: FeatureMap.from_dict(self._read_json(f"search/{n}/combined.json")) for n in self.sibling_names}

    def load_archives(self, sibling: str) -> list:
        return [Archive.from_dict(self._read_json(f"search/{sibling}/rep{r}/archive.json")) for r in range(self.cfg.repetitions)]

    def load_placements(self, sibling: str, rep: int) -> list:
        p = self.path(f"search/{sibling}/rep{rep}/placements.jsonl")
        with open(p) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def migrate_union(self, sibling_maps: dict | None = None) -> dict:
        """Migrate every sibling's tests onto every other sibling and pool them per sibling."""
        if self._cached("migrate"):
            return self.load_union_maps()
        sibling_maps = sibling_maps or self.load_sibling_maps()
        cfg = self.cfg
        migrated = {}
        artifacts = []
        with self._executor() as ex:
            for target in cfg.siblings:
                for src in self.sibling_names:
                    if src == target.name:
                        continue
                    fm = migrate(sibling_maps[src].all_records(), cfg.model, target, global_seed=cfg.seed,
                                 bin_width=cfg.search.curvature_bin_width, limits=cfg.limits, executor=ex)
                    migrated[(src, target.name)] = fm
                    artifacts.append(self._write(f"migrate/{src}_on_{target.name}.json", dumps(fm.to_dict())))
        normalization = lp_range(list(sibling_maps.values()) + list(migrated.values()))
        unions = {}
        for name in self.sibling_names:
            parts = [sibling_maps[name]] + [migrated[(src, name)] for src in self.sibling_names if src != name]
            unions[name] = union_maps(parts, normalization)
            artifacts.append(self._write(f"migrate/union_{name}.json", dumps(unions[name].to_dict())))
        self._record_stage("migrate", artifacts)
        return unions

    def load_union_maps(self) -> dict:
        return {n: FeatureMap.from_dict(self._read_json(f"migrate/union_{n}.json")) for n in self.sibling_names}

    def merge(self, unions: dict | None = None) -> FeatureMap:
        if self._cached("merge"):
            return self.load_merged()
        unions = unions or self.load_union_maps()
        dss = merge_maps([unions[n] for n in self.sibling_names])
        artifacts = [self._write("merge/dss.json", dumps(dss.to_dict()))]
        for metric in MetricKind:
            artifacts.append(self._write(f"merge/dss_{metric.value}.json", dumps(dss.to_dict(metric))))
        self._record_stage("merge", artifacts)
        return dss

    def load_merged(self) -> FeatureMap:
        return FeatureMap.from_dict(self._read_json("merge/dss.json"))

    def evaluate(self, dss: FeatureMap | None = None, unions: dict | None = None) -> dict:
        """Execute every test on the twin and score siblings and merged map against it."""
        self.cfg.validate(need_twin=True)
        if self._cached("evaluate"):
            return self._read_json("evaluate/report.json")
        dss = dss or self.load_merged()
        unions = unions or self.load_union_maps()
        cfg = self.cfg
        twin = cfg.twin

        natives = self.load_sibling_maps() if self.path("search").exists() else None
        tests = []
        seen = set()
        for name in self.sibling_names:
            for r in natives[name].all_records():
                if r.test_id not in seen:
                    seen.add(r.test_id)
                    tests.append(r)
        with self._executor() as ex:
            dt = migrate(tests, cfg.model, twin, global_seed=cfg.seed, bin_width=cfg.search.curvature_bin_width,
                         limits=cfg.limits, executor=ex)
        dt.kind = "twin"
        artifacts = [self._write("evaluate/twin.json", dumps(dt.to_dict()))]

        comparisons = self._offline_comparisons()
        comparisons += map_comparisons({**unions, DSS: dss}, dt, twin.name, self.sibling_names + [DSS])
        labels = binarize_twin(dt)
        report = {
            "version": __version__,
            "config_hash": self.hash,
            "seed": cfg.seed,
            "normalization": {
                "max_lateral_position_range": list(unions[self.sibling_names[0]].normalization),
                "twin_range": list(dt.normalization),
            },
            "twin": {
                "name": twin.name,
                "n_tests": dt.n_tests,
                "n_excluded": sum(len(v) for v in dt.excluded.values()),
                "n_cells": len(labels),
                "n_failure_cells": sum(labels.values()),
            },
            "comparisons": comparisons,
        }
        jsonschema.validate(report, REPORT_SCHEMA)
        artifacts.append(self._write("evaluate/report.json", dumps(report)))
        self._record_stage("evaluate", artifacts)
        return report

    def _offline_comparisons(self) -> list:
        cfg = self.cfg
        roads = offline_roads(cfg.seed, cfg.offline_roads, cfg.search.n_ctrl)
        sims = list(cfg.siblings) + [cfg.twin]
        datasets = {s.name: collect_dataset(s, roads, cfg.seed, cfg.limits) for s in sims}
        errors = offline_eval(cfg.model, datasets, self.sibling_names, cfg.seed)
        ref = errors[cfg.twin.name]
        ref_density = make_density(ref, cfg.density_bins)
        out = []
        for cand in self.sibling_names + [DSS]:
            dens = make_density(errors[cand], cfg.density_bins)
            out.append(_comparison(
                "RQ1", "steering_error", cand, cfg.twin.name,
                distance=wasserstein_1d(errors[cand], ref),
                wilcoxon_p=wilcoxon_signed_rank(PairedSeries(dens.probabilities, ref_density.probabilities)),
                n_samples=int(len(errors[cand])),
            ))
        return out

    def report(self, report: dict | None = None) -> list:
        """Heatmaps (SVG + CSV) per map and metric, and the comparison tables."""
        report = report or self._read_json("evaluate/report.json")
        maps = {**self.load_union_maps(), DSS: self.load_merged(), "DT": FeatureMap.from_dict(self._read_json("evaluate/twin.json"))}
        turns, bins = axes_for(list(maps.values()))
        artifacts = []
        for name, fm in maps.items():
            for metric in MetricKind:
                stem = f"report/{name}_{metric.value}"
                title = f"{name} {metric.value.replace('_', ' ')}"
                artifacts.append(self._write(f"{stem}.svg", heatmap_svg(fm, metric, title, turns, bins)))
                artifacts.append(self._write(f"{stem}.csv", heatmap_csv(fm, metric, turns, bins)))
        comps = report["comparisons"]
        artifacts.append(self._write("report/rq1_offline.csv", comparison_table(comps, "steering_error", ("distance", "wilcoxon_p", "n_samples"))))
        for metric, rq in (("failure_probability", "rq2"), ("lack_of_quality", "rq3")):
            artifacts.append(self._write(f"report/{rq}_{metric}.csv", comparison_table(comps, metric, ("pearson_r", "pearson_p", "auc_prc", "n_cells"))))
        artifacts.append(self._write("report/summary.txt", text_summary(report)))
        self._record_stage("report", artifacts)
        return artifacts

    def run_until(self, stage: str):
        """Run ``stage``, reusing (or producing) the artifacts of every earlier stage."""
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if stage == "search":
            return self.search()
        if stage in ("evaluate", "report"):
            self.cfg.validate(need_twin=True)
        maps = self.search()
        if stage == "migrate":
            return self.migrate_union(maps)
        unions = self.migrate_union(maps)
        if stage == "merge":
            return self.merge(unions)
        dss = self.merge(unions)
        rep = self.evaluate(dss, unions)
        return rep if stage == "evaluate" else self.report(rep)

    def run(self) -> dict:
        self.cfg.validate(need_twin=True)
        maps = self.search()
        unions = self.migrate_union(maps)
        dss = self.merge(unions)
        rep = self.evaluate(dss, unions)
        self.report(rep)
        return rep


def _comparison(rq, metric, candidate, reference, **values) -> dict:
    row = {"rq": rq, "metric": metric, "candidate": candidate, "reference": reference, "distance": None,
           "wilcoxon_p": None, "pearson_r": None, "pearson_p": None, "auc_prc": None, "n_cells": None, "n_samples": None}
    for k, v in values.items():
        row[k] = v if isinstance(v, int) or v is None else _clean(v)
    return row


def map_comparisons(candidates: dict, dt: FeatureMap, reference: str, order) -> list:
    """Pearson and AUC-PRC of every candidate map against the twin's failure probabilities.

    Both metric kinds are scored against the twin's failure map: its failure
    probabilities for correlation and their >0 binarisation for AUC-PRC.
    """
    truth = dt.values(MetricKind.FAILURE_PROBABILITY)
    labels = binarize_twin(dt)
    out = []
    for metric, rq in ((MetricKind.FAILURE_PROBABILITY, "RQ2"), (MetricKind.LACK_OF_QUALITY, "RQ3")):
        for name in order:
            scores = candidates[name].values(metric)
            paired = PairedSeries.from_maps(scores, truth)
            r = p = auc = None
            try:
                r, p = pearson(paired)
            except (DegenerateVariance, ValueError) as exc:
                log.info("pearson %s vs %s (%s) undefined: %s", name, reference, metric.value, exc)
            keys = sorted(set(scores) & set(labels))
            try:
                auc = auc_prc([scores[k] for k in keys], [labels[k] for k in keys])
            except (NoPositives, NoNegatives) as exc:
                log.info("auc-prc %s vs %s (%s) undefined: %s", name, reference, metric.value, exc)
            out.append(_comparison(rq, metric.value, name, reference, pearson_r=r, pearson_p=p, auc_prc=auc,
                                   n_cells=len(paired)))
    return out


def validate_manifest(run_dir) -> dict:
    run_dir = Path(run_dir)
    p = run_dir / "manifest.json"
    try:
        with open(p) as fh:
            m = json.load(fh)
        jsonschema.validate(m, MANIFEST_SCHEMA)
    except (OSError, ValueError, jsonschema.ValidationError) as exc:
        raise ManifestCorrupt(f"{p}: {exc}") from None
    for stage in m["stages"].values():
        for a in stage["artifacts"]:
            if not (run_dir / a).exists():
                raise ManifestCorrupt(f"artifact {a} listed in the manifest is missing")
    return m


def _find_record(run_dir: Path, manifest: dict, test_id: str, simulator: str | None):
    candidates = []
    for stage in ("search", "migrate", "evaluate"):
        for a in manifest["stages"].get(stage, {}).get("artifacts", []):
            name = a.rsplit("/", 1)[-1]
            if not (name == "combined.json" or "_on_" in name or name == "twin.json"):
                continue
            with open(run_dir / a) as fh:
                fm = FeatureMap.from_dict(json.load(fh))
            for r in fm.all_records():
                if r.test_id == test_id and (simulator is None or r.simulator == simulator):
                    candidates.append(r)
    if not candidates:
        raise ManifestCorrupt(f"test {test_id!r} not found in the run artifacts")
    return candidates[0]


def replay(run_dir, test_id: str, simulator: str | None = None, seed: int | None = None, out_csv=None) -> dict:
    """Re-execute one stored test from the manifest and compare with the stored record."""
    run_dir = Path(run_dir)
    manifest = validate_manifest(run_dir)
    cfg = ExperimentConfig.from_dict(manifest["config"])
    rec = _find_record(run_dir, manifest, test_id, simulator)
    try:
        sim = cfg.sibling(rec.simulator)
    except KeyError:
        raise ManifestCorrupt(f"simulator {rec.simulator!r} is not in the stored config") from None
    global_seed = cfg.seed if seed is None else seed
    ep_seed = episode_seed(global_seed, sim.physics_fingerprint(), test_id)
    ep = run_episode(cfg.model, sim, interpolate_catmull_rom(rec.spec), cfg.limits, seed=ep_seed,
                     lane_width=rec.spec.lane_width)
    match = ep.outcome is rec.outcome and ep.fitness == rec.fitness and ep.max_lateral_position == rec.max_lateral_position
    if out_csv is not None:
        atomic_write(Path(out_csv), ep.trace_csv())
    return {
        "test_id": test_id,
        "simulator": rec.simulator,
        "episode_seed": ep_seed,
        "stored": {"outcome": rec.outcome.value, "fitness": rec.fitness, "max_lateral_position": rec.max_lateral_position},
        "replayed": ep.summary(),
        "match": bool(match),
        "result": ep,
    }


__all__ = ["Pipeline", "replay", "validate_manifest", "map_comparisons", "DigsibError", "Outcome"]
