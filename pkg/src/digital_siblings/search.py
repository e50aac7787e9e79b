"""MapElites illumination search over road test cases (one run per simulator) and
combination of repeated runs into a multi-individual feature map."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import DrivingModelConfig, EpisodeLimits, Outcome, SimulatorConfig
from .errors import EmptyPopulation, GenerationExhausted, MismatchedBinning, MutationExhausted
from .featuremap import FeatureMap, TestRecord, cell_key, execute_test, parse_cell_key
from .road import generate_random_road, mutate_road
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 20
    iterations: int = 100
    mutation_displacement: float = 10.0
    curvature_bin_width: float = 0.01
    n_ctrl: int = 8
    turn_threshold: float = 5.0
    max_curve_angle: float = 270.0
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.curvature_bin_width > 0:
            raise ValueError("curvature_bin_width must be positive")
        if self.mutation_displacement < 0:
            raise ValueError("mutation_displacement must be non-negative")


@dataclass
class PlacementEvent:
    index: int
    phase: str  # "init" | "evolve"
    test_id: str
    cell: tuple | None
    candidate_fitness: float | None
    incumbent_fitness: float | None
    action: str  # inserted | replaced | kept | excluded | skipped

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cell"] = None if self.cell is None else cell_key(self.cell)
        return d


@dataclass
class Archive:
    """Single-individual-per-cell map produced by one search run."""

    simulator: str
    bin_width: float
    cells: dict = field(default_factory=dict)
    turn_bounds: list | None = None
    bin_bounds: list | None = None

    def _grow(self, cell):
        t, b = cell
        self.turn_bounds = [t, t] if self.turn_bounds is None else [min(self.turn_bounds[0], t), max(self.turn_bounds[1], t)]
        self.bin_bounds = [b, b] if self.bin_bounds is None else [min(self.bin_bounds[0], b), max(self.bin_bounds[1], b)]

    def place(self, candidate: TestRecord) -> tuple[str, float | None]:
        """Local competition; returns (action, incumbent fitness)."""
        cell = candidate.cell(self.bin_width)
        self._grow(cell)
        incumbent = self.cells.get(cell)
        if incumbent is None:
            self.cells[cell] = candidate
            return "inserted", None
        if incumbent.fitness >= 0 and incumbent.fitness > candidate.fitness:
            self.cells[cell] = candidate
            return "replaced", incumbent.fitness
        return "kept", incumbent.fitness

    def __len__(self):
        return len(self.cells)

    def individuals(self) -> list:
        return [self.cells[c] for c in sorted(self.cells)]

    def to_dict(self) -> dict:
        return {
            "simulator": self.simulator,
            "bin_width": self.bin_width,
            "bounds": {"turns": self.turn_bounds, "curvature_bins": self.bin_bounds},
            "cells": {cell_key(c): self.cells[c].to_dict() for c in sorted(self.cells)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Archive:
        a = cls(d["simulator"], float(d["bin_width"]))
        a.turn_bounds = d["bounds"]["turns"]
        a.bin_bounds = d["bounds"]["curvature_bins"]
        a.cells = {parse_cell_key(k): TestRecord.from_dict(v) for k, v in d["cells"].items()}
        return a


def place_individual(archive: Archive, candidate: TestRecord) -> Archive:
    archive.place(candidate)
    return archive


def select_individual(population, rng: np.random.Generator):
    if not population:
        raise EmptyPopulation("cannot select from an empty population")
    return population[int(rng.integers(len(population)))]


@dataclass
class SearchResult:
    archive: Archive
    log: list
    population: list


def _run_one(args):
    return execute_test(*args)[0]


def run_search(model: DrivingModelConfig, sim: SimulatorConfig, cfg: SearchConfig, *, run_id: str = "run",
               limits: EpisodeLimits | None = None, executor=None) -> SearchResult:
    """One MapElites run: random initial population, then select-mutate-execute-place."""
    archive = Archive(sim.name, cfg.curvature_bin_width)
    events: list[PlacementEvent] = []

    def record(phase, test_id, rec):
        if rec is None:
            events.append(PlacementEvent(len(events), phase, test_id, None, None, None, "skipped"))
            return
        if rec.outcome is Outcome.TIMEOUT:
            log.warning("%s timed out on %s; not placed", test_id, sim.name)
            events.append(PlacementEvent(len(events), phase, test_id, rec.cell(cfg.curvature_bin_width),
                                         rec.fitness, None, "excluded"))
            return
        action, inc = archive.place(rec)
        events.append(PlacementEvent(len(events), phase, test_id, rec.cell(cfg.curvature_bin_width),
                                     rec.fitness, inc, action))

    specs = []
    for k in range(cfg.population_size):
        test_id = f"{run_id}-i{k:03d}"
        try:
            spec = generate_random_road(derive_seed(cfg.seed, "generate", run_id, k), cfg.n_ctrl,
                                        max_curve_angle=cfg.max_curve_angle)
        except GenerationExhausted:
            log.warning("initial individual %s could not be generated", test_id)
            spec = None
        specs.append((test_id, spec))
    jobs = [(tid, s, model, sim, cfg.seed, limits, cfg.turn_threshold) for tid, s in specs if s is not None]
    mapper = executor.map if executor is not None else map
    done = dict(zip([j[0] for j in jobs], mapper(_run_one, jobs)))
    population = []
    for tid, spec in specs:
        rec = done.get(tid)
        record("init", tid, rec)
        if rec is not None:
            population.append(rec)

    rng = np.random.default_rng(derive_seed(cfg.seed, "select", run_id))
    for it in range(cfg.iterations):
        test_id = f"{run_id}-m{it:03d}"
        parent = select_individual(population, rng)
        try:
            child = mutate_road(parent.spec, derive_seed(cfg.seed, "mutate", run_id, it), cfg.mutation_displacement)
        except MutationExhausted:
            log.warning("mutation of %s exhausted; iteration %d skipped", parent.test_id, it)
            record("evolve", test_id, None)
            continue
        rec, _ = execute_test(test_id, child, model, sim, cfg.seed, limits, cfg.turn_threshold)
        record("evolve", test_id, rec)
    return SearchResult(archive, events, population)


def combine_runs(archives, normalization=None) -> FeatureMap:
    """Place every individual of every run into one map with potentially many individuals per cell."""
    archives = list(archives)
    if not archives:
        raise ValueError("no archives to combine")
    widths = {a.bin_width for a in archives}
    if len(widths) != 1:
        raise MismatchedBinning(f"archives use different curvature bin widths: {sorted(widths)}")
    sims = {a.simulator for a in archives}
    records = [r for a in archives for r in a.individuals()]
    return FeatureMap.from_records(records, "+".join(sorted(sims)), archives[0].bin_width, normalization, kind="native")


def combined_bounds(archives) -> dict:
    """Axis bounds of the combined map: lowest/highest bound across runs."""
    turns = [a.turn_bounds for a in archives if a.turn_bounds is not None]
    bins = [a.bin_bounds for a in archives if a.bin_bounds is not None]
    return {
        "turns": [min(t[0] for t in turns), max(t[1] for t in turns)] if turns else None,
        "curvature_bins": [min(b[0] for b in bins), max(b[1] for b in bins)] if bins else None,
    }

