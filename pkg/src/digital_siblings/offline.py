"""Offline evaluation: steering errors of a model against autopilot labels
recorded in each simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .dynamics import (
    DrivingModelConfig,
    EpisodeLimits,
    ModelState,
    Observation,
    SimulatorConfig,
    autopilot,
    drive,
    run_episode,
)
from .errors import EmptyDataset
from .road import RoadSpec, generate_random_road, interpolate_catmull_rom
from .seeding import derive_seed


@dataclass(frozen=True, eq=False)
class DrivingLog:
    """Autopilot run on one road: per-step observations and steering labels."""

    road_id: str
    visible_lp: np.ndarray
    true_lp: np.ndarray
    heading_error: np.ndarray
    curvature_ahead: np.ndarray
    speed: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class OfflineDataset:
    simulator: SimulatorConfig
    logs: tuple

    @property
    def n_samples(self) -> int:
        return sum(len(lg.labels) for lg in self.logs)


def offline_roads(global_seed: int, n_roads: int = 10, n_ctrl: int = 8) -> list:
    """``n_roads`` random roads, each also driven in reverse: 2 * n_roads specs."""
    roads = []
    for k in range(n_roads):
        spec = generate_random_road(derive_seed(global_seed, "offline-road", k), n_ctrl)
        roads.append((f"offline-{k:02d}-fwd", spec))
        roads.append((f"offline-{k:02d}-rev", spec.reversed()))
    return roads


def collect_dataset(sim: SimulatorConfig, roads, global_seed: int, limits: EpisodeLimits | None = None) -> OfflineDataset:
    ap = autopilot()
    logs = []
    for road_id, spec in roads:
        spec = spec if isinstance(spec, RoadSpec) else RoadSpec.from_dict(spec)
        seed = derive_seed(global_seed, "offline", sim.physics_fingerprint(), road_id)
        ep = run_episode(ap, sim, interpolate_catmull_rom(spec), limits, seed=seed, lane_width=spec.lane_width)
        tr = ep.trace
        logs.append(DrivingLog(road_id, tr[:, K.T_LP_VISIBLE], tr[:, K.T_LP_TRUE], tr[:, K.T_HEADING_ERROR],
                               tr[:, K.T_CURVATURE_AHEAD], tr[:, K.T_SPEED], tr[:, K.T_STEERING]))
    return OfflineDataset(sim, tuple(logs))


def predict(model: DrivingModelConfig, dataset: OfflineDataset, global_seed: int = 0) -> list:
    """Replay ``model`` over every recorded observation sequence; one steering array per log."""
    out = []
    for lg in dataset.logs:
        state = ModelState(rng=np.random.default_rng(derive_seed(global_seed, "offline-model", lg.road_id)))
        steer = np.empty(len(lg.labels))
        for k in range(len(lg.labels)):
            obs = Observation(lg.visible_lp[k], lg.heading_error[k], lg.curvature_ahead[k], lg.true_lp[k])
            steer[k] = drive(model, obs, state, lg.speed[k], dataset.simulator).steering
        out.append(steer)
    return out


def prediction_errors(model: DrivingModelConfig, dataset: OfflineDataset, global_seed: int = 0, signed: bool = False):
    if dataset.n_samples == 0:
        raise EmptyDataset(f"no samples recorded on {dataset.simulator.name}")
    preds = predict(model, dataset, global_seed)
    err = np.concatenate([p - lg.labels for p, lg in zip(preds, dataset.logs)])
    return err if signed else np.abs(err)


def pool_siblings(errors: list) -> np.ndarray:
    """Equal-count concatenation of sibling error samples."""
    m = min(len(e) for e in errors)
    return np.concatenate([np.asarray(e)[:m] for e in errors])


def offline_eval(model: DrivingModelConfig, datasets: dict, siblings, global_seed: int = 0) -> dict:
    """Absolute steering errors per simulator plus the pooled sibling list under key ``"DSS"``."""
    errors = {name: prediction_errors(model, ds, global_seed) for name, ds in datasets.items()}
    errors["DSS"] = pool_siblings([errors[s] for s in siblings])
    return errors
