"""Vehicle physics, lane-relative measurement, PID driving models and episode execution.

Sign conventions: headings are counter-clockwise from +x; a positive
steering command turns counter-clockwise; the lateral position is positive
when the vehicle is right of the lane center. With these conventions the
PID law stabilises the vehicle with positive gains.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels as K
from .road import DEFAULT_LANE_WIDTH, RoadPolyline

KMH = 1.0 / 3.6
DEFAULT_MAX_SPEED = 30.0 * KMH
DEFAULT_TIMESTEP = 0.05

# reference autopilot gains, tuned on the random-road corpus
REFERENCE_KP = 1.2
REFERENCE_KD = 10.0
REFERENCE_KI = 0.002


class Engine(str, enum.Enum):
    KINEMATIC = "kinematic"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class SimulatorConfig:
    name: str = "sim"
    engine: Engine = Engine.KINEMATIC
    timestep: float = DEFAULT_TIMESTEP
    wheelbase: float = 2.5
    max_steer_angle: float = 0.6
    max_speed: float = DEFAULT_MAX_SPEED
    throttle_gain: float = 4.0
    drag: float = 0.25
    tire_stiffness: float = 8.0
    k_low: float | None = None
    k_high: float | None = None
    sensor_bias: float = 0.0
    sensor_noise_sd: float = 0.0
    sensor_delay_steps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "engine", Engine(self.engine))
        if self.k_low is None:
            object.__setattr__(self, "k_low", 0.5 * self.max_speed)
        if self.k_high is None:
            object.__setattr__(self, "k_high", 1.5 * self.max_speed)
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        if not self.max_speed > 0:
            raise ValueError("max_speed must be positive")
        if not self.k_low < self.k_high:
            raise ValueError("k_low must be smaller than k_high")
        if self.wheelbase <= 0 or self.drag < 0 or self.tire_stiffness <= 0 or self.sensor_noise_sd < 0:
            raise ValueError("wheelbase/tire_stiffness must be positive, drag and noise non-negative")
        if int(self.sensor_delay_steps) != self.sensor_delay_steps or self.sensor_delay_steps < 0:
            raise ValueError("sensor_delay_steps must be a non-negative integer")
        object.__setattr__(self, "sensor_delay_steps", int(self.sensor_delay_steps))

    def physics_fingerprint(self) -> str:
        """Hash of everything except the name: equal fingerprints behave identically."""
        data = asdict(self)
        data.pop("name")
        data["engine"] = self.engine.value
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def packed(self) -> np.ndarray:
        p = np.zeros(K.SIM_NPARAMS)
        p[K.SIM_ENGINE] = K.ENGINE_DYNAMIC if self.engine is Engine.DYNAMIC else K.ENGINE_KINEMATIC
        p[K.SIM_DT] = self.timestep
        p[K.SIM_WHEELBASE] = self.wheelbase
        p[K.SIM_MAX_STEER] = self.max_steer_angle
        p[K.SIM_THROTTLE_GAIN] = self.throttle_gain
        p[K.SIM_DRAG] = self.drag
        p[K.SIM_TIRE] = self.tire_stiffness
        p[K.SIM_K_LOW] = self.k_low
        p[K.SIM_K_HIGH] = self.k_high
        p[K.SIM_SPEED_THRESHOLD] = self.max_speed
        p[K.SIM_BIAS] = self.sensor_bias
        p[K.SIM_DELAY] = self.sensor_delay_steps
        return p


class ModelKind(str, enum.Enum):
    AUTOPILOT = "autopilot"
    MISTUNED_PID = "mistuned_pid"
    DELAYED_PID = "delayed_pid"
    NOISY_PID = "noisy_pid"
    RATE_LIMITED_PID = "rate_limited_pid"


@dataclass(frozen=True)
class DrivingModelConfig:
    """A driving model under test.

    Only the autopilot reads the exact lateral position; every other kind
    sees the simulator's sensor channel plus its own degradation.
    """

    kind: ModelKind = ModelKind.AUTOPILOT
    kp: float = REFERENCE_KP
    kd: float = REFERENCE_KD
    ki: float = REFERENCE_KI
    delay_steps: int = 0
    noise_sd: float = 0.0
    max_slew: float | None = None
    steering_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        for name in ("kp", "kd", "ki", "noise_sd", "steering_offset"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if int(self.delay_steps) != self.delay_steps or self.delay_steps < 0:
            raise ValueError("delay_steps must be a non-negative integer")
        object.__setattr__(self, "delay_steps", int(self.delay_steps))
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.max_slew is not None and not self.max_slew >= 0:
            raise ValueError("max_slew must be non-negative")

    @property
    def uses_oracle(self) -> bool:
        return self.kind is ModelKind.AUTOPILOT

    @property
    def effective_delay(self) -> int:
        return self.delay_steps if self.kind is ModelKind.DELAYED_PID else 0

    @property
    def effective_noise_sd(self) -> float:
        return self.noise_sd if self.kind is ModelKind.NOISY_PID else 0.0

    @property
    def effective_slew(self) -> float | None:
        return self.max_slew if self.kind is ModelKind.RATE_LIMITED_PID else None

    def packed(self) -> np.ndarray:
        p = np.zeros(K.MDL_NPARAMS)
        p[K.MDL_KP] = self.kp
        p[K.MDL_KD] = self.kd
        p[K.MDL_KI] = self.ki
        p[K.MDL_DELAY] = self.effective_delay
        p[K.MDL_OFFSET] = self.steering_offset
        slew = self.effective_slew
        p[K.MDL_MAX_SLEW] = -1.0 if slew is None else slew
        p[K.MDL_USE_ORACLE] = 1.0 if self.uses_oracle else 0.0
        return p

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


def autopilot() -> DrivingModelConfig:
    return DrivingModelConfig()


# ------------------------------------------------------------- primitives


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    time: float = 0.0
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class DrivingCommand:
    steering: float
    throttle: float

    def __post_init__(self):
        object.__setattr__(self, "steering", K.clip(float(self.steering), -1.0, 1.0))
        object.__setattr__(self, "throttle", K.clip(float(self.throttle), 0.0, 1.0))


@dataclass
class PidState:
    prev_lp: float = 0.0
    integral: float = 0.0


def pid_raw(state: PidState, lp: float, gains) -> float:
    kp, kd, ki = gains
    state.integral += lp
    out = K.pid_raw(kp, kd, ki, lp, state.prev_lp, state.integral)
    state.prev_lp = lp
    return out


def pid_steering(state: PidState, lp: float, gains) -> float:
    """One PID update on the lateral position, clipped to [-1, 1]. Mutates ``state``."""
    return K.clip(pid_raw(state, lp, gains), -1.0, 1.0)


def throttle_law(steering: float, speed: float, cfg: SimulatorConfig) -> float:
    return K.throttle_value(steering, speed, cfg.k_low, cfg.k_high, cfg.max_speed)


def step(state: VehicleState, cmd: DrivingCommand, cfg: SimulatorConfig) -> VehicleState:
    x, y, h, v, r = K.step_state(
        state.x, state.y, state.heading, state.speed, state.yaw_rate, cmd.steering, cmd.throttle, cfg.packed()
    )
    return VehicleState(x, y, h, v, state.time + cfg.timestep, r)


def lateral_measures(state: VehicleState, polyline: RoadPolyline, lane_width: float = DEFAULT_LANE_WIDTH):
    """(signed lateral position, lateral distance) against the whole center line."""
    _, lp, _ = K.project_window(polyline.center_points, polyline.cumulative_length, state.x, state.y, 0, len(polyline) - 1)
    return lp, lane_width / 2.0 - abs(lp)


@dataclass(frozen=True)
class Observation:
    lateral_position: float
    heading_error: float
    lookahead_curvature: float
    true_lateral_position: float


class SensorChannel:
    """Per-episode sensor stream: bias, Gaussian noise and delivery delay."""

    def __init__(self, cfg: SimulatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.history: list[float] = []
        self.segment = 0

    def observe(self, state: VehicleState, polyline: RoadPolyline) -> Observation:
        pts, cum = polyline.center_points, polyline.cumulative_length
        if self.history:
            lo, hi = self.segment - K._WINDOW_BACK, self.segment + K._WINDOW_AHEAD
        else:
            lo, hi = 0, len(polyline) - 1
        seg, lp, _ = K.project_window(pts, cum, state.x, state.y, lo, hi)
        self.segment = seg
        noise = self.cfg.sensor_noise_sd * self.rng.standard_normal()
        self.history.append(lp + self.cfg.sensor_bias + noise)
        k = len(self.history) - 1
        visible = self.history[max(0, k - self.cfg.sensor_delay_steps)]
        return Observation(
            lateral_position=visible,
            heading_error=K.wrap_angle(state.heading - polyline.headings[seg]),
            lookahead_curvature=K.curvature_ahead(polyline.headings, cum, seg, K.LOOKAHEAD_M),
            true_lateral_position=lp,
        )


def observe(state: VehicleState, polyline: RoadPolyline, cfg: SimulatorConfig, stream: SensorChannel) -> Observation:
    return stream.observe(state, polyline)


@dataclass
class ModelState:
    pid: PidState = field(default_factory=PidState)
    prev_steering: float = 0.0
    received: list = field(default_factory=list)
    rng: np.random.Generator | None = None


def drive(model: DrivingModelConfig, obs: Observation, state: ModelState, speed: float, cfg: SimulatorConfig) -> DrivingCommand:
    if model.uses_oracle:
        lp = obs.true_lateral_position
    else:
        state.received.append(obs.lateral_position)
        lp = state.received[max(0, len(state.received) - 1 - model.effective_delay)]
    raw = pid_raw(state.pid, lp, (model.kp, model.kd, model.ki)) + model.steering_offset
    sd = model.effective_noise_sd
    if sd > 0:
        raw += sd * state.rng.standard_normal()
    steer = K.clip(raw, -1.0, 1.0)
    slew = model.effective_slew
    if slew is not None:
        steer = K.clip(steer, state.prev_steering - slew, state.prev_steering + slew)
    state.prev_steering = steer
    return DrivingCommand(steer, throttle_law(steer, speed, cfg))


# ---------------------------------------------------------------- episodes


class Outcome(str, enum.Enum):
    SUCCESS = "Success"
    OOB = "Oob"
    TIMEOUT = "Timeout"


_OUTCOMES = {K.OUTCOME_SUCCESS: Outcome.SUCCESS, K.OUTCOME_OOB: Outcome.OOB, K.OUTCOME_TIMEOUT: Outcome.TIMEOUT}


@dataclass(frozen=True)
class EpisodeLimits:
    max_steps: int | None = None  # None: derived from road length
    goal_tolerance: float = 0.5

    def steps_for(self, polyline: RoadPolyline, cfg: SimulatorConfig) -> int:
        if self.max_steps is not None:
            return int(self.max_steps)
        return int(3.0 * polyline.length / (cfg.max_speed * cfg.timestep)) + 200


TRACE_CSV_COLUMNS = ("time", "x", "y", "heading", "speed", "lp", "ld", "steering", "throttle")
_CSV_INDEX = (K.T_TIME, K.T_X, K.T_Y, K.T_HEADING, K.T_SPEED, K.T_LP_TRUE, K.T_LD, K.T_STEERING, K.T_THROTTLE)


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    outcome: Outcome
    fitness: float
    max_lateral_position: float
    steps: int
    trace: np.ndarray
    final: np.ndarray

    @property
    def final_state(self) -> VehicleState:
        f = self.final
        return VehicleState(f[K.T_X], f[K.T_Y], f[K.T_HEADING], f[K.T_SPEED], f[K.T_TIME], f[K.T_YAW_RATE])

    def column(self, index: int) -> np.ndarray:
        return self.trace[:, index]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_CSV_COLUMNS)
        for row in self.trace:
            w.writerow([repr(float(row[i])) for i in _CSV_INDEX])
        w.writerow([repr(float(self.final[i])) for i in _CSV_INDEX[:-2]] + ["", ""])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "fitness": self.fitness,
            "max_lateral_position": self.max_lateral_position,
            "steps": self.steps,
        }


def episode_streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (sensor, model) generators for one episode."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def run_episode(
    model: DrivingModelConfig,
    cfg: SimulatorConfig,
    road: RoadPolyline,
    limits: EpisodeLimits | None = None,
    *,
    seed=0,
    lane_width: float = DEFAULT_LANE_WIDTH,
) -> EpisodeResult:
    """Drive ``model`` along ``road`` from its first point until success, OOB or timeout."""
    limits = limits or EpisodeLimits()
    max_steps = limits.steps_for(road, cfg)
    sensor_rng, model_rng = episode_streams(seed)
    sensor_noise = cfg.sensor_noise_sd * sensor_rng.standard_normal(max_steps + 1)
    model_noise = model.effective_noise_sd * model_rng.standard_normal(max_steps + 1)
    trace = np.empty((max_steps, K.N_TRACE_COLS))
    final = np.empty(K.N_TRACE_COLS)
    steps, code, min_ld, max_lp = K.simulate_episode(
        road.center_points,
        road.cumulative_length,
        road.headings,
        lane_width / 2.0,
        cfg.packed(),
        model.packed(),
        sensor_noise,
        model_noise,
        max_steps,
        limits.goal_tolerance,
        trace,
        final,
    )
    return EpisodeResult(_OUTCOMES[int(code)], float(min_ld), float(max_lp), int(steps), trace[:steps].copy(), final)

