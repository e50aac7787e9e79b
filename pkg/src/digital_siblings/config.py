"""Experiment configuration: INI-style key/value sections.

Example::

    [experiment]
    seed = 7
    repetitions = 2

    [search]
    population_size = 20
    iterations = 30

    [model]
    kind = mistuned_pid
    kp = 0.4

    [sibling.ds1]
    engine = kinematic
    sensor_bias = 0.3

    [sibling.ds2]
    engine = dynamic

    [twin]
    engine = dynamic
    tire_stiffness = 5
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .dynamics import DrivingModelConfig, EpisodeLimits, SimulatorConfig
from .errors import ConfigError
from .search import SearchConfig

DEFAULT_TWIN_NAME = "dt"


@dataclass(frozen=True)
class ExperimentConfig:
    siblings: tuple = ()
    twin: SimulatorConfig | None = None
    model: DrivingModelConfig = field(default_factory=DrivingModelConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    repetitions: int = 5
    seed: int = 0
    out_dir: str = "runs"
    limits: EpisodeLimits = field(default_factory=EpisodeLimits)
    offline_roads: int = 10
    density_bins: int = 25
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "siblings", tuple(self.siblings))
        if self.search.seed != self.seed:
            object.__setattr__(self, "search", dataclasses.replace(self.search, seed=self.seed))

    def validate(self, need_twin: bool = False):
        if len(self.siblings) < 2:
            raise ConfigError("sibling: at least two [sibling.<name>] sections are required")
        names = [s.name for s in self.siblings]
        if len(set(names)) != len(names):
            raise ConfigError(f"sibling: duplicate sibling names {names}")
        if self.repetitions < 1:
            raise ConfigError("experiment.repetitions: must be >= 1")
        if self.offline_roads < 1:
            raise ConfigError("experiment.offline_roads: must be >= 1")
        if self.density_bins < 1:
            raise ConfigError("experiment.density_bins: must be >= 1")
        if need_twin and self.twin is None:
            raise ConfigError("twin: a [twin] section is required for evaluation")
        if self.twin is not None and self.twin.name in names:
            raise ConfigError(f"twin.name: '{self.twin.name}' clashes with a sibling name")
        if self.strict:
            prints = [s.physics_fingerprint() for s in self.siblings]
            if len(set(prints)) != len(prints):
                raise ConfigError("sibling: sibling simulators must differ in at least one physics parameter")
            if self.twin is not None and self.twin.physics_fingerprint() in prints:
                raise ConfigError("twin: the twin must differ from every sibling")
        return self

    def to_dict(self) -> dict:
        def sim(s):
            d = dataclasses.asdict(s)
            d["engine"] = s.engine.value
            return d

        return {
            "experiment": {
                "seed": self.seed,
                "repetitions": self.repetitions,
                "offline_roads": self.offline_roads,
                "density_bins": self.density_bins,
                "strict": self.strict,
            },
            "search": dataclasses.asdict(self.search),
            "model": self.model.to_dict(),
            "limits": dataclasses.asdict(self.limits),
            "siblings": [sim(s) for s in self.siblings],
            "twin": None if self.twin is None else sim(self.twin),
        }

    @classmethod
    def from_dict(cls, d: dict, out_dir: str = "runs") -> ExperimentConfig:
        e = d["experiment"]
        return cls(
            siblings=tuple(SimulatorConfig(**s) for s in d["siblings"]),
            twin=None if d.get("twin") is None else SimulatorConfig(**d["twin"]),
            model=DrivingModelConfig(**d["model"]),
            search=SearchConfig(**d["search"]),
            repetitions=e["repetitions"],
            seed=e["seed"],
            out_dir=out_dir,
            limits=EpisodeLimits(**d["limits"]),
            offline_roads=e["offline_roads"],
            density_bins=e["density_bins"],
            strict=e["strict"],
        )

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def sibling(self, name: str) -> SimulatorConfig:
        for s in self.siblings:
            if s.name == name:
                return s
        if self.twin is not None and self.twin.name == name:
            return self.twin
        raise KeyError(name)


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _convert(path: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return _BOOL[raw.lower()]
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if default is None:
            if raw.lower() in ("", "none", "null"):
                return None
            try:
                return int(raw)
            except ValueError:
                return float(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except (KeyError, ValueError):
        raise ConfigError(f"{path}: cannot parse {raw!r}") from None


def _build(cls, section, path: str, extra: dict | None = None, skip=()):
    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else None) for f in dataclasses.fields(cls)}
    kwargs = dict(extra or {})
    for key, raw in section.items():
        if key not in defaults or key in skip:
            raise ConfigError(f"{path}.{key}: unknown key")
        default = defaults[key]
        if hasattr(default, "value"):  # enums are given by name
            default = str(default.value)
        kwargs[key] = _convert(f"{path}.{key}", raw, default)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


_EXPERIMENT_KEYS = {"seed": 0, "repetitions": 5, "out": "runs", "offline_roads": 10, "density_bins": 25, "strict": True}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None

    exp = {}
    if cp.has_section("experiment"):
        for key, raw in cp["experiment"].items():
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"experiment.{key}: unknown key")
            exp[key] = _convert(f"experiment.{key}", raw, _EXPERIMENT_KEYS[key])
    seed = exp.get("seed", 0)

    siblings = []
    twin = None
    for name in cp.sections():
        if name.startswith("sibling."):
            sim_name = name.split(".", 1)[1]
            siblings.append(_build(SimulatorConfig, cp[name], name, {"name": sim_name}, skip=("name",)))
        elif name == "twin":
            extra = {} if "name" in cp[name] else {"name": DEFAULT_TWIN_NAME}
            twin = _build(SimulatorConfig, cp[name], "twin", extra)
        elif name not in ("experiment", "search", "model", "limits"):
            raise ConfigError(f"{name}: unknown section")

    empty: dict = {}
    search = _build(SearchConfig, cp["search"] if cp.has_section("search") else empty, "search", {"seed": seed}, skip=("seed",))
    model = _build(DrivingModelConfig, cp["model"] if cp.has_section("model") else empty, "model")
    limits = _build(EpisodeLimits, cp["limits"] if cp.has_section("limits") else empty, "limits")
    cfg = ExperimentConfig(
        siblings=tuple(siblings),
        twin=twin,
        model=model,
        search=search,
        repetitions=exp.get("repetitions", 5),
        seed=seed,
        out_dir=exp.get("out", "runs"),
        limits=limits,
        offline_roads=exp.get("offline_roads", 10),
        density_bins=exp.get("density_bins", 25),
        strict=exp.get("strict", True),
    )
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
