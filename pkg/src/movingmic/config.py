"""Experiment configuration, parsed from YAML or JSON.

Every section is a frozen dataclass. Unknown keys and wrong types raise
:class:`~movingmic.errors.ConfigError` naming the offending field path, for
example ``scene.rt60``.
"""
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from movingmic.errors import ConfigError

ESTIMATORS = ("krr_m", "krr_md", "rff_m", "rff_md", "krr_s", "krr_sd", "rff_s", "rff_sd",
              "nearest_neighbour")
MOVING = ("krr_m", "krr_md", "rff_m", "rff_md")
DIRECTIONAL = ("krr_md", "rff_md", "krr_sd", "rff_sd")
RFF = ("rff_m", "rff_md", "rff_s", "rff_sd")
SWEEP_AXES = ("lambda0", "D", "N", "rt60", "beta", "snr_db")

_ALIASES = {name.replace("_", "-"): name for name in ESTIMATORS}
_ALIASES.update({"nn": "nearest_neighbour", "nearest-neighbour": "nearest_neighbour"})


def canonical_estimator(name):
    key = str(name).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}",
                          "estimators")
    return key


@dataclass(frozen=True)
class SceneConfig:
    kind: str = "room"
    dimensions: tuple = (5.4, 4.3, 3.2)
    source: tuple = (-1.8, -1.2, 0.3)
    sources: tuple = None
    rt60: float = 0.2
    rt60_method: str = "sabine"
    reflection: object = None
    max_order: int = None
    min_gain: float = 1e-4
    fs: float = 1000.0
    L: int = 500
    highpass: float = 20.0
    c: float = 343.0


@dataclass(frozen=True)
class RegionConfig:
    center: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 0.25)


@dataclass(frozen=True)
class TrajectoryConfig:
    N: int = 8000
    speed: float = 0.5
    ratios: tuple = (3, 4, 5)
    phase: float = 1.5707963267948966
    start: float = 0.0


@dataclass(frozen=True)
class SignalConfig:
    kind: str = "sweep"
    period: int = None
    f_lo: float = None
    f_hi: float = None


@dataclass(frozen=True)
class KernelConfig:
    # a number, or "auto" for a grid search with KRR-SD on the evaluation grid
    beta: object = "auto"
    beta_min: float = 0.0
    beta_max: float = 5.0
    beta_count: int = 32
    # None points from the region centre toward the source
    direction: tuple = None


@dataclass(frozen=True)
class RegularizationConfig:
    lambda0: float = 1e-3
    # "length": lambda = L * lambda0 for moving methods, lambda0 otherwise
    scaling: str = "length"


@dataclass(frozen=True)
class RffConfig:
    D: object = 16
    shared: bool = True


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "direct"
    tol: float = 1e-8
    max_iter: int = None


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "lambda0"
    values: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    region: RegionConfig = field(default_factory=RegionConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    regularization: RegularizationConfig = field(default_factory=RegularizationConfig)
    rff: RffConfig = field(default_factory=RffConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = None
    estimators: tuple = ("krr_m",)
    snr_db: float = 30.0
    stationary_mics: int = 16
    grid_spacing: float = 0.05
    band: tuple = (20.0, 480.0)
    seed: int = 0
    seeds: tuple = (0,)
    dataset: str = "dataset"
    output: str = "results"
    workers: int = 1

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def hash(self):
        """Short stable digest of the configuration."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


_SECTIONS = {
    "scene": SceneConfig, "region": RegionConfig, "trajectory": TrajectoryConfig,
    "signal": SignalConfig, "kernel": KernelConfig, "regularization": RegularizationConfig,
    "rff": RffConfig, "solver": SolverConfig, "sweep": SweepConfig,
}


def _coerce(value, default, path):
    """Convert ``value`` to the type suggested by ``default``."""
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", path)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, list):
            # per-bin values
            return tuple(_coerce(v, default, path) for v in value)
        try:
            ok = not isinstance(value, bool) and float(value).is_integer()
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return int(value)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, got {value!r}", path) from None
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", path)
        if default and len(value) != len(default) and path.split(".")[-1] in (
                "dimensions", "source", "center", "size", "ratios", "band"):
            raise ConfigError(f"expected {len(default)} values, got {len(value)}", path)
        return tuple(_to_tuple(v) for v in value)
    return _to_tuple(value)


def _to_tuple(v):
    return tuple(_to_tuple(x) for x in v) if isinstance(v, list) else v


def _section(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path)
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key; expected one of {', '.join(sorted(names))}",
                              f"{path}.{key}")
        kwargs[key] = _coerce(value, getattr(defaults, key), f"{path}.{key}")
    return cls(**kwargs)


def parse_config(data):
    """Build and validate an :class:`ExperimentConfig` from a plain mapping."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    top = ExperimentConfig()
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _section(_SECTIONS[key], value, key)
        elif key == "estimators" and isinstance(value, str):
            kwargs[key] = (value,)
        elif key == "seeds" and isinstance(value, int) and not isinstance(value, bool):
            # a count: seeds 0, ..., n - 1
            kwargs[key] = tuple(range(value))
        elif key in {f.name for f in dataclasses.fields(ExperimentConfig)}:
            kwargs[key] = _coerce(value, getattr(top, key), key)
        else:
            raise ConfigError("unknown key", key)
    if "estimators" in kwargs:
        est = kwargs["estimators"]
        if isinstance(est, str):
            est = (est,)
        kwargs["estimators"] = tuple(canonical_estimator(e) for e in est)
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def _positive(value, path):
    if value is None or not value > 0:
        raise ConfigError(f"must be positive, got {value!r}", path)


def validate(cfg):
    """Check units, ranges and estimator/parameter compatibility."""
    s = cfg.scene
    if s.kind not in ("room", "free_field"):
        raise ConfigError("must be 'room' or 'free_field'", "scene.kind")
    _positive(s.fs, "scene.fs")
    _positive(s.c, "scene.c")
    if s.L < 1:
        raise ConfigError("must be at least 1", "scene.L")
    if s.highpass is not None and not 0 < s.highpass < s.fs / 2:
        raise ConfigError("must lie strictly between 0 and fs / 2", "scene.highpass")
    if s.kind == "room":
        if any(d <= 0 for d in s.dimensions):
            raise ConfigError("room dimensions must be positive", "scene.dimensions")
        if s.reflection is None:
            _positive(s.rt60, "scene.rt60")
        if s.rt60_method not in ("sabine", "eyring"):
            raise ConfigError("must be 'sabine' or 'eyring'", "scene.rt60_method")
        half = [0.5 * d for d in s.dimensions]
        if any(abs(x) > h for x, h in zip(s.source, half)):
            raise ConfigError("source lies outside the room", "scene.source")
        lo = [c - 0.5 * z for c, z in zip(cfg.region.center, cfg.region.size)]
        hi = [c + 0.5 * z for c, z in zip(cfg.region.center, cfg.region.size)]
        if any(l < -h or u > h for l, u, h in zip(lo, hi, half)):
            raise ConfigError("region of interest must lie inside the room", "region")
    elif not s.sources:
        raise ConfigError("a free-field scene needs at least one source", "scene.sources")
    src = [s.source] if s.kind == "room" else list(s.sources)
    for p in src:
        if all(abs(x - c) <= 0.5 * z for x, c, z in zip(p, cfg.region.center, cfg.region.size)):
            raise ConfigError("sources must lie outside the region of interest", "scene.source")
    if any(z < 0 for z in cfg.region.size):
        raise ConfigError("region size must be non-negative", "region.size")
    if cfg.trajectory.N < 1:
        raise ConfigError("must be at least 1", "trajectory.N")
    _positive(cfg.trajectory.speed, "trajectory.speed")
    if cfg.signal.kind not in ("sweep", "noise"):
        raise ConfigError("must be 'sweep' or 'noise'", "signal.kind")
    if not cfg.estimators:
        raise ConfigError("at least one estimator is required", "estimators")
    lam0 = cfg.regularization.lambda0
    if lam0 is None or lam0 < 0:
        raise ConfigError("must be non-negative", "regularization.lambda0")
    if cfg.regularization.scaling not in ("length", "none"):
        raise ConfigError("must be 'length' or 'none'", "regularization.scaling")
    needs_positive = [e for e in cfg.estimators if e != "nearest_neighbour" and e != "krr_m"
                      and e != "krr_md"]
    if lam0 == 0 and needs_positive:
        raise ConfigError(f"lambda0 = 0 is not allowed for {', '.join(needs_positive)}",
                          "regularization.lambda0")
    D = cfg.rff.D
    Ds = D if isinstance(D, tuple) else (D,)
    if any(not isinstance(d, int) or d < 1 for d in Ds):
        raise ConfigError("must be a positive integer or a list of them", "rff.D")
    if isinstance(D, tuple) and len(D) != s.L // 2 + 1:
        raise ConfigError(f"per-bin D needs L // 2 + 1 = {s.L // 2 + 1} values", "rff.D")
    b = cfg.kernel.beta
    if not (b == "auto" or (isinstance(b, (int, float)) and b >= 0)):
        raise ConfigError("must be 'auto' or a non-negative number", "kernel.beta")
    if cfg.kernel.beta_count < 1 or cfg.kernel.beta_max < cfg.kernel.beta_min:
        raise ConfigError("invalid beta grid", "kernel.beta_count")
    if cfg.solver.kind not in ("direct", "iterative"):
        raise ConfigError("must be 'direct' or 'iterative'", "solver.kind")
    _positive(cfg.solver.tol, "solver.tol")
    needs_mics = [e for e in cfg.estimators if e not in MOVING]
    if needs_mics and cfg.stationary_mics < 1:
        raise ConfigError("stationary estimators need at least one microphone",
                          "stationary_mics")
    if needs_mics and cfg.trajectory.N // max(cfg.stationary_mics, 1) < 1:
        raise ConfigError("trajectory too short for this many stationary microphones",
                          "stationary_mics")
    _positive(cfg.grid_spacing, "grid_spacing")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required", "seeds")
    if cfg.workers < 1:
        raise ConfigError("must be at least 1", "workers")
    if cfg.sweep is not None:
        if cfg.sweep.axis not in SWEEP_AXES:
            raise ConfigError(f"must be one of {', '.join(SWEEP_AXES)}", "sweep.axis")
        if not cfg.sweep.values:
            raise ConfigError("at least one value is required", "sweep.values")
    return cfg


def load_config(path):
    """Read a YAML or JSON configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", str(path)) from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse configuration: {exc}", str(path)) from None
    return parse_config(data)
