"""Experiment configuration: nested sections, YAML I/O and dotted overrides."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from ..exceptions import ConfigError

SYSTEMS = ("ks", "mackey_glass", "analytic")
OBSERVATIONS = ("pod", "delay", "identity")
COVER_MODES = ("subdivision", "classic", "sweep")


@dataclass
class SystemConfig:
    kind: str = "mackey_glass"
    # Kuramoto-Sivashinsky
    mu: float = 15.0
    n_modes: int = 64
    dt: float = 0.01
    # Mackey-Glass
    beta: float = 2.0
    gamma: float = 1.0
    eta: float = 9.65
    tau: float = 2.0
    n_history: int = 120
    # closed-form maps on R^k
    map_name: str = "saddle-curved"
    map_params: dict = field(default_factory=dict)


@dataclass
class SimulateConfig:
    T: float = 2000.0
    stride: float = 0.2
    discard: float = 0.25  # leading fraction of the run dropped as transient


@dataclass
class ObservationConfig:
    kind: str = "delay"
    k: int = 7
    mu_ref: Optional[float] = None  # POD basis parameter; None means system.mu


@dataclass
class CoveringConfig:
    mode: str = "subdivision"
    depth: int = 35
    T: float = 1.0
    h: float = 0.2
    n_test_points: int = 1000
    points_per_box: Optional[int] = None
    lower: Optional[list] = None  # bounds of Q; None derives them from data
    upper: Optional[list] = None
    margin: float = 1.5  # Q half-widths relative to the observed range when derived
    seed_point: Optional[list] = None
    seed_depth: Optional[int] = None
    perturbation: float = 1e-4
    # lifted ensemble for subdivision / classic continuation of PDE/DDE maps
    n_ensemble: int = 40000
    n_trajectories: int = 20
    burn_in: float = 100.0
    ensemble_stride: float = 0.2


@dataclass
class DmapsConfig:
    epsilon: object = "auto"  # "auto" uses eps* of the dimension scan
    alpha: float = 1.0
    min_neighbors: int = 8
    n_ev: int = 10
    n_coords: int = 3
    m: int = 5000
    n_extend: int = 5000
    largest_component: bool = True
    selection: str = "linear"
    i_min: int = -30
    i_max: int = 10
    n_fine: int = 50
    coords: Optional[list] = None  # hand-picked eigenvector indices for export


@dataclass
class ExportConfig:
    T: float = 200.0
    stride: float = 0.2


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    scale: str = "desk"
    seed: int = 0
    output_dir: str = "run"
    system: SystemConfig = field(default_factory=SystemConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    covering: CoveringConfig = field(default_factory=CoveringConfig)
    dmaps: DmapsConfig = field(default_factory=DmapsConfig)
    export: ExportConfig = field(default_factory=ExportConfig)

    @property
    def k(self):
        return self.observation.k

    @property
    def basis_mu(self):
        mu = self.observation.mu_ref
        return self.system.mu if mu is None else mu

    def to_dict(self):
        return dataclasses.asdict(self)

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self):
        """Stable hash of every setting except the output location."""
        data = self.to_dict()
        data.pop("output_dir")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    def validate(self):
        s, o, c, d = self.system, self.observation, self.covering, self.dmaps
        _check(s.kind in SYSTEMS, f"system.kind must be one of {SYSTEMS}")
        _check(o.kind in OBSERVATIONS, f"observation.kind must be one of {OBSERVATIONS}")
        _check(c.mode in COVER_MODES, f"covering.mode must be one of {COVER_MODES}")
        _check(self.scale in ("desk", "paper"), "scale must be 'desk' or 'paper'")
        _check(o.k >= 1, "observation.k must be positive")
        _check(0 < c.depth <= 63, "covering.depth must lie in 1..63")
        _check(d.m >= 2, "dmaps.m must be at least 2")
        _check(0 <= d.alpha <= 1, "dmaps.alpha must lie in [0, 1]")
        _check(d.n_coords <= d.n_ev, "dmaps.n_coords cannot exceed dmaps.n_ev")
        _check(d.epsilon == "auto" or _positive(d.epsilon), "dmaps.epsilon must be 'auto' or positive")
        _check(0 <= self.simulate.discard < 1, "simulate.discard must lie in [0, 1)")
        if s.kind == "ks":
            _check(o.kind == "pod", "the KS system is observed through a POD basis")
        if s.kind == "mackey_glass":
            _check(o.kind == "delay", "Mackey-Glass is observed through delay coordinates")
        if o.kind == "pod":
            _check(s.kind == "ks", "POD observation needs the KS system")
        if s.kind == "analytic":
            _check(o.kind == "identity", "closed-form maps use the identity observation")
            _check(c.mode != "sweep", "sweep continuation needs a flow")
        for name in ("lower", "upper", "seed_point"):
            value = getattr(c, name)
            _check(value is None or len(value) == o.k, f"covering.{name} needs {o.k} entries")
        if d.coords is not None:
            _check(all(1 <= i <= d.n_ev for i in d.coords), "dmaps.coords must index 1..n_ev")
        return self


def _positive(value):
    try:
        return float(value) > 0
    except (TypeError, ValueError):
        return False


def _check(ok, message):
    if not ok:
        raise ConfigError(message)


def from_dict(data, base=None):
    """Overlay a nested mapping on ``base`` (defaults when None)."""
    cfg = ExperimentConfig() if base is None else dataclasses.replace(base)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    sections = {f.name: f for f in fields(ExperimentConfig)}
    for key, value in data.items():
        if key not in sections:
            raise ConfigError(f"unknown configuration key '{key}'")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"section '{key}' must be a mapping")
            setattr(cfg, key, _merge_section(current, value, key))
        else:
            setattr(cfg, key, _coerce(value, current, key))
    return cfg


def _merge_section(section, values, prefix):
    names = {f.name for f in fields(section)}
    updates = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown configuration key '{prefix}.{key}'")
        updates[key] = _coerce(value, getattr(section, key), f"{prefix}.{key}")
    return dataclasses.replace(section, **updates)


def _coerce(value, current, name):
    if value is None or current is None or isinstance(current, (str, dict, list)):
        return value
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} expects true/false, got {value!r}")
        return value
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} expects a number, got {value!r}") from None
    if isinstance(current, int):
        if number != int(number):
            raise ConfigError(f"{name} expects an integer, got {value!r}")
        return int(number)
    return number


def apply_override(cfg, item):
    """Apply one ``section.key=value`` override (value parsed as YAML)."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value '{raw}': {exc}") from None
    parts = key.strip().split(".")
    nested = value
    for part in reversed(parts[1:]):
        nested = {part: nested}
    return from_dict({parts[0]: nested}, cfg)


def load_config(path, scale=None, seed=None, overrides=()):
    """Resolve a config file: recipe defaults, then file values, then overrides.

    A file may name a ``recipe`` (``ks`` or ``mg``, plus ``mu`` for KS); the
    recipe supplies every default for the chosen scale.  Relative output
    directories are resolved against the file's directory.
    """
    from .recipes import recipe

    path = Path(path) if path is not None else None
    data = {}
    if path is not None:
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping")
    data = dict(data)
    name = data.pop("recipe", None)
    mu = data.pop("mu", None)
    chosen_scale = scale or data.get("scale") or "desk"
    if name is not None:
        base = recipe(name, scale=chosen_scale, mu=mu)
    else:
        base = ExperimentConfig()
    data.pop("scale", None)
    cfg = from_dict(data, base)
    cfg.scale = chosen_scale
    if seed is not None:
        cfg.seed = int(seed)
    for item in overrides:
        cfg = apply_override(cfg, item)
    if path is not None and not Path(cfg.output_dir).is_absolute():
        cfg.output_dir = str(path.parent / cfg.output_dir)
    return cfg.validate()
