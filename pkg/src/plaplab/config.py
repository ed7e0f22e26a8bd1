"""Experiment configuration: JSON file plus dotted ``key=value`` overrides."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .bounds import BoundOptions
from .grid import GridDomain
from .plap import FLUX_KINDS, FlowParams
from .randomization import INIT_KINDS, WEIGHT_KINDS, RandomInitModel, RandomWeightModel


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class GridConfig:
    nx: int = 8
    ny: int = 8
    lx: float = 1.0
    ly: float = 1.0


@dataclass
class FlowConfig:
    p: float = 1.5
    eps_reg: float = 1e-8
    solver_tol: float = 1e-10
    max_iter: int = 200
    flux: str = "two_point"


@dataclass
class WeightConfig:
    kind: str = "clamped-lognormal-field"
    g1: float = 0.5
    g2: float = 2.0
    correlation_length: float = 0.3
    sigma: float = 1.0
    n_modes: int = 16
    mixture_prob: float = 0.5


@dataclass
class InitConfig:
    kind: str = "smooth-random-bump-sum"
    amplitude: float = 1.0
    k_trunc: float | None = None
    n_bumps: int = 3
    correlation_length: float = 0.3
    n_modes: int = 16


@dataclass
class TimeConfig:
    t_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.5, 1.0])
    m_per_unit_time: float = 100.0


@dataclass
class EnsembleConfig:
    N: int = 50
    base_seed: int = 0


@dataclass
class BoundsConfig:
    r_list: list = field(default_factory=lambda: [1.0, 2.0])
    eps_list: list = field(default_factory=lambda: [1.0])
    delta: float | None = None
    alpha_grid: list = field(default_factory=lambda: [0.01, 0.05, 0.2])
    n_random_starts: int = 32


SECTIONS = {
    "grid": GridConfig,
    "flow": FlowConfig,
    "weight": WeightConfig,
    "init": InitConfig,
    "time": TimeConfig,
    "ensemble": EnsembleConfig,
    "bounds": BoundsConfig,
}
# keys that do not affect results and are left out of the hash
RUNTIME_KEYS = ("out", "threads")


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    weight: WeightConfig = field(default_factory=WeightConfig)
    init: InitConfig = field(default_factory=InitConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    out: str = "out"
    threads: int = 1

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        kwargs = {}
        for key, value in data.items():
            if key in SECTIONS:
                kwargs[key] = _build_section(key, SECTIONS[key], value)
            elif key == "out":
                if not isinstance(value, str):
                    raise ConfigError("out", "must be a string")
                kwargs[key] = value
            elif key == "threads":
                kwargs[key] = _coerce("threads", value, int)
            else:
                raise ConfigError(key, "unknown field")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def with_overrides(self, assignments) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
        data = copy.deepcopy(self.to_dict())
        for item in assignments:
            if "=" not in item:
                raise ConfigError(item, "override must look like key=value")
            path, raw = item.split("=", 1)
            path = path.strip()
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            parts = path.split(".")
            for i, part in enumerate(parts[:-1]):
                if not isinstance(node, dict) or part not in node:
                    raise ConfigError(".".join(parts[: i + 1]), "unknown field")
                node = node[part]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ConfigError(path, "unknown field")
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(data)

    def config_hash(self) -> str:
        data = {k: v for k, v in self.to_dict().items() if k not in RUNTIME_KEYS}
        canon = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- validation and module objects ----------------------------------

    def validate(self) -> None:
        g, f, w, i, t, e, b = self.grid, self.flow, self.weight, self.init, self.time, self.ensemble, self.bounds
        checks = [
            ("grid.nx", g.nx >= 2, "must be >= 2"),
            ("grid.ny", g.ny >= 2, "must be >= 2"),
            ("grid.lx", g.lx > 0, "must be positive"),
            ("grid.ly", g.ly > 0, "must be positive"),
            ("flow.p", f.p > 1 and f.p != 2, "must satisfy p > 1 and p != 2"),
            ("flow.eps_reg", f.eps_reg >= 0, "must be non-negative"),
            ("flow.solver_tol", f.solver_tol > 0, "must be positive"),
            ("flow.max_iter", f.max_iter >= 1, "must be >= 1"),
            ("flow.flux", f.flux in FLUX_KINDS, f"must be one of {FLUX_KINDS}"),
            ("weight.kind", w.kind in WEIGHT_KINDS, f"must be one of {WEIGHT_KINDS}"),
            ("weight.g1", w.g1 > 0, "must be positive"),
            ("weight.g2", w.g2 >= w.g1 and math.isfinite(w.g2), "must be finite and >= weight.g1"),
            ("weight.correlation_length", w.correlation_length > 0, "must be positive"),
            ("weight.n_modes", w.n_modes >= 1, "must be >= 1"),
            ("weight.mixture_prob", 0 <= w.mixture_prob <= 1, "must lie in [0, 1]"),
            ("init.kind", i.kind in INIT_KINDS, f"must be one of {INIT_KINDS}"),
            ("init.k_trunc", i.k_trunc is None or i.k_trunc > 0, "must be positive or null"),
            ("init.n_bumps", i.n_bumps >= 1, "must be >= 1"),
            ("init.n_modes", i.n_modes >= 1, "must be >= 1"),
            ("init.correlation_length", i.correlation_length > 0, "must be positive"),
            ("time.t_grid", len(t.t_grid) > 0 and all(x > 0 for x in t.t_grid), "must be a non-empty list of positive times"),
            ("time.t_grid", all(b2 > a2 for a2, b2 in zip(t.t_grid, t.t_grid[1:])), "must be increasing"),
            ("time.m_per_unit_time", t.m_per_unit_time > 0, "must be positive"),
            ("ensemble.N", e.N >= 1, "must be >= 1"),
            ("ensemble.base_seed", e.base_seed >= 0, "must be non-negative"),
            ("bounds.r_list", all(r >= 1 for r in b.r_list), "entries must be >= 1"),
            ("bounds.eps_list", all(x > 0 for x in b.eps_list), "entries must be positive"),
            ("bounds.alpha_grid", len(b.alpha_grid) > 0 and all(a > 0 for a in b.alpha_grid), "must be a non-empty list of positive values"),
            ("bounds.n_random_starts", b.n_random_starts >= 32, "must be >= 32"),
            ("threads", self.threads >= 1, "must be >= 1"),
        ]
        if b.delta is not None:
            checks.append(("bounds.delta", f.p > 2 and 1 < b.delta < f.p - 1, "requires flow.p > 2 and 1 < delta < p - 1"))
        for path, ok, msg in checks:
            if not ok:
                raise ConfigError(path, msg)

    def domain(self) -> GridDomain:
        g = self.grid
        return GridDomain(g.nx, g.ny, g.lx, g.ly)

    def flow_params(self) -> FlowParams:
        return FlowParams(**asdict(self.flow))

    def weight_model(self) -> RandomWeightModel:
        return RandomWeightModel(**asdict(self.weight))

    def init_model(self) -> RandomInitModel:
        return RandomInitModel(**asdict(self.init))

    def effective_delta(self) -> float | None:
        """Configured delta, or ``p / 2`` (the middle of the admissible range) when p > 2."""
        if self.bounds.delta is not None:
            return self.bounds.delta
        return self.flow.p / 2.0 if self.flow.p > 2 else None

    def bound_options(self) -> BoundOptions:
        b = self.bounds
        return BoundOptions(
            r_list=tuple(b.r_list), eps_list=tuple(b.eps_list), delta=self.effective_delta(), alpha_grid=tuple(b.alpha_grid)
        )


_TYPES = {"int": int, "float": float, "str": str, "list": list}


def _coerce(path, value, typ):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number (got {value!r})")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(path, f"expected an integer (got {value!r})")
        return int(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string (got {value!r})")
        return value
    if typ is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list (got {value!r})")
        return [_coerce(f"{path}[{k}]", v, float) for k, v in enumerate(value)]
    raise TypeError(typ)


def _build_section(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(name, "must be an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{name}.{key}"
        if key not in known:
            raise ConfigError(path, "unknown field")
        ann = known[key].type
        optional = "None" in ann
        base = ann.split("|")[0].strip()
        if value is None:
            if not optional:
                raise ConfigError(path, "must not be null")
            kwargs[key] = None
            continue
        kwargs[key] = _coerce(path, value, _TYPES[base])
    return cls(**kwargs)


def load_config(path=None, overrides=(), seed=None, out=None, threads=None) -> ExperimentConfig:
    """Defaults, then the JSON file, then ``--set`` overrides, then the dedicated flags."""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_json(fh.read())
    else:
        cfg = ExperimentConfig()
    extra = list(overrides)
    if seed is not None:
        extra.append(f"ensemble.base_seed={int(seed)}")
    if out is not None:
        extra.append("out=" + json.dumps(str(out)))
    if threads is not None:
        extra.append(f"threads={int(threads)}")
    return cfg.with_overrides(extra) if extra else cfg
