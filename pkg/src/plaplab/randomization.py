"""Random weights ``g(omega)``, random initial data ``u(omega)`` and pathwise ensembles.

Every random draw comes from a Philox counter-based generator keyed by
``(seed, stream)``, so path ``i`` of an ensemble depends only on
``base_seed + i`` and never on execution order.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import GridDomain, ScalarField, WeightField, average, lq_norm, truncate
from .plap import FlowParams
from .resolvent import ResolventError, tol_contraction
from .semigroup import deviation_energy, evolve

logger = logging.getLogger(__name__)

STREAM_WEIGHT = 0
STREAM_INIT = 1

WEIGHT_KINDS = ("clamped-lognormal-field", "two-point-mixture", "constant")
INIT_KINDS = ("smooth-random-bump-sum", "gaussian-field", "scaled-sign-pattern", "constant")


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream)``."""
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class RandomWeightModel:
    g1: float = 0.5
    g2: float = 2.0
    correlation_length: float = 0.3
    kind: str = "clamped-lognormal-field"
    sigma: float = 1.0
    n_modes: int = 16
    mixture_prob: float = 0.5

    def __post_init__(self):
        if not (0 < self.g1 <= self.g2 < math.inf):
            raise ValueError(f"need 0 < g1 <= g2 (got {self.g1}, {self.g2})")
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"weight kind must be one of {WEIGHT_KINDS} (got {self.kind!r})")
        if not self.correlation_length > 0:
            raise ValueError("correlation_length must be positive")
        if not 0 <= self.mixture_prob <= 1:
            raise ValueError("mixture_prob must lie in [0, 1]")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")


@dataclass(frozen=True)
class RandomInitModel:
    kind: str = "smooth-random-bump-sum"
    amplitude: float = 1.0
    k_trunc: float | None = None
    n_bumps: int = 3
    correlation_length: float = 0.3
    n_modes: int = 16

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"init kind must be one of {INIT_KINDS} (got {self.kind!r})")
        if self.k_trunc is not None and not self.k_trunc > 0:
            raise ValueError("k_trunc must be positive when given")
        if self.n_bumps < 1 or self.n_modes < 1:
            raise ValueError("n_bumps and n_modes must be >= 1")
        if not self.correlation_length > 0:
            raise ValueError("correlation_length must be positive")


def _cosine_field(rng: np.random.Generator, n_modes: int, ell: float):
    """Random Fourier features: approximately unit-variance Gaussian field with
    squared-exponential covariance of length ``ell``."""
    omega = rng.normal(scale=1.0 / ell, size=(n_modes, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
    amp = math.sqrt(2.0 / n_modes)

    def fn(x, y):
        arg = omega[:, 0, None, None] * x[None] + omega[:, 1, None, None] * y[None] + phase[:, None, None]
        return amp * np.cos(arg).sum(axis=0)

    return fn


def sample_weight(model: RandomWeightModel, domain: GridDomain, seed: int) -> WeightField:
    rng = rng_for(seed, STREAM_WEIGHT)
    g1, g2 = model.g1, model.g2
    if model.kind == "constant" or g1 == g2:
        # the constant law sits at the lower bound, which is a valid member for any (g1, g2)
        return WeightField.constant(domain, g1, g1, g2)
    if model.kind == "two-point-mixture":
        # simple random weight: one of two fixed fields
        if rng.uniform() < model.mixture_prob:
            return WeightField.constant(domain, g1, g1, g2)
        lx, ly = domain.lx, domain.ly
        return WeightField.from_function(
            domain,
            lambda x, y: g1 + (g2 - g1) * 0.5 * (1.0 + np.cos(np.pi * x / lx) * np.cos(np.pi * y / ly)),
            g1,
            g2,
        )
    fn = _cosine_field(rng, model.n_modes, model.correlation_length)
    return WeightField.from_function(domain, lambda x, y: g1 * np.exp(model.sigma * fn(x, y)), g1, g2)


def sample_initial(model: RandomInitModel, domain: GridDomain, seed: int) -> ScalarField:
    rng = rng_for(seed, STREAM_INIT)
    x, y = domain.cell_centers()
    a = model.amplitude
    if model.kind == "constant":
        u = np.full(domain.shape, a)
    elif model.kind == "smooth-random-bump-sum":
        size = min(domain.lx, domain.ly)
        u = np.zeros(domain.shape)
        for _ in range(model.n_bumps):
            cx, cy = rng.uniform(0, domain.lx), rng.uniform(0, domain.ly)
            w = rng.uniform(0.1, 0.3) * size
            s = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
            u += s * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * w * w))
        u *= a
    elif model.kind == "gaussian-field":
        u = a * _cosine_field(rng, model.n_modes, model.correlation_length)(x, y)
    else:  # scaled-sign-pattern
        kx, ky = rng.integers(1, 3, size=2)
        scale = rng.uniform(0.5, 1.5)
        pattern = np.sign(np.cos(np.pi * kx * x / domain.lx) * np.cos(np.pi * ky * y / domain.ly))
        u = a * scale * np.where(pattern == 0, 1.0, pattern)
    field_ = ScalarField(domain, u)
    if model.k_trunc is not None:
        field_ = truncate(field_, model.k_trunc)
    return field_


@dataclass(frozen=True)
class PathSummary:
    seed: int
    delta_u: float
    l1_norm_u0: float
    times: tuple
    l1_dev: tuple
    linf_dev: tuple
    l2sq_dev: tuple
    mass_drift: float
    norm_decrease_ok: bool

    def to_dict(self):
        return {
            "seed": self.seed,
            "delta_u": self.delta_u,
            "l1_norm_u0": self.l1_norm_u0,
            "times": list(self.times),
            "l1_dev": list(self.l1_dev),
            "linf_dev": list(self.linf_dev),
            "l2sq_dev": list(self.l2sq_dev),
            "mass_drift": self.mass_drift,
            "norm_decrease_ok": self.norm_decrease_ok,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            seed=int(d["seed"]),
            delta_u=float(d["delta_u"]),
            l1_norm_u0=float(d["l1_norm_u0"]),
            times=tuple(float(t) for t in d["times"]),
            l1_dev=tuple(float(v) for v in d["l1_dev"]),
            linf_dev=tuple(float(v) for v in d["linf_dev"]),
            l2sq_dev=tuple(float(v) for v in d["l2sq_dev"]),
            mass_drift=float(d["mass_drift"]),
            norm_decrease_ok=bool(d["norm_decrease_ok"]),
        )


@dataclass(frozen=True)
class EnsembleResult:
    seeds: tuple
    paths: tuple
    p: float
    g1: float
    g2: float

    @property
    def n(self) -> int:
        return len(self.paths)

    @property
    def times(self) -> tuple:
        return self.paths[0].times

    def delta_u(self) -> np.ndarray:
        return np.array([pth.delta_u for pth in self.paths])

    def values_at(self, t: float, quantity: str = "l2sq_dev") -> np.ndarray:
        """Per-path values of ``quantity`` at snapshot time ``t``."""
        times = np.asarray(self.times)
        k = int(np.argmin(np.abs(times - t)))
        if not math.isclose(times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"t = {t} is not on the ensemble snapshot grid {self.times}")
        return np.array([getattr(pth, quantity)[k] for pth in self.paths])


def mass_tolerance(u0: ScalarField) -> float:
    return 1e-10 * (1.0 + lq_norm(u0, math.inf))


def run_path(weight_model, init_model, domain, params, t_grid, m_per_unit_time, seed) -> PathSummary:
    """One realisation: sample ``(g(omega), u(omega))`` and evolve deterministically."""
    gamma = sample_weight(weight_model, domain, seed)
    u0 = sample_initial(init_model, domain, seed)
    t_end = max(t_grid)
    m = max(1, int(round(m_per_unit_time * t_end)))
    try:
        traj = evolve(gamma, u0, t_end, m, params, snapshot_times=list(t_grid))
    except ResolventError as exc:
        raise ResolventError(f"seed {seed}: {exc}", exc.residual, exc.iterations) from exc
    drift = float(np.abs(traj.mass_ledger - traj.mass_ledger[0]).max())
    if drift > mass_tolerance(u0):
        raise RuntimeError(f"seed {seed}: mass drift {drift:.3e} exceeds tolerance")
    tol = tol_contraction(params)
    mean0 = average(u0)
    l1, linf, l2sq = [], [], []
    norms_ok = True
    for snap in traj.snapshots:
        dev = snap - mean0
        l1.append(lq_norm(dev, 1))
        linf.append(lq_norm(dev, math.inf))
        l2sq.append(deviation_energy(snap))
        # comparison with the zero-initial companion path, T(t) 0 = 0
        for q in (1, 2, math.inf):
            norms_ok &= lq_norm(snap, q) <= lq_norm(u0, q) + tol
    return PathSummary(
        seed=int(seed),
        delta_u=deviation_energy(u0),
        l1_norm_u0=lq_norm(u0, 1),
        times=tuple(float(t) for t in traj.snapshot_times),
        l1_dev=tuple(l1),
        linf_dev=tuple(linf),
        l2sq_dev=tuple(l2sq),
        mass_drift=drift,
        norm_decrease_ok=bool(norms_ok),
    )


def _run_path_star(args):
    return run_path(*args)


def run_ensemble(weight_model, init_model, domain, params, t_grid, m_per_unit_time, N, base_seed, threads=1) -> EnsembleResult:
    """N independent paths with seeds ``base_seed + i``; results in index order.

    ``threads > 1`` spreads paths over worker processes; the output does not
    depend on it.
    """
    if N < 1:
        raise ValueError("ensemble size N must be >= 1")
    t_grid = [float(t) for t in t_grid]
    if any(b <= a for a, b in zip(t_grid, t_grid[1:])) or not t_grid or t_grid[0] < 0:
        raise ValueError("t_grid must be non-empty, non-negative and increasing")
    if not m_per_unit_time > 0:
        raise ValueError("m_per_unit_time must be positive")
    seeds = [int(base_seed) + i for i in range(int(N))]
    jobs = [(weight_model, init_model, domain, params, t_grid, m_per_unit_time, s) for s in seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=int(threads)) as pool:
            paths = list(pool.map(_run_path_star, jobs))
    else:
        paths = [run_path(*job) for job in jobs]
    return EnsembleResult(seeds=tuple(seeds), paths=tuple(paths), p=params.p, g1=weight_model.g1, g2=weight_model.g2)
