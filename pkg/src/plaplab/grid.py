"""Uniform rectangular cell grid standing in for the spatial domain.

Cells are indexed ``(i, j)`` with ``i`` along x.  Cell values are stored as
arrays of shape ``(nx, ny)``.  Only interior faces are represented: x-faces
sit between cells ``(i, j)`` and ``(i + 1, j)`` (shape ``(nx - 1, ny)``),
y-faces between ``(i, j)`` and ``(i, j + 1)`` (shape ``(nx, ny - 1)``).
Boundary faces carry no flux, which is the zero-flux Neumann condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GridDomain:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("cell counts must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"need nx, ny >= 2 (got {self.nx}, {self.ny})")
        if not (self.lx > 0 and self.ly > 0) or not (math.isfinite(self.lx) and math.isfinite(self.ly)):
            raise ValueError(f"side lengths must be positive (got {self.lx}, {self.ly})")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "lx", float(self.lx))
        object.__setattr__(self, "ly", float(self.ly))

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def diam(self) -> float:
        return math.hypot(self.lx, self.ly)

    @property
    def cell_measure(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def n_xfaces(self) -> int:
        return (self.nx - 1) * self.ny

    @property
    def n_yfaces(self) -> int:
        return self.nx * (self.ny - 1)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (``indexing="ij"``) of cell-center coordinates."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def xface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(1, self.nx)) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def yface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(1, self.ny)) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    # Sparse difference operators acting on row-major flattened cell values.
    # They are cached on the (immutable) instance.

    @cached_property
    def diff_x(self) -> sp.csr_matrix:
        """Normal difference quotient on x-faces, ``(u[i+1,j] - u[i,j]) / hx``."""
        d = _diff_matrix(self.nx) / self.hx
        return sp.kron(d, sp.identity(self.ny), format="csr")

    @cached_property
    def diff_y(self) -> sp.csr_matrix:
        d = _diff_matrix(self.ny) / self.hy
        return sp.kron(sp.identity(self.nx), d, format="csr")

    @cached_property
    def tangential_x(self) -> sp.csr_matrix:
        """Tangential (y) derivative on x-faces.

        Average of the y-differences on the faces adjacent to the two cells
        sharing the x-face; faces missing at the boundary are skipped, so
        linear profiles are reproduced exactly.
        """
        avg = _face_to_cell_average(self.ny)
        cell_dy = sp.kron(sp.identity(self.nx), avg @ (_diff_matrix(self.ny) / self.hy))
        pair = sp.kron(_pair_average(self.nx), sp.identity(self.ny))
        return (pair @ cell_dy).tocsr()

    @cached_property
    def tangential_y(self) -> sp.csr_matrix:
        avg = _face_to_cell_average(self.nx)
        cell_dx = sp.kron(avg @ (_diff_matrix(self.nx) / self.hx), sp.identity(self.ny))
        pair = sp.kron(sp.identity(self.nx), _pair_average(self.ny))
        return (pair @ cell_dx).tocsr()

    def __getstate__(self):
        # cached sparse operators are rebuilt on demand
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly}

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)


def _diff_matrix(n: int) -> sp.csr_matrix:
    """(n-1) x n forward difference matrix."""
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _pair_average(n: int) -> sp.csr_matrix:
    """(n-1) x n matrix averaging neighbouring entries."""
    return sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _face_to_cell_average(n: int) -> sp.csr_matrix:
    """n x (n-1) matrix averaging the interior faces adjacent to each cell."""
    rows, cols, vals = [], [], []
    for c in range(n):
        faces = [f for f in (c - 1, c) if 0 <= f < n - 1]
        for f in faces:
            rows.append(c)
            cols.append(f)
            vals.append(1.0 / len(faces))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n - 1))


def make_grid(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> GridDomain:
    return GridDomain(nx, ny, lx, ly)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per cell."""

    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.domain.shape:
            v = v.reshape(self.domain.shape)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("ScalarField values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def constant(cls, domain: GridDomain, c: float) -> "ScalarField":
        return cls(domain, np.full(domain.shape, float(c)))

    @classmethod
    def from_function(cls, domain: GridDomain, fn) -> "ScalarField":
        x, y = domain.cell_centers()
        return cls(domain, np.broadcast_to(fn(x, y), domain.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _coerce(self, other):
        if isinstance(other, ScalarField):
            if other.domain != self.domain:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.domain, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.domain, self.values - self._coerce(other))

    def __rsub__(self, other):
        return ScalarField(self.domain, self._coerce(other) - self.values)

    def __mul__(self, c):
        return ScalarField(self.domain, self.values * self._coerce(c))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.domain, -self.values)

    def __repr__(self):
        return f"ScalarField({self.domain.nx}x{self.domain.ny}, mean={average(self):.6g})"


@dataclass(frozen=True, eq=False)
class FaceVectorField:
    """Normal component of a face-centred vector on every interior face."""

    domain: GridDomain
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        d = self.domain
        x = np.asarray(self.x, dtype=float).reshape(d.nx - 1, d.ny)
        y = np.asarray(self.y, dtype=float).reshape(d.nx, d.ny - 1)
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))

    @classmethod
    def zeros(cls, domain: GridDomain) -> "FaceVectorField":
        return cls(domain, np.zeros((domain.nx - 1, domain.ny)), np.zeros((domain.nx, domain.ny - 1)))

    def scaled(self, wx, wy=None) -> "FaceVectorField":
        if wy is None:
            wy = wx
        return FaceVectorField(self.domain, self.x * wx, self.y * wy)


@dataclass(frozen=True, eq=False)
class WeightField(FaceVectorField):
    """Face-valued weight with ``g1 <= value <= g2`` on every interior face."""

    g1: float = 1.0
    g2: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not (0 < self.g1 <= self.g2 < math.inf):
            raise ValueError(f"weight bounds must satisfy 0 < g1 <= g2 (got {self.g1}, {self.g2})")
        lo = min(self.x.min(initial=math.inf), self.y.min(initial=math.inf))
        hi = max(self.x.max(initial=-math.inf), self.y.max(initial=-math.inf))
        if lo < self.g1 or hi > self.g2:
            raise ValueError(f"weight values in [{lo}, {hi}] violate bounds [{self.g1}, {self.g2}]")

    @classmethod
    def constant(cls, domain: GridDomain, c: float = 1.0, g1: float | None = None, g2: float | None = None):
        g1 = c if g1 is None else g1
        g2 = c if g2 is None else g2
        return cls(domain, np.full((domain.nx - 1, domain.ny), c), np.full((domain.nx, domain.ny - 1), c), g1, g2)

    @classmethod
    def from_function(cls, domain: GridDomain, fn, g1: float, g2: float) -> "WeightField":
        """Evaluate ``fn(x, y)`` at face centres and clamp into ``[g1, g2]``."""
        wx = np.clip(np.broadcast_to(fn(*domain.xface_centers()), (domain.nx - 1, domain.ny)), g1, g2)
        wy = np.clip(np.broadcast_to(fn(*domain.yface_centers()), (domain.nx, domain.ny - 1)), g1, g2)
        return cls(domain, wx, wy, g1, g2)

    def perturbed(self, dx, dy) -> "WeightField":
        return WeightField(self.domain, self.x + dx, self.y + dy, self.g1, self.g2)


def average(u: ScalarField) -> float:
    d = u.domain
    return float(u.values.sum() * d.cell_measure / d.area)


def lq_norm(u: ScalarField, q: float) -> float:
    if q == math.inf:
        return float(np.abs(u.values).max())
    if not q >= 1:
        raise ValueError(f"q must be >= 1 or inf (got {q})")
    a = np.abs(u.values)
    if q == 1:
        return float(a.sum() * u.domain.cell_measure)
    # rescale to avoid overflow/underflow for large q
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * ((a / m) ** q).sum() ** (1.0 / q) * u.domain.cell_measure ** (1.0 / q))


def inner(u: ScalarField, w: ScalarField) -> float:
    """Discrete L2 pairing with cell measure."""
    return float((u.values * w.values).sum() * u.domain.cell_measure)


def gradient(u: ScalarField) -> FaceVectorField:
    return FaceVectorField(u.domain, np.diff(u.values, axis=0) / u.domain.hx, np.diff(u.values, axis=1) / u.domain.hy)


def neumann_divergence(flux: FaceVectorField) -> ScalarField:
    """Discrete divergence with zero boundary flux, the negative adjoint of :func:`gradient`."""
    d = flux.domain
    out = np.zeros(d.shape)
    out[:-1, :] += flux.x / d.hx
    out[1:, :] -= flux.x / d.hx
    out[:, :-1] += flux.y / d.hy
    out[:, 1:] -= flux.y / d.hy
    return ScalarField(d, out)


def face_pairing(f: FaceVectorField, g: FaceVectorField) -> float:
    """Sum over interior faces of ``f * g * facemeasure * h``; both factors equal the cell measure."""
    return float(((f.x * g.x).sum() + (f.y * g.y).sum()) * f.domain.cell_measure)


def gradient_speed(u: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Full gradient magnitude on x-faces and y-faces (normal plus averaged tangential part)."""
    d = u.domain
    v = u.flat
    ax, bx = d.diff_x @ v, d.tangential_x @ v
    ay, by = d.diff_y @ v, d.tangential_y @ v
    return np.hypot(ax, bx), np.hypot(ay, by)


def gradient_norm(u: ScalarField, q: float) -> float:
    """Discrete ``||grad u||_{L^q}`` on the face dual mesh.

    Each interior face holds half a cell of dual measure and carries the full
    gradient magnitude, so ``u(x, y) = x`` has norm ``lambda(S)^{1/q}`` up to
    O(h) boundary truncation.
    """
    sx, sy = gradient_speed(u)
    s = np.concatenate([sx, sy])
    w = 0.5 * u.domain.cell_measure
    if q == math.inf:
        return float(s.max(initial=0.0))
    if not q >= 1:
        raise ValueError(f"q must be >= 1 or inf (got {q})")
    return float((w * (s ** q).sum()) ** (1.0 / q))


def truncate(u: ScalarField, k: float) -> ScalarField:
    """Cellwise truncation ``tau_k``: clamp to ``[-k, k]``."""
    if not k > 0:
        raise ValueError("truncation level must be positive")
    return ScalarField(u.domain, np.clip(u.values, -k, k))
