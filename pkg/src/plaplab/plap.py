"""Discrete weighted p-Laplacian ``a(gamma) u = -div(gamma |grad u|^{p-2} grad u)``.

The operator is the cell-measure-scaled gradient of the convex energy

    J(u) = (1/p) * sum_faces w_f * gamma_f * ((s_f + eps^2)^{p/2} - eps^p),

where ``s_f`` is the squared face gradient and ``w_f`` its dual measure.  Two
face-gradient reconstructions are available:

``"two_point"``
    ``s_f`` is the squared normal difference quotient, ``w_f`` the cell
    measure.  The flux across a face depends only on the two adjacent cells,
    which makes the resolvent order preserving.
``"full"``
    ``s_f`` adds the squared tangential derivative averaged from the
    neighbouring faces; each face then holds half a cell of dual measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import FaceVectorField, GridDomain, ScalarField, WeightField, lq_norm

FLUX_KINDS = ("two_point", "full")


@dataclass(frozen=True)
class FlowParams:
    p: float
    eps_reg: float = 1e-8
    solver_tol: float = 1e-10
    max_iter: int = 200
    flux: str = "two_point"

    def __post_init__(self):
        if not (self.p > 1 and math.isfinite(self.p)) or self.p == 2:
            raise ValueError(f"p must lie in (1, inf) without 2 (got {self.p})")
        if not self.eps_reg >= 0:
            raise ValueError("eps_reg must be >= 0")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be > 0")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        if self.flux not in FLUX_KINDS:
            raise ValueError(f"flux must be one of {FLUX_KINDS} (got {self.flux!r})")

    @property
    def conjugate(self) -> float:
        """Hoelder conjugate p / (p - 1)."""
        return self.p / (self.p - 1.0)


def _components(domain: GridDomain, flux: str):
    """Per face family: (family, [(C, C^T), ...], dual measure), cached per grid."""
    cache = domain.__dict__.setdefault("_plap_components", {})
    if flux not in cache:
        if flux == "two_point":
            fams = [("x", [domain.diff_x], domain.cell_measure), ("y", [domain.diff_y], domain.cell_measure)]
        else:
            half = 0.5 * domain.cell_measure
            fams = [
                ("x", [domain.diff_x, domain.tangential_x], half),
                ("y", [domain.diff_y, domain.tangential_y], half),
            ]
        cache[flux] = [(fam, [(c, c.T.tocsr()) for c in comps], w) for fam, comps, w in fams]
    return cache[flux]


def _check(gamma: WeightField, u: ScalarField):
    if gamma.domain != u.domain:
        raise ValueError("weight and field live on different grids")


def _face_weight(gamma: WeightField, family: str) -> np.ndarray:
    return (gamma.x if family == "x" else gamma.y).ravel()


def _kappa(s: np.ndarray, p: float, eps: float) -> np.ndarray:
    """(s + eps^2)^{(p-2)/2}, with the x = 0 convention |x|^{p-2} x := 0 when eps = 0."""
    base = s + eps * eps
    with np.errstate(divide="ignore"):
        k = np.where(base > 0, base ** (0.5 * (p - 2.0)), 0.0)
    return k


def energy(gamma: WeightField, u: ScalarField, params: FlowParams) -> float:
    _check(gamma, u)
    p, eps = params.p, params.eps_reg
    v = u.flat
    total = 0.0
    for fam, comps, w in _components(u.domain, params.flux):
        s = sum((c @ v) ** 2 for c, _ in comps)
        total += w * float(np.dot(_face_weight(gamma, fam), (s + eps * eps) ** (0.5 * p) - eps ** p))
    return total / p


def energy_gradient(gamma: WeightField, u: ScalarField, params: FlowParams) -> np.ndarray:
    """Gradient of :func:`energy` with respect to the flattened cell values."""
    _check(gamma, u)
    p, eps = params.p, params.eps_reg
    v = u.flat
    g = np.zeros_like(v)
    for fam, comps, w in _components(u.domain, params.flux):
        parts = [c @ v for c, _ in comps]
        s = sum(a * a for a in parts)
        coef = w * _face_weight(gamma, fam) * _kappa(s, p, eps)
        for (_, ct), a in zip(comps, parts):
            g += ct @ (coef * a)
    return g


def _hessian_pattern(domain: GridDomain, flux: str):
    """Fixed sparsity of the Hessian and the linear maps from face coefficients to its entries.

    ``H.data = sum_{(fam, i, j)} P[fam, i, j] @ (w * gamma * d_ij)`` where
    ``d_ij`` is the per-face coefficient coupling components ``i`` and ``j``.
    """
    cache = domain.__dict__.setdefault("_plap_hessian", {})
    if flux in cache:
        return cache[flux]
    n = domain.ncells
    triples = {}
    keys = set()
    for fam, comps, _ in _components(domain, flux):
        for i, (ci, _) in enumerate(comps):
            for j, (cj, _) in enumerate(comps):
                ci_, cj_ = ci.tocsr(), cj.tocsr()
                rows, cols, faces, vals = [], [], [], []
                for f in range(ci_.shape[0]):
                    ki = ci_.indices[ci_.indptr[f]:ci_.indptr[f + 1]]
                    vi = ci_.data[ci_.indptr[f]:ci_.indptr[f + 1]]
                    kj = cj_.indices[cj_.indptr[f]:cj_.indptr[f + 1]]
                    vj = cj_.data[cj_.indptr[f]:cj_.indptr[f + 1]]
                    for a, va in zip(ki, vi):
                        for b, vb in zip(kj, vj):
                            rows.append(a)
                            cols.append(b)
                            faces.append(f)
                            vals.append(va * vb)
                triples[(fam, i, j)] = (np.array(rows), np.array(cols), np.array(faces), np.array(vals), ci_.shape[0])
                keys.update(zip(rows, cols))
    keys.update((k, k) for k in range(n))
    template = sp.csr_matrix((np.ones(len(keys)), tuple(np.array(sorted(keys)).T)), shape=(n, n))
    template.sort_indices()
    pos = {}
    for r in range(n):
        for idx in range(template.indptr[r], template.indptr[r + 1]):
            pos[(r, template.indices[idx])] = idx
    maps = {}
    for key, (rows, cols, faces, vals, nf) in triples.items():
        slots = np.array([pos[(r, c)] for r, c in zip(rows, cols)], dtype=int)
        maps[key] = sp.csr_matrix((vals, (slots, faces)), shape=(template.nnz, nf))
    diag_slots = np.array([pos[(k, k)] for k in range(n)], dtype=int)
    cache[flux] = (template, maps, diag_slots)
    return cache[flux]


def energy_hessian(gamma: WeightField, u: ScalarField, params: FlowParams, shift: float = 0.0, scale: float = 1.0) -> sp.csr_matrix:
    """Sparse ``shift * I + scale * Hessian(J)`` (needs ``eps_reg > 0`` when ``p < 2``)."""
    _check(gamma, u)
    p, eps = params.p, params.eps_reg
    template, maps, diag_slots = _hessian_pattern(u.domain, params.flux)
    v = u.flat
    data = np.zeros(template.nnz)
    for fam, comps, w in _components(u.domain, params.flux):
        parts = [c @ v for c, _ in comps]
        s = sum(a * a for a in parts)
        base = s + eps * eps
        wg = scale * w * _face_weight(gamma, fam)
        kap = _kappa(s, p, eps)
        with np.errstate(divide="ignore", invalid="ignore"):
            dkap = np.where(base > 0, 0.5 * (p - 2.0) * base ** (0.5 * (p - 4.0)), 0.0)
        for i, ai in enumerate(parts):
            for j, aj in enumerate(parts):
                d = 2.0 * dkap * ai * aj
                if i == j:
                    d = d + kap
                data += maps[(fam, i, j)] @ (wg * d)
    data[diag_slots] += shift
    return sp.csr_matrix((data, template.indices, template.indptr), shape=template.shape)


def apply_operator(gamma: WeightField, u: ScalarField, params: FlowParams) -> ScalarField:
    """Discrete ``a(gamma) u``; the flow reads ``u' + a(gamma) u = 0``."""
    g = energy_gradient(gamma, u, params)
    return ScalarField(u.domain, g / u.domain.cell_measure)


def flux_field(gamma: WeightField, u: ScalarField, params: FlowParams) -> FaceVectorField:
    """Normal flux ``gamma |grad u|^{p-2} d_n u`` on every interior face.

    For the two-point reconstruction ``apply_operator == -neumann_divergence(flux_field)``.
    """
    _check(gamma, u)
    p, eps = params.p, params.eps_reg
    d = u.domain
    v = u.flat
    out = {}
    for fam, comps, _ in _components(d, params.flux):
        parts = [c @ v for c, _ in comps]
        s = sum(a * a for a in parts)
        out[fam] = _face_weight(gamma, fam) * _kappa(s, p, eps) * parts[0]
    return FaceVectorField(d, out["x"], out["y"])


def operator_pairing(gamma: WeightField, f: ScalarField, phi: ScalarField, params: FlowParams) -> float:
    """Face-sum form of ``int gamma |grad f|^{p-2} grad f . grad phi``."""
    _check(gamma, f)
    p, eps = params.p, params.eps_reg
    vf, vp = f.flat, phi.flat
    total = 0.0
    for fam, comps, w in _components(f.domain, params.flux):
        parts = [c @ vf for c, _ in comps]
        s = sum(a * a for a in parts)
        coef = w * _face_weight(gamma, fam) * _kappa(s, p, eps)
        total += sum(float(np.dot(coef * a, c @ vp)) for (c, _), a in zip(comps, parts))
    return total


def weak_residual(gamma: WeightField, f: ScalarField, fhat: ScalarField, params: FlowParams, testset) -> float:
    testset = list(testset)
    if not testset:
        raise ValueError("testset must be nonempty")
    cm = f.domain.cell_measure
    worst = 0.0
    for phi in testset:
        lhs = operator_pairing(gamma, f, phi, params)
        rhs = float(np.dot(fhat.flat, phi.flat)) * cm
        worst = max(worst, abs(lhs - rhs))
    return worst / (1.0 + lq_norm(fhat, 1))


def canonical_basis(domain: GridDomain) -> list[ScalarField]:
    basis = []
    for k in range(domain.ncells):
        e = np.zeros(domain.ncells)
        e[k] = 1.0
        basis.append(ScalarField(domain, e))
    return basis
