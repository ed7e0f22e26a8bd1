"""Resolvent ``(Id + beta a(gamma))^{-1}``: one implicit Euler step.

``f = resolve(gamma, beta, h)`` minimises the strictly convex functional

    Phi(f) = 1/2 ||f - h||_{L2}^2 + beta * J(f)

whose stationarity condition is ``f + beta a(gamma) f = h``.
"""
from __future__ import annotations

import logging
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .grid import ScalarField, WeightField, lq_norm
from .plap import FlowParams, energy, energy_gradient, energy_hessian

logger = logging.getLogger(__name__)


class ResolventError(RuntimeError):
    """Raised when the resolvent iteration fails; carries the residual reached."""

    def __init__(self, message, residual=math.nan, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def tol_contraction(params: FlowParams) -> float:
    """Allowed violation of the exact contraction inequalities."""
    return 1e-8 + 10.0 * params.eps_reg ** min(params.p - 1.0, 1.0)


def resolvent_residual(gamma: WeightField, beta: float, f: ScalarField, h: ScalarField, params: FlowParams) -> float:
    """``||f + beta a(gamma) f - h||_2 / (1 + ||h||_2)``."""
    cm = f.domain.cell_measure
    r = (f.flat - h.flat) + beta * energy_gradient(gamma, f, params) / cm
    return float(np.sqrt(cm * np.dot(r, r)) / (1.0 + lq_norm(h, 2)))


def resolve(gamma: WeightField, beta: float, h: ScalarField, params: FlowParams) -> ScalarField:
    if not beta > 0:
        raise ValueError(f"beta must be positive (got {beta})")
    if gamma.domain != h.domain:
        raise ValueError("weight and field live on different grids")
    dom = h.domain
    cm = dom.cell_measure
    hv = h.flat.copy()
    scale = 1.0 + lq_norm(h, 2)
    # constants are fixed points; skip the solve to return them exactly
    if np.ptp(hv) == 0.0:
        return h

    def field(v):
        return ScalarField(dom, v)

    def phi(v):
        dv = v - hv
        return 0.5 * cm * float(np.dot(dv, dv)) + beta * energy(gamma, field(v), params)

    def grad(v):
        return cm * (v - hv) + beta * energy_gradient(gamma, field(v), params)

    def resid(g):
        return float(np.sqrt(np.dot(g, g) / cm) / scale)

    f = hv.copy()
    g = grad(f)
    res = resid(g)
    for it in range(params.max_iter):
        if res <= params.solver_tol:
            return field(f)
        if not np.all(np.isfinite(g)):
            raise ResolventError("non-finite gradient in resolvent iterate (check eps_reg)", res, it)
        H = energy_hessian(gamma, field(f), params, shift=cm, scale=beta)
        try:
            d = -spla.spsolve(H.tocsc(), g)
        except RuntimeError:
            d = np.full_like(f, np.nan)
        if not np.all(np.isfinite(d)) or np.dot(d, g) >= 0:
            # ill-conditioned Newton system: fall back to a Jacobi-preconditioned gradient step
            d = -g / H.diagonal()
        f_new, res_new, g_new = _line_search(phi, grad, resid, f, d, g, res)
        if f_new is None and not np.allclose(d, -g / H.diagonal()):
            d = -g / H.diagonal()
            f_new, res_new, g_new = _line_search(phi, grad, resid, f, d, g, res)
        if f_new is None:
            raise ResolventError(f"line search stalled at residual {res:.3e}", res, it)
        f, g, res = f_new, g_new, res_new
    if res <= params.solver_tol:
        return field(f)
    raise ResolventError(f"resolvent did not converge in {params.max_iter} iterations (residual {res:.3e})", res, params.max_iter)


def _line_search(phi, grad, resid, f, d, g, res, c1=1e-4):
    """Step along ``d`` minimising Phi.

    The unit Newton step is kept unless it overshoots the minimiser along
    ``d``; then the convex 1-D problem is solved through the sign change of
    the directional derivative.  Near faces whose gradient tends to zero with
    p < 2 the unit step maps ``a`` to roughly ``-a`` and would 2-cycle.
    """
    slope0 = float(np.dot(g, d))
    trial = f + d
    if np.all(np.isfinite(trial)):
        g1 = grad(trial)
        slope1 = float(np.dot(g1, d))
        if np.all(np.isfinite(g1)) and slope1 <= 0.0:
            r1 = resid(g1)
            if phi(trial) <= phi(f) + c1 * slope0 or r1 < res:
                return trial, r1, g1
    # bracket [0, hi] with negative derivative at 0 and non-negative at hi
    hi = 1.0
    while True:
        t_try = f + hi * d
        if np.all(np.isfinite(t_try)):
            gt = grad(t_try)
            if np.all(np.isfinite(gt)) and float(np.dot(gt, d)) >= 0.0:
                break
            if np.all(np.isfinite(gt)):
                hi *= 2.0
                if hi > 1e6:
                    return None, res, g
                continue
        hi *= 0.5
        if hi < 1e-14:
            return None, res, g
    try:
        t = brentq(lambda t: float(np.dot(grad(f + t * d), d)), 0.0, hi, xtol=1e-12 * hi, rtol=1e-10)
    except ValueError:
        return None, res, g
    if t <= 0.0:
        return None, res, g
    trial = f + t * d
    gt = grad(trial)
    return trial, resid(gt), gt


def resolvent_contraction_check(gamma, beta, h1, h2, params, q) -> float:
    """``||R h1 - R h2||_q - ||h1 - h2||_q``; non-positive in exact arithmetic."""
    if q not in (1, 2, math.inf):
        raise ValueError("q must be 1, 2 or inf")
    f1 = resolve(gamma, beta, h1, params)
    f2 = resolve(gamma, beta, h2, params)
    return lq_norm(f1 - f2, q) - lq_norm(h1 - h2, q)


def mean_preservation_check(gamma, beta, h, params) -> float:
    from .grid import average

    return abs(average(resolve(gamma, beta, h, params)) - average(h))
