"""Explicit constants, decay and tail bounds, and empirical verification reports.

The space dimension is fixed at n = 2, so the Sobolev exponent
``m = 2n/(n+2)`` equals 1 and the relevant embedding is ``W^{1,1} -> L^2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.stats import beta as beta_dist

from .grid import GridDomain, ScalarField, average, gradient_norm, lq_norm
from .plap import FlowParams
from .randomization import EnsembleResult, rng_for

logger = logging.getLogger(__name__)

DIM = 2
M_SOBOLEV = 2 * DIM / (DIM + 2)  # = 1
SAFETY_FACTOR = 2.0
N_RANDOM_STARTS = 32
SURROGATE_INF_Q = 64.0

ANALYTIC = "analytic"
ESTIMATED = "estimated"
NOT_COMPUTED = "not-computed"


def delta_u(u: ScalarField) -> float:
    """``||u - mean(u)||_2^2``."""
    return lq_norm(u - average(u), 2) ** 2


def c_star_formula(p: float, g1: float, area: float, C_S1: float, Ctilde_Sm: float) -> float:
    """Rate constant of the log-decay estimate with ``m = 1``."""
    m = M_SOBOLEV
    denom = Ctilde_Sm ** 2 * (C_S1 ** m + 1.0) ** (2.0 / m) * g1 ** (-2.0 / p) * area ** ((p - m) / p)
    return p / max(denom, 1.0)


@dataclass(frozen=True)
class ConstantSet:
    """Poincare and embedding constants for one rectangle, with provenance tags.

    ``C_S_1pd`` and ``Ctilde_S_1pd`` are only filled when ``delta`` is given.
    """

    C_S1: float
    C_S2: float
    Ctilde_Sm: float
    C_star: float
    p: float
    g1: float
    area: float
    delta: float | None = None
    C_S_1pd: float | None = None
    Ctilde_S_1pd: float | None = None
    provenance: dict = field(default_factory=dict)
    raw_estimates: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("C_S1", "C_S2", "Ctilde_Sm", "C_star"):
            if not getattr(self, name) > 0:
                raise ValueError(f"constant {name} must be positive")
        if self.delta is not None:
            for name in ("C_S_1pd", "Ctilde_S_1pd"):
                val = getattr(self, name)
                if val is None or not val > 0:
                    raise ValueError(f"constant {name} must be positive when delta is set")

    def recompute_c_star(self) -> float:
        return c_star_formula(self.p, self.g1, self.area, self.C_S1, self.Ctilde_Sm)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConstantSet":
        return cls(**d)


# ---------------------------------------------------------------------------
# Rayleigh-quotient estimation


class _Quotient:
    """Smoothed log-quotient ``log N(v) - log D(v)`` with analytic gradient.

    ``num`` is ``("lq", q)`` or ``("lq_mean_free", q)``; ``den`` is a list of
    ``("lq", q)`` / ``("grad", q)`` terms that are summed.
    """

    def __init__(self, domain: GridDomain, num, den, eta=1e-9):
        self.d = domain
        self.num = num
        self.den = den
        self.eta2 = eta * eta
        self.cm = domain.cell_measure
        self.D = sp.vstack([domain.diff_x, domain.diff_y]).tocsr()
        self.T = sp.vstack([domain.tangential_x, domain.tangential_y]).tocsr()
        self.DT = self.D.T.tocsr()
        self.TT = self.T.T.tocsr()

    def _lq(self, v, q):
        a = v * v + self.eta2
        val = self.cm * np.sum(a ** (q / 2))
        norm = val ** (1.0 / q)
        g = norm ** (1.0 - q) * self.cm * a ** (q / 2 - 1) * v
        return norm, g

    def _grad(self, v, q):
        A, B = self.D @ v, self.T @ v
        s2 = A * A + B * B + self.eta2
        w = 0.5 * self.cm
        val = w * np.sum(s2 ** (q / 2))
        norm = val ** (1.0 / q)
        coef = norm ** (1.0 - q) * w * s2 ** (q / 2 - 1)
        g = self.DT @ (coef * A) + self.TT @ (coef * B)
        return norm, g

    def _term(self, kind, q, v):
        if kind == "lq":
            return self._lq(v, q)
        if kind == "lq_mean_free":
            n, g = self._lq(v - v.mean(), q)
            return n, g - g.mean()
        if kind == "grad":
            return self._grad(v, q)
        raise ValueError(kind)

    def __call__(self, v):
        n, gn = self._term(*self.num, v)
        dsum, gd = 0.0, np.zeros_like(v)
        for kind, q in self.den:
            val, g = self._term(kind, q, v)
            dsum += val
            gd += g
        f = math.log(n) - math.log(dsum)
        # return the negative for minimization
        return -f, -(gn / n - gd / dsum)


def _exact_quotient(domain, num, den, v) -> float:
    u = ScalarField(domain, v.reshape(domain.shape))
    kind, q = num
    top = lq_norm(u - average(u), q) if kind == "lq_mean_free" else lq_norm(u, q)
    bottom = 0.0
    for kind, q2 in den:
        bottom += gradient_norm(u, q2) if kind == "grad" else lq_norm(u, q2)
    return top / bottom if bottom > 0 else 0.0


def _profiles(domain: GridDomain, include_constant: bool):
    x, y = domain.cell_centers()
    lx, ly = domain.lx, domain.ly
    out = [
        x - lx / 2,
        y - ly / 2,
        (x - lx / 2) / lx + (y - ly / 2) / ly,
        np.cos(np.pi * x / lx),
        np.cos(np.pi * y / ly),
        np.sign(x - lx / 2) + 1e-3 * (x - lx / 2),
        np.exp(-((x / lx) ** 2 + (y / ly) ** 2) / 0.05),
    ]
    if include_constant:
        out += [np.ones(domain.shape), 1.0 + 0.1 * np.cos(np.pi * x / lx)]
    return [o.ravel() for o in out]


def rayleigh_max(domain: GridDomain, num, den, n_random=N_RANDOM_STARTS, seed=0, surrogate=None, include_constant=False) -> float:
    """Largest discrete quotient found from random and profile starts.

    ``surrogate`` replaces the numerator exponent during optimisation (used
    for the non-smooth max norm); the exact quotient is evaluated at the end.
    """
    opt_num = num if surrogate is None else (num[0], surrogate)
    obj = _Quotient(domain, opt_num, den)
    rng = rng_for(seed, 99)
    starts = _profiles(domain, include_constant)
    starts += [rng.standard_normal(domain.ncells) for _ in range(n_random)]
    best = 0.0
    for v0 in starts:
        v0 = v0 / max(np.sqrt(np.mean(v0 * v0)), 1e-300)
        res = minimize(obj, v0, jac=True, method="L-BFGS-B", options={"maxiter": 500, "gtol": 1e-10})
        for cand in (v0, res.x):
            if np.all(np.isfinite(cand)):
                best = max(best, _exact_quotient(domain, num, den, cand))
    return best


def estimate_constants(domain: GridDomain, params: FlowParams, delta: float | None = None, g1: float = 1.0, n_random: int = N_RANDOM_STARTS) -> ConstantSet:
    """Fill a ConstantSet for ``domain``.

    Poincare constants in L1 and L2 are analytic (half the diameter for a
    convex domain, and the first Neumann eigenvalue of the rectangle).  The
    remaining entries are discrete Rayleigh maxima times ``SAFETY_FACTOR``.
    """
    p = params.p
    if not g1 > 0:
        raise ValueError("g1 must be positive")
    if delta is not None:
        if not p > DIM:
            raise ValueError(f"delta requires p > {DIM} (got p = {p})")
        if not (DIM - 1 < delta < p - 1):
            raise ValueError(f"delta must lie in ({DIM - 1}, {p - 1}) (got {delta})")
    C_S1 = domain.diam / 2.0
    C_S2 = max(domain.lx, domain.ly) / math.pi
    m = M_SOBOLEV
    raw = {}
    raw["Ctilde_Sm"] = rayleigh_max(domain, ("lq", 2.0), [("lq", m), ("grad", m)], n_random, include_constant=True)
    Ctilde_Sm = SAFETY_FACTOR * raw["Ctilde_Sm"]
    prov = {"C_S1": ANALYTIC, "C_S2": ANALYTIC, "Ctilde_Sm": ESTIMATED, "C_star": ESTIMATED}
    C_S_1pd = Ctilde_S_1pd = None
    if delta is not None:
        q = 1.0 + delta
        raw["C_S_1pd"] = rayleigh_max(domain, ("lq_mean_free", q), [("grad", q)], n_random)
        raw["Ctilde_S_1pd"] = rayleigh_max(
            domain, ("lq", math.inf), [("lq", q), ("grad", q)], n_random, surrogate=SURROGATE_INF_Q, include_constant=True
        )
        C_S_1pd = SAFETY_FACTOR * raw["C_S_1pd"]
        Ctilde_S_1pd = SAFETY_FACTOR * raw["Ctilde_S_1pd"]
        prov["C_S_1pd"] = ESTIMATED
        prov["Ctilde_S_1pd"] = ESTIMATED
    else:
        prov["C_S_1pd"] = NOT_COMPUTED
        prov["Ctilde_S_1pd"] = NOT_COMPUTED
    logger.info("raw Rayleigh maxima: %s", raw)
    return ConstantSet(
        C_S1=C_S1,
        C_S2=C_S2,
        Ctilde_Sm=Ctilde_Sm,
        C_star=c_star_formula(p, g1, domain.area, C_S1, Ctilde_Sm),
        p=p,
        g1=g1,
        area=domain.area,
        delta=delta,
        C_S_1pd=C_S_1pd,
        Ctilde_S_1pd=Ctilde_S_1pd,
        provenance=prov,
        raw_estimates=raw,
    )


# ---------------------------------------------------------------------------
# Decay bounds


def l1_decay_bound(t: float, du: float, p: float, g1: float, domain: GridDomain, consts: ConstantSet) -> float:
    """``C_S1 lam^{(p-1)/p} (2/(g1|p-2|))^{1/p} du^{1/p} t^{-1/p}``."""
    if not t > 0:
        raise ValueError(f"t must be positive (got {t})")
    lam = domain.area
    return consts.C_S1 * lam ** ((p - 1) / p) * (2.0 / (g1 * abs(p - 2))) ** (1 / p) * du ** (1 / p) * t ** (-1 / p)


def linf_decay_bound(t: float, du: float, p: float, delta: float, g1: float, domain: GridDomain, consts: ConstantSet) -> float:
    """Max-norm decay, available only for ``p > 2`` and ``delta in (1, p - 1)``."""
    if not p > DIM:
        raise ValueError(f"the max-norm bound needs p > {DIM} (got p = {p})")
    if not (DIM - 1 < delta < p - 1):
        raise ValueError(f"delta must lie in ({DIM - 1}, {p - 1}) (got {delta})")
    if not t > 0:
        raise ValueError(f"t must be positive (got {t})")
    if consts.Ctilde_S_1pd is None or consts.C_S_1pd is None or consts.delta != delta:
        raise ValueError(f"constants for delta = {delta} are missing; rerun estimate_constants with delta")
    lam = domain.area
    q = 1.0 + delta
    c_sd = consts.Ctilde_S_1pd * (consts.C_S_1pd ** q + 1.0) ** (1.0 / q)
    return c_sd * lam ** (1.0 / q) * (2.0 / (lam * g1 * abs(p - 2))) ** (1 / p) * du ** (1 / p) * t ** (-1 / p)


def _check_log_regime(p):
    if not 1 < p < 2:
        raise ValueError(f"log-decay and tail bounds need p in (1, 2) (got p = {p})")


def log_decay_bound(t: float, dv: float, consts: ConstantSet) -> float:
    """``2 dv exp(-C* t / (1 + dv^2))``, bounding ``log(||T(t)v - mean||_2^2 + 1)``."""
    _check_log_regime(consts.p)
    if t < 0:
        raise ValueError("t must be non-negative")
    return 2.0 * dv * math.exp(-consts.C_star * t / (1.0 + dv * dv))


# ---------------------------------------------------------------------------
# Tail bounds


TAIL_KINDS = ("basic", "poly", "exp")


@dataclass(frozen=True)
class Moments:
    E_du: float
    E_exp_decay: float
    E_pow: float
    E_exp_eps: float
    t: float
    r: float
    eps: float


def estimate_moments(ens: EnsembleResult, t: float, r: float, eps: float, consts: ConstantSet) -> Moments:
    """Sample means over paths of the quantities entering the tail bounds."""
    du = np.sort(ens.delta_u())  # sorted: sums independent of path order
    return Moments(
        E_du=float(np.mean(du)),
        E_exp_decay=float(np.mean(np.exp(-2.0 * t * consts.C_star / (1.0 + du)))),
        E_pow=float(np.mean((1.0 + du) ** (2 * r))),
        E_exp_eps=float(np.mean(np.exp(eps * du))),
        t=t,
        r=r,
        eps=eps,
    )


def tail_bound(kind: str, t: float, alpha: float, moments: Moments, consts: ConstantSet, r: float | None = None, eps: float | None = None) -> float:
    """Bound on ``P(||T(t)u - mean||_2^2 > alpha)``.

    ``moments`` must have been computed for the same ``t``, ``r`` and ``eps``.
    """
    _check_log_regime(consts.p)
    if not (t > 0 and alpha > 0):
        raise ValueError("t and alpha must be positive")
    c = consts.C_star
    lead = 2.0 / math.log(alpha + 1.0)
    if kind == "basic":
        return lead * math.sqrt(moments.E_du * moments.E_exp_decay)
    if kind == "poly":
        r = moments.r if r is None else r
        if not r >= 1:
            raise ValueError(f"poly tail needs r >= 1 (got {r})")
        return t ** (-r) * lead * (r / (2.0 * c)) ** r * math.sqrt(moments.E_du * moments.E_pow)
    if kind == "exp":
        eps = moments.eps if eps is None else eps
        if not eps > 0:
            raise ValueError(f"exp tail needs eps > 0 (got {eps})")
        return math.exp(-math.sqrt(t) * math.sqrt(eps * c / 2.0)) * math.exp(eps / 2.0) * lead * math.sqrt(moments.E_du * moments.E_exp_eps)
    raise ValueError(f"tail kind must be one of {TAIL_KINDS} (got {kind!r})")


def clopper_pearson_upper(k: int, n: int, level: float = 0.95) -> float:
    """Two-sided exact binomial upper confidence limit."""
    if k >= n:
        return 1.0
    return float(beta_dist.ppf(1.0 - (1.0 - level) / 2.0, k + 1, n - k))


@dataclass(frozen=True)
class TailEstimate:
    fraction: float
    ci_halfwidth: float
    cp_upper: float
    n: int

    @property
    def allowance(self) -> float:
        """Statistical slack used in pass decisions: the larger of the two intervals."""
        return max(self.ci_halfwidth, self.cp_upper - self.fraction)


def empirical_tail(ens: EnsembleResult, t: float, alpha: float) -> TailEstimate:
    vals = ens.values_at(t, "l2sq_dev")
    k = int(np.count_nonzero(vals > alpha))
    n = vals.size
    f = k / n
    return TailEstimate(fraction=f, ci_halfwidth=1.96 * math.sqrt(f * (1.0 - f) / n), cp_upper=clopper_pearson_upper(k, n), n=n)


# ---------------------------------------------------------------------------
# Verification


def discretization_margin(bound: float) -> float:
    return 0.05 * bound + 1e-8


@dataclass(frozen=True)
class BoundOptions:
    r_list: tuple = (1.0, 2.0)
    eps_list: tuple = (1.0,)
    delta: float | None = None
    alpha_grid: tuple = (0.01, 0.05, 0.2)


@dataclass(frozen=True)
class ReportRow:
    bound: str
    t: float
    alpha: float | None
    bound_value: float | None
    empirical: float | None
    margin: float | None
    passed: bool | None
    status: str  # "pass" | "fail" | "not applicable"
    ci_halfwidth: float | None = None
    cp_upper: float | None = None
    worst_seed: int | None = None


@dataclass(frozen=True)
class BoundReport:
    rows: tuple
    assumptions: tuple = ()

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.status == "fail"]

    @property
    def all_pass(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "assumptions": list(self.assumptions), "all_pass": self.all_pass}

    def table(self) -> str:
        head = f"{'bound':<18}{'t':>10}{'alpha':>9}{'bound':>13}{'empirical':>13}{'allow':>11}  status"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            a = "-" if r.alpha is None else f"{r.alpha:g}"
            b = "-" if r.bound_value is None else f"{r.bound_value:.4e}"
            e = "-" if r.empirical is None else f"{r.empirical:.4e}"
            m = "-" if r.margin is None else f"{r.margin:.2e}"
            lines.append(f"{r.bound:<18}{r.t:>10.4g}{a:>9}{b:>13}{e:>13}{m:>11}  {r.status}")
        return "\n".join(lines)


def _na(name, t, alpha=None):
    return ReportRow(name, t, alpha, None, None, None, None, "not applicable")


def _pathwise_row(name, t, pairs):
    """``pairs``: (seed, empirical, bound) per path; the reported path is the tightest one."""
    worst = None
    ok = True
    for seed, emp, bnd in pairs:
        margin = discretization_margin(bnd)
        slack = bnd + margin - emp
        ok &= emp <= bnd + margin
        if worst is None or slack < worst[0]:
            worst = (slack, seed, emp, bnd, margin)
    _, seed, emp, bnd, margin = worst
    return ReportRow(name, t, None, bnd, emp, margin, bool(ok), "pass" if ok else "fail", worst_seed=seed)


def verify(ens: EnsembleResult, consts: ConstantSet, domain: GridDomain, options: BoundOptions = BoundOptions()) -> BoundReport:
    """Check every bound applicable to the ensemble's p regime.

    Pathwise bounds must hold on every path up to the discretization margin;
    tail bounds compare the empirical exceedance fraction against the bound
    plus the binomial allowance and the margin.
    """
    p, g1 = ens.p, ens.g1
    if not math.isclose(consts.p, p) or not math.isclose(consts.g1, g1):
        raise ValueError(f"constants were computed for p = {consts.p}, g1 = {consts.g1}, ensemble has p = {p}, g1 = {g1}")
    delta = options.delta
    if p > DIM and delta is None:
        delta = p / 2.0
    if p > DIM and (consts.delta is None or not math.isclose(consts.delta, delta)):
        raise ValueError(f"p = {p} needs constants estimated for delta = {delta}")
    times = [t for t in ens.times if t > 0]
    rows = []
    for t in times:
        l1 = ens.values_at(t, "l1_dev")
        rows.append(
            _pathwise_row("l1_decay", t, [(pth.seed, l1[i], l1_decay_bound(t, pth.delta_u, p, g1, domain, consts)) for i, pth in enumerate(ens.paths)])
        )
    for t in times:
        if p > DIM:
            li = ens.values_at(t, "linf_dev")
            rows.append(
                _pathwise_row(
                    "linf_decay", t, [(pth.seed, li[i], linf_decay_bound(t, pth.delta_u, p, delta, g1, domain, consts)) for i, pth in enumerate(ens.paths)]
                )
            )
        else:
            rows.append(_na("linf_decay", t))
    log_ok = 1 < p < 2
    for t in times:
        if log_ok:
            l2 = ens.values_at(t, "l2sq_dev")
            rows.append(
                _pathwise_row(
                    "log_decay", t, [(pth.seed, math.log1p(l2[i]), log_decay_bound(t, math.sqrt(pth.delta_u), consts)) for i, pth in enumerate(ens.paths)]
                )
            )
        else:
            rows.append(_na("log_decay", t))
    kinds = [("basic", None, None)] + [("poly", r, None) for r in options.r_list] + [("exp", None, e) for e in options.eps_list]
    for kind, r, e in kinds:
        name = kind if kind == "basic" else (f"poly(r={r:g})" if kind == "poly" else f"exp(eps={e:g})")
        for t in times:
            for alpha in options.alpha_grid:
                if not log_ok:
                    rows.append(_na("tail_" + name, t, alpha))
                    continue
                mom = estimate_moments(ens, t, r if r is not None else 1.0, e if e is not None else 1.0, consts)
                bnd = tail_bound(kind, t, alpha, mom, consts)
                est = empirical_tail(ens, t, alpha)
                margin = discretization_margin(bnd)
                allow = est.allowance + margin
                ok = est.fraction <= bnd + allow
                rows.append(
                    ReportRow(
                        "tail_" + name, t, alpha, bnd, est.fraction, allow, bool(ok), "pass" if ok else "fail",
                        ci_halfwidth=est.ci_halfwidth, cp_upper=est.cp_upper,
                    )
                )
    assumptions = (
        f"embedding constants are discrete Rayleigh maxima times safety factor {SAFETY_FACTOR:g}",
        "expectations are replaced by sample means over the ensemble",
        "discretization margin is 5% of the bound plus 1e-8",
    )
    return BoundReport(rows=tuple(rows), assumptions=assumptions)
