import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from plaplab.bounds import (
    BoundOptions,
    ConstantSet,
    Moments,
    c_star_formula,
    clopper_pearson_upper,
    delta_u,
    empirical_tail,
    estimate_constants,
    estimate_moments,
    l1_decay_bound,
    linf_decay_bound,
    log_decay_bound,
    rayleigh_max,
    tail_bound,
    verify,
)
from plaplab.grid import ScalarField, make_grid
from plaplab.plap import FlowParams
from plaplab.randomization import EnsembleResult, PathSummary, RandomInitModel, RandomWeightModel, run_ensemble

UNIT = make_grid(8, 8)


def consts_with(c_star=1.0, p=1.5, g1=1.0, **kw):
    base = dict(C_S1=math.sqrt(2) / 2, C_S2=1 / math.pi, Ctilde_Sm=1.0, C_star=c_star, p=p, g1=g1, area=1.0)
    base.update(kw)
    return ConstantSet(**base)


def fake_ensemble(deltas, values, t=1.0, p=1.5, g1=1.0):
    paths = tuple(
        PathSummary(seed=i, delta_u=float(du), l1_norm_u0=1.0, times=(t,), l1_dev=(0.0,), linf_dev=(0.0,), l2sq_dev=(float(v),), mass_drift=0.0, norm_decrease_ok=True)
        for i, (du, v) in enumerate(zip(deltas, values))
    )
    return EnsembleResult(seeds=tuple(range(len(paths))), paths=paths, p=p, g1=g1, g2=2.0)


@pytest.fixture(scope="module")
def unit_consts():
    return estimate_constants(UNIT, FlowParams(1.5), g1=1.0)


@pytest.fixture(scope="module")
def unit_consts_p3():
    return estimate_constants(UNIT, FlowParams(3.0), delta=1.5, g1=1.0)


# -- delta_u ------------------------------------------------------------


def test_delta_u_examples():
    d = make_grid(2, 2)
    assert delta_u(ScalarField.constant(d, 4.0)) == 0.0
    assert delta_u(ScalarField(d, np.array([[1.0, 1.0], [-1.0, -1.0]]))) == pytest.approx(1.0)


@given(st.floats(-100, 100), st.integers(0, 2**31))
def test_delta_u_shift_invariant(c, seed):
    u = ScalarField(UNIT, np.random.default_rng(seed).standard_normal(UNIT.shape))
    assert delta_u(u + c) == pytest.approx(delta_u(u), rel=1e-9, abs=1e-9)


# -- constants ------------------------------------------------------------


def _neumann_first_eigenvalue(n):
    d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) * n
    lap1 = (d1.T @ d1).toarray()
    ev = np.linalg.eigvalsh(np.kron(lap1, np.eye(n)) + np.kron(np.eye(n), lap1))
    return ev[1]


def test_poincare_l2_unit_square(unit_consts):
    assert unit_consts.C_S2 == pytest.approx(1 / math.pi)
    assert 1 / math.sqrt(_neumann_first_eigenvalue(32)) == pytest.approx(unit_consts.C_S2, abs=1e-3)
    assert unit_consts.provenance["C_S2"] == "analytic"


@pytest.mark.parametrize("dims", [(8, 8, 1.0, 1.0), (6, 9, 1.0, 1.5)])
def test_poincare_l1_dominates_discrete_quotients(dims):
    d = make_grid(*dims)
    assert rayleigh_max(d, ("lq_mean_free", 1.0), [("grad", 1.0)]) <= d.diam / 2


def test_constant_set_consistency(unit_consts, unit_consts_p3):
    assert unit_consts.C_S1 == pytest.approx(math.sqrt(2) / 2)
    for c in (unit_consts, unit_consts_p3):
        assert c.recompute_c_star() == c.C_star
        assert ConstantSet.from_dict(c.to_dict()) == c
    assert unit_consts.provenance["Ctilde_Sm"] == "estimated"
    assert set(unit_consts_p3.provenance) >= {"C_S1", "C_S2", "C_S_1pd", "Ctilde_Sm", "Ctilde_S_1pd", "C_star"}
    # the embedding norm is at least the value on constants, |S|^{-1/2}
    assert unit_consts.Ctilde_Sm >= 2.0 * 1.0 - 1e-9


def test_estimate_constants_rejects_bad_delta():
    with pytest.raises(ValueError):
        estimate_constants(UNIT, FlowParams(1.5), delta=0.5)
    with pytest.raises(ValueError):
        estimate_constants(UNIT, FlowParams(3.0), delta=2.5)


def test_c_star_saturates_and_increases():
    assert c_star_formula(1.5, 1.0, 1.0, 0.01, 0.01) == 1.5
    base = dict(area=1.0, C_S1=0.7, Ctilde_Sm=2.0)
    g = [c_star_formula(1.5, g1, **base) for g1 in (0.2, 0.5, 1.0)]
    assert g[0] < g[1] < g[2]
    ps = [c_star_formula(p, 0.5, **base) for p in (1.2, 1.5, 1.8)]
    assert ps[0] < ps[1] < ps[2]


# -- decay bounds ---------------------------------------------------------


def test_l1_decay_examples(unit_consts):
    assert l1_decay_bound(1.0, 1.0, 1.5, 1.0, UNIT, unit_consts) == pytest.approx(math.sqrt(2) / 2 * 4 ** (2 / 3), rel=1e-12)
    assert l1_decay_bound(1.0, 1.0, 1.5, 1.0, UNIT, unit_consts) == pytest.approx(1.7818, abs=1e-4)
    assert l1_decay_bound(0.3, 0.0, 1.5, 1.0, UNIT, unit_consts) == 0.0
    assert l1_decay_bound(4.0, 2.0, 1.5, 1.0, UNIT, unit_consts) / l1_decay_bound(1.0, 2.0, 1.5, 1.0, UNIT, unit_consts) == pytest.approx(4 ** (-1 / 1.5))
    with pytest.raises(ValueError):
        l1_decay_bound(0.0, 1.0, 1.5, 1.0, UNIT, unit_consts)


def test_linf_decay_examples(unit_consts, unit_consts_p3):
    c = unit_consts_p3
    assert linf_decay_bound(1.0, 0.0, 3.0, 1.5, 1.0, UNIT, c) == 0.0
    with pytest.raises(ValueError):
        linf_decay_bound(1.0, 1.0, 1.5, 0.5, 1.0, UNIT, unit_consts)
    val = linf_decay_bound(1.0, 1.0, 3.0, 1.5, 1.0, UNIT, c)
    q = 2.5
    manual = c.Ctilde_S_1pd * (c.C_S_1pd ** q + 1) ** (1 / q) * 1.0 * (2.0 / 1.0) ** (1 / 3)
    assert val == manual and 0 < val < math.inf
    with pytest.raises(ValueError):
        linf_decay_bound(1.0, 1.0, 3.0, 1.2, 1.0, UNIT, c)


def test_log_decay_examples():
    c = consts_with(c_star=1.0)
    assert log_decay_bound(5.0, 0.0, c) == 0.0
    assert log_decay_bound(2.0, 1.0, c) == pytest.approx(2 * math.exp(-1), abs=1e-12)
    for dv in (0.1, 1.0, 7.0):
        assert log_decay_bound(0.0, dv, c) == 2 * dv >= math.log(dv * dv + 1)
    with pytest.raises(ValueError):
        log_decay_bound(1.0, 1.0, consts_with(p=3.0))


@given(t=st.floats(0.01, 10), dt=st.floats(0.01, 10), du=st.floats(0.01, 10), ddu=st.floats(0.01, 10))
def test_bound_monotonicity(t, dt, du, ddu):
    c = consts_with(c_star=0.3)
    assert l1_decay_bound(t + dt, du, 1.5, 1.0, UNIT, c) < l1_decay_bound(t, du, 1.5, 1.0, UNIT, c)
    assert l1_decay_bound(t, du + ddu, 1.5, 1.0, UNIT, c) > l1_decay_bound(t, du, 1.5, 1.0, UNIT, c)
    dv = math.sqrt(du)
    assert log_decay_bound(t + dt, dv, c) < log_decay_bound(t, dv, c)
    c3 = consts_with(p=3.0, delta=1.5, C_S_1pd=0.7, Ctilde_S_1pd=2.0)
    assert linf_decay_bound(t + dt, du, 3.0, 1.5, 1.0, UNIT, c3) < linf_decay_bound(t, du, 3.0, 1.5, 1.0, UNIT, c3)


# -- tails ----------------------------------------------------------------


def test_tail_examples():
    c = consts_with(c_star=1.0)
    zero = Moments(E_du=0.0, E_exp_decay=1.0, E_pow=1.0, E_exp_eps=1.0, t=1.0, r=1.0, eps=1.0)
    for kind in ("basic", "poly", "exp"):
        assert tail_bound(kind, 1.0, 0.5, zero, c) == 0.0
    m = Moments(E_du=2.0, E_exp_decay=1.0, E_pow=1.0, E_exp_eps=1.0, t=1.0, r=1.0, eps=1.0)
    assert tail_bound("basic", 1.0, 0.5, m, c) == pytest.approx(2 * math.sqrt(2.0) / math.log(1.5))
    m = Moments(E_du=1.0, E_exp_decay=1.0, E_pow=4.0, E_exp_eps=1.0, t=2.0, r=1.0, eps=1.0)
    assert tail_bound("poly", 2.0, math.e - 1, m, c) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        tail_bound("poly", 2.0, 1.0, m, c, r=0.5)
    with pytest.raises(ValueError):
        tail_bound("exp", 2.0, 1.0, m, c, eps=0.0)
    with pytest.raises(ValueError):
        tail_bound("gauss", 2.0, 1.0, m, c)
    with pytest.raises(ValueError):
        tail_bound("basic", 2.0, 1.0, m, consts_with(p=3.0))


def test_empirical_tail_examples():
    ens = fake_ensemble([1, 1, 1, 1], [1.0, 2.0, 3.0, 4.0])
    est = empirical_tail(ens, 1.0, 2.5)
    assert est.fraction == 0.5
    assert est.ci_halfwidth == pytest.approx(1.96 * math.sqrt(0.25 / 4))
    assert est.cp_upper == pytest.approx(clopper_pearson_upper(2, 4))
    assert empirical_tail(ens, 1.0, 0.5).fraction == 1.0
    zero = fake_ensemble([0, 0], [0.0, 0.0])
    assert empirical_tail(zero, 1.0, 1e-6).fraction == 0.0
    with pytest.raises(KeyError):
        empirical_tail(ens, 2.0, 1.0)


def test_clopper_pearson_known_values():
    # zero successes out of n: upper limit 1 - 0.025^{1/n}
    assert clopper_pearson_upper(0, 10) == pytest.approx(1 - 0.025 ** 0.1, rel=1e-10)
    assert clopper_pearson_upper(5, 5) == 1.0


def test_moments_examples():
    c = consts_with(c_star=1.0)
    m = estimate_moments(fake_ensemble([0.0], [0.0]), 1.0, 1.0, 1.0, c)
    assert (m.E_du, m.E_pow, m.E_exp_eps) == (0.0, 1.0, 1.0)
    m = estimate_moments(fake_ensemble([0.0, 3.0], [0, 0]), 1.0, 1.0, 0.5, c)
    assert m.E_pow == pytest.approx(8.5)
    a = estimate_moments(fake_ensemble([0.1, 2.0, 0.7], [0, 0, 0]), 0.5, 2.0, 0.3, c)
    b = estimate_moments(fake_ensemble([2.0, 0.7, 0.1], [0, 0, 0]), 0.5, 2.0, 0.3, c)
    assert a == b


# -- verify ---------------------------------------------------------------


def _constant_ensemble(p):
    return run_ensemble(
        RandomWeightModel(g1=1.0, g2=1.0, kind="constant"), RandomInitModel(kind="constant"), UNIT, FlowParams(p), [0.1, 0.2, 0.5], 50, 3, 0
    )


def test_verify_constant_ensemble(unit_consts):
    report = verify(_constant_ensemble(1.5), unit_consts, UNIT)
    assert report.all_pass
    for row in report.rows:
        assert row.status in ("pass", "not applicable")
        if row.status == "pass":
            assert row.empirical == 0.0
    assert {r.status for r in report.rows if r.bound == "linf_decay"} == {"not applicable"}
    assert "not applicable" in report.table()


def test_verify_p3_uses_linf_and_gates_tails(unit_consts_p3):
    report = verify(_constant_ensemble(3.0), unit_consts_p3, UNIT, BoundOptions(delta=1.5))
    assert report.all_pass
    assert {r.status for r in report.rows if r.bound == "linf_decay"} == {"pass"}
    assert {r.status for r in report.rows if r.bound.startswith("tail_") or r.bound == "log_decay"} == {"not applicable"}


def test_verify_requires_regime_constants(unit_consts):
    p3 = consts_with(p=3.0)
    with pytest.raises(ValueError):
        verify(_constant_ensemble(3.0), p3, UNIT)
    with pytest.raises(ValueError):
        verify(_constant_ensemble(3.0), unit_consts, UNIT)


def test_verify_flags_violations():
    c = consts_with(c_star=1.0)
    paths = (PathSummary(0, 1e-6, 1.0, (1.0,), (5.0,), (5.0,), (0.5,), 0.0, True),)
    ens = EnsembleResult((0,), paths, 1.5, 1.0, 2.0)
    report = verify(ens, c, UNIT, BoundOptions(alpha_grid=(0.1,)))
    failed = {r.bound for r in report.failures}
    assert {"l1_decay", "log_decay"} <= failed
    assert not report.all_pass
