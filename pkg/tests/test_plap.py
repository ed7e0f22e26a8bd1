import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import loop_energy
from plaplab.grid import ScalarField, WeightField, average, lq_norm, make_grid, neumann_divergence
from plaplab.plap import (
    FlowParams,
    apply_operator,
    canonical_basis,
    energy,
    energy_gradient,
    energy_hessian,
    flux_field,
    weak_residual,
)

FLUXES = ("two_point", "full")


def random_weight(d, rng, g1=0.5, g2=2.0):
    return WeightField(d, rng.uniform(g1, g2, (d.nx - 1, d.ny)), rng.uniform(g1, g2, (d.nx, d.ny - 1)), g1, g2)


@pytest.mark.parametrize("kw", [dict(p=1.0), dict(p=2.0), dict(p=0.5), dict(p=1.5, eps_reg=-1), dict(p=1.5, solver_tol=0), dict(p=3, flux="upwind")])
def test_flow_params_rejects(kw):
    with pytest.raises(ValueError):
        FlowParams(**kw)


def test_conjugate_exponent():
    assert FlowParams(3.0).conjugate == pytest.approx(1.5)


@pytest.mark.parametrize("flux", FLUXES)
@pytest.mark.parametrize("p", [1.5, 3.0])
def test_energy_of_constant_is_zero(flux, p, rng):
    d = make_grid(5, 4)
    assert energy(random_weight(d, rng), ScalarField.constant(d, 2.5), FlowParams(p, flux=flux)) == 0.0


@pytest.mark.parametrize("flux", FLUXES)
def test_energy_linear_field_converges(flux):
    params = FlowParams(1.5, eps_reg=0.0, flux=flux)
    errs = []
    for n in (8, 16, 32, 64):
        d = make_grid(n, n)
        e = energy(WeightField.constant(d, 1.0), ScalarField.from_function(d, lambda x, y: x), params)
        errs.append(abs(e - 1 / 1.5))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.02


@pytest.mark.parametrize("flux", FLUXES)
@given(c=st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), seed=st.integers(0, 2**31))
def test_energy_homogeneous(flux, c, seed):
    rng = np.random.default_rng(seed)
    d = make_grid(4, 5)
    g = random_weight(d, rng)
    u = ScalarField(d, rng.standard_normal(d.shape))
    params = FlowParams(2.5, eps_reg=0.0, flux=flux)
    assert energy(g, u * c, params) == pytest.approx(abs(c) ** 2.5 * energy(g, u, params), rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_energy_matches_loop_oracle(p, rng):
    d = make_grid(5, 6, 1.3, 0.7)
    g = random_weight(d, rng)
    u = ScalarField(d, rng.standard_normal(d.shape))
    params = FlowParams(p, eps_reg=1e-3)
    ref = loop_energy(u.values, g.x, g.y, d.hx, d.hy, p, 1e-3)
    assert energy(g, u, params) == pytest.approx(ref, rel=1e-13)


@pytest.mark.parametrize("flux", FLUXES)
@pytest.mark.parametrize("p", [1.5, 3.0])
def test_operator_kernel_and_mean_zero(flux, p, rng):
    d = make_grid(6, 5)
    g = random_weight(d, rng)
    params = FlowParams(p, flux=flux)
    assert np.abs(apply_operator(g, ScalarField.constant(d, -1.2), params).values).max() == 0.0
    u = ScalarField(d, 10 * rng.standard_normal(d.shape))
    assert abs(average(apply_operator(g, u, params))) <= 1e-12 * max(1.0, lq_norm(u, math.inf))


@pytest.mark.parametrize("flux", FLUXES)
@pytest.mark.parametrize("p", [1.5, 3.0])
def test_directional_derivative(flux, p, rng):
    d = make_grid(4, 4)
    params = FlowParams(p, eps_reg=1e-3, flux=flux)
    for _ in range(20):
        g = random_weight(d, rng)
        u = ScalarField(d, rng.standard_normal(d.shape))
        w = ScalarField(d, rng.standard_normal(d.shape))
        errs = []
        for delta in (1e-3, 5e-4):
            fd = (energy(g, u + w * delta, params) - energy(g, u - w * delta, params)) / (2 * delta)
            pair = float(np.dot(apply_operator(g, u, params).flat, w.flat)) * d.cell_measure
            errs.append(abs(fd - pair))
        # second order: halving delta quarters the error, unless already at round-off
        assert errs[1] <= 0.3 * errs[0] + 1e-9


@pytest.mark.parametrize("flux", FLUXES)
def test_hessian_matches_finite_differences(flux, rng):
    d = make_grid(4, 3)
    params = FlowParams(1.5, eps_reg=1e-2, flux=flux)
    g = random_weight(d, rng)
    u = ScalarField(d, rng.standard_normal(d.shape))
    H = energy_hessian(g, u, params).toarray()
    np.testing.assert_allclose(H, H.T, rtol=1e-12, atol=1e-12)
    eps = 1e-6
    fd = np.empty_like(H)
    for k in range(d.ncells):
        e = np.zeros(d.ncells)
        e[k] = eps
        fd[:, k] = (energy_gradient(g, ScalarField(d, u.flat + e), params) - energy_gradient(g, ScalarField(d, u.flat - e), params)) / (2 * eps)
    np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-6 * np.abs(H).max())


def test_two_point_flux_is_negative_divergence(rng):
    d = make_grid(5, 4)
    g = random_weight(d, rng)
    u = ScalarField(d, rng.standard_normal(d.shape))
    params = FlowParams(1.5)
    np.testing.assert_allclose(apply_operator(g, u, params).values, -neumann_divergence(flux_field(g, u, params)).values, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("flux", FLUXES)
@given(seed=st.integers(0, 2**31), p=st.sampled_from([1.3, 1.5, 3.0, 4.0]))
def test_monotone(flux, seed, p):
    rng = np.random.default_rng(seed)
    d = make_grid(4, 4)
    g = random_weight(d, rng)
    u = ScalarField(d, rng.standard_normal(d.shape))
    w = ScalarField(d, rng.standard_normal(d.shape))
    params = FlowParams(p, eps_reg=0.0, flux=flux)
    pair = float(np.dot((apply_operator(g, u, params) - apply_operator(g, w, params)).flat, (u - w).flat)) * d.cell_measure
    assert pair >= -1e-12


def test_weak_residual_examples(rng):
    d = make_grid(4, 4)
    g = random_weight(d, rng)
    params = FlowParams(1.5)
    basis = canonical_basis(d)
    c = ScalarField.constant(d, 0.3)
    assert weak_residual(g, c, ScalarField.constant(d, 0.0), params, basis[:3]) == 0.0
    f = ScalarField(d, rng.standard_normal(d.shape))
    fhat = apply_operator(g, f, params)
    assert weak_residual(g, f, fhat, params, basis) <= 1e-12
    bump = np.zeros(d.ncells)
    bump[5] = 1.0
    pert = ScalarField(d, fhat.flat + bump)
    expected = d.cell_measure / (1 + lq_norm(pert, 1))
    assert weak_residual(g, f, pert, params, [basis[5]]) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(ValueError):
        weak_residual(g, f, fhat, params, [])
