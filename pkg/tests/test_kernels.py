import math

import numpy as np
import pytest

from driftlab.fields import Grid, MixedNormSpec, ScalarField
from driftlab.kernels import (
    KernelParams,
    composition_closed_form,
    composition_constant,
    constants_csv,
    default_grid,
    derivative_domination_check,
    fitted_c,
    gaussian_bump,
    grid_id,
    kernel_eval,
    morrey_bound_ratio,
    potential_apply,
    reproduction_constant,
    reproduction_constant_richardson,
    richardson_grids,
)
from oracles import FROZEN_COMPOSITION_11, FROZEN_RICHARDSON_D1, composition_oracle, reproduction_target


def test_kernel_eval_values():
    p = KernelParams(2.0, 4.0, 1)
    assert kernel_eval(p, 1.0, 0.0) == pytest.approx(1.0)
    assert kernel_eval(p, 1.0, 2.0) == pytest.approx(math.exp(-1.0))
    assert kernel_eval(p, 0.25, 0.0) == pytest.approx(0.25 ** (-0.5))
    assert kernel_eval(p, 0.0, 1.0) == 0.0
    assert kernel_eval(p, -1.0, 0.0) == 0.0
    arr = kernel_eval(p, np.array([1.0, 2.0]), np.array([0.0, 0.0]))
    assert arr.shape == (2,)


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(0.0, 4.0, 1)
    with pytest.raises(ValueError):
        KernelParams(2.0, -1.0, 1)


def test_potential_of_constant():
    # P_{2,4} 1 (t) = (4 pi)^{d/2} (T - t) away from the box edge
    g = Grid(1, 10.0, 200, 1.0, 20)
    one = ScalarField(g, np.ones(g.shape))
    P = potential_apply(one, KernelParams(2.0, 4.0, 1))
    mid = g.n_x // 2
    expect = math.sqrt(4 * math.pi) * (g.T - g.t)
    assert np.allclose(P.values[:, mid], expect, rtol=1e-10, atol=1e-12)


def test_potential_alpha_one_is_square_root_in_time():
    g = Grid(1, 10.0, 200, 1.0, 32)
    one = ScalarField(g, np.ones(g.shape))
    P = potential_apply(one, KernelParams(1.0, 4.0, 1))
    expect = math.sqrt(4 * math.pi) * 2 * np.sqrt(g.T - g.t)
    assert np.allclose(P.values[:, g.n_x // 2], expect, rtol=1e-6)


def test_potential_rejects_mismatch():
    g = Grid(1, 1.0, 16, 1.0, 8)
    with pytest.raises(ValueError):
        potential_apply(ScalarField.zeros(g), KernelParams(2.0, 4.0, 2))
    with pytest.raises(ValueError):
        potential_apply(ScalarField.zeros(g), KernelParams(0.5, 4.0, 1))


def test_potential_is_linear_and_positive():
    g = Grid(2, 3.0, 32, 1.0, 16)
    f = gaussian_bump(g, 0.6)
    p = KernelParams(2.0, 4.0, 2)
    P1 = potential_apply(f, p).values
    P3 = potential_apply(f * 3.0, p).values
    assert np.allclose(P3, 3 * P1)
    assert P1.min() >= 0


def test_reproduction_constant_d1():
    fit = reproduction_constant(1)
    assert fit.value < 0
    assert abs(fit.value) == pytest.approx(reproduction_target(1), rel=0.02)
    assert not fit.flagged


def test_richardson_d1_frozen_and_accurate():
    r = reproduction_constant_richardson(1)
    assert r.value == pytest.approx(FROZEN_RICHARDSON_D1, rel=1e-9)
    assert abs(r.value) == pytest.approx(reproduction_target(1), rel=1e-3)
    assert r.ratio == 2.0
    assert fitted_c(1) == r.value


def test_richardson_grid_pairs_refine_consistently():
    for d in (1, 2, 3):
        gc, gf = richardson_grids(d)
        assert gc.h / gf.h == pytest.approx(gc.dt / gf.dt)
    with pytest.raises(ValueError):
        reproduction_constant_richardson(1, (Grid(1, 4, 64, 1, 32), Grid(1, 4, 128, 1, 32)))


def test_composition_closed_form_matches_quadrature():
    for a, b, k, d in [(1, 1, 4, 1), (1, 2, 4, 2), (2, 2, 2, 3)]:
        assert composition_closed_form(a, b, k, d) == pytest.approx(composition_oracle(a, b, k, d), rel=1e-10)
    assert composition_closed_form(1, 1, 4, 1) == pytest.approx(2 * math.pi**1.5, rel=1e-12)


def test_composition_constant_d1():
    fit = composition_constant(1, 1, 4, 1)
    assert fit.value == pytest.approx(FROZEN_COMPOSITION_11, rel=1e-9)
    assert fit.value == pytest.approx(11.137, rel=0.05)
    a = composition_constant(1, 2, 4, 1).value
    b = composition_constant(2, 1, 4, 1).value
    assert a == pytest.approx(b, rel=1e-6)


def test_composition_rejects_bad_orders():
    with pytest.raises(ValueError):
        composition_constant(0.5, 1, 4, 1)
    with pytest.raises(ValueError):
        composition_constant(3, 2, 4, 1)


def test_derivative_domination_finite():
    g = Grid(1, 4.0, 64, 1.0, 32)
    f = gaussian_bump(g, 0.5)
    c = derivative_domination_check(f, 2.0, 4.0)
    assert 0 < c < 10
    assert derivative_domination_check(ScalarField.zeros(g), 2.0, 4.0) == 0.0
    with pytest.raises(ValueError):
        derivative_domination_check(f, 1.5, 4.0)


def test_morrey_bound_ratio_sides():
    g = Grid(2, 2.0, 24, 1.0, 12)
    f = gaussian_bump(g, 0.5)
    b = ScalarField.from_function(g, lambda t, X: np.exp(-(X[0] ** 2 + X[1] ** 2)))
    r = morrey_bound_ratio(b, f, 1.0, 2.0, MixedNormSpec(4, 4), "forward", radii=[1.0, 0.5])
    assert 0 < r < 100
    ra = morrey_bound_ratio(b, f, 1.0, 2.0, MixedNormSpec(1.5, 1.5), "adjoint", radii=[1.0, 0.5])
    assert 0 < ra < 100
    with pytest.raises(ValueError):
        morrey_bound_ratio(b, f, 1.0, 2.0, MixedNormSpec(1.5, 1.5), "forward")
    with pytest.raises(ValueError):
        morrey_bound_ratio(b, f, 1.0, 2.0, MixedNormSpec(4, 4), "adjoint")
    assert morrey_bound_ratio(ScalarField.zeros(g), f, 1.0, 2.0, MixedNormSpec(4, 4)) == 0.0


def test_csv_and_ids():
    g = default_grid(1)
    assert grid_id(g) == "d1-L4-nx128-T1-nt64"
    text = constants_csv([{"d": 1, "alpha": 2.0, "beta": "", "k": 4.0, "fitted_value": -0.28, "residual": 0.01, "grid_id": grid_id(g)}])
    lines = text.splitlines()
    assert lines[0] == "d,alpha,beta,k,fitted_value,residual,grid_id"
    assert lines[1].startswith("1,2.0,,4.0,-0.28,0.01,")
