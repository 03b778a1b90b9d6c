import math
import warnings

import numpy as np
import pytest

from driftlab.fields import Grid, ScalarField, VectorField
from driftlab.kernels import gaussian_bump
from driftlab.pde import solve_backward
from driftlab.sde import (
    MCSettings,
    exp_moment_check,
    feynman_kac,
    girsanov_phi,
    perturbed_value,
    save_ensemble,
    second_moment_check,
    simulate,
    square_bracket,
)

G = Grid(1, 6.0, 96, 1.0, 50)
ORIGIN = (0.0, np.zeros(1))


def sine(g=G, a=0.8):
    return VectorField.from_function(g, lambda t, X: [a * np.sin(X[0])])


def test_settings_validation():
    with pytest.raises(ValueError):
        MCSettings(n_paths=1)
    with pytest.raises(ValueError):
        MCSettings(dt_mc=0.0)


def test_simulate_shapes_and_brownian_variance():
    ens = simulate(None, ORIGIN, 20_000, grid=G, seed=3)
    assert ens.x.shape == (20_000, G.n_t + 1, 1)
    assert ens.dw.shape == (20_000, G.n_t, 1)
    assert ens.times[-1] == pytest.approx(G.T)
    # dx = sqrt(2) dw: Var x_T = 2 T
    assert np.var(ens.x[:, -1, 0]) == pytest.approx(2 * G.T, rel=0.03)
    assert not ens.phi.any()


def test_simulate_constant_drift_mean():
    b = VectorField.constant(G, [0.7])
    ens = simulate(b, ORIGIN, 20_000, seed=5)
    assert np.mean(ens.x[:, -1, 0]) == pytest.approx(0.7, abs=0.03)


def test_simulate_needs_grid():
    with pytest.raises(ValueError):
        simulate(None, ORIGIN, 10)


def test_seed_determinism_and_thread_independence():
    b = sine()
    a = simulate(b, ORIGIN, 9000, seed=11, threads=1)
    c = simulate(b, ORIGIN, 9000, seed=11, threads=4)
    assert np.array_equal(a.x, c.x) and np.array_equal(a.phi, c.phi)
    d = simulate(b, ORIGIN, 9000, seed=12)
    assert not np.array_equal(a.x, d.x)


def test_prefix_stability_across_path_counts():
    # blocks are keyed by (seed, block index): the first block is shared
    a = simulate(None, ORIGIN, 4096, grid=G, seed=1)
    b = simulate(None, ORIGIN, 8192, grid=G, seed=1)
    assert np.array_equal(a.x, b.x[:4096])


def test_girsanov_phi_matches_engine():
    b = sine()
    ens = simulate(None, ORIGIN, 5000, grid=G, seed=2)
    phi = girsanov_phi(ens, b)
    r, _ = exp_moment_check(b, 1.0, MCSettings(5000, None, 2))
    assert np.mean(np.exp(phi)) == pytest.approx(r.value, rel=1e-12)


@pytest.mark.parametrize("b", [None, VectorField.constant(G, [0.6]), sine()], ids=["zero", "constant", "sine"])
def test_girsanov_martingale(b):
    B = VectorField.zeros(G) if b is None else b
    r, _ = exp_moment_check(B, 1.0, MCSettings(50_000, None, 21))
    assert abs(r.value - 1) <= 3 * r.se + 1e-12


def test_zero_part_bound_is_tight():
    r, bound = exp_moment_check(VectorField.zeros(G), 2.0, MCSettings(1000))
    assert bound == 1.0 and r.value == 1.0 and r.se == 0.0


def test_square_bracket_of_constant():
    B = VectorField.constant(G, [0.5])
    assert square_bracket(B) == pytest.approx(0.25 * G.T)
    assert square_bracket(B, 0.5) == pytest.approx(0.125)
    assert square_bracket(B, G.T) == 0.0


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_exp_moment_bound(lam):
    B = VectorField.from_function(G, lambda t, X: [0.7 * (1 + t) * np.cos(X[0])])
    r, bound = exp_moment_check(B, lam, MCSettings(50_000, None, 4))
    assert r.value - 3 * r.se <= bound
    assert r.extra["bracket"] == pytest.approx(square_bracket(B))


def fd_value(b, f, x_index):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(solve_backward(b, f, substeps=4).values[(0, x_index)])


def test_feynman_kac_driftless():
    f = gaussian_bump(G, 0.5)
    r = feynman_kac(None, f, ORIGIN, MCSettings(50_000, None, 8))
    u = fd_value(None, f, G.n_x // 2)
    assert abs(r.value - u) <= 3 * r.se + 0.05 * u
    assert r.exit_fraction < 0.01


def test_feynman_kac_estimators_agree():
    f = gaussian_bump(G, 0.5)
    b = sine()
    r1 = feynman_kac(b, f, ORIGIN, MCSettings(50_000, None, 9))
    r2 = feynman_kac(b, f, ORIGIN, MCSettings(50_000, None, 10), estimator="girsanov")
    assert abs(r1.value - r2.value) <= 3 * math.hypot(r1.se, r2.se)
    u = fd_value(b, f, G.n_x // 2)
    assert abs(r1.value - u) <= 3 * r1.se + 0.05 * u
    with pytest.raises(ValueError):
        feynman_kac(b, f, ORIGIN, MCSettings(10), estimator="bogus")


def test_feynman_kac_zero_forcing():
    r = feynman_kac(None, ScalarField.zeros(G), ORIGIN, MCSettings(10))
    assert r.value == 0.0 and r.se == 0.0


def test_second_moment_identity():
    f = gaussian_bump(G, 0.5)
    sm = second_moment_check(sine(), f, MCSettings(50_000, None, 13))
    tol = 3 * math.hypot(sm["se_lhs"], sm["se_rhs"]) + 0.05 * abs(sm["rhs"])
    assert abs(sm["lhs"] - sm["rhs"]) <= tol


def test_perturbed_value_certificate():
    f = gaussian_bump(G, 0.5)
    B = VectorField.constant(G, [0.5])
    pv = perturbed_value(sine(), B, f, ORIGIN, MCSettings(20_000, None, 14))
    assert pv.bracket == pytest.approx(0.25)
    assert abs(pv.value) <= pv.cs_bound * (1 + 1e-12)
    assert abs(pv.value) <= pv.certified_bound
    # E e^{2 psi} <= e^{[B]^2} (exponential-moment bound at lambda = 2)
    assert pv.exp_2psi <= math.exp(pv.bracket) * 1.05


def test_save_ensemble(tmp_path):
    ens = simulate(sine(), ORIGIN, 100, seed=1)
    save_ensemble(ens, tmp_path / "ens.npz")
    data = np.load(tmp_path / "ens.npz")
    assert np.array_equal(data["x"], ens.x)
    assert int(data["seed"]) == 1


def test_large_drift_overshoot_warns():
    b = VectorField.constant(G, [40.0])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        simulate(b, ORIGIN, 100)
    assert any("h/2" in str(x.message) or "overshoot" in str(x.message) for x in w)
