import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.fields import (
    Grid,
    Kind,
    MixedNormSpec,
    Order,
    ScalarField,
    VectorField,
    admissibility,
    conjugate,
    divergence,
    from_bytes,
    from_csv,
    gradient,
    laplacian,
    load,
    mixed_norm,
    save,
    sup_norm,
    time_derivative,
    to_bytes,
    to_csv,
)


@pytest.fixture
def g1():
    return Grid(1, 4.0, 64, 1.0, 16)


def test_grid_geometry():
    g = Grid(2, 3.0, 60, 2.0, 40)
    assert g.h == pytest.approx(0.1)
    assert g.dt == pytest.approx(0.05)
    assert g.shape == (41, 61, 61)
    assert g.x[0] == -3.0 and g.x[-1] == 3.0
    assert g.space_weights().sum() == pytest.approx(36.0)
    assert g.time_weights().sum() == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [dict(d=4), dict(L=0.0), dict(n_x=4), dict(n_t=2)])
def test_grid_rejects_bad_parameters(kw):
    args = dict(d=1, L=1.0, n_x=16, T=1.0, n_t=16) | kw
    with pytest.raises(ValueError):
        Grid(**args)


def test_field_shape_checked(g1):
    with pytest.raises(ValueError):
        ScalarField(g1, np.zeros((3, 3)))
    f = ScalarField.zeros(g1)
    assert not f.values.flags.writeable


def test_compact_support_flag(g1):
    ones = np.ones(g1.shape)
    with pytest.raises(ValueError):
        ScalarField(g1, ones, compact_support=True)
    bump = ScalarField.from_function(g1, lambda t, X: np.where(np.abs(X[0]) < 1, 1.0, 0.0), compact_support=True)
    assert bump.values.max() == 1.0


def test_trapezoid_norm_of_gaussian():
    g = Grid(1, 6.0, 256, 1.0, 16)
    f = ScalarField.from_function(g, lambda t, X: np.exp(-X[0] ** 2))
    # ||e^{-x^2}||_{L_2(R)} = (pi/2)^{1/4}; time factor T^{1/q} = 1
    assert mixed_norm(f, MixedNormSpec(2, 2)) == pytest.approx((math.pi / 2) ** 0.25, rel=1e-6)


def test_mixed_norm_orders_agree_when_exponents_equal():
    g = Grid(2, 2.0, 16, 1.0, 8)
    rng = np.random.default_rng(1)
    f = ScalarField(g, rng.random(g.shape))
    a = mixed_norm(f, MixedNormSpec(3, 3, Order.TIME_OUTER))
    b = mixed_norm(f, MixedNormSpec(3, 3, Order.SPACE_OUTER))
    assert a == pytest.approx(b, rel=1e-12)


def test_mixed_norm_separable_product():
    g = Grid(1, 3.0, 96, 2.0, 64)
    f = ScalarField.from_function(g, lambda t, X: (1 + t) * np.exp(-X[0] ** 2))
    # ||1+t||_{L_4(0,2)} * ||e^{-x^2}||_{L_2}
    tn = ((3**5 - 1) / 5) ** 0.25
    xn = (math.pi / 2) ** 0.25
    assert mixed_norm(f, MixedNormSpec(4, 2)) == pytest.approx(tn * xn, rel=2e-3)


def test_mixed_norm_rejects_small_exponent():
    with pytest.raises(ValueError):
        MixedNormSpec(1.0, 2.0)


def test_mixed_norm_rejects_nonfinite(g1):
    v = np.zeros(g1.shape)
    v[0, 0] = np.inf
    with pytest.raises(ValueError):
        mixed_norm(ScalarField(g1, v), MixedNormSpec(2, 2))


def test_sup_norm_and_infinite_exponent(g1):
    f = ScalarField.from_function(g1, lambda t, X: np.sin(X[0]) * (1 - t))
    assert sup_norm(f) == pytest.approx(np.max(np.abs(f.values)))
    assert mixed_norm(f, MixedNormSpec(math.inf, math.inf)) == pytest.approx(sup_norm(f))


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.01, 100), q=st.floats(1.1, 8), p=st.floats(1.1, 8))
def test_mixed_norm_homogeneous(c, q, p):
    g = Grid(1, 1.0, 8, 1.0, 8)
    f = ScalarField.from_function(g, lambda t, X: 1 + t + X[0] ** 2)
    spec = MixedNormSpec(q, p)
    assert mixed_norm(f * c, spec) == pytest.approx(c * mixed_norm(f, spec), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), q=st.floats(1.1, 6), p=st.floats(1.1, 6))
def test_mixed_norm_triangle_inequality(seed, q, p):
    g = Grid(1, 1.0, 8, 1.0, 8)
    rng = np.random.default_rng(seed)
    f, h = ScalarField(g, rng.standard_normal(g.shape)), ScalarField(g, rng.standard_normal(g.shape))
    spec = MixedNormSpec(q, p)
    assert mixed_norm(f + h, spec) <= mixed_norm(f, spec) + mixed_norm(h, spec) * (1 + 1e-12)


def test_admissibility_examples():
    assert admissibility(2, 2, 1, Kind.SUBCRITICAL)
    assert admissibility(4, 4, 2, "subcritical")
    assert not admissibility(2, 1.5, 3, "subcritical")
    assert admissibility(4, 4, 2, "lps_critical")
    assert admissibility(math.inf, math.inf, 1, "subcritical")
    assert not admissibility(4, 2, 2, "lps_critical")
    assert admissibility(4, 4, 2, "theorem_pair", p0=1.5)
    with pytest.raises(ValueError):
        admissibility(0.5, 2, 1, "subcritical")
    with pytest.raises(ValueError):
        admissibility(4, 4, 2, "theorem_pair")


def test_conjugate():
    assert conjugate(2) == 2
    assert conjugate(math.inf) == 1
    assert conjugate(1) == math.inf
    assert conjugate(1.5) == pytest.approx(3)


def test_derivatives_exact_on_quadratics():
    g = Grid(2, 1.0, 16, 1.0, 8)
    f = ScalarField.from_function(g, lambda t, X: 3 * t + X[0] ** 2 + 2 * X[1] ** 2)
    inner = (slice(None), slice(2, -2), slice(2, -2))
    assert np.allclose(laplacian(f).values[inner], 6.0)
    assert np.allclose(gradient(f).values[..., 0], 2 * g.mesh()[0][None])
    assert np.allclose(time_derivative(f).values, 3.0)
    assert np.array_equal(divergence(gradient(f)).values, laplacian(f).values)


def test_vector_field_magnitude():
    g = Grid(2, 1.0, 8, 1.0, 8)
    v = VectorField.constant(g, [3.0, 4.0])
    assert np.allclose(v.magnitude().values, 5.0)
    with pytest.raises(ValueError):
        VectorField(g, np.zeros(g.shape))


def test_binary_roundtrip(tmp_path):
    g = Grid(2, 1.5, 8, 1.0, 8)
    rng = np.random.default_rng(0)
    s = ScalarField(g, rng.random(g.shape))
    v = VectorField(g, rng.random(g.shape + (2,)))
    for f in (s, v):
        back = from_bytes(to_bytes(f))
        assert back.grid == g and np.array_equal(back.values, f.values)
    save(v, tmp_path / "v.bin")
    assert np.array_equal(load(tmp_path / "v.bin").values, v.values)


def test_csv_roundtrip():
    g = Grid(1, 1.0, 8, 1.0, 8)
    f = ScalarField.from_function(g, lambda t, X: np.cos(X[0]) + t / 3)
    text = to_csv(f)
    assert text.splitlines()[0] == "t,x1,value"
    assert np.array_equal(from_csv(text, g).values, f.values)
    v = VectorField.from_function(g, lambda t, X: [np.sin(X[0]) * t])
    assert np.array_equal(from_csv(to_csv(v), g).values, v.values)
