"""Parabolic kernels ``p_{alpha,k}`` and their potentials ``P_{alpha,k}``.

``p_{alpha,k}(s, r) = s^{-(d+2-alpha)/2} exp(-r^2/(k s))`` for ``s > 0``.  The
potential integrates forward in time,

    P f(t, x) = int_0^inf int p(s, |y|) f(t + s, x + y) dy ds
              = (pi k)^{d/2} int_0^inf s^{alpha/2 - 1} (G_{ks/2} * f(t + s))(x) ds,

where ``G_v`` is the Gaussian of variance ``v`` per axis.  The spatial
convolution is a direct sampled-Gaussian sum normalized to unit mass (zero
outside the box); the time integral uses Gauss-Legendre nodes in
``sigma = sqrt(s)`` on panels aligned with the time grid, with ``f`` linear in
time between slices and zero after ``T``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.special import beta as beta_fn

from .fields import (
    Grid,
    MixedNormSpec,
    Order,
    ScalarField,
    VectorField,
    conjugate,
    gradient,
    laplacian,
    mixed_norm,
    time_derivative,
)
from .morrey import MorreyParams, morrey_norm


@dataclass(frozen=True)
class KernelParams:
    alpha: float
    k: float
    d: int

    def __post_init__(self):
        if not (self.alpha > 0 and self.k > 0):
            raise ValueError("alpha and k must be positive")


def kernel_eval(params: KernelParams, s, r):
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    pos = s > 0
    ss = np.where(pos, s, 1.0)
    val = ss ** (-(params.d + 2 - params.alpha) / 2) * np.exp(-(r * r) / (params.k * ss))
    out = np.where(pos, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _smooth(a: np.ndarray, var: float, h: float, d: int) -> np.ndarray:
    """Unit-mass sampled Gaussian of variance ``var`` along the spatial axes of ``a``."""
    sigma = math.sqrt(var) / h
    if sigma < 1e-3:
        return a
    out = a
    for ax in range(1, d + 1):
        out = gaussian_filter1d(out, sigma, axis=ax, mode="constant", cval=0.0, truncate=8.0)
    return out


def potential_apply(f: ScalarField, params: KernelParams, n_gauss: int = 3) -> ScalarField:
    """``P_{alpha,k} f`` at every node of ``f.grid``."""
    g = f.grid
    if params.alpha < 1:
        raise ValueError("potentials with alpha < 1 are not supported")
    if params.d != g.d:
        raise ValueError("kernel dimension does not match grid")
    a, k = params.alpha, params.k
    vals = f.values
    nt = g.n_t + 1
    out = np.zeros(g.shape)
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    pref = (math.pi * k) ** (g.d / 2)
    for m in range(g.n_t):
        lo, hi = math.sqrt(m * g.dt), math.sqrt((m + 1) * g.dt)
        sig = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
        wsig = 0.5 * (hi - lo) * wg
        for sg, ws in zip(sig, wsig):
            s = sg * sg
            # ds = 2 sigma dsigma
            w = pref * 2.0 * sg ** (a - 1) * ws
            theta = s / g.dt - m
            sm = _smooth(vals[m:], k * s / 2, g.h, g.d)
            # input slices i + m (weight 1 - theta) and i + m + 1 (weight theta);
            # only bases i with t_i + s <= T receive the panel (f = 0 after T)
            n_out = nt - m - 1
            out[:n_out] += w * (1 - theta) * sm[:n_out] + w * theta * sm[1 : n_out + 1]
    return ScalarField(g, out)


# ---------------------------------------------------------------------------
# fitted constants


@dataclass(frozen=True)
class FitResult:
    value: float
    residual: float
    grid: Grid

    @property
    def flagged(self) -> bool:
        return self.residual > 0.10


def _fit(target: np.ndarray, basis: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    y, x = target[mask], basis[mask]
    c = float(np.dot(x, y) / np.dot(x, x))
    res = float(np.max(np.abs(y - c * x)) / np.max(np.abs(y)))
    return c, res


def _interior(grid: Grid, margin: int = 2) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    sl = (slice(0, grid.n_t + 1),) + (slice(margin, grid.n_x + 1 - margin),) * grid.d
    mask[sl] = True
    return mask


def gaussian_bump(grid: Grid, width: float = 0.5, t_center: float | None = None, t_width: float | None = None):
    """Smooth space-time bump vanishing (to rounding) near ``t = T`` and at the box edge."""
    tc = 0.4 * grid.T if t_center is None else t_center
    tw = 0.15 * grid.T if t_width is None else t_width

    def fn(t, X):
        return math.exp(-((t - tc) / tw) ** 2) * np.exp(-sum(x * x for x in X) / width**2)

    return ScalarField.from_function(grid, fn)


def default_grid(d: int) -> Grid:
    if d == 1:
        return Grid(1, 4.0, 128, 1.0, 64)
    if d == 2:
        return Grid(2, 3.0, 64, 1.0, 48)
    return Grid(3, 2.5, 32, 1.0, 32)


def reproduction_constant(d: int, grid: Grid | None = None, scale: float = 1.0) -> FitResult:
    """Fit ``c`` in ``u = c P_{2,4}(du/dt + Laplacian u)`` for a smooth bump ``u``.

    Analytically ``c = -(4 pi)^{-d/2}``: the forward heat semigroup telescopes
    ``int_0^inf e^{s Lap}(d_t u + Lap u)(t + s) ds = -u(t)``.
    """
    grid = grid or default_grid(d)
    if grid.d != d:
        raise ValueError("grid dimension mismatch")
    u = gaussian_bump(grid, width=0.6 * min(1.0, grid.L / 3)) * scale
    gsrc = time_derivative(u) + laplacian(u)
    Pg = potential_apply(gsrc, KernelParams(2.0, 4.0, d))
    c, res = _fit(u.values, Pg.values, _interior(grid))
    return FitResult(c, res, grid)


def richardson_grids(d: int) -> tuple[Grid, Grid]:
    """Coarse/fine pair with the same box and a common refinement ratio in ``h`` and ``dt``."""
    fine = default_grid(d)
    if d == 1:
        return Grid(1, fine.L, 64, fine.T, 32), fine
    if d == 2:
        return Grid(2, fine.L, 48, fine.T, 36), fine
    return Grid(3, fine.L, 24, fine.T, 24), fine


@dataclass(frozen=True)
class RichardsonFit:
    coarse: FitResult
    fine: FitResult
    ratio: float
    value: float

    @property
    def residual(self) -> float:
        return self.fine.residual


def reproduction_constant_richardson(d: int, grids: tuple[Grid, Grid] | None = None) -> RichardsonFit:
    """Second-order extrapolation of :func:`reproduction_constant` from two resolutions."""
    gc, gf = grids or richardson_grids(d)
    r = gc.h / gf.h
    if abs(gc.dt / gf.dt - r) > 1e-9 * r or r <= 1:
        raise ValueError("grids must refine h and dt by the same ratio > 1")
    c, f = reproduction_constant(d, gc), reproduction_constant(d, gf)
    val = (r * r * f.value - c.value) / (r * r - 1)
    return RichardsonFit(c, f, r, val)


@lru_cache(maxsize=4)
def fitted_c(d: int) -> float:
    """Extrapolated reproduction constant used by the Picard iteration."""
    return reproduction_constant_richardson(d).value


def composition_constant(alpha: float, beta: float, k: float, d: int, grid: Grid | None = None) -> FitResult:
    """Fit ``c`` in ``P_alpha P_beta f = c P_{alpha+beta} f`` for a Gaussian ``f``.

    Closed form: ``(pi k)^{d/2} B(alpha/2, beta/2)``.
    """
    if alpha < 1 or beta < 1 or alpha + beta > 4:
        raise ValueError("need alpha, beta >= 1 and alpha + beta <= 4")
    grid = grid or {1: Grid(1, 8.0, 160, 1.0, 64), 2: Grid(2, 6.0, 64, 1.0, 32)}.get(d) or Grid(d, 5.0, 32, 1.0, 24)
    f = gaussian_bump(grid, width=0.5, t_center=0.5 * grid.T, t_width=0.15 * grid.T)
    inner = potential_apply(f, KernelParams(beta, k, d))
    lhs = potential_apply(inner, KernelParams(alpha, k, d))
    rhs = potential_apply(f, KernelParams(alpha + beta, k, d))
    c, res = _fit(lhs.values, rhs.values, _interior(grid, grid.n_x // 8))
    return FitResult(c, res, grid)


def composition_closed_form(alpha: float, beta: float, k: float, d: int) -> float:
    return (math.pi * k) ** (d / 2) * beta_fn(alpha / 2, beta / 2)


def derivative_domination_check(f: ScalarField, alpha: float, k: float, n: int = 1) -> float:
    """Empirical constant ``max |D P_{alpha,k} f| / P_{alpha-1, 2k} |f|`` over interior nodes."""
    if n != 1:
        raise NotImplementedError("only first derivatives are implemented")
    if alpha - n < 1:
        raise ValueError("need alpha - n >= 1")
    g = f.grid
    if not np.any(f.values):
        return 0.0
    P = potential_apply(f, KernelParams(alpha, k, g.d))
    num = gradient(P).magnitude().values
    den = potential_apply(abs(f), KernelParams(alpha - n, 2 * k, g.d)).values
    mask = _interior(g) & (den > 1e-14)
    mask[-1] = False
    return float(np.max(num[mask] / den[mask])) if mask.any() else 0.0


def morrey_bound_ratio(
    b,
    f: ScalarField,
    alpha: float,
    p0: float,
    spec: MixedNormSpec,
    side: str = "forward",
    k: float = 4.0,
    radii=None,
) -> float:
    """``||P(bf)|| / (btilde ||f||)`` (forward) or ``||b P f|| / (btilde ||f||)`` (adjoint)."""
    g = f.grid
    p0c = conjugate(p0)
    if side == "forward":
        if not (spec.q > p0c and spec.p > p0c):
            raise ValueError(f"forward side needs exponents > p0'={p0c}")
    elif side == "adjoint":
        if not (spec.q < p0 and spec.p < p0):
            raise ValueError(f"adjoint side needs exponents < p0={p0}")
    else:
        raise ValueError(f"unknown side {side!r}")
    bmag = b.magnitude() if isinstance(b, VectorField) else abs(b)
    if not np.any(bmag.values):
        return 0.0
    fa = abs(f)
    bt = morrey_norm(bmag, MorreyParams(alpha, p0, tuple(radii) if radii else None))
    kp = KernelParams(alpha, k, g.d)
    if side == "forward":
        out = potential_apply(bmag * fa, kp)
    else:
        out = bmag * potential_apply(fa, kp)
    return mixed_norm(out, spec) / (bt * mixed_norm(fa, spec))


def constants_csv(rows) -> str:
    """CSV with columns ``d, alpha, beta, k, fitted_value, residual, grid_id``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "alpha", "beta", "k", "fitted_value", "residual", "grid_id"])
    for r in rows:
        w.writerow([r["d"], r["alpha"], r["beta"], r["k"], repr(float(r["fitted_value"])), repr(float(r["residual"])), r["grid_id"]])
    return buf.getvalue()


def grid_id(g: Grid) -> str:
    return f"d{g.d}-L{g.L:g}-nx{g.n_x}-T{g.T:g}-nt{g.n_t}"


__all__ = [
    "KernelParams",
    "kernel_eval",
    "potential_apply",
    "reproduction_constant",
    "composition_constant",
    "composition_closed_form",
    "derivative_domination_check",
    "morrey_bound_ratio",
    "Order",
]
