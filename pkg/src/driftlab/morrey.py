"""Morrey-type functionals, the parabolic maximal function and drift splitting.

Ball and cylinder suprema are sampled: centers run over grid nodes, radii over
a finite set (dyadic ``L, L/2, ... >= 4h`` by default).  A discrete ball of
radius ``r`` is the node stencil ``{k : |k| h <= r}``.  Values outside the box
count as zero, so a ball average divides by the full stencil size; the
parabolic maximal function can instead average over the in-box part only
(``normalize="clipped"``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from scipy.special import betainc, gamma

from .fields import Grid, MixedNormSpec, ScalarField, VectorField, admissibility, conjugate, mixed_norm


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def dyadic_radii(grid: Grid, smallest: float | None = None) -> list[float]:
    smallest = 4 * grid.h if smallest is None else smallest
    radii, r = [], grid.L
    while r >= smallest - 1e-12:
        radii.append(r)
        r /= 2
    return radii


@dataclass(frozen=True)
class MorreyParams:
    alpha: float
    p0: float
    radii: tuple[float, ...] | None = None

    def check(self, d: int) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 1 < self.p0 <= d:
            raise ValueError(f"p0={self.p0} must lie in (1, d={d}]")
        if self.alpha > d / self.p0 + 1e-12:
            raise ValueError(f"alpha={self.alpha} exceeds d/p0={d / self.p0}")

    def radii_for(self, grid: Grid) -> list[float]:
        radii = sorted(self.radii or dyadic_radii(grid), reverse=True)
        if not radii:
            raise ValueError("empty radius set")
        for r in radii:
            if r < 2 * grid.h - 1e-12:
                raise ValueError(f"radius {r} below 2h={2 * grid.h}: ball average undefined at this resolution")
            if r > grid.L + 1e-12:
                raise ValueError(f"radius {r} exceeds box half-width {grid.L}")
        return radii


def _abs_values(b) -> np.ndarray:
    if isinstance(b, VectorField):
        return np.linalg.norm(b.values, axis=-1)
    return np.abs(b.values)


def ball_stencil(grid: Grid, r: float) -> np.ndarray:
    m = int(math.floor(r / grid.h + 1e-9))
    ax = np.arange(-m, m + 1)
    K = np.meshgrid(*([ax] * grid.d), indexing="ij")
    rr = (r / grid.h) ** 2 + 1e-9
    return (sum(k * k for k in K) <= rr).astype(float)


_MATRIX_BUDGET = 4e6


@lru_cache(maxsize=8)
def _ball_matrix(shape: tuple, stencil_bytes: bytes, stencil_shape: tuple) -> sp.csr_matrix:
    """Sparse operator summing a flattened array over the stencil at each node (zero outside)."""
    K = np.frombuffer(stencil_bytes, dtype=float).reshape(stencil_shape)
    c = (K.shape[0] - 1) // 2
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    rows, cols = [], []
    for off in np.argwhere(K > 0) - c:
        dst = tuple(slice(max(0, -k), n - max(0, k)) for k, n in zip(off, shape))
        src = tuple(slice(max(0, k), n - max(0, -k)) for k, n in zip(off, shape))
        rows.append(idx[dst].ravel())
        cols.append(idx[src].ravel())
    r, q = np.concatenate(rows), np.concatenate(cols)
    n = idx.size
    return sp.csr_matrix((np.ones(r.size), (r, q)), shape=(n, n))


def _ball_sums(a: np.ndarray, stencil: np.ndarray) -> np.ndarray:
    """Sum of ``a`` over the stencil centered at every node (zero outside)."""
    if stencil.size == 1:
        return a.copy()
    work = a.size * stencil.sum()
    # exact sums for small problems: FFT roundoff scales with max|a| and swamps small entries
    if work <= _MATRIX_BUDGET:
        S = _ball_matrix(a.shape, stencil.tobytes(), stencil.shape)
        return (S @ a.ravel()).reshape(a.shape)
    out = fftconvolve(a, stencil, mode="same")
    np.maximum(out, 0.0, out=out)
    return out


def _distinct_slices(a: np.ndarray):
    """Yield (slice index, slice) skipping exact repeats of the previous slice."""
    prev = None
    for i in range(a.shape[0]):
        if prev is not None and np.array_equal(a[i], prev):
            continue
        prev = a[i]
        yield i, a[i]


def morrey_norm(b, params: MorreyParams) -> float:
    """Sampled ``sup_t sup_r r^alpha sup_B (ball average of |b|^p0)^(1/p0)``."""
    g = b.grid
    params.check(g.d)
    radii = params.radii_for(g)
    a = _abs_values(b) ** params.p0
    best = 0.0
    for r in radii:
        K = ball_stencil(g, r)
        n = K.sum()
        for _, sl in _distinct_slices(a):
            if not sl.any():
                continue
            m = _ball_sums(sl, K).max() / n
            best = max(best, r**params.alpha * m ** (1.0 / params.p0))
    return float(best)


def weak_quasinorm(b, s: float, with_lambda: bool = True, n_levels: int = 64) -> float:
    """``sup_{t, lambda, B in unit balls} (lambda *) |{|b| > lambda} cap B|^(1/s)``."""
    if not s > 0:
        raise ValueError("s must be positive")
    g = b.grid
    a = _abs_values(b)
    pos = a[a > 0]
    if pos.size == 0:
        return 0.0
    levels = np.geomspace(pos.min(), pos.max(), n_levels)
    # level sets are open at the top level; step just below so it is not empty
    levels[0] *= 1 - 1e-12
    levels[-1] *= 1 - 1e-12
    K = ball_stencil(g, 1.0)
    cell = g.h**g.d
    best = 0.0
    for _, sl in _distinct_slices(a):
        for lam in levels:
            ind = (sl > lam).astype(float)
            if not ind.any():
                continue
            meas = _ball_sums(ind, K).max().round() * cell
            val = meas ** (1.0 / s)
            if with_lambda:
                val *= lam
            best = max(best, val)
    return float(best)


# ---------------------------------------------------------------------------
# cylinders


def _time_window(grid: Grid, r: float) -> int:
    return max(1, int(math.ceil(r * r / grid.dt - 1e-9)))


def cylinder_averages(f: ScalarField | np.ndarray, grid: Grid, r: float, normalize: str = "ball") -> np.ndarray:
    """Average of ``f`` over ``[t_i, t_i + r^2) x B_r(x_j)`` for every base node."""
    a = f.values if isinstance(f, ScalarField) else f
    K = ball_stencil(grid, r)
    m = _time_window(grid, r)
    sums = np.stack([_ball_sums(a[i], K) for i in range(a.shape[0])])
    nt = a.shape[0]
    hi = np.minimum(np.arange(nt) + m, nt)
    # direct window sums; differencing a cumulative sum cancels small windows
    window = sums.copy()
    for j in range(1, m):
        window[: nt - j] += sums[j:]
    if normalize == "ball":
        return window / (m * K.sum())
    if normalize == "clipped":
        counts = _ball_sums(np.ones(grid.space_shape), K).round()
        tcount = (hi - np.arange(nt)).reshape((-1,) + (1,) * grid.d)
        return window / (counts[None] * tcount)
    raise ValueError(f"unknown normalization {normalize!r}")


def _spread_to_contained(avg: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    """Max of ``avg`` over all sampled cylinders of radius ``r`` containing each node."""
    from scipy.ndimage import maximum_filter

    m = _time_window(grid, r)
    tmax = avg.copy()
    for j in range(1, m):
        np.maximum(tmax[j:], avg[:-j], out=tmax[j:])
    K = ball_stencil(grid, r).astype(bool)
    fp = K[None]
    return maximum_filter(tmax, footprint=fp, mode="constant", cval=-np.inf)


def parabolic_maximal(f: ScalarField, alpha: float, radii=None, normalize: str = "clipped") -> ScalarField:
    g = f.grid
    radii = radii or dyadic_radii(g)
    out = np.full(g.shape, -np.inf)
    for r in radii:
        avg = cylinder_averages(f, g, r, normalize)
        np.maximum(out, r**alpha * _spread_to_contained(avg, g, r), out=out)
    return ScalarField(g, out)


def maximal_dominance_check(f: ScalarField, alpha: float, radii=None, normalize: str = "clipped") -> float:
    """Largest ``r^alpha avg_C(f) - M_alpha f(t, x)`` over sampled cylinders ``C`` and nodes ``(t, x)`` in ``C``.

    Containment is enumerated directly by shifting over the cylinder's
    offsets, independently of :func:`parabolic_maximal`; the result is ``<= 0``.
    """
    g = f.grid
    radii = radii or dyadic_radii(g)
    M = parabolic_maximal(f, alpha, radii, normalize).values
    worst = -np.inf
    for r in radii:
        avg = r**alpha * cylinder_averages(f, g, r, normalize)
        m = _time_window(g, r)
        K = ball_stencil(g, r)
        c = (K.shape[0] - 1) // 2
        offsets = np.argwhere(K > 0) - c
        for dtau in range(m):
            for off in offsets:
                src = [slice(0, g.n_t + 1 - dtau)]
                dst = [slice(dtau, g.n_t + 1)]
                for k in off:
                    n = g.n_x + 1
                    src.append(slice(max(0, -k), n - max(0, k)))
                    dst.append(slice(max(0, k), n - max(0, -k)))
                diff = avg[tuple(src)] - M[tuple(dst)]
                if diff.size:
                    worst = max(worst, float(diff.max()))
    return worst


def holder_domination_check(b, f: ScalarField, alpha: float, p0: float, radii=None) -> float:
    """Largest ``r^alpha avg_C(bf) - btilde * avg_C(f^p0')^(1/p0')`` over sampled cylinders."""
    g = f.grid
    params = MorreyParams(alpha, p0, tuple(radii) if radii else None)
    bt = morrey_norm(b, params)
    babs = _abs_values(b)
    fv = np.abs(f.values)
    p0c = conjugate(p0)
    worst = -np.inf
    for r in params.radii_for(g):
        lhs = r**alpha * cylinder_averages(babs * fv, g, r, "ball")
        rhs = bt * cylinder_averages(fv**p0c, g, r, "ball") ** (1.0 / p0c)
        worst = max(worst, float(np.max(lhs - rhs)))
    return worst


# ---------------------------------------------------------------------------
# threshold decomposition


@dataclass(frozen=True, eq=False)
class Decomposition:
    b_prime: VectorField
    B_part: VectorField
    lam: np.ndarray
    morrey_certificate: float
    certificate_bound: float
    b_square_bracket: float
    b_square_bracket_measured: float
    N_hat: float
    p0_lps: float
    q0_lps: float
    b_of_t: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "N_hat": self.N_hat,
                "p0_lps": self.p0_lps,
                "q0_lps": self.q0_lps,
                "lambda": [float(x) for x in self.lam],
                "b_of_t": [float(x) for x in self.b_of_t],
                "morrey_certificate": self.morrey_certificate,
                "certificate_bound": self.certificate_bound,
                "b_square_bracket": self.b_square_bracket,
                "b_square_bracket_measured": self.b_square_bracket_measured,
            },
            indent=2,
        )


def lps_decompose(b: VectorField, p0_lps: float, q0_lps: float, N_hat: float) -> Decomposition:
    """Split ``b = b' + B`` with ``b' = b 1{|b| >= lambda(t)}``, ``lambda(t) = N_hat b(t)``.

    ``b(t) = (int |b(t,x)|^p0 dx)^(1/(p0 - d))``.  The Morrey certificate of
    ``b'`` uses exponent ``d`` and ``alpha = 1``.  ``b_square_bracket`` is the
    certified value ``int_0^T lambda^2 dt``; the measured
    ``int_0^T sup_x |B|^2 dt`` is reported alongside and never exceeds it.
    """
    g = b.grid
    d = g.d
    if not p0_lps > d:
        raise ValueError(f"p0_lps={p0_lps} must exceed d={d}")
    if not admissibility(q0_lps, p0_lps, d, "lps_critical"):
        raise ValueError(f"(q0, p0)=({q0_lps}, {p0_lps}) is not LPS-critical: d/p0 + 2/q0 != 1")
    if not N_hat > 0:
        raise ValueError("N_hat must be positive")
    mag = np.linalg.norm(b.values, axis=-1)
    ws = g.space_weights()
    axes = tuple(range(1, d + 1))
    if math.isinf(p0_lps):
        b_t = mag.max(axis=axes)
    else:
        integral = np.sum(ws * mag**p0_lps, axis=axes)
        if not np.all(np.isfinite(integral)):
            raise ValueError("b(t) is not finite: a time slice is not p0-integrable")
        b_t = integral ** (1.0 / (p0_lps - d))
    lam = N_hat * b_t
    big = mag >= lam.reshape((-1,) + (1,) * d)
    bp = np.where(big[..., None], b.values, 0.0)
    Bv = b.values - bp
    b_prime, B_part = VectorField(g, bp), VectorField(g, Bv)

    cert = morrey_norm(b_prime, MorreyParams(1.0, float(d)))
    bound = (N_hat ** (d - p0_lps) / unit_ball_volume(d)) ** (1.0 / d) if not math.isinf(p0_lps) else 0.0
    wt = g.time_weights()
    bracket = float(np.sum(wt * lam**2))
    measured = float(np.sum(wt * np.max(np.linalg.norm(Bv, axis=-1), axis=axes) ** 2))
    return Decomposition(b_prime, B_part, lam, cert, bound, bracket, measured, N_hat, p0_lps, q0_lps, b_t)


def lambda_identity(b: VectorField, dec: Decomposition) -> tuple[float, float]:
    """Both sides of ``int lambda^2 dt = N_hat^2 ||b||^q0_{L_{q0,p0}}``, computed independently."""
    lhs = dec.b_square_bracket
    norm = mixed_norm(b.magnitude(), MixedNormSpec(dec.q0_lps, dec.p0_lps))
    return lhs, dec.N_hat**2 * norm**dec.q0_lps


# ---------------------------------------------------------------------------
# bump drift


def _raw_rho(n: np.ndarray, d: int, p0: float) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    large = 1.0 / (n * np.log(np.maximum(n, 10.0)) ** 3)
    r10 = (10 * math.log(10) ** 3) ** (-1.0 / (d - p0))
    small = (r10 * 10.0 / n) ** (d - p0)
    return np.where(n >= 10, large, small)


def _rho_normalizer(d: int, p0: float, cutoff: int = 1_000_000) -> float:
    n = np.arange(1, cutoff + 1)
    total = _raw_rho(n, d, p0).sum() + 1.0 / (2 * math.log(cutoff + 0.5) ** 2)
    return 0.5 / total


def _alpha_seq(n: np.ndarray, p0: float) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    a10 = math.log(10) ** (-1.0 / p0)
    return np.where(n >= 10, np.log(np.maximum(n, 10.0)) ** (-1.0 / p0), a10 * (10.0 / n) ** 0.1)


@dataclass(frozen=True, eq=False)
class BumpDrift:
    """Disjoint radial bumps ``b_n = (alpha_n / r_n) 1{B_{r_n}(c_n e_1)}`` on the first axis."""

    d: int
    p0: float
    n_max: int
    r: np.ndarray
    alpha: np.ndarray
    rho: np.ndarray
    x: np.ndarray
    c: np.ndarray

    @property
    def heights(self) -> np.ndarray:
        return self.alpha / self.r

    def integral(self, p: float, upto: int | None = None) -> float:
        """``int_{B_1} b^p dx`` over bumps ``n <= upto``."""
        k = self.n_max if upto is None else upto
        return float(np.sum(unit_ball_volume(self.d) * self.heights[:k] ** p * self.r[:k] ** self.d))

    def partial_sums(self, p: float) -> np.ndarray:
        return np.cumsum(unit_ball_volume(self.d) * self.heights**p * self.r**self.d)

    def resolvable(self, grid: Grid) -> int:
        """Number of leading bumps with ``r_n >= 4h``."""
        return int(np.sum(self.r >= 4 * grid.h))

    def to_field(self, grid: Grid, k_min: int = 1, k_max: int | None = None) -> ScalarField:
        if grid.d != self.d:
            raise ValueError("grid dimension mismatch")
        k_max = min(self.resolvable(grid), self.n_max if k_max is None else k_max)
        X = grid.mesh()
        vals = np.zeros(grid.space_shape)
        for n in range(k_min, k_max + 1):
            dist2 = (X[0] - self.c[n - 1]) ** 2 + sum(Xi**2 for Xi in X[1:])
            vals = np.where(dist2 <= self.r[n - 1] ** 2, self.heights[n - 1], vals)
        return ScalarField(grid, np.broadcast_to(vals, grid.shape))

    def to_json(self) -> str:
        return json.dumps(
            {
                "d": self.d,
                "p0": self.p0,
                "n_max": self.n_max,
                "r": self.r.tolist(),
                "alpha": self.alpha.tolist(),
                "rho": self.rho.tolist(),
                "x": self.x.tolist(),
                "c": self.c.tolist(),
            },
            indent=2,
        )


def bump_drift(d: int, p0: float, n_max: int) -> BumpDrift:
    if d < 3:
        raise ValueError("bump drift needs d >= 3")
    if not d - 1 <= p0 < d:
        raise ValueError(f"p0={p0} must lie in [d-1, d)")
    if n_max < 3:
        raise ValueError("n_max must be at least 3")
    n = np.arange(1, n_max + 1)
    rho = _rho_normalizer(d, p0) * _raw_rho(n, d, p0)
    r = rho ** (1.0 / (d - p0))
    alpha = _alpha_seq(n, p0)
    x = 1.0 - 2.0 * np.concatenate([[0.0], np.cumsum(rho)])
    c = 0.5 * (x[1:] + x[:-1])
    if np.any(r > rho + 1e-15) or rho.sum() > 0.5 + 1e-12:
        raise ValueError("bump supports overlap for this configuration")
    return BumpDrift(d, p0, n_max, r, alpha, rho, x, c)


def _cap_volume(R, hc, d: int):
    """Volume of a cap of height ``hc`` (0..2R) cut from a ball of radius ``R``."""
    R, hc = np.broadcast_arrays(np.asarray(R, float), np.asarray(hc, float))
    hc = np.clip(hc, 0.0, 2 * R)
    small = np.minimum(hc, 2 * R - hc)
    arg = np.clip((2 * R * small - small**2) / np.where(R > 0, R * R, 1.0), 0.0, 1.0)
    half = 0.5 * unit_ball_volume(d) * R**d * betainc((d + 1) / 2, 0.5, arg)
    return np.where(hc <= R, half, unit_ball_volume(d) * R**d - half)


def lens_volume(a, b, dist, d: int):
    """Volume of ``B_a(0) cap B_b(dist e_1)``."""
    a, b, dist = np.broadcast_arrays(*(np.asarray(v, float) for v in (a, b, dist)))
    out = np.zeros(a.shape)
    disjoint = dist >= a + b
    nested = dist <= np.abs(a - b)
    out = np.where(nested, unit_ball_volume(d) * np.minimum(a, b) ** d, out)
    part = ~(disjoint | nested)
    safe = np.where(dist > 0, dist, 1.0)
    da = (safe**2 + a**2 - b**2) / (2 * safe)
    db = safe - da
    lens = _cap_volume(a, a - da, d) + _cap_volume(b, b - db, d)
    return np.where(part, lens, out)


def per_bump_ratios(bump: BumpDrift, radii=None, offsets=None) -> np.ndarray:
    """``int_B b_n^p0 / (alpha_n^p0 rho^(d - p0))`` for sampled balls ``B`` of radius ``rho``.

    Balls are centered on the axis at ``c_n + offset * (r_n + rho)``; returns a
    ``(n_max, n_radii, n_offsets)`` array whose max is the fitted constant.
    """
    d, p0 = bump.d, bump.p0
    offsets = np.linspace(0.0, 1.2, 25) if offsets is None else np.asarray(offsets)
    out = []
    for n in range(bump.n_max):
        rn = bump.r[n]
        rr = rn * np.geomspace(1e-2, 1e2, 41) if radii is None else np.asarray(radii)
        dist = offsets[None, :] * (rn + rr[:, None])
        vol = lens_volume(rr[:, None], rn, dist, d)
        integral = bump.heights[n] ** p0 * vol
        out.append(integral / (bump.alpha[n] ** p0 * rr[:, None] ** (d - p0)))
    return np.array(out)


def tail_morrey(bump: BumpDrift, k: int, params: MorreyParams, n_centers: int = 400) -> float:
    """Morrey norm of ``b 1{Gamma_k}``, ``Gamma_k`` the union of bumps ``n >= k``.

    Balls are centered on the first axis (moving a ball onto the axis only
    increases its overlap with every bump), at bump centers, bump endpoints and
    a uniform set of points; radii are the bump radii, ``params.radii`` and a
    log-spaced sweep.
    """
    d = bump.d
    params.check(d)
    if k > bump.n_max:
        return 0.0
    k = max(k, 1)
    centers = np.unique(np.concatenate([bump.c, bump.x, np.linspace(bump.x[-1] - 0.5, 1.5, n_centers)]))
    radii = set(bump.r.tolist()) | set(np.geomspace(bump.r.min() / 2, 2.0, 80).tolist())
    if params.radii:
        radii |= set(params.radii)
    weight = bump.heights ** params.p0
    best = 0.0
    for rad in sorted(radii):
        vol = lens_volume(rad, bump.r[None, :], np.abs(centers[:, None] - bump.c[None, :]), d)
        contrib = vol * weight[None, :]
        tail = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1]
        mass = tail[:, k - 1].max()
        val = rad**params.alpha * (mass / (unit_ball_volume(d) * rad**d)) ** (1.0 / params.p0)
        best = max(best, val)
    return float(best)
