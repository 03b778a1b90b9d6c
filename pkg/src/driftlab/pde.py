"""Terminal-value drift-diffusion solver and estimate measurements.

Solves ``du/dt + Lap u + b . Du = -f`` on the grid box with ``u(T) = 0`` and
zero Dirichlet data, marching backward from ``T``.  Each step treats
diffusion implicitly (compact ``2d+1``-point Laplacian) and the drift
explicitly with first-order upwinding, which keeps the scheme monotone when
``dt * max_x sum_i |b_i| / h <= 1``.
"""

from __future__ import annotations

import json
import math
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import Grid, MixedNormSpec, ScalarField, VectorField, admissibility, gradient, mixed_norm, sup_norm


class NumericalError(RuntimeError):
    """Raised when a run cannot proceed for numerical reasons (exit code 3 in the CLI)."""


class CFLError(NumericalError):
    def __init__(self, courant: float, dt_required: float):
        self.courant = courant
        self.dt_required = dt_required
        super().__init__(f"CFL violated: dt*max|b|_1/h = {courant:.4g} > 1; need dt <= {dt_required:.4g}")


class DivergenceError(NumericalError):
    def __init__(self, factors, btilde: float | None):
        self.factors = list(factors)
        self.btilde = btilde
        super().__init__(
            f"Picard iteration diverged (contraction factors {', '.join(f'{x:.3g}' for x in self.factors[-3:])}); "
            f"measured Morrey norm {btilde}"
        )


@dataclass
class SolveReport:
    u: ScalarField = field(repr=False)
    sup_u: float
    f_norm: float
    ratio: float
    grad_ratio: float
    iterations: int | None = None
    contraction_factor: float | None = None
    factors: list = field(default_factory=list)
    btilde: float | None = None

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("u")
        d["grid"] = asdict(self.u.grid)
        return d

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def courant_number(b: VectorField, substeps: int = 1) -> float:
    g = b.grid
    return float(np.max(np.sum(np.abs(b.values), axis=-1))) * g.dt / (substeps * g.h)


def clip_drift(b: VectorField, max_l1: float) -> VectorField:
    """Scale ``b`` down nodewise so that ``sum_i |b_i| <= max_l1``."""
    l1 = np.sum(np.abs(b.values), axis=-1, keepdims=True)
    scale = np.where(l1 > max_l1, max_l1 / np.where(l1 > 0, l1, 1.0), 1.0)
    return VectorField(b.grid, b.values * scale)


def cfl_clip(b: VectorField, safety: float = 0.9, substeps: int = 1) -> tuple[VectorField, float]:
    """Clip to the largest drift the grid can carry; returns the clipped field and the cap."""
    cap = safety * substeps * b.grid.h / b.grid.dt
    return clip_drift(b, cap), cap


def _laplacian_matrix(n: int, h: float, d: int) -> sp.csc_matrix:
    one = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2
    eye = sp.identity(n)
    lap = sp.csr_matrix((n**d, n**d))
    for ax in range(d):
        mats = [eye] * d
        mats[ax] = one
        term = mats[0]
        for m in mats[1:]:
            term = sp.kron(term, m)
        lap = lap + term
    return lap.tocsc()


_LU_CACHE: dict = {}
_LU_LOCK = threading.Lock()


def _solver(h: float, n_x: int, d: int, dt: float):
    key = (h, n_x, d, dt)
    with _LU_LOCK:
        if key not in _LU_CACHE:
            n = n_x - 1
            A = sp.identity(n**d, format="csc") - dt * _laplacian_matrix(n, h, d)
            if len(_LU_CACHE) >= 8:
                _LU_CACHE.pop(next(iter(_LU_CACHE)))
            _LU_CACHE[key] = splu(A)
        return _LU_CACHE[key]


def _upwind(u: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """``sum_i b_i D_i u`` with the difference taken toward the side the drift points to."""
    d = u.ndim
    out = np.zeros_like(u)
    for ax in range(d):
        fwd = np.zeros_like(u)
        bwd = np.zeros_like(u)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        diff = (u[tuple(hi)] - u[tuple(lo)]) / h
        fwd[tuple(lo)] = diff
        bwd[tuple(hi)] = diff
        bk = b[..., ax]
        out += np.where(bk > 0, bk * fwd, bk * bwd)
    return out


def _check_margin(f: ScalarField) -> None:
    g = f.grid
    nz = np.nonzero(np.any(f.values != 0, axis=0))
    if not nz[0].size:
        return
    extent = max(max(np.abs(g.x[idx]).max() for idx in nz), 0.0)
    margin = g.L - extent
    if margin < 6 * math.sqrt(g.T) and margin < g.L * 0.999:
        warnings.warn(
            f"forcing support reaches |x|={extent:.3g}; margin {margin:.3g} < 6 sqrt(T)={6 * math.sqrt(g.T):.3g}",
            stacklevel=3,
        )


def solve_backward(b: VectorField | None, f: ScalarField, substeps: int = 1) -> ScalarField:
    """March ``u`` from ``u(T) = 0`` down to ``t = 0``.

    ``substeps`` splits every grid step into that many backward-Euler steps
    (forcing and drift interpolated linearly in time); the result is still
    reported on the grid's time nodes.
    """
    g = f.grid
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if b is not None and b.grid != g:
        raise ValueError("drift and forcing live on different grids")
    if b is not None:
        c = courant_number(b, substeps)
        if c > 1 + 1e-12:
            bmax = float(np.max(np.sum(np.abs(b.values), axis=-1)))
            raise CFLError(c, g.h / bmax)
    _check_margin(f)
    m = substeps
    dt = g.dt / m
    lu = _solver(g.h, g.n_x, g.d, dt)
    inner = (slice(1, -1),) * g.d
    u = np.zeros(g.shape)
    fv = f.values
    bv = None if b is None else b.values
    for i in range(g.n_t, 0, -1):
        cur = u[i]
        for j in range(m):
            # sub-step from time (i - j/m) dt down to (i - (j+1)/m) dt
            w0 = 1.0 - j / m
            w1 = 1.0 - (j + 1) / m
            rhs = cur.copy()
            if bv is not None:
                bj = bv[i] if m == 1 else w0 * bv[i] + (1 - w0) * bv[i - 1]
                rhs += dt * _upwind(cur, bj, g.h)
            rhs += dt * (w1 * fv[i] + (1 - w1) * fv[i - 1])
            nxt = np.zeros_like(cur)
            nxt[inner] = lu.solve(np.ascontiguousarray(rhs[inner]).ravel()).reshape((g.n_x - 1,) * g.d)
            cur = nxt
        u[i - 1] = cur
    return ScalarField(g, u)


def time_exponent(d: int, q: float, p: float) -> float:
    return 1 - d / (2 * p) - 1 / q


def estimate_report(b: VectorField | None, f: ScalarField, q: float, p: float) -> SolveReport:
    g = f.grid
    if not admissibility(q, p, g.d, "subcritical"):
        raise ValueError(f"(q, p)=({q}, {p}) violates d/p + 2/q < 2")
    u = solve_backward(b, f)
    fn = mixed_norm(f, MixedNormSpec(q, p))
    su = sup_norm(u)
    gn = mixed_norm(gradient(u).magnitude(), MixedNormSpec(2 * q, 2 * p))
    ratio = su / fn if fn > 0 else 0.0
    gratio = gn / fn if fn > 0 else 0.0
    return SolveReport(u, su, fn, ratio, gratio)


def picard_solve(
    b: VectorField,
    f: ScalarField,
    max_iter: int = 30,
    tol: float = 1e-6,
    c: float | None = None,
    btilde: float | None = None,
    spec: MixedNormSpec | None = None,
    raise_on_divergence: bool = True,
) -> SolveReport:
    """Iterate ``u <- c P_{2,4}(-b.Du - f)`` from ``u = 0``.

    ``c`` defaults to the extrapolated reproduction constant for ``f.grid.d``
    (negative under this sign convention).  Raises :class:`DivergenceError` once three
    consecutive contraction factors reach 1.
    """
    from .kernels import KernelParams, fitted_c, potential_apply

    g = f.grid
    c = fitted_c(g.d) if c is None else c
    kp = KernelParams(2.0, 4.0, g.d)
    u = np.zeros(g.shape)
    prev_diff = None
    factors = []
    it = 0
    for it in range(1, max_iter + 1):
        du = gradient(ScalarField(g, u)).values
        src = -np.sum(b.values * du, axis=-1) - f.values
        new = c * potential_apply(ScalarField(g, src), kp).values
        diff = float(np.max(np.abs(new - u)))
        u = new
        if prev_diff is not None and prev_diff > 0:
            factors.append(diff / prev_diff)
            if len(factors) >= 3 and all(x >= 1 for x in factors[-3:]):
                if raise_on_divergence:
                    raise DivergenceError(factors, drift_morrey(b) if btilde is None else btilde)
                break
        if diff <= tol * max(np.max(np.abs(u)), 1e-300):
            break
        prev_diff = diff
    if btilde is None:
        btilde = drift_morrey(b)
    spec = spec or MixedNormSpec(4.0, 4.0)
    U = ScalarField(g, u)
    fn = mixed_norm(f, spec)
    su = sup_norm(U)
    gn = mixed_norm(gradient(U).magnitude(), MixedNormSpec(2 * spec.q, 2 * spec.p))
    cf = max(factors) if factors else 0.0
    return SolveReport(U, su, fn, su / fn if fn else 0.0, gn / fn if fn else 0.0, it, cf, factors, btilde)


def drift_morrey(b: VectorField) -> float:
    """Scale-invariant Morrey size of ``|b|`` (``alpha = 1``, ``p0 = d``; sup-norm when ``d = 1``)."""
    from .morrey import MorreyParams, morrey_norm

    mag = b.magnitude()
    if b.grid.d == 1:
        return sup_norm(mag)
    return morrey_norm(mag, MorreyParams(1.0, float(b.grid.d)))


@dataclass(frozen=True)
class Calibration:
    threshold: float
    factor_per_btilde: float
    probe_btilde: float
    probe_factor: float


def calibrate_threshold(b_shape: VectorField, f: ScalarField, target: float = 0.5, n_iter: int = 5, c: float | None = None) -> Calibration:
    """Morrey size of ``s * b_shape`` at which the Picard factor reaches ``target``.

    The factor is linear in the drift amplitude to leading order, so a single
    probe run at the given amplitude fixes the slope.
    """
    bt = drift_morrey(b_shape)
    if bt <= 0:
        raise ValueError("drift shape is identically zero")
    rep = picard_solve(b_shape, f, max_iter=n_iter, tol=0.0, c=c, btilde=bt, raise_on_divergence=False)
    fac = float(np.median(rep.factors[1:])) if len(rep.factors) > 1 else rep.factors[0]
    slope = fac / bt
    return Calibration(target / slope, slope, bt, fac)


def scaling_fit(f1, q: float, p: float, T_list, grid_for, b1=None, threads: int = 1) -> tuple[float, list[dict]]:
    """Slope of ``log(sup|u_T| / ||f_T||_{q,p})`` against ``log T`` under parabolic rescaling.

    ``f_T(t, x) = f1(t/T, x/sqrt T) / T`` and ``b_T(t, x) = b1(t/T, x/sqrt T) / sqrt T``;
    ``f1(t, X)`` and ``b1(t, X)`` take unit-scale arguments.  ``grid_for(T)``
    supplies the grid for horizon ``T``.
    """
    T_list = sorted(set(float(T) for T in T_list))
    if len(T_list) < 3:
        raise ValueError("need at least three distinct horizons")

    def one(T):
        g = grid_for(T)
        s = math.sqrt(T)
        f = ScalarField.from_function(g, lambda t, X: f1(t / T, [x / s for x in X]) / T)
        b = None
        if b1 is not None:
            b = VectorField.from_function(g, lambda t, X: [c / s for c in b1(t / T, [x / s for x in X])])
        rep = estimate_report(b, f, q, p)
        return {"T": T, "sup_u": rep.sup_u, "f_norm": rep.f_norm, "ratio": rep.ratio}

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                rows = list(ex.map(one, T_list))
        else:
            rows = [one(T) for T in T_list]
    rows = [r for r in rows if r["ratio"] > 0 and math.isfinite(r["ratio"])]
    if len(rows) < 3:
        raise ValueError("fewer than three valid runs")
    slope = float(np.polyfit(np.log([r["T"] for r in rows]), np.log([r["ratio"] for r in rows]), 1)[0])
    return slope, rows
