"""Euler-Maruyama paths of ``dx = b dt + sqrt(2) dw`` and Girsanov-weighted estimators.

Randomness comes from counter-based Philox streams keyed by ``(seed, block)``;
paths are generated in fixed-size blocks so results do not depend on the
number of worker threads.  Fields are evaluated along paths by multilinear
interpolation in space and nearest time slice; positions outside the box are
clamped to it (and counted in ``exit_fraction``).
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import Grid, ScalarField, VectorField

BLOCK = 4096


@dataclass(frozen=True)
class MCSettings:
    n_paths: int = 100_000
    dt_mc: float | None = None
    seed: int = 0
    threads: int = 1
    block: int = BLOCK

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least two paths")
        if self.dt_mc is not None and self.dt_mc <= 0:
            raise ValueError("dt_mc must be positive")


@dataclass
class PathEnsemble:
    n_paths: int
    dt_mc: float
    start: tuple
    x: np.ndarray = field(repr=False)  # (n_paths, n_steps + 1, d)
    dw: np.ndarray = field(repr=False)  # (n_paths, n_steps, d)
    phi: np.ndarray = field(repr=False)
    seed: int
    exit_fraction: float
    overshoot: bool = False
    psi: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.dw.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.start[0] + self.dt_mc * np.arange(self.n_steps + 1)


@dataclass
class MCResult:
    value: float
    se: float
    n_paths: int
    seed: int
    exit_fraction: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# field evaluation along paths


def _locate(grid: Grid, pos: np.ndarray):
    """Corner indices and weights for multilinear interpolation, plus an outside flag."""
    u = (pos + grid.L) / grid.h
    outside = np.any((u < 0) | (u > grid.n_x), axis=-1)
    u = np.clip(u, 0.0, grid.n_x)
    i0 = np.minimum(np.floor(u).astype(np.intp), grid.n_x - 1)
    return i0, u - i0, outside


def _interp(values_t: np.ndarray, i0: np.ndarray, fr: np.ndarray, d: int) -> np.ndarray:
    """Multilinear interpolation of one time slice (scalar or vector valued)."""
    out = 0.0
    for corner in range(1 << d):
        w = np.ones(i0.shape[0])
        idx = []
        for ax in range(d):
            bit = (corner >> ax) & 1
            w = w * (fr[:, ax] if bit else 1.0 - fr[:, ax])
            idx.append(i0[:, ax] + bit)
        v = values_t[tuple(idx)]
        out = out + (w[:, None] * v if v.ndim == 2 else w * v)
    return out


def _slice(grid: Grid, t: float) -> int:
    return int(min(max(round(t / grid.dt), 0), grid.n_t))


def _steps(grid: Grid, t0: float, dt_mc: float | None) -> tuple[int, float]:
    span = grid.T - t0
    if span <= 0:
        raise ValueError("start time must lie before T")
    dt_req = grid.dt if dt_mc is None else dt_mc
    n = max(1, int(round(span / dt_req)))
    return n, span / n


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(block)))))


def _vals(fld):
    return None if fld is None else fld.values


def _run_block(
    grid: Grid,
    start,
    n_steps: int,
    dt: float,
    nb: int,
    rng: np.random.Generator,
    drift,
    weights,
    integrands,
    keep: bool,
):
    """Simulate ``nb`` paths; returns per-path log-weights, path integrals and exit flags."""
    d = grid.d
    t0 = float(start[0])
    x = np.tile(np.asarray(start[1], dtype=float).reshape(1, d), (nb, 1))
    logw = [np.zeros(nb) for _ in weights]
    integ = [np.zeros(nb) for _ in integrands]
    exited = np.zeros(nb, dtype=bool)
    xs = dws = None
    if keep:
        xs = np.empty((nb, n_steps + 1, d))
        dws = np.empty((nb, n_steps, d))
        xs[:, 0] = x
    sq = math.sqrt(dt)
    i0, fr, out = _locate(grid, x)
    prev_f = [_interp(f[_slice(grid, t0)], i0, fr, d) for f in integrands]
    for k in range(n_steps):
        it = _slice(grid, t0 + k * dt)
        dw = rng.standard_normal((nb, d)) * sq
        exited |= out
        for j, wv in enumerate(weights):
            bw = _interp(wv[it], i0, fr, d)
            logw[j] += np.sum(bw * dw, axis=1) / math.sqrt(2.0) - 0.25 * np.sum(bw * bw, axis=1) * dt
        step = math.sqrt(2.0) * dw
        if drift is not None:
            step = step + _interp(drift[it], i0, fr, d) * dt
        x = x + step
        i0, fr, out = _locate(grid, x)
        itn = _slice(grid, t0 + (k + 1) * dt)
        for j, f in enumerate(integrands):
            cur = _interp(f[itn], i0, fr, d)
            integ[j] += 0.5 * (prev_f[j] + cur) * dt
            prev_f[j] = cur
        if keep:
            xs[:, k + 1] = x
            dws[:, k] = dw
    exited |= out
    return logw, integ, exited, xs, dws


def _engine(grid, start, settings: MCSettings, drift=None, weights=(), integrands=(), keep=False):
    n_steps, dt = _steps(grid, float(start[0]), settings.dt_mc)
    if len(np.ravel(start[1])) != grid.d:
        raise ValueError("start point has the wrong dimension")
    overshoot = False
    if drift is not None:
        bmax = float(np.max(np.linalg.norm(drift, axis=-1)))
        if dt * bmax > 0.5 * grid.h:
            overshoot = True
            warnings.warn(f"drift overshoot: dt_mc*sup|b| = {dt * bmax:.3g} > h/2 = {0.5 * grid.h:.3g}", stacklevel=3)
    sizes = []
    left = settings.n_paths
    while left > 0:
        sizes.append(min(settings.block, left))
        left -= sizes[-1]

    def job(i):
        return _run_block(grid, start, n_steps, dt, sizes[i], _rng(settings.seed, i), drift, weights, integrands, keep)

    if settings.threads > 1:
        with ThreadPoolExecutor(settings.threads) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(i) for i in range(len(sizes))]
    logw = [np.concatenate([p[0][j] for p in parts]) for j in range(len(weights))]
    integ = [np.concatenate([p[1][j] for p in parts]) for j in range(len(integrands))]
    exited = np.concatenate([p[2] for p in parts])
    xs = np.concatenate([p[3] for p in parts]) if keep else None
    dws = np.concatenate([p[4] for p in parts]) if keep else None
    return dict(n_steps=n_steps, dt=dt, logw=logw, integ=integ, exit=float(np.mean(exited)), x=xs, dw=dws, overshoot=overshoot)


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    return float(np.mean(a)), float(np.std(a, ddof=1) / math.sqrt(a.size))


# ---------------------------------------------------------------------------
# public operations


def simulate(b: VectorField | None, start, n_paths: int, dt_mc: float | None = None, seed: int = 0, grid: Grid | None = None, threads: int = 1) -> PathEnsemble:
    """Full trajectories of ``dx = b dt + sqrt(2) dw`` from ``start = (t, x)`` to ``T``."""
    grid = grid or (b.grid if b is not None else None)
    if grid is None:
        raise ValueError("a grid is required when b is None")
    st = MCSettings(n_paths, dt_mc, seed, threads)
    r = _engine(grid, start, st, drift=_vals(b), keep=True)
    ens = PathEnsemble(n_paths, r["dt"], (float(start[0]), tuple(np.ravel(start[1]).tolist())), r["x"], r["dw"], np.zeros(n_paths), seed, r["exit"], r["overshoot"])
    if b is not None:
        ens.phi = girsanov_phi(ens, b)
    return ens


def girsanov_phi(ens: PathEnsemble, b: VectorField) -> np.ndarray:
    """``2^{-1/2} sum b(x_k).dw_k - (1/4) sum |b(x_k)|^2 dt`` with left-point evaluation."""
    g = b.grid
    phi = np.zeros(ens.n_paths)
    for k in range(ens.n_steps):
        it = _slice(g, ens.start[0] + k * ens.dt_mc)
        i0, fr, _ = _locate(g, ens.x[:, k])
        bw = _interp(b.values[it], i0, fr, g.d)
        phi += np.sum(bw * ens.dw[:, k], axis=1) / math.sqrt(2.0) - 0.25 * np.sum(bw * bw, axis=1) * ens.dt_mc
    return phi


def square_bracket(B_part: VectorField, t0: float = 0.0) -> float:
    """``int_{t0}^T sup_x |B(t, x)|^2 dt`` (trapezoid over slices at or after ``t0``)."""
    g = B_part.grid
    s = np.max(np.sum(B_part.values**2, axis=-1).reshape(g.n_t + 1, -1), axis=1)
    i0 = _slice(g, t0)
    if i0 >= g.n_t:
        return 0.0
    return float(np.trapezoid(s[i0:], dx=g.dt))


def exp_moment_check(B_part: VectorField, lam: float, mc: MCSettings, start=None, bracket: float | None = None, b: VectorField | None = None) -> tuple[MCResult, float]:
    """MC estimate of ``E exp(lam phi)`` for ``B_part`` and the bound ``exp(lam^2 [B]^2 / 4)``.

    Paths are driftless unless ``b`` is given.
    """
    g = B_part.grid
    start = start or (0.0, np.zeros(g.d))
    br = square_bracket(B_part, float(start[0])) if bracket is None else bracket
    bound = math.exp(lam * lam * br / 4)
    if lam == 0:
        return MCResult(1.0, 0.0, mc.n_paths, mc.seed, 0.0, {"lambda": 0.0, "bracket": br}), 1.0
    r = _engine(g, start, mc, drift=_vals(b), weights=(B_part.values,))
    v, se = _mean_se(np.exp(lam * r["logw"][0]))
    return MCResult(v, se, mc.n_paths, mc.seed, r["exit"], {"lambda": lam, "bracket": br, "bound": bound}), bound


def feynman_kac(b: VectorField | None, f: ScalarField, start, mc: MCSettings, estimator: str = "drifted") -> MCResult:
    """``E int_0^{T-t} f(t+s, x_s) ds`` by drifted paths or Girsanov-weighted driftless paths."""
    g = f.grid
    if not np.any(f.values):
        return MCResult(0.0, 0.0, mc.n_paths, mc.seed, 0.0, {"estimator": estimator})
    if estimator == "drifted" or b is None:
        r = _engine(g, start, mc, drift=_vals(b), integrands=(f.values,))
        samples = r["integ"][0]
    elif estimator == "girsanov":
        r = _engine(g, start, mc, weights=(b.values,), integrands=(f.values,))
        samples = np.exp(r["logw"][0]) * r["integ"][0]
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    v, se = _mean_se(samples)
    return MCResult(v, se, mc.n_paths, mc.seed, r["exit"], {"estimator": estimator, "n_steps": r["n_steps"]})


@dataclass
class PerturbedResult:
    value: float
    se: float
    certified_bound: float
    exp_2psi: float
    second_moment: float
    cs_bound: float
    bracket: float
    exit_fraction: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def perturbed_value(b: VectorField | None, B_part: VectorField, f: ScalarField, start, mc: MCSettings, N0: float | None = None, q: float = 4.0, p: float = 4.0) -> PerturbedResult:
    """Value of the ``b + B``-problem at ``start`` via ``e^psi``-weighted ``b``-paths, with certificates.

    ``N0`` is the measured constant of the ``b``-problem (``sup|u| / (T^e ||f||)``);
    when omitted it is measured with :func:`driftlab.pde.estimate_report`.
    """
    from .fields import MixedNormSpec, mixed_norm
    from .pde import estimate_report, time_exponent

    g = f.grid
    br = square_bracket(B_part, float(start[0]))
    e = time_exponent(g.d, q, p)
    fn = mixed_norm(f, MixedNormSpec(q, p))
    if N0 is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            N0 = estimate_report(b, f, q, p).ratio / g.T**e
    cert = math.sqrt(2.0) * math.exp(br / 2) * N0 * g.T**e * fn
    if not np.any(f.values):
        return PerturbedResult(0.0, 0.0, cert, 1.0, 0.0, 0.0, br, 0.0)
    r = _engine(g, start, mc, drift=_vals(b), weights=(B_part.values,), integrands=(f.values,))
    w = np.exp(r["logw"][0])
    I = r["integ"][0]
    v, se = _mean_se(w * I)
    e2 = float(np.mean(w * w))
    m2 = float(np.mean(I * I))
    return PerturbedResult(v, se, cert, e2, m2, math.sqrt(e2 * m2), br, r["exit"])


def second_moment_check(b: VectorField | None, f: ScalarField, mc: MCSettings, start=None, u: ScalarField | None = None) -> dict:
    """Both sides of ``E (int f ds)^2 = 2 E int f u ds`` along paths from ``start``."""
    from .pde import solve_backward

    g = f.grid
    start = start or (0.0, np.zeros(g.d))
    if not np.any(f.values):
        return {"lhs": 0.0, "rhs": 0.0, "se_lhs": 0.0, "se_rhs": 0.0, "exit_fraction": 0.0}
    if u is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = solve_backward(b, f, substeps=4)
    r = _engine(g, start, mc, drift=_vals(b), integrands=(f.values, (f * u).values))
    lhs, sl = _mean_se(r["integ"][0] ** 2)
    rhs, sr = _mean_se(2.0 * r["integ"][1])
    return {"lhs": lhs, "rhs": rhs, "se_lhs": sl, "se_rhs": sr, "exit_fraction": r["exit"]}


def save_ensemble(ens: PathEnsemble, path) -> None:
    """Dump trajectories as ``.npz`` (positions, increments, weights and metadata)."""
    np.savez(path, x=ens.x, dw=ens.dw, phi=ens.phi, dt_mc=ens.dt_mc, seed=ens.seed, start_t=ens.start[0], start_x=np.asarray(ens.start[1]))
