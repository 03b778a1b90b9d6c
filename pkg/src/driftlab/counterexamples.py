"""Radial counterexample with drift ``-(d-1)(1-theta) x/|x|^2`` and an anisotropic integrability example.

The radial kernel

    p(t, x, r) = c t^{-(alpha+1)/2} r^alpha int_{-pi/2}^{pi/2} cos^{alpha-1}(phi)
                 exp(-(x^2 + r^2 - 2 x r sin phi) / t) dphi,     alpha = theta (d - 1),

is the transition density (in ``r``) of the radial motion generated by
``(1/4)(d^2/dx^2 + (alpha/x) d/dx)``.  The angular integral has the closed form
``sqrt(pi) Gamma(alpha/2) (2/z)^nu I_nu(z)`` with ``nu = (alpha-1)/2`` and
``z = 2xr/t``; both that route and direct quadrature are available.

Because the generator carries the factor 1/4, ``u = int int p f dr ds``
satisfies ``4 du/dt + Lap u + b.Du + 4 g = 0`` for ``g(t, x) = f(t, |x|)``;
:func:`residual_check` takes the forcing coefficient as a parameter.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special


class QuadratureError(RuntimeError):
    def __init__(self, n, message: str):
        self.n = n
        super().__init__(f"quadrature failed at n={n}: {message}")


@dataclass(frozen=True)
class RadialModel:
    d: int
    theta: float

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("radial model needs d >= 2")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")

    @property
    def alpha(self) -> float:
        return self.theta * (self.d - 1)

    @property
    def c(self) -> float:
        return normalization_c(self.alpha)

    def drift_coefficient(self) -> float:
        """``b(x) = -k x/|x|^2`` with this ``k``."""
        return (self.d - 1) * (1 - self.theta)


def normalization_c(alpha: float, method: str = "quad") -> float:
    """``c`` with ``1/c = int_R e^{-y^2} dy * int_0^inf r^{alpha-1} e^{-r^2} dr``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if method == "gamma":
        return 1.0 / (math.sqrt(math.pi) * special.gamma(alpha / 2) / 2)
    gy = integrate.quad(lambda y: math.exp(-y * y), -np.inf, np.inf, epsabs=0, epsrel=1e-12)[0]
    # r^{alpha-1} is singular at 0 for alpha < 1: split and use the algebraic weight there
    near = integrate.quad(lambda r: math.exp(-r * r), 0, 1, weight="alg", wvar=(alpha - 1, 0), epsabs=0, epsrel=1e-12)[0]
    far = integrate.quad(lambda r: r ** (alpha - 1) * math.exp(-r * r), 1, np.inf, epsabs=0, epsrel=1e-12)[0]
    return 1.0 / (gy * (near + far))


def angular_integral(alpha: float, z: float, method: str = "bessel") -> float:
    """``e^{-z} int_{-pi/2}^{pi/2} cos^{alpha-1}(phi) e^{z sin phi} dphi`` (scaled to avoid overflow)."""
    if method == "bessel":
        return float(_angular_scaled(alpha, np.asarray(z, dtype=float)))
    # phi = +-(pi/2 - xi^2) near each endpoint removes the stiffness of cos^{alpha-1}
    top = math.sqrt(math.pi / 2)

    def side(sign):
        def g(xi):
            phi = sign * (math.pi / 2 - xi * xi)
            return 2 * xi * math.sin(xi * xi) ** (alpha - 1) * math.exp(z * (math.sin(phi) - 1))

        return integrate.quad(g, 0, top, epsabs=0, epsrel=1e-10, limit=200)[0]

    return side(1.0) + side(-1.0)


def _angular_scaled(alpha: float, z: np.ndarray) -> np.ndarray:
    nu = (alpha - 1) / 2
    pref = math.sqrt(math.pi) * special.gamma(alpha / 2)
    small = z < 1e-8
    zs = np.where(small, 1.0, z)
    val = pref * (2 / zs) ** nu * special.ive(nu, zs)
    # z -> 0: (2/z)^nu I_nu(z) -> 1/Gamma(nu + 1)
    lim = pref / special.gamma(nu + 1) * np.exp(-z)
    return np.where(small, lim, val)


def radial_kernel(model: RadialModel, t, x, r, method: str = "bessel"):
    """``p(t, x, r)``; vectorized over ``x`` and ``r`` for the Bessel route."""
    t = float(t)
    if t <= 0:
        raise ValueError("t must be positive")
    a = model.alpha
    c = model.c
    if method == "quad":
        x, r = float(x), float(r)
        z = 2 * x * r / t
        ang = angular_integral(a, z, method="quad")
        return c * t ** (-(a + 1) / 2) * r**a * math.exp(-((x - r) ** 2) / t) * ang
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    z = 2 * x * r / t
    out = c * t ** (-(a + 1) / 2) * r**a * np.exp(-((x - r) ** 2) / t) * _angular_scaled(a, z)
    return float(out) if out.ndim == 0 else out


def kernel_at_origin(model: RadialModel, t, r):
    """Closed form at ``x = 0``: ``c t^{-(alpha+1)/2} r^alpha e^{-r^2/t} B(1/2, alpha/2)``."""
    a = model.alpha
    return model.c * t ** (-(a + 1) / 2) * np.asarray(r, dtype=float) ** a * np.exp(-np.asarray(r, dtype=float) ** 2 / t) * special.beta(0.5, a / 2)


# ---------------------------------------------------------------------------
# radial solution and the residual of the radial equation


def smooth_bump(r, lo: float = 1.0, hi: float = 2.0):
    """``C^inf`` bump supported on ``[lo, hi]`` with peak 1."""
    r = np.asarray(r, dtype=float)
    m = 0.5 * (lo + hi)
    w = 0.5 * (hi - lo)
    s = (r - m) / w
    inside = np.abs(s) < 1
    ss = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1 - 1 / (1 - ss * ss)), 0.0)


def poly_bump(r, lo: float = 1.0, hi: float = 2.0):
    """``C^3`` bump ``((r - lo)(hi - r))^4`` on ``[lo, hi]`` scaled to peak 1.

    Its derivatives stay moderate, which keeps finite-difference residuals in
    the asymptotic regime on coarse grids.
    """
    r = np.asarray(r, dtype=float)
    s = np.clip((r - lo) * (hi - r), 0.0, None)
    return (s / (0.25 * (hi - lo) ** 2)) ** 4


@dataclass
class RadialSolution:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray = field(repr=False)  # (n_t + 1, n_x + 1)
    T: float


def _panel_nodes(a: float, b: float, n_panels: int, n_gauss: int):
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def _flux(model: RadialModel, s: float, x: np.ndarray, f, support) -> np.ndarray:
    """``J(s, x) = int p(s, x, r) f(r) dr`` by composite Gauss-Legendre over the support."""
    lo, hi = support
    n_panels = int(min(4000, max(8, math.ceil((hi - lo) / (0.25 * math.sqrt(s))))))
    rn, rw = _panel_nodes(lo, hi, n_panels, 6)
    fr = f(rn)
    keep = fr != 0
    rn, rw, fr = rn[keep], rw[keep], fr[keep]
    out = np.empty(x.size)
    for i0 in range(0, x.size, 256):
        xs = x[i0 : i0 + 256]
        out[i0 : i0 + 256] = radial_kernel(model, s, xs[:, None], rn[None, :]) @ (rw * fr)
    return out


def radial_solution(model: RadialModel, f=poly_bump, T: float = 1.0, x_max: float = 4.0, n_x: int = 64, n_t: int = 32, support=(1.0, 2.0), n_gauss: int = 4) -> RadialSolution:
    """``u(t, x) = int_0^{T-t} int_0^inf p(s, x, r) f(r) dr ds`` on a uniform ``(t, x)`` grid.

    ``f`` is a time-independent radial profile supported in ``support``.  The
    ``s``-integral uses Gauss-Legendre panels aligned with the time grid, so
    ``u(T - k dt)`` is a cumulative sum over the first ``k`` panels.
    """
    t = np.linspace(0.0, T, n_t + 1)
    x = np.linspace(0.0, x_max, n_x + 1)
    dt = T / n_t
    panel = np.zeros((n_t, x.size))
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    for k in range(n_t):
        a, b = k * dt, (k + 1) * dt
        for xi, wi in zip(xg, wg):
            s = 0.5 * (b - a) * xi + 0.5 * (a + b)
            panel[k] += 0.5 * (b - a) * wi * _flux(model, s, x, f, support)
    cum = np.vstack([np.zeros(x.size), np.cumsum(panel, axis=0)])  # U(k dt)
    u = cum[::-1].copy()  # u(t_i) = U(T - t_i)
    return RadialSolution(t, x, u, T)


def residual_check(model: RadialModel, f=poly_bump, sol: RadialSolution | None = None, forcing_coeff: float = 4.0, probe=(0.5, 3.0), **kw) -> float:
    """Sup of ``|4 u_t + u_xx + (alpha/x) u_x + k f|`` over the probe region (centered differences).

    With ``b = -(d-1)(1-theta) x/|x|^2`` the radial part of ``Lap u + b.Du`` is
    ``u_xx + (alpha/x) u_x``.  The probe region keeps ``x`` away from the
    singular origin.
    """
    sol = sol or radial_solution(model, f, **kw)
    x, t, u = sol.x, sol.t, sol.u
    h = x[1] - x[0]
    dt = t[1] - t[0]
    if probe[0] < 4 * h:
        raise ValueError("probe region must stay 4 grid steps away from the origin")
    ut = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * dt)
    ux = (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * h)
    uxx = (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / h**2
    xi = x[1:-1]
    res = 4 * ut + uxx + model.alpha / xi * ux + forcing_coeff * f(xi)[None, :]
    mask = (xi >= probe[0]) & (xi <= probe[1])
    return float(np.max(np.abs(res[:, mask])))


def residual_order(model: RadialModel, levels=((32, 16), (64, 32), (128, 64)), f=poly_bump, **kw) -> tuple[float, list[dict]]:
    """Residuals for successively halved steps and the fitted convergence order."""
    rows = []
    for n_x, n_t in levels:
        res = residual_check(model, f, n_x=n_x, n_t=n_t, **kw)
        rows.append({"n_x": n_x, "n_t": n_t, "residual": res})
    hs = np.array([1.0 / r["n_x"] for r in rows])
    rs = np.array([r["residual"] for r in rows])
    order = float(np.polyfit(np.log(hs), np.log(rs), 1)[0])
    return order, rows


# ---------------------------------------------------------------------------
# exponents and the blow-up scan


def exponent_e(p: float, alpha: float, d: int) -> tuple[bool, float]:
    """Finiteness of the ``L_{p'}`` norm of the kernel at ``x = 0`` and its power of ``s``."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    finite = p > d / (alpha + 1)
    if math.isinf(p):
        return True, 0.0
    pc = p / (p - 1)
    e = -pc * (alpha + 1) / 2 + (alpha * pc - (d - 1) / (p - 1) + 1) / 2
    return finite, e


def r_integral_converges(p: float, alpha: float, d: int, tol: float = 0.05) -> bool:
    """Numeric test: does ``int_0^1 r^{alpha p' - (d-1)/(p-1)} dr`` settle as the cutoff shrinks?"""
    pc = p / (p - 1)
    a = alpha * pc - (d - 1) / (p - 1)

    def part(lo):
        return integrate.quad(lambda r: r**a, lo, 1.0, limit=200)[0]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        v1, v2 = part(1e-6), part(1e-12)
    return bool(np.isfinite(v2) and abs(v2 - v1) <= tol * abs(v2))


@dataclass
class BlowupScan:
    d: int
    theta: float
    p: float
    q: float
    kappa: float
    n: list
    ratio: list
    u: list
    g_norm: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "u0", "g_norm", "ratio"])
        for row in zip(self.n, self.u, self.g_norm, self.ratio):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @property
    def growth(self) -> float:
        return self.ratio[-1] / self.ratio[0]


def failing_exponent(alpha: float) -> float:
    """``p = 2/(1 + alpha)``: in ``d = 2`` the kernel at the origin is not in ``L_{p'}``."""
    return 2.0 / (1.0 + alpha)


def companion_q(p: float, d: int, margin: float = 0.05) -> float:
    """``q`` with ``d/p + 2/q = 2 - margin``."""
    rest = 2.0 - margin - d / p
    if rest <= 0:
        raise ValueError("no admissible q for this p")
    return 2.0 / rest


def _blowup_point(model: RadialModel, p: float, q: float, n: int, eps: float) -> tuple[float, float]:
    """``u_n(0, 0)`` and ``||g_n||_{L_{q,p}}`` for ``f_n = 1{s<1/n^2} 1{r<1/n} r^{-gamma}``."""
    d, a = model.d, model.alpha
    R, S = 1.0 / n, 1.0 / n**2
    # int_0^R r^{alpha - gamma} e^{-r^2/s} dr = s^{b/2} Gamma(b/2) P(b/2, R^2/s) / 2 with
    # b = alpha - gamma + 1 = (alpha + 1 - d/p) + eps/p; at the failing exponent the
    # bracket vanishes and is snapped to 0 so that eps is not lost to rounding
    base = a + 1 - d / p
    if abs(base) < 1e-12 * (a + 1):
        base = 0.0
    b = base + eps / p
    if b <= 0:
        return math.inf, math.inf
    pref = model.c * special.beta(0.5, a / 2) * special.gamma(b / 2) / 2
    wexp = -(a + 1) / 2 + b / 2
    val, err, *rest = integrate.quad(
        lambda s: special.gammainc(b / 2, R * R / s) if s > 0 else 1.0,
        0.0,
        S,
        weight="alg",
        wvar=(wexp, 0.0),
        epsabs=0,
        epsrel=1e-10,
        limit=200,
        full_output=1,
    )
    if len(rest) > 1 or not math.isfinite(val):
        raise QuadratureError(n, "s-integral did not converge")
    u0 = pref * val
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    # int_{|x|<R} |x|^{-gamma p} dx = sphere R^eps / eps; time factor (1/n^2)^{1/q}
    g = (sphere * R**eps / eps) ** (1 / p) * S ** (1 / q)
    return u0, g


def blowup_scan(model: RadialModel, q: float | None, p: float, n_list, kappa: float = 30.0) -> BlowupScan:
    """Ratios ``u_n(0,0) / ||g_n||_{L_{q,p}}`` with the integrability margin ``eps_n = n^{-kappa}``.

    ``q`` defaults to :func:`companion_q` (``d/p + 2/q = 1.95``).
    """
    n_list = sorted(int(n) for n in n_list)
    q = companion_q(p, model.d) if q is None else q
    us, gs, rs = [], [], []
    for n in n_list:
        if n <= 0:
            us.append(0.0)
            gs.append(0.0)
            rs.append(0.0)
            continue
        eps = float(n) ** (-kappa)
        u0, g = _blowup_point(model, p, q, n, eps)
        us.append(u0)
        gs.append(g)
        rs.append(u0 / g if g > 0 else 0.0)
    return BlowupScan(model.d, model.theta, p, q, kappa, n_list, rs, us, gs)


# ---------------------------------------------------------------------------
# anisotropic example


@dataclass
class AnisotropicResult:
    d: int
    p: float
    q: float
    h: list
    slice_sums: list
    swapped_norms: list
    divergence_exponent: float
    expected_exponent: float
    cauchy_change: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "slice_sum_p", "swapped_norm"])
        for row in zip(self.h, self.slice_sums, self.swapped_norms):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def time_integral_bound(q: float, d: int) -> float:
    """``int_{-1}^{1} |t|^{-2q/d} dt = 2/(1 - 2q/d)``."""
    a = 2 * q / d
    if a >= 1:
        raise ValueError("need q < d/2")
    return 2.0 / (1.0 - a)


def _radial_nodes(h: float):
    n = int(round(1.0 / h))
    return (np.arange(n) + 0.5) * h


def anisotropic_slice(d: int, p: float, h: float, t: float = 0.5) -> float:
    """``int_{|x|<1} f(t, x)^p dx`` by the midpoint rule in ``r`` (nodes never hit ``r = t``)."""
    r = _radial_nodes(h)
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    return float(sphere * h * np.sum(r ** (d - 1) * np.abs(r - t) ** (-2 * p / d)))


def time_integral(r, q: float, d: int):
    """``int_0^1 |r - t|^{-2q/d} dt`` for ``0 <= r <= 1`` from the antiderivative."""
    a = 2 * q / d
    r = np.asarray(r, dtype=float)
    return (r ** (1 - a) + (1 - r) ** (1 - a)) / (1 - a)


def anisotropic_swapped(d: int, p: float, q: float, h: float) -> float:
    """``(int_{|x|<1} (int_0^1 f^q dt)^{p/q} dx)^{1/p}`` with the midpoint rule in ``r``.

    The inner time integral is taken from its antiderivative: sampling
    ``|r - t|^{-2q/d}`` on a time grid converges only like ``dt^{1 - 2q/d}``.
    """
    r = _radial_nodes(h)
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    return float((sphere * h * np.sum(r ** (d - 1) * time_integral(r, q, d) ** (p / q))) ** (1 / p))


def anisotropic_example(d: int, p: float, q: float, h_list) -> AnisotropicResult:
    """Divergence of the spatial ``L_p`` slice and convergence of the space-outer norm under refinement."""
    if d < 3:
        raise ValueError("need d >= 3")
    if not p > d / 2:
        raise ValueError("need p > d/2")
    if not 1 < q < d / 2:
        raise ValueError("need 1 < q < d/2")
    hs = sorted((float(h) for h in h_list), reverse=True)
    if len(hs) < 3:
        raise ValueError("need at least three grid steps")
    sl = [anisotropic_slice(d, p, h) for h in hs]
    sw = [anisotropic_swapped(d, p, q, h) for h in hs]
    # slice sum ~ A h^{1 - 2p/d} + B: fit the exponent from successive differences
    diffs = np.abs(np.diff(sl))
    mids = np.array(hs[1:])
    slope = float(np.polyfit(np.log(mids), np.log(diffs), 1)[0])
    change = abs(sw[-1] - sw[-2]) / abs(sw[-1])
    return AnisotropicResult(d, p, q, hs, sl, sw, -slope, 2 * p / d - 1, change)
