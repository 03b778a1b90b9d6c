"""Space-time grids, discrete fields, difference stencils and mixed norms.

A :class:`Grid` covers ``[0, T] x [-L, L]^d`` with ``n_t`` time steps and
``n_x`` spatial intervals per axis, so node arrays have shape
``(n_t + 1, n_x + 1, ..., n_x + 1)``.  The origin is a node whenever ``n_x``
is even.  Integrals use the tensor trapezoid rule on these nodes; everything
outside the box is treated as zero.
"""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Grid:
    d: int
    L: float
    n_x: int
    T: float
    n_t: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if not (self.L > 0 and self.T > 0):
            raise ValueError("L and T must be positive")
        if self.n_x < 8 or self.n_t < 8:
            raise ValueError("need n_x >= 8 and n_t >= 8")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n_x

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def space_shape(self) -> tuple[int, ...]:
        return (self.n_x + 1,) * self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_t + 1,) + self.space_shape

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @cached_property
    def x(self) -> np.ndarray:
        """1-D node coordinates along each spatial axis."""
        return np.linspace(-self.L, self.L, self.n_x + 1)

    def mesh(self) -> list[np.ndarray]:
        """Spatial coordinate arrays, each of shape ``space_shape``."""
        return np.meshgrid(*([self.x] * self.d), indexing="ij")

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.mesh()))

    def space_weights(self) -> np.ndarray:
        w1 = np.full(self.n_x + 1, self.h)
        w1[[0, -1]] *= 0.5
        w = w1
        for _ in range(self.d - 1):
            w = np.multiply.outer(w, w1)
        return w

    def time_weights(self) -> np.ndarray:
        w = np.full(self.n_t + 1, self.dt)
        w[[0, -1]] *= 0.5
        return w

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(t, X)`` on every node; ``X`` is a list of coordinate arrays."""
        X = self.mesh()
        out = np.empty(self.shape)
        for i, ti in enumerate(self.t):
            out[i] = fn(ti, X)
        return out

    def scaled(self, n_x: int | None = None, n_t: int | None = None) -> "Grid":
        return Grid(self.d, self.L, n_x or self.n_x, self.T, n_t or self.n_t)


def _band_mask(grid: Grid, band: int) -> np.ndarray:
    mask = np.zeros(grid.space_shape, dtype=bool)
    for ax in range(grid.d):
        idx = [slice(None)] * grid.d
        idx[ax] = slice(0, band)
        mask[tuple(idx)] = True
        idx[ax] = slice(grid.n_x + 1 - band, None)
        mask[tuple(idx)] = True
    return mask


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    compact_support: bool = False
    band: int = 4

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.compact_support and np.any(v[:, _band_mask(self.grid, self.band)] != 0):
            raise ValueError(f"field declared compactly supported but nonzero within {self.band} boundary nodes")

    @classmethod
    def from_function(cls, grid: Grid, fn, **kw) -> "ScalarField":
        return cls(grid, grid.sample(fn), **kw)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __abs__(self):
        return self.with_values(np.abs(self.values))

    def __mul__(self, c):
        if isinstance(c, ScalarField):
            return self.with_values(self.values * c.values)
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: "ScalarField"):
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ScalarField"):
        return self.with_values(self.values - other.values)

    def __neg__(self):
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """``values`` has shape ``grid.shape + (d,)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape + (self.grid.d,):
            raise ValueError(f"expected shape {self.grid.shape + (self.grid.d,)}, got {v.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.shape + (grid.d,)))

    @classmethod
    def constant(cls, grid: Grid, c) -> "VectorField":
        c = np.broadcast_to(np.asarray(c, dtype=float), (grid.d,))
        return cls(grid, np.broadcast_to(c, grid.shape + (grid.d,)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        """``fn(t, X)`` returns a sequence of ``d`` component arrays."""
        X = grid.mesh()
        out = np.empty(grid.shape + (grid.d,))
        for i, ti in enumerate(grid.t):
            comps = fn(ti, X)
            for k in range(grid.d):
                out[i, ..., k] = comps[k]
        return cls(grid, out)

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.linalg.norm(self.values, axis=-1))

    def with_values(self, values) -> "VectorField":
        return VectorField(self.grid, values)

    def __mul__(self, c):
        if isinstance(c, ScalarField):
            return self.with_values(self.values * c.values[..., None])
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: "VectorField"):
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "VectorField"):
        return self.with_values(self.values - other.values)


# ---------------------------------------------------------------------------
# norms


class Order(enum.Enum):
    TIME_OUTER = "time_outer"
    SPACE_OUTER = "space_outer"


@dataclass(frozen=True)
class MixedNormSpec:
    """Exponent ``q`` acts on time, ``p`` on space; ``order`` picks the outer variable."""

    q: float
    p: float
    order: Order = Order.TIME_OUTER

    def __post_init__(self):
        for name in ("q", "p"):
            v = getattr(self, name)
            if not v > 1:
                raise ValueError(f"exponent {name}={v} must exceed 1")
        object.__setattr__(self, "order", Order(self.order))


def _lp(values: np.ndarray, weights: np.ndarray, p: float, axes) -> np.ndarray:
    if math.isinf(p):
        return np.max(values, axis=axes)
    return np.sum(weights * values**p, axis=axes) ** (1.0 / p)


def mixed_norm(f: ScalarField, spec: MixedNormSpec) -> float:
    """Trapezoid mixed Lebesgue norm over the grid box."""
    a = np.abs(f.values)
    if not np.all(np.isfinite(a)):
        raise ValueError("field has non-finite values")
    g = f.grid
    space_axes = tuple(range(1, g.d + 1))
    ws, wt = g.space_weights(), g.time_weights()
    if spec.order is Order.TIME_OUTER:
        inner = _lp(a, ws[None], spec.p, space_axes)
        return float(_lp(inner, wt, spec.q, 0))
    inner = _lp(a, wt.reshape((-1,) + (1,) * g.d), spec.q, 0)
    return float(_lp(inner, ws, spec.p, tuple(range(g.d))))


def sup_norm(f) -> float:
    v = f.values if hasattr(f, "values") else np.asarray(f)
    return float(np.max(np.abs(v))) if v.size else 0.0


class Kind(enum.Enum):
    SUBCRITICAL = "subcritical"
    LPS_CRITICAL = "lps_critical"
    THEOREM_PAIR = "theorem_pair"


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def conjugate(p: float) -> float:
    return 1.0 if math.isinf(p) else (math.inf if p == 1 else p / (p - 1))


def admissibility(q: float, p: float, d: int, kind: Kind | str, p0: float | None = None) -> bool:
    """Exponent conditions.

    ``SUBCRITICAL``: ``d/p + 2/q < 2``.  ``LPS_CRITICAL``: ``(q, p)`` read as
    ``(q0, p0)`` with ``p0 in (d, inf]`` and ``d/p0 + 2/q0 = 1``.
    ``THEOREM_PAIR``: subcritical and ``2p, 2q > p0'`` for the Morrey exponent ``p0``.
    """
    kind = Kind(kind)
    if not (q > 1 and p > 1):
        raise ValueError("exponents must exceed 1")
    if kind is Kind.SUBCRITICAL:
        return d * _inv(p) + 2 * _inv(q) < 2
    if kind is Kind.LPS_CRITICAL:
        return p > d and math.isclose(d * _inv(p) + 2 * _inv(q), 1.0, rel_tol=0, abs_tol=1e-12)
    if p0 is None or not p0 > 1:
        raise ValueError("THEOREM_PAIR needs a Morrey exponent p0 > 1")
    sub = d * _inv(p) + 2 * _inv(q) < 2
    p0c = conjugate(p0)
    ok = sub and min(2 * p, 2 * q) > p0c
    # subcritical forces 2p, 2q > 2, so p0' <= 2 can never fail the second test
    if sub and p0c <= 2:
        assert ok
    return ok


# ---------------------------------------------------------------------------
# stencils


def _d1(a: np.ndarray, axis: int, step: float, edge_order: int) -> np.ndarray:
    return np.gradient(a, step, axis=axis, edge_order=edge_order)


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    comps = [_d1(f.values, 1 + k, g.h, 2) for k in range(g.d)]
    return VectorField(g, np.stack(comps, axis=-1))


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    out = sum(_d1(v.values[..., k], 1 + k, g.h, 2) for k in range(g.d))
    return ScalarField(g, out)


def laplacian(f: ScalarField) -> ScalarField:
    """Divergence of the centered gradient (a 2h-wide, second-order stencil).

    Defined this way so that ``divergence(gradient(f)) == laplacian(f)`` holds
    identically; the solver in :mod:`driftlab.pde` uses its own compact stencil.
    """
    return divergence(gradient(f))


def time_derivative(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, _d1(f.values, 0, f.grid.dt, 1))


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<qqqdd")


def to_bytes(f: ScalarField | VectorField) -> bytes:
    g = f.grid
    buf = io.BytesIO()
    buf.write(_HEADER.pack(g.d, g.n_x, g.n_t, g.L, g.T))
    buf.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> ScalarField | VectorField:
    d, n_x, n_t, L, T = _HEADER.unpack_from(data)
    g = Grid(d, L, n_x, T, n_t)
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    n = int(np.prod(g.shape))
    if vals.size == n:
        return ScalarField(g, vals.reshape(g.shape))
    if vals.size == n * d:
        return VectorField(g, vals.reshape(g.shape + (d,)))
    raise ValueError(f"payload of {vals.size} values does not fit grid {g}")


def save(f, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(f))


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def to_csv(f: ScalarField | VectorField, max_nodes: int = 200_000) -> str:
    g = f.grid
    n = int(np.prod(g.shape))
    if n > max_nodes:
        raise ValueError(f"{n} nodes is too many for CSV export")
    axes = ["t"] + [f"x{k + 1}" for k in range(g.d)]
    vec = isinstance(f, VectorField)
    cols = [f"b{k + 1}" for k in range(g.d)] if vec else ["value"]
    coords = np.meshgrid(g.t, *([g.x] * g.d), indexing="ij")
    flat = [c.ravel() for c in coords]
    vals = f.values.reshape(n, -1)
    lines = [",".join(axes + cols)]
    for i in range(n):
        row = [repr(float(c[i])) for c in flat] + [repr(float(v)) for v in vals[i]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def from_csv(text: str, grid: Grid) -> ScalarField | VectorField:
    rows = [ln.split(",") for ln in text.strip().splitlines()]
    header, body = rows[0], np.array(rows[1:], dtype=float)
    data = body[:, grid.d + 1:]
    if header[grid.d + 1:] == ["value"]:
        return ScalarField(grid, data[:, 0].reshape(grid.shape))
    return VectorField(grid, data.reshape(grid.shape + (grid.d,)))
