"""Discretization of the half-line: panel grids, piecewise-constant grid
functions, closed-form weighted panel measures and the Schur-lemma constant.

A grid function is always read as piecewise constant on panels: the value
stored at node ``t_i`` is the value on ``[edge_i, edge_{i+1}]``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray
    edges: np.ndarray
    spacing: str = "custom"

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        edges = np.array(self.edges, dtype=float)
        if nodes.ndim != 1 or nodes.size < 1:
            raise GridError("nodes must be a non-empty 1-d array")
        if edges.shape != (nodes.size + 1,):
            raise GridError("need exactly N+1 panel edges")
        if not np.all(nodes > 0):
            raise GridError("nodes must be positive")
        if edges[0] < 0:
            raise GridError("panel edges must be non-negative")
        if np.any(np.diff(nodes) <= 0) or np.any(np.diff(edges) <= 0):
            raise GridError("nodes and edges must be strictly increasing")
        if np.any(nodes < edges[:-1]) or np.any(nodes > edges[1:]):
            raise GridError("each node must lie inside its panel")
        for arr in (nodes, edges):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    @property
    def N(self) -> int:
        return self.nodes.size

    @property
    def t_min(self) -> float:
        return float(self.edges[0])

    @property
    def t_max(self) -> float:
        return float(self.edges[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def lower(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def upper(self) -> np.ndarray:
        return self.edges[1:]

    def weights(self, beta: float = 0.0) -> np.ndarray:
        return panel_weights(self.edges, beta)

    def to_json(self) -> str:
        return json.dumps({"t_min": self.t_min, "t_max": self.t_max,
                           "N": self.N, "spacing": self.spacing})

    @classmethod
    def from_json(cls, text: str) -> "TimeGrid":
        d = json.loads(text)
        builders = {"log-uniform": log_grid, "uniform": uniform_grid}
        if d.get("spacing") not in builders:
            raise GridError(f"cannot rebuild grid with spacing {d.get('spacing')!r}")
        return builders[d["spacing"]](d["t_min"], d["t_max"], int(d["N"]))


def _check_bounds(t_min, t_max, N):
    if not (t_min > 0 and t_max > t_min):
        raise GridError(f"need 0 < t_min < t_max, got ({t_min}, {t_max})")
    if N < 2:
        raise GridError("need N >= 2")


def log_grid(t_min: float, t_max: float, N: int) -> TimeGrid:
    """Geometric nodes from t_min to t_max; panel edges at geometric midpoints."""
    _check_bounds(t_min, t_max, N)
    nodes = np.geomspace(t_min, t_max, N)
    nodes[0], nodes[-1] = t_min, t_max
    mids = np.sqrt(nodes[:-1] * nodes[1:])
    edges = np.concatenate([[t_min], mids, [t_max]])
    return TimeGrid(nodes, edges, "log-uniform")


def uniform_grid(t_min: float, t_max: float, N: int) -> TimeGrid:
    _check_bounds(t_min, t_max, N)
    nodes = np.linspace(t_min, t_max, N)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    edges = np.concatenate([[t_min], mids, [t_max]])
    return TimeGrid(nodes, edges, "uniform")


def grid_from_edges(edges, nodes=None) -> TimeGrid:
    """Grid with given panel edges; nodes default to geometric panel centres
    (arithmetic for a panel starting at 0)."""
    edges = np.asarray(edges, dtype=float)
    if nodes is None:
        lo, hi = edges[:-1], edges[1:]
        nodes = np.where(lo > 0, np.sqrt(np.abs(lo * hi)), 0.5 * (lo + hi))
    return TimeGrid(nodes, edges, "custom")


def log_panels(t_min: float, t_max: float, per_decade: int, breakpoints=()) -> TimeGrid:
    """Panels of (almost) constant log-width, with the given breakpoints as edges.

    Handy when a grid function must be exactly representable, e.g. the
    indicator of [1, 2].
    """
    if not (0 < t_min < t_max):
        raise GridError("need 0 < t_min < t_max")
    cuts = sorted({t_min, t_max, *[b for b in breakpoints if t_min < b < t_max]})
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = max(1, int(np.ceil(np.log10(b / a) * per_decade - 1e-9)))
        pieces.append(np.geomspace(a, b, m + 1)[:-1])
    edges = np.concatenate(pieces + [[t_max]])
    return grid_from_edges(edges)


def refine(grid: TimeGrid, factor: int = 2) -> TimeGrid:
    """Split every panel into ``factor`` log-equal pieces (arithmetic if it starts at 0)."""
    parts = []
    for a, b in zip(grid.lower, grid.upper):
        if a > 0:
            parts.append(np.geomspace(a, b, factor + 1)[:-1])
        else:
            parts.append(np.linspace(a, b, factor + 1)[:-1])
    return grid_from_edges(np.concatenate(parts + [[grid.t_max]]))


def panel_weights(edges, beta: float) -> np.ndarray:
    """Closed-form ``int_{e_i}^{e_{i+1}} t^beta dt`` for every panel."""
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    p = beta + 1.0
    out = np.empty(a.size)
    pos = a > 0
    la = np.log(a[pos])
    r = np.log(b[pos]) - la
    if p == 0:
        out[pos] = r
    else:
        out[pos] = np.exp(p * la) * np.expm1(p * r) / p
    if np.any(~pos):
        out[~pos] = b[~pos] ** p / p if p > 0 else np.inf
    return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.N:
            raise GridError(f"values must have shape (N, n) with N={self.grid.N}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __add__(self, other):
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__

    def scaled(self, power: float) -> "GridFunction":
        """Node-sampled ``t^power f(t)``."""
        return GridFunction(self.grid, self.values * self.grid.nodes[:, None] ** power)

    def pointwise_norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    @classmethod
    def zeros(cls, grid: TimeGrid, dim: int) -> "GridFunction":
        return cls(grid, np.zeros((grid.N, dim), dtype=complex))

    @classmethod
    def constant(cls, grid: TimeGrid, vec) -> "GridFunction":
        vec = np.atleast_1d(np.asarray(vec, dtype=complex))
        return cls(grid, np.tile(vec, (grid.N, 1)))

    @classmethod
    def from_callable(cls, grid: TimeGrid, fn) -> "GridFunction":
        vals = np.array([np.atleast_1d(fn(t)) for t in grid.nodes], dtype=complex)
        return cls(grid, vals)

    @classmethod
    def indicator(cls, grid: TimeGrid, a: float, b: float, vec) -> "GridFunction":
        """Piecewise-constant L2 projection of ``1_[a,b] * vec`` (exact when
        a and b are panel edges)."""
        vec = np.atleast_1d(np.asarray(vec, dtype=complex))
        lo = np.maximum(grid.lower, a)
        hi = np.minimum(grid.upper, b)
        frac = np.clip(hi - lo, 0.0, None) / grid.widths
        frac[np.isclose(frac, 1.0, rtol=0, atol=1e-13)] = 1.0
        return cls(grid, frac[:, None] * vec[None, :])

    def to_csv(self, path) -> None:
        n = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"re{k + 1}" for k in range(n)] + [f"im{k + 1}" for k in range(n)])
            for t, row in zip(self.grid.nodes, self.values):
                w.writerow([f"{t:.12g}"] + [f"{x:.12g}" for x in row.real]
                           + [f"{x:.12g}" for x in row.imag])

    @classmethod
    def from_csv(cls, path, grid: TimeGrid) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        header, body = rows[0], np.array(rows[1:], dtype=float)
        n = (len(header) - 1) // 2
        if not np.allclose(body[:, 0], grid.nodes, rtol=1e-10):
            raise GridError("CSV nodes do not match the grid")
        return cls(grid, body[:, 1:1 + n] + 1j * body[:, 1 + n:])


def weighted_norm(f: GridFunction, beta: float = 0.0, power: float = 0.0) -> float:
    """``(int ||t^power f(t)||^2 t^beta dt)^{1/2}`` for piecewise-constant f.

    ``power`` multiplies the piecewise-constant f by an exact power weight,
    so ``weighted_norm(f, -1, 0.5 + a) == weighted_norm(f, 2 a)`` holds in
    panel arithmetic.
    """
    w = panel_weights(f.grid.edges, beta + 2.0 * power)
    sq = np.sum(np.abs(f.values) ** 2, axis=1)
    nz = sq > 0
    return float(np.sqrt(np.sum(sq[nz] * w[nz])))


def cesaro_weights(grid: TimeGrid, tau: float) -> np.ndarray:
    """Panel weights of ``(1/tau) int_tau^{2 tau} g(t) dt`` for piecewise-constant g."""
    if not (grid.t_min <= tau and 2 * tau <= grid.t_max):
        raise GridError(f"[{tau}, {2 * tau}] is not inside the grid span "
                        f"[{grid.t_min}, {grid.t_max}]")
    lo = np.maximum(grid.lower, tau)
    hi = np.minimum(grid.upper, 2 * tau)
    return np.clip(hi - lo, 0.0, None) / tau


# --- Gauss-Legendre helpers -------------------------------------------------

_GAUSS = {}


def gauss_legendre(order: int):
    if order not in _GAUSS:
        x, w = np.polynomial.legendre.leggauss(order)
        _GAUSS[order] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS[order]


def gauss_nodes(lo, hi, order: int = 16):
    """Gauss nodes/weights on each interval [lo_k, hi_k] -> arrays (K, order)."""
    x, w = gauss_legendre(order)
    lo = np.asarray(lo, dtype=float)[:, None]
    h = np.asarray(hi, dtype=float)[:, None] - lo
    return lo + h * x[None, :], h * w[None, :]


# --- Schur-lemma constant ---------------------------------------------------

@dataclass(frozen=True)
class SchurBound:
    value: float
    trapezoid: float
    head: float
    tail: float
    divergent: bool


def _end_slope(lu, lh):
    ok = np.isfinite(lh)
    if ok.sum() < 2:
        return np.nan
    return float(np.polyfit(lu[ok], lh[ok], 1)[0])


def schur_bound(u, h, tail_points: int = 4) -> SchurBound:
    """Estimate ``int_0^inf h(u) du/u`` from samples on a log grid.

    The trapezoid rule in log u covers the sampled span; beyond it the
    samples' power-law end behaviour is integrated in closed form.  A
    non-decaying end means the integral diverges.
    """
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("h must be nonnegative")
    lu = np.log(u)
    trap = float(np.trapezoid(h, lu))
    k = tail_points
    with np.errstate(divide="ignore"):
        lh = np.log(h)
    head = tail = 0.0
    divergent = False
    if h[0] > 0:
        s0 = _end_slope(lu[:k], lh[:k])
        if not s0 > 1e-6:
            divergent = True
        else:
            head = h[0] / s0
    if h[-1] > 0:
        s1 = _end_slope(lu[-k:], lh[-k:])
        if not s1 < -1e-6:
            divergent = True
        else:
            tail = h[-1] / -s1
    value = np.inf if divergent else trap + head + tail
    return SchurBound(float(value), trap, float(head), float(tail), divergent)


# --- the U(t, s) kernel from the weighted-boundedness argument ---------------

@dataclass(frozen=True)
class KernelProfile:
    ratios: np.ndarray
    norms: np.ndarray
    slope: float


def kernel_profile_U(A, alpha: float, ratios, fit_below: float = 1e-6) -> KernelProfile:
    """``||U(1, x)||`` for ``U(t,s) = A e^{-(t-s)A} (t^a - s^a) s^{1/2-a} t^{1/2}``.

    Returns the sampled norms and the log-log slope fitted on ratios below
    ``fit_below``; the expected small-ratio order is ``1/2 - max(a, 0)``.
    """
    from .semigroup import propagator

    if alpha == 0:
        raise ValueError("alpha = beta/2 must be non-zero")
    x = np.asarray(ratios, dtype=float)
    if np.any((x <= 0) | (x > 1)):
        raise ValueError("ratios s/t must lie in (0, 1]")
    k = propagator(A).aexp(1.0 - x)
    scal = (1.0 - x ** alpha) * x ** (0.5 - alpha)
    norms = np.linalg.norm(k * scal[:, None, None], ord=2, axis=(-2, -1))
    sel = (x <= fit_below) & (norms > 0)
    slope = float(np.polyfit(np.log(x[sel]), np.log(norms[sel]), 1)[0]) if sel.sum() >= 2 else np.nan
    return KernelProfile(x, norms, slope)
