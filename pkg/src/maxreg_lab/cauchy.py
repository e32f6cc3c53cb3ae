"""Weak solutions of u' + Au = f on the half-line: the Duhamel term v,
weak-form residuals against compactly supported test functions, the
representation u = e^{-tA}h + v and recovery of h from Cesaro averages.

Grid functions are piecewise constant in time.  Where exactness matters
(residuals of exact solutions, trace recovery) a solution is instead
reconstructed inside panel i by the ODE itself,

    u(s) = e^{-(s-t_i)A} u_i + int_0^{s-t_i} e^{-rA} dr f_i,

which is exact for every solution driven by piecewise-constant f.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .maxreg import antiderivative_blocks, apply_Mplus
from .operator_core import Operator, OperatorError, require_analytic_generator
from .semigroup import propagator, semigroup_bound
from .timegrid import GridFunction, TimeGrid, cesaro_weights, gauss_nodes, weighted_norm


class WeakSolutionError(OperatorError):
    pass


def _support_columns(f: GridFunction) -> np.ndarray:
    return np.nonzero(np.any(f.values != 0, axis=1))[0]


def duhamel_v(A: Operator, f: GridFunction) -> GridFunction:
    """``v(t) = int_0^t e^{-(t-s)A} f(s) ds`` at the nodes.

    Panel [a, b] below t contributes ``(E(t-a) - E(t-b)) f_j`` with
    ``E(x) = int_0^x e^{-rA} dr = x phi_1(xA)``, so A need not be invertible.
    """
    require_analytic_generator(A, "Duhamel solution")
    grid = f.grid
    cols = _support_columns(f)
    if cols.size == 0:
        return GridFunction.zeros(grid, f.dim)
    prop = propagator(A)
    t = grid.nodes[:, None]

    def E(x):
        return prop.int1(np.maximum(x, 0.0))

    lo, hi, fc = grid.lower[cols][None, :], grid.upper[cols][None, :], f.values[cols]
    out = np.empty((grid.N, f.dim), dtype=complex)
    # row chunks keep the block tensor near 2^22 entries
    step = max(1, (1 << 22) // (cols.size * f.dim ** 2))
    for r in range(0, grid.N, step):
        tr = t[r:r + step]
        blk = E(tr - lo) - E(tr - hi)
        out[r:r + step] = np.einsum("ijab,jb->ia", blk, fc)
    return GridFunction(grid, out)


def duhamel_operator(A: Operator, grid: TimeGrid) -> np.ndarray:
    """Full block matrix of f -> v (N n x N n)."""
    prop = propagator(A)
    blocks = antiderivative_blocks(lambda x: prop.int1(np.maximum(x, 0.0)), grid, "forward", A.dim)
    N, n = grid.N, A.dim
    return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3)).reshape(N * n, N * n)


def _power_integrals(lo, hi, beta):
    """``int_lo^hi s^beta ds`` elementwise (0 <= lo <= hi)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if beta == -1:
        with np.errstate(divide="ignore"):
            return np.where(hi > lo, np.log(hi) - np.log(lo), 0.0)
    p = beta + 1
    if p < 0 and np.any(lo == 0):
        raise ValueError("measure not integrable at 0")
    return (hi ** p - lo ** p) / p


def continuity_bound_check(A: Operator, f: GridFunction, beta: float) -> float:
    """``max_i ||v(t_i)||^2 / (t_i^{1-beta} int_0^{t_i} s^beta ||f||^2 ds)``.

    Cauchy-Schwarz bounds this by ``M^2 / (1 - beta)``, M = sup ||e^{-tA}||.
    Nodes with an empty right-hand integral are skipped.
    """
    if not beta < 1:
        raise ValueError("beta must be < 1")
    v = duhamel_v(A, f)
    grid = f.grid
    sq = np.sum(np.abs(f.values) ** 2, axis=1)
    full = _power_integrals(grid.lower, grid.upper, beta) * sq
    below = np.concatenate([[0.0], np.cumsum(full)[:-1]])
    part = _power_integrals(grid.lower, grid.nodes, beta) * sq
    rhs = grid.nodes ** (1 - beta) * (below + part)
    lhs = np.sum(np.abs(v.values) ** 2, axis=1)
    ok = rhs > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(lhs[ok] / rhs[ok]))


def continuity_constant(A: Operator, grid: TimeGrid, beta: float) -> float:
    """``M^2 / (1 - beta)`` with M measured on the grid."""
    return semigroup_bound(A, grid) ** 2 / (1 - beta)


# --- test functions -------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Scalar piecewise polynomial with compact support [knots[0], knots[-1]]."""

    kind: str
    knots: tuple

    def __call__(self, s, deriv: int = 0):
        s = np.asarray(s, dtype=float)
        k = np.asarray(self.knots)
        a, b = k[0], k[-1]
        out = np.zeros_like(s)
        inside = (s > a) & (s < b)
        x = s[inside]
        if self.kind == "tent":
            m, h = 0.5 * (a + b), 0.5 * (b - a)
            if deriv == 0:
                out[inside] = 1.0 - np.abs(x - m) / h
            else:
                out[inside] = -np.sign(x - m) / h
        elif self.kind == "bump":
            # uniform cubic B-spline on 4 equal cells, peak 2/3
            h = (b - a) / 4
            y = (x - a) / h
            out[inside] = _bspline(y, deriv) / h ** deriv
        else:
            raise ValueError(self.kind)
        return out

    @property
    def breakpoints(self) -> np.ndarray:
        a, b = self.knots[0], self.knots[-1]
        if self.kind == "tent":
            return np.array([a, 0.5 * (a + b), b])
        return np.linspace(a, b, 5)


def _bspline(y, deriv):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pieces = [
        (lambda z: z ** 3 / 6, lambda z: z ** 2 / 2),
        (lambda z: (-3 * z ** 3 + 12 * z ** 2 - 12 * z + 4) / 6, lambda z: (-9 * z ** 2 + 24 * z - 12) / 6),
        (lambda z: (3 * z ** 3 - 24 * z ** 2 + 60 * z - 44) / 6, lambda z: (9 * z ** 2 - 48 * z + 60) / 6),
        (lambda z: (4 - z) ** 3 / 6, lambda z: -(4 - z) ** 2 / 2),
    ]
    for k, (p0, p1) in enumerate(pieces):
        sel = (y >= k) & (y < k + 1)
        out[sel] = (p0 if deriv == 0 else p1)(y[sel])
    return out


@dataclass(frozen=True, eq=False)
class TestFunction:
    """``phi(s) = p(s) w`` with p a tent or a cubic B-spline bump."""

    __test__ = False  # not a pytest class

    grid: TimeGrid
    profile: Profile
    direction: np.ndarray
    tag: str = ""
    phi: GridFunction = field(init=False)
    phi_dot: GridFunction = field(init=False)

    def __post_init__(self):
        a, b = self.support
        if not (self.grid.t_min < a < b < self.grid.t_max):
            raise ValueError(f"support [{a}, {b}] must lie inside the grid span")
        w = np.asarray(self.direction, dtype=complex)
        object.__setattr__(self, "direction", w)
        t = self.grid.nodes
        object.__setattr__(self, "phi", GridFunction(self.grid, self.profile(t)[:, None] * w))
        object.__setattr__(self, "phi_dot", GridFunction(self.grid, self.profile(t, 1)[:, None] * w))

    @property
    def support(self) -> tuple:
        return (float(self.profile.knots[0]), float(self.profile.knots[-1]))

    def __call__(self, s, deriv: int = 0) -> np.ndarray:
        return self.profile(s, deriv)[..., None] * self.direction

    def l2_norm(self) -> float:
        s, w = self.pieces(8)
        return float(np.sqrt(np.sum(w * self.profile(s) ** 2)) * np.linalg.norm(self.direction))

    def pieces(self, order: int = 8, cuts=()):
        """Gauss nodes/weights on the smooth pieces of the support, split at ``cuts``."""
        a, b = self.support
        pts = np.union1d(self.profile.breakpoints, [c for c in cuts if a < c < b])
        s, w = gauss_nodes(pts[:-1], pts[1:], order)
        return s.ravel(), w.ravel()


def tent(grid: TimeGrid, a: float, b: float, w, tag: str = "") -> TestFunction:
    return TestFunction(grid, Profile("tent", (a, b)), np.atleast_1d(w), tag or f"tent[{a:.4g},{b:.4g}]")


def bump(grid: TimeGrid, a: float, b: float, w, tag: str = "") -> TestFunction:
    return TestFunction(grid, Profile("bump", (a, b)), np.atleast_1d(w), tag or f"bump[{a:.4g},{b:.4g}]")


def test_battery(grid: TimeGrid, dim: int, per_decade: int = 5, spread: float = 1.5,
                 seed: int = 0) -> list:
    """Tents and cubic bumps on ``[c/spread, c*spread]`` for centres c at
    ``per_decade`` log-spaced positions inside the grid."""
    lo, hi = grid.t_min * spread * 1.01, grid.t_max / spread / 1.01
    if lo >= hi:
        raise ValueError("grid too short for the battery")
    k0, k1 = np.ceil(np.log10(lo) * per_decade), np.floor(np.log10(hi) * per_decade)
    rng = np.random.default_rng(seed)
    out = []
    for k in np.arange(k0, k1 + 1):
        c = 10.0 ** (k / per_decade)
        w = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        w /= np.linalg.norm(w)
        out.append(tent(grid, c / spread, c * spread, w))
        out.append(bump(grid, c / spread, c * spread, w))
    return out


test_battery.__test__ = False


# --- weak residual ----------------------------------------------------------------

def _panel_of(grid: TimeGrid, s):
    return np.clip(np.searchsorted(grid.edges, s, side="right") - 1, 0, grid.N - 1)


def reconstruct(A: Operator, u: GridFunction, f: GridFunction, s) -> np.ndarray:
    """In-panel ODE reconstruction of u at times s (shape s.shape + (n,))."""
    prop = propagator(A)
    s = np.asarray(s, dtype=float)
    i = _panel_of(u.grid, s)
    x = s - u.grid.nodes[i]
    return (np.einsum("...ab,...b->...a", prop.exp(x), u.values[i])
            + np.einsum("...ab,...b->...a", prop.int1(x), f.values[i]))


def weak_residual(u: GridFunction, f: GridFunction, A: Operator, phi: TestFunction,
                  mode: str = "piecewise_constant") -> complex:
    """``int (u, -phi' + A* phi) ds - int (f, phi) ds``.

    ``piecewise_constant`` pairs the panel values of u and f with exact
    panel integrals of phi and phi' (first-order accurate).
    ``exponential`` reconstructs u inside each panel from the ODE and
    integrates by Gauss rules, so exact solutions give round-off residuals.
    """
    grid = u.grid
    a, b = phi.support
    if not (grid.t_min < a and b < grid.t_max):
        raise ValueError("test function support escapes the grid")
    Aa = A.entries
    if mode == "piecewise_constant":
        e = grid.edges
        s, w = phi.pieces(8, cuts=e)
        i = _panel_of(grid, s)
        p_int = np.zeros(grid.N)
        np.add.at(p_int, i, w * phi.profile(s))
        dphi = phi.profile(e[1:]) - phi.profile(e[:-1])    # exact int of phi' per panel
        wdir = phi.direction
        Au = u.values @ Aa.T
        # (x, y) = y^H x
        left = np.sum(-dphi * (u.values @ wdir.conj())) + np.sum(p_int * (Au @ wdir.conj()))
        right = np.sum(p_int * (f.values @ wdir.conj()))
        return complex(left - right)
    if mode == "exponential":
        s, w = phi.pieces(12, cuts=grid.edges)
        us = reconstruct(A, u, f, s)
        fs = f.values[_panel_of(grid, s)]
        ph = phi(s)
        dph = phi(s, 1)
        test = -dph + ph @ Aa.conj()          # rows: A* phi(s) = conj(A)^T... as row vectors
        left = np.sum(w * np.einsum("sa,sa->s", us, test.conj()))
        right = np.sum(w * np.einsum("sa,sa->s", fs, ph.conj()))
        return complex(left - right)
    raise ValueError("mode must be 'piecewise_constant' or 'exponential'")


def residual_battery(u: GridFunction, f: GridFunction, A: Operator, battery,
                     mode: str = "piecewise_constant") -> list:
    """``(tag, |residual| / ||phi||)`` for every test function."""
    return [(tf.tag, abs(weak_residual(u, f, A, tf, mode)) / tf.l2_norm()) for tf in battery]


def strong_residual(A: Operator, v: GridFunction, f: GridFunction) -> float:
    """``max_i ||(v_{i+1}-v_i)/dt + A v_mid - f_mid||`` (midpoint averages)."""
    t = v.grid.nodes
    dv = np.diff(v.values, axis=0) / np.diff(t)[:, None]
    vm = 0.5 * (v.values[1:] + v.values[:-1])
    fm = 0.5 * (f.values[1:] + f.values[:-1])
    return float(np.max(np.linalg.norm(dv + vm @ A.entries.T - fm, axis=1)))


# --- candidates and the sup condition -----------------------------------------------

@dataclass
class SupProfile:
    taus: np.ndarray
    averages: np.ndarray
    value: float
    trend: str     # "bounded" | "unbounded trend"


def sup_profile(u: GridFunction, tau_max: float = 0.5, threshold: float = 1.05) -> SupProfile:
    """Cesaro averages of ||u|| over [tau, 2tau] for grid edges tau in [t_min, tau_max).

    The trend is flagged when the largest average over the lowest decade of
    tau exceeds that of the next decade by more than ``threshold``.
    """
    grid = u.grid
    if grid.t_min >= tau_max:
        raise ValueError("grid must reach below tau_max")
    taus = grid.edges[(grid.edges >= grid.t_min) & (grid.edges < tau_max)
                      & (2 * grid.edges <= grid.t_max)]
    taus = taus[taus > 0]
    norms = u.pointwise_norms()
    avgs = np.array([cesaro_weights(grid, tau) @ norms for tau in taus])
    trend = "bounded"
    low = taus < taus[0] * 10
    mid = (taus >= taus[0] * 10) & (taus < taus[0] * 100)
    if np.any(low) and np.any(mid) and np.max(avgs[low]) > threshold * np.max(avgs[mid]):
        trend = "unbounded trend"
    return SupProfile(taus, avgs, float(np.max(avgs)) if avgs.size else 0.0, trend)


def sup_condition(u: GridFunction) -> float:
    """``max_tau (1/tau) int_tau^{2tau} ||u||`` over grid-aligned tau in (t_min, 1/2)."""
    return sup_profile(u).value


@dataclass
class WeakSolutionCandidate:
    u: GridFunction
    sup_indicator: float
    residuals: list


def candidate(A: Operator, u: GridFunction, f: GridFunction, battery=None,
              mode: str = "exponential") -> WeakSolutionCandidate:
    battery = battery if battery is not None else test_battery(u.grid, u.dim)
    return WeakSolutionCandidate(u, sup_condition(u), residual_battery(u, f, A, battery, mode))


# --- trace recovery ------------------------------------------------------------------

def exact_average(A: Operator, u: GridFunction, f: GridFunction, eps: float) -> np.ndarray:
    """``(1/eps) int_eps^{2 eps} u(s) ds`` using the in-panel ODE reconstruction."""
    grid = u.grid
    lo_all, hi_all = eps, 2 * eps
    if lo_all < grid.t_min or hi_all > grid.t_max:
        raise ValueError("[eps, 2 eps] leaves the grid span")
    prop = propagator(A)
    lo = np.maximum(grid.lower, lo_all)
    hi = np.minimum(grid.upper, hi_all)
    live = np.nonzero(hi > lo)[0]
    t = grid.nodes[live]
    x0, x1 = lo[live] - t, hi[live] - t
    eu = prop.int1(x1) - prop.int1(x0)
    ef = prop.int2(x1) - prop.int2(x0)
    total = (np.einsum("iab,ib->a", eu, u.values[live])
             + np.einsum("iab,ib->a", ef, f.values[live]))
    return total / eps


def richardson(h_eps, h_half, h_quarter):
    """Eliminates the O(eps) and O(eps^2) terms of h(eps)."""
    return (h_eps - 6 * h_half + 8 * h_quarter) / 3


def recover_trace(A: Operator, u: GridFunction, f: GridFunction, eps: float | None = None,
                  tol: float = 1e-8, conv_tol: float = 1e-6) -> np.ndarray:
    """h with ``u(t) = e^{-tA} h + v(t)``, from Cesaro averages extrapolated in eps.

    Raises :class:`WeakSolutionError` if the extrapolants at eps and 2 eps
    disagree (no Cesaro limit) or the representation fails at the nodes.
    """
    grid = u.grid
    if eps is None:
        eps = 4 * grid.t_min * 1.0000001
    levels = [eps * 2.0 ** -k for k in range(3)]
    coarse = [2 * eps * 2.0 ** -k for k in range(3)]
    if 2 * coarse[0] > grid.t_max:
        raise ValueError("grid too short for trace recovery")
    # on a grid starting at t_min > 0, v(0+) extrapolates to about -t_min f
    # rather than 0, so the averages are taken of the homogeneous part u - v
    v = duhamel_v(A, f)
    w = u - v
    zero = GridFunction.zeros(grid, u.dim)
    h = richardson(*[exact_average(A, w, zero, e) for e in levels])
    h2 = richardson(*[exact_average(A, w, zero, e) for e in coarse])
    scale = 1.0 + np.linalg.norm(h)
    if not np.linalg.norm(h - h2) <= conv_tol * scale:
        raise WeakSolutionError("not a weak solution of this f: Cesaro averages do not settle "
                                f"(|h(eps) - h(2 eps)| = {np.linalg.norm(h - h2):.3e})")
    rep = np.einsum("iab,b->ia", propagator(A).exp(grid.nodes), h) + v.values
    gap = np.linalg.norm(u.values - rep, axis=1)
    bound = tol * (1 + np.linalg.norm(u.values, axis=1))
    if np.any(gap > bound):
        raise WeakSolutionError("not a weak solution of this f: "
                                f"node-wise representation gap {gap.max():.3e}")
    return h


# --- initial value problem -----------------------------------------------------------

def solve_ivp(A: Operator, u0, f: GridFunction) -> GridFunction:
    """The weak solution ``u(t) = e^{-tA} u0 + v(t)`` with Cesaro trace u0."""
    require_analytic_generator(A, "initial value problem")
    u0 = np.atleast_1d(np.asarray(u0, dtype=complex))
    if u0.shape != (A.dim,):
        raise ValueError("u0 has the wrong dimension")
    hom = np.einsum("iab,b->ia", propagator(A).exp(f.grid.nodes), u0)
    return GridFunction(f.grid, hom) + duhamel_v(A, f)


@dataclass
class IVPReport:
    u0: np.ndarray
    cesaro_limit: np.ndarray
    max_residual: float
    trace_error: float

    def to_json(self) -> str:
        def cplx(x):
            return {"re": np.real(x).tolist(), "im": np.imag(x).tolist()}
        return json.dumps({"u0": cplx(self.u0), "cesaro_limit": cplx(self.cesaro_limit),
                           "max_residual": float(f"{self.max_residual:.12g}"),
                           "trace_error": float(f"{self.trace_error:.12g}")}, sort_keys=True)


def ivp_report(A: Operator, u0, f: GridFunction, u: GridFunction | None = None,
               battery=None) -> IVPReport:
    """Post-conditions of :func:`solve_ivp`: weak residuals over a battery
    (ODE-reconstruction mode) and the recovered Cesaro trace."""
    u0 = np.atleast_1d(np.asarray(u0, dtype=complex))
    u = u if u is not None else solve_ivp(A, u0, f)
    battery = battery if battery is not None else test_battery(u.grid, A.dim)
    res = residual_battery(u, f, A, battery, "exponential")
    h = recover_trace(A, u, f)
    err = float(np.linalg.norm(h - u0) / max(np.linalg.norm(u0), 1.0))
    return IVPReport(u0, h, max(r for _, r in res) if res else 0.0, err)


# --- maximal regularity identity ------------------------------------------------------

@dataclass
class IdentityReport:
    av_matches_Mplus: float
    estimate_ratio: float


def maxreg_identity_check(A: Operator, f: GridFunction, beta: float) -> IdentityReport:
    """``A v = M+ f`` at the nodes, and ``(||v'||_b + ||Av||_b) / ||f||_b``
    with ``v' = f - Av`` (strong form)."""
    if not beta < 1:
        raise ValueError("beta must be < 1")
    v = duhamel_v(A, f)
    av = GridFunction(f.grid, v.values @ A.entries.T)
    mp = apply_Mplus(A, f)
    scale = max(np.max(np.abs(mp.values)), 1e-300)
    gap = float(np.max(np.abs(av.values - mp.values)) / scale) if np.any(mp.values) else \
        float(np.max(np.abs(av.values)))
    fn = weighted_norm(f, beta)
    if fn == 0:
        return IdentityReport(gap, 0.0)
    vdot = f - av
    return IdentityReport(gap, (weighted_norm(vdot, beta) + weighted_norm(av, beta)) / fn)
