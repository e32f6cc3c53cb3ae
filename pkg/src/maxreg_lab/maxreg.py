"""Discretized maximal regularity operators M+ and M- on panel grids.

Kernels are integrated exactly against piecewise-constant data through
their antiderivatives, so the 1/(t-s) singularity of A e^{-(t-s)A} is never
sampled.  Two schemes are available:

``collocation``  output sampled at the nodes t_i (pointwise values of Mf);
``galerkin``     output averaged over each panel.  This is the orthogonal
                 projection of Mf onto piecewise constants, so the matrix
                 adjoint under the L2(dt) pairing is exact and the norm is a
                 lower bound for the continuum norm.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .operator_core import Operator, OperatorError, range_projector, require_analytic_generator
from .semigroup import propagator, quadratic_estimate_constant, semigroup_bound
from .timegrid import (GridFunction, TimeGrid, cesaro_weights, gauss_nodes,
                       log_panels, panel_weights, weighted_norm)

SCHEMES = ("collocation", "galerkin")
STABLE_RATIO = 1.05
DENSE_SVD_MAX = 800
_CHUNK_ENTRIES = 1 << 22


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    """Block matrix of a discretized integral operator on ``grid``.

    ``matrix`` has shape (N n, N n); block (i, j) maps f(t_j) to its
    contribution at t_i.
    """

    grid: TimeGrid
    dim: int
    matrix: np.ndarray
    kind: str = "custom"
    scheme: str = "collocation"
    measure_beta: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def blocks(self) -> np.ndarray:
        n, N = self.dim, self.grid.N
        return self.matrix.reshape(N, n, N, n).transpose(0, 2, 1, 3)

    def block(self, i: int, j: int) -> np.ndarray:
        n = self.dim
        return self.matrix[i * n:(i + 1) * n, j * n:(j + 1) * n]

    def apply(self, f: GridFunction) -> GridFunction:
        if f.grid is not self.grid and not np.array_equal(f.grid.edges, self.grid.edges):
            raise ValueError("grid function lives on a different grid")
        return GridFunction(self.grid, (self.matrix @ f.flat).reshape(self.N, self.dim))

    def adjoint(self, beta: float = 0.0) -> "AssembledOperator":
        """Adjoint for the weighted pairing sum_i w_i (f_i, g_i), w_i = int_{P_i} t^beta dt."""
        w = np.repeat(panel_weights(self.grid.edges, beta), self.dim)
        m = (self.matrix.conj().T * w[None, :]) / w[:, None]
        return replace(self, matrix=m, kind=f"adjoint({self.kind})", meta={})

    def __matmul__(self, other: "AssembledOperator") -> "AssembledOperator":
        return replace(self, matrix=self.matrix @ other.matrix,
                       kind=f"product({self.kind},{other.kind})", meta={})

    def __add__(self, other):
        return replace(self, matrix=self.matrix + other.matrix, kind="sum", meta={})

    def __sub__(self, other):
        return replace(self, matrix=self.matrix - other.matrix, kind="difference", meta={})

    def __mul__(self, c):
        return replace(self, matrix=c * self.matrix, meta={})

    __rmul__ = __mul__


def block_diagonal(grid: TimeGrid, mat: np.ndarray, kind: str = "multiplier",
                   scheme: str = "collocation") -> AssembledOperator:
    """Operator g(t) -> mat g(t), acting pointwise in time."""
    mat = np.asarray(mat, dtype=complex)
    return AssembledOperator(grid, mat.shape[0], np.kron(np.eye(grid.N), mat), kind, scheme)


def _to_matrix(blocks: np.ndarray) -> np.ndarray:
    N, _, n, _ = blocks.shape
    return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3)).reshape(N * n, N * n)


def _chunks(N, per_row):
    step = max(1, _CHUNK_ENTRIES // max(per_row, 1))
    for start in range(0, N, step):
        yield slice(start, min(N, start + step))


def antiderivative_blocks(fn, grid: TimeGrid, direction: str, n: int) -> np.ndarray:
    """Collocation blocks ``int_{P_j, causal} k(lag) ds`` from an antiderivative ``fn``.

    ``fn(x)`` must vanish for x <= 0 and satisfy fn' = kernel.  For
    ``forward`` (lag t_i - s, s < t_i) block (i, j) = fn(t_i - a_j) - fn(t_i - b_j);
    for ``backward`` (lag s - t_i, s > t_i) it is fn(b_j - t_i) - fn(a_j - t_i).
    """
    t, e = grid.nodes, grid.edges
    N = grid.N
    out = np.empty((N, N, n, n), dtype=complex)
    for sl in _chunks(N, (N + 1) * n * n):
        if direction == "forward":
            F = fn(t[sl, None] - e[None, :])
            out[sl] = F[:, :-1] - F[:, 1:]
        elif direction == "backward":
            F = fn(e[None, :] - t[sl, None])
            out[sl] = F[:, 1:] - F[:, :-1]
        else:
            raise ValueError(direction)
    return out


def _galerkin_blocks(prop, grid: TimeGrid, direction: str) -> np.ndarray:
    # w_i B(i,j) = double integral over P_i x P_j = second difference of G
    e = grid.edges
    N, n = grid.N, prop.n
    w = grid.widths
    out = np.empty((N, N, n, n), dtype=complex)
    for sl in _chunks(N, (N + 1) * n * n):
        rows = np.arange(sl.start, sl.stop + 1)
        if direction == "forward":
            G = prop.second(e[rows, None] - e[None, :])        # G(e_p - e_q), p in rows
            # rows p=i+1,i ; cols q=j,j+1 : G(b_i-a_j) - G(a_i-a_j) - G(b_i-b_j) + G(a_i-b_j)
            blk = G[1:, :-1] - G[:-1, :-1] - G[1:, 1:] + G[:-1, 1:]
        else:
            G = prop.second(e[None, :] - e[rows, None])        # G(e_q - e_p), p in rows
            # G(b_j-a_i) - G(a_j-a_i) - G(b_j-b_i) + G(a_j-b_i)
            blk = G[:-1, 1:] - G[:-1, :-1] - G[1:, 1:] + G[1:, :-1]
        out[sl] = blk / w[sl, None, None, None]
    return out


def _assemble(A: Operator, grid: TimeGrid, scheme: str, direction: str, kind: str,
              check: bool = True) -> AssembledOperator:
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    if check:
        require_analytic_generator(A, f"assembling {kind}")
    prop = propagator(A)
    if scheme == "collocation":
        blocks = antiderivative_blocks(prop.first, grid, direction, A.dim)
    else:
        blocks = _galerkin_blocks(prop, grid, direction)
    return AssembledOperator(grid, A.dim, _to_matrix(blocks), kind, scheme)


def assemble_Mplus(A: Operator, grid: TimeGrid, scheme: str = "collocation",
                   check: bool = True) -> AssembledOperator:
    """``M+ f(t) = int_0^t A e^{-(t-s)A} f(s) ds`` for piecewise-constant f.

    Panel [a, b] below t contributes ``e^{-(t-b)A} - e^{-(t-a)A}``; the
    panel containing t is cut at t.
    """
    return _assemble(A, grid, scheme, "forward", "Mplus", check)


def assemble_Mminus(A: Operator, grid: TimeGrid, scheme: str = "collocation",
                    check: bool = True) -> AssembledOperator:
    """``M- f(t) = int_t^inf A e^{-(s-t)A} f(s) ds`` (truncated at the grid end)."""
    return _assemble(A, grid, scheme, "backward", "Mminus", check)


# --- norms -------------------------------------------------------------------

def measure_weights(grid: TimeGrid, beta: float, weights: str = "panel") -> np.ndarray:
    """Diagonal of the discrete L2(t^beta dt) inner product.

    ``panel``: closed-form int_{P_i} t^beta dt.  ``node``: |P_i| t_i^beta,
    which makes L2(t^beta) and L2(t^-beta) exactly dual under the dt pairing.
    """
    if weights == "panel":
        d = panel_weights(grid.edges, beta)
    elif weights == "node":
        d = grid.widths * grid.nodes ** beta
    else:
        raise ValueError("weights must be 'panel' or 'node'")
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError(f"measure t^{beta} dt is not finite on every panel")
    return d


def matrix_norm(S: np.ndarray, rtol: float = 1e-8) -> float:
    """Largest singular value: dense for small sizes, Lanczos (ARPACK) otherwise."""
    if S.shape[0] <= DENSE_SVD_MAX:
        return float(scipy.linalg.svdvals(S, check_finite=False)[0]) if S.size else 0.0
    if not np.any(S):
        return 0.0
    v0 = np.ones(S.shape[1], dtype=S.dtype)
    try:
        s = scipy.sparse.linalg.svds(S, k=1, tol=rtol, v0=v0, return_singular_vectors=False,
                                     maxiter=500)
    except scipy.sparse.linalg.ArpackNoConvergence:
        # clustered top singular values (scalar-like operators); pay for the dense SVD
        return float(scipy.linalg.svdvals(S, check_finite=False)[0])
    return float(s[0])


def weighted_opnorm(op: AssembledOperator, beta: float = 0.0, weights: str = "panel") -> float:
    """Operator norm on L2(t^beta dt; C^n): top singular value of D^{1/2} B D^{-1/2}."""
    d = np.sqrt(np.repeat(measure_weights(op.grid, beta, weights), op.dim))
    return matrix_norm((op.matrix * d[:, None]) / d[None, :])


# --- weighted sweep ------------------------------------------------------------

@dataclass
class SweepReport:
    rows: list  # (beta, t_min, t_max, N, norm, refinement_ratio)
    verdicts: dict

    def to_csv(self, path, header_line: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_line:
                fh.write(header_line.rstrip("\n") + "\n")
            w = csv.writer(fh)
            w.writerow(["beta", "t_min", "t_max", "N", "norm", "refinement_ratio", "verdict"])
            for beta, t0, t1, N, nrm, ratio in self.rows:
                w.writerow([fmt(beta), fmt(t0), fmt(t1), N, fmt(nrm), fmt(ratio),
                            self.verdicts[beta]])


def fmt(x) -> str:
    return f"{x:.12g}"


def stabilization_verdict(norms, threshold: float = STABLE_RATIO) -> tuple[list, str]:
    ratios = [np.nan] + [b / a if a > 0 else (1.0 if b == 0 else np.inf)
                         for a, b in zip(norms[:-1], norms[1:])]
    last = ratios[-1]
    return ratios, ("bounded" if np.isnan(last) or last <= threshold else "growing")


def beta_sweep(A: Operator, betas, grids, which: str = "Mplus",
               scheme: str = "galerkin", weights: str = "panel", executor=None) -> SweepReport:
    """Weighted norms of M+ (or M-) across betas and a refinement sequence of grids.

    The verdict for a beta is ``bounded`` when the norm moved by at most 5%
    on the last refinement and ``growing`` otherwise.
    """
    assemble = {"Mplus": assemble_Mplus, "Mminus": assemble_Mminus}[which]

    def cell(grid):
        op = assemble(A, grid, scheme)
        return [weighted_opnorm(op, b, weights) for b in betas]

    if executor is None:
        table = [cell(g) for g in grids]
    else:
        table = list(executor.map(cell, grids))
    rows, verdicts = [], {}
    for k, beta in enumerate(betas):
        norms = [table[g][k] for g in range(len(grids))]
        ratios, verdict = stabilization_verdict(norms)
        verdicts[beta] = verdict
        for g, grid in enumerate(grids):
            rows.append((beta, grid.t_min, grid.t_max, grid.N, norms[g], ratios[g]))
    rows.sort(key=lambda r: (r[0], r[3]))
    return SweepReport(rows, verdicts)


# --- product integration of smooth-weighted kernels ------------------------------

def _decay_cutoff(prop) -> float:
    lam = np.linalg.eigvals(prop.A.entries)
    norm = np.linalg.norm(prop.A.entries, 2)
    nz = np.abs(lam) > 1e-10 * max(norm, 1e-300)
    if not np.any(nz):
        return 0.0
    mu = np.min(lam[nz].real)
    if mu <= 0:
        return np.inf
    extra = 20.0 if prop.mode != "eig" else np.log(max(np.linalg.cond(prop._v), 1.0))
    return (45.0 + extra) / mu


def kernel_panel_integrals(prop, t, lo, hi, lag_sign: int, lag_shift_sign: int, weight,
                           order: int = 12) -> np.ndarray:
    """``int_{lo}^{hi} A e^{-lag(s) A} weight(t, s) ds`` for many (t, interval) pairs.

    ``t``, ``lo``, ``hi`` are broadcast-compatible arrays; the lag is
    ``lag_sign * s + lag_shift_sign * t`` and must be non-negative on the
    interval.  Intervals are cut into Gauss pieces no longer than 1/||A||
    until the kernel has decayed below 1e-19, then one piece covers the rest.
    Returns shape ``broadcast(t, lo, hi).shape + (n, n)``; empty intervals
    give zero.
    """
    t, lo, hi = np.broadcast_arrays(np.asarray(t, float), np.asarray(lo, float),
                                    np.asarray(hi, float))
    shape = t.shape
    n = prop.n
    out = np.zeros(shape + (n, n), dtype=complex)
    live = hi > lo
    if not np.any(live) or not np.any(prop.A.entries):
        return out
    tt, aa, bb = t[live], lo[live], hi[live]
    lag_a = lag_sign * aa + lag_shift_sign * tt
    lag_b = lag_sign * bb + lag_shift_sign * tt
    lag_lo = np.minimum(lag_a, lag_b)
    cut = _decay_cutoff(prop)
    step = 1.0 / max(np.linalg.norm(prop.A.entries, 2), 1e-300)
    keep = lag_lo < cut
    res = np.zeros((tt.size, n, n), dtype=complex)
    if np.any(keep):
        idx = np.nonzero(keep)[0]
        length = bb[idx] - aa[idx]
        resolved = np.clip(np.minimum(length, cut - lag_lo[idx]), 0, None)
        m = np.ceil(resolved / step).astype(np.int64)
        m = np.maximum(m, 1)
        has_rest = resolved < length * (1 - 1e-12)
        pieces = m + has_rest
        owner = np.repeat(np.arange(idx.size), pieces)
        first = np.concatenate([[0], np.cumsum(pieces)[:-1]])
        local = np.arange(owner.size) - first[owner]
        # the near end (small lag) gets the fine pieces
        near_is_lo = (lag_a <= lag_b)[idx]
        hpiece = resolved[owner] / m[owner]
        is_rest = local >= m[owner]
        p0 = np.where(is_rest, resolved[owner], local * hpiece)
        p1 = np.where(is_rest, length[owner], (local + 1) * hpiece)
        a_o, b_o = aa[idx][owner], bb[idx][owner]
        s_lo = np.where(near_is_lo[owner], a_o + p0, b_o - p1)
        s_hi = np.where(near_is_lo[owner], a_o + p1, b_o - p0)
        s, gw = gauss_nodes(s_lo, s_hi, order)
        t_o = tt[idx][owner][:, None]
        lag = np.maximum(lag_sign * s + lag_shift_sign * t_o, 0.0)
        wts = gw * weight(np.broadcast_to(t_o, s.shape), s)
        starts = first * order
        res[idx] = prop.weighted_kernel_sums(lag.ravel(), wts.ravel(), starts)
    out[live] = res
    return out


def _support_columns(f: GridFunction) -> np.ndarray:
    return np.nonzero(np.any(f.values != 0, axis=1))[0]


def _apply_columns(blocks, f: GridFunction, cols) -> GridFunction:
    vals = np.einsum("ijab,jb->ia", blocks, f.values[cols])
    return GridFunction(f.grid, vals)


# --- weighted decomposition of M+ -------------------------------------------------

def decomposition_identity_check(A: Operator, f: GridFunction, beta: float,
                                 order: int = 16) -> float:
    """Relative node-wise gap in ``t^a M+f = M+(s^a f) + int_0^t A e^{-(t-s)A}(t^a - s^a) f ds``.

    The left side uses the exact antiderivative; the two right-hand
    integrals are computed independently by product Gauss quadrature
    (s^a is not constant on a panel).  a = beta/2.
    """
    if not beta < 1 or beta == 0:
        raise ValueError("need beta < 1, beta != 0")
    alpha = beta / 2.0
    grid = f.grid
    cols = _support_columns(f)
    if cols.size == 0:
        return 0.0
    prop = propagator(A)
    mplus = assemble_Mplus(A, grid)
    left = grid.nodes[:, None] ** alpha * mplus.apply(f).values
    t = grid.nodes[:, None]
    lo = grid.lower[cols][None, :]
    hi = np.minimum(grid.upper[cols][None, :], t)
    first = kernel_panel_integrals(prop, t, lo, hi, -1, +1, lambda tt, s: s ** alpha, order)
    corr = kernel_panel_integrals(prop, t, lo, hi, -1, +1,
                                  lambda tt, s: tt ** alpha - s ** alpha, order)
    right = _apply_columns(first + corr, f, cols).values
    scale = max(np.max(np.abs(left)), 1e-300)
    return float(np.max(np.linalg.norm(left - right, axis=1)) / scale)


def correction_operator(A: Operator, grid: TimeGrid, alpha: float) -> AssembledOperator:
    """Collocated kernel ``A e^{-(t-s)A} (t^a - s^a)`` with s^a frozen at the source node."""
    mp = assemble_Mplus(A, grid)
    ta = grid.nodes ** alpha
    fac = np.repeat(ta[:, None] - ta[None, :], A.dim, axis=0)
    fac = np.repeat(fac, A.dim, axis=1)
    return replace(mp, matrix=mp.matrix * fac, kind=f"correction({alpha})")


# --- the beta >= 1 counterexample ---------------------------------------------------

@dataclass
class CounterexampleResult:
    rows: list            # (t_min, norm, norm_sq, delta_per_decade)
    c: float              # ||(e^{-A} - e^{-2A}) u||
    f_norm: float         # ||f||_{L2(t^{-beta})}
    verdict: str
    beta: float

    def to_csv(self, path, header_line: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_line:
                fh.write(header_line.rstrip("\n") + "\n")
            w = csv.writer(fh)
            w.writerow(["t_min", "norm_sq", "delta_per_decade"])
            for t0, _, nsq, d in self.rows:
                w.writerow([fmt(t0), fmt(nsq), fmt(d)])


def project_to_range(A: Operator, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    pu = range_projector(A) @ u
    nrm = np.linalg.norm(pu)
    if nrm <= 1e-12 * max(np.linalg.norm(u), 1e-300):
        raise OperatorError("u has no component in the range of A")
    return pu / nrm * np.linalg.norm(u)


def counterexample_growth(A: Operator, u, beta: float, t_mins, t_max: float = 4.0,
                          per_decade: int = 64) -> CounterexampleResult:
    """Truncated L2(t^-beta) norms of M- f for ``f = u 1_[1,2]``.

    For beta = 1 the squared norm grows by ``c^2 ln 10`` per decade of
    t_min, with ``c = ||(e^{-A} - e^{-2A}) u||``.  Any beta is accepted;
    beta < 1 serves as the bounded control.
    """
    u = project_to_range(A, u)
    prop = propagator(A)
    c = float(np.linalg.norm((prop.exp(1.0) - prop.exp(2.0)) @ u))
    if c <= 1e-12 * np.linalg.norm(u):
        raise OperatorError("(e^{-A} - e^{-2A}) u vanishes numerically")
    t_mins = sorted(t_mins, reverse=True)
    grid = log_panels(min(t_mins), t_max, per_decade, breakpoints=[1.0, 2.0, *t_mins])
    f = GridFunction.indicator(grid, 1.0, 2.0, u)
    g = apply_Mminus(A, f)
    w = panel_weights(grid.edges, -beta)
    sq = np.sum(np.abs(g.values) ** 2, axis=1) * w
    rows, prev = [], None
    for t0 in t_mins:
        nsq = float(np.sum(sq[grid.lower >= t0 * (1 - 1e-12)]))
        delta = np.nan if prev is None else (nsq - prev[1]) / np.log10(prev[0] / t0)
        rows.append((t0, np.sqrt(nsq), nsq, delta))
        prev = (t0, nsq)
    _, verdict = stabilization_verdict([r[1] for r in rows])
    f_norm = weighted_norm(f, -beta)
    return CounterexampleResult(rows, c, f_norm, verdict, beta)


def apply_Mminus(A: Operator, f: GridFunction) -> GridFunction:
    """Collocated M- f using only the panels where f is non-zero."""
    grid = f.grid
    cols = _support_columns(f)
    if cols.size == 0:
        return GridFunction.zeros(grid, f.dim)
    prop = propagator(A)
    t = grid.nodes[:, None]
    hi = prop.first(grid.upper[cols][None, :] - t)
    lo = prop.first(grid.lower[cols][None, :] - t)
    return _apply_columns(hi - lo, f, cols)


def apply_Mplus(A: Operator, f: GridFunction) -> GridFunction:
    grid = f.grid
    cols = _support_columns(f)
    if cols.size == 0:
        return GridFunction.zeros(grid, f.dim)
    prop = propagator(A)
    t = grid.nodes[:, None]
    blk = prop.first(t - grid.lower[cols][None, :]) - prop.first(t - grid.upper[cols][None, :])
    return _apply_columns(blk, f, cols)


# --- extension of M- to L2(dt/t) ----------------------------------------------

TILDE_TERMS = ("scaled", "near", "far_difference", "far_reflected", "reflected_head")


def _tilde_term_blocks(prop, grid: TimeGrid, cols, order: int = 12) -> dict:
    t = grid.nodes[:, None]
    a = grid.lower[cols][None, :]
    b = grid.upper[cols][None, :]

    def root(tt, s):
        return np.sqrt(tt / s)

    def one_minus_root(tt, s):
        return 1.0 - np.sqrt(tt / s)

    def neg_one_minus_root(tt, s):
        return -(1.0 - np.sqrt(tt / s))

    def neg_root(tt, s):
        return -np.sqrt(tt / s)

    def neg_one(tt, s):
        return -np.ones_like(s)

    kpi = kernel_panel_integrals
    above_t = np.maximum(a, t)
    above_2t = np.maximum(a, 2 * t)
    below_2t = np.minimum(b, 2 * t)
    return {
        # t^{1/2} M-(s^{-1/2} f)
        "scaled": kpi(prop, t, above_t, b, +1, -1, root, order),
        # int_t^{2t} A e^{-(s-t)A} (1 - (t/s)^{1/2}) f ds
        "near": kpi(prop, t, above_t, below_2t, +1, -1, one_minus_root, order),
        # int_{2t}^inf A (e^{-(s-t)A} - e^{-(s+t)A}) (1 - (t/s)^{1/2}) f ds
        "far_difference": kpi(prop, t, above_2t, b, +1, -1, one_minus_root, order)
        + kpi(prop, t, above_2t, b, +1, +1, neg_one_minus_root, order),
        # - int_{2t}^inf A e^{-(s+t)A} (t/s)^{1/2} f ds
        "far_reflected": kpi(prop, t, above_2t, b, +1, +1, neg_root, order),
        # - int_0^{2t} A e^{-(s+t)A} f ds
        "reflected_head": kpi(prop, t, a, below_2t, +1, +1, neg_one, order),
    }


def mminus_tilde_terms(A: Operator, f: GridFunction, order: int = 12) -> dict:
    """The five bounded pieces of the extended M- applied to f, by name."""
    cols = _support_columns(f)
    if cols.size == 0:
        z = GridFunction.zeros(f.grid, f.dim)
        return {k: z for k in TILDE_TERMS}
    blocks = _tilde_term_blocks(propagator(A), f.grid, cols, order)
    return {k: _apply_columns(v, f, cols) for k, v in blocks.items()}


def trace_vector(A: Operator, f: GridFunction) -> np.ndarray:
    """``int_0^inf A e^{-sA} f(s) ds``, panel-exact."""
    prop = propagator(A)
    cols = _support_columns(f)
    if cols.size == 0:
        return np.zeros(f.dim, dtype=complex)
    g = prop.first(f.grid.upper[cols]) - prop.first(f.grid.lower[cols])
    return np.einsum("jab,jb->a", g, f.values[cols])


def mminus_extension(A: Operator, f: GridFunction, order: int = 12) -> GridFunction:
    """Extended M- f: sum of the five bounded terms plus ``e^{-tA} int_0^inf A e^{-sA} f ds``."""
    terms = mminus_tilde_terms(A, f, order)
    tilde = sum(terms.values(), GridFunction.zeros(f.grid, f.dim))
    g = trace_vector(A, f)
    rank = np.einsum("iab,b->ia", propagator(A).exp(f.grid.nodes), g)
    return tilde + GridFunction(f.grid, rank)


def assemble_mminus_tilde(A: Operator, grid: TimeGrid, order: int = 12) -> AssembledOperator:
    """Full collocated operator of the five-term part (bounded on L2(dt/t))."""
    require_analytic_generator(A, "assembling the extended M-")
    cols = np.arange(grid.N)
    blocks = sum(_tilde_term_blocks(propagator(A), grid, cols, order).values())
    return AssembledOperator(grid, A.dim, _to_matrix(blocks), "Mminus_tilde", "collocation", -1.0)


def cesaro_average(g: GridFunction, tau: float) -> np.ndarray:
    """``(1/tau) int_tau^{2 tau} g(t) dt`` for piecewise-constant g."""
    return cesaro_weights(g.grid, tau) @ g.values


def truncated_norm_sq(g: GridFunction, beta: float, t0: float) -> float:
    """``int_{t0}^{t_max} ||g||^2 t^beta dt`` with partial first panel."""
    grid = g.grid
    lo = np.maximum(grid.lower, t0)
    edges_lo, edges_hi = lo, grid.upper
    live = edges_hi > edges_lo
    w = np.zeros(grid.N)
    w[live] = np.array([panel_weights([x, y], beta)[0] for x, y in zip(edges_lo[live], edges_hi[live])])
    return float(np.sum(np.sum(np.abs(g.values) ** 2, axis=1) * w))


@dataclass
class TraceReport:
    taus: list
    averages: np.ndarray        # Cesaro averages of M- f, one row per tau
    limit_vector: np.ndarray
    trace_vector: np.ndarray    # int_0^inf A e^{-sA} f ds
    is_zero: bool
    norms: list                 # truncated L2(dt/t) norms of M- f over [tau, t_max]
    verdict: str                # "stabilizes" | "grows", from the per-decade gains of norms^2
    bound_ratio: float          # sup_tau (1/tau) int ||M- f||^2 / |||f|||^2
    bound_constant: float
    qe_constant: float

    @property
    def bound_holds(self) -> bool:
        return self.bound_ratio <= self.bound_constant


def _log_growth_verdict(taus, norms, rtol: float = 1e-10) -> str:
    """``grows`` when the squared dt/t-norm keeps gaining a non-vanishing amount per
    decade of tau (logarithmic divergence), ``stabilizes`` when the gains decay.

    The norm ratio itself tends to 1 under logarithmic growth, so it cannot
    separate the two cases.
    """
    sq = np.asarray(norms, dtype=float) ** 2
    if sq.size < 3:
        _, v = stabilization_verdict(list(norms))
        return "stabilizes" if v == "bounded" else "grows"
    dec = np.log10(np.asarray(taus[:-1]) / np.asarray(taus[1:]))
    gain = np.diff(sq) / dec
    if gain[-1] <= rtol * sq[-1]:
        return "stabilizes"
    return "grows" if gain[-1] >= 0.5 * gain[-2] else "stabilizes"


def trace_criterion(A: Operator, f: GridFunction, taus, zero_tol: float = 1e-8) -> TraceReport:
    """Cesaro limit at 0 of M- f versus finiteness of its L2(dt/t) norm.

    Requires the quadratic estimate for A*.  Also measures the averaged
    bound ``sup_tau (1/tau) int_tau^{2tau} ||M- f||^2 <= C |||f|||^2`` with
    ``C = 4 (|||M~f||| / |||f|||)^2 + 2 M^2 C_qe(A*)^2``.
    """
    qe = quadratic_estimate_constant(A.adjoint())
    if not qe.converged or not np.isfinite(qe.value):
        raise OperatorError(f"quadratic estimate for A* not verified: {qe.diagnostic}")
    grid = f.grid
    taus = sorted(taus, reverse=True)
    mf = apply_Mminus(A, f)
    g = trace_vector(A, f)
    avgs = np.array([cesaro_average(mf, tau) for tau in taus])
    limit = avgs[-1]
    fnorm = weighted_norm(f, -1.0)
    scale = max(fnorm, np.linalg.norm(g), 1e-300)
    is_zero = bool(np.linalg.norm(limit) <= zero_tol * scale)
    norms = [np.sqrt(truncated_norm_sq(mf, -1.0, tau)) for tau in taus]
    verdict = _log_growth_verdict(taus, norms)
    prop = propagator(A)
    rank = np.einsum("iab,b->ia", prop.exp(grid.nodes), g)
    tilde = mf - GridFunction(grid, rank)
    M = semigroup_bound(A, grid)
    if fnorm > 0:
        sq = np.sum(np.abs(mf.values) ** 2, axis=1)
        starts = grid.lower[grid.lower * 2 <= grid.t_max]
        ratio = max(float(cesaro_weights(grid, tau) @ sq) for tau in starts) / fnorm ** 2
        const = 4 * (weighted_norm(tilde, -1.0) / fnorm) ** 2 + 2 * M ** 2 * qe.value ** 2
    else:
        ratio, const = 0.0, 0.0
    return TraceReport(taus, avgs, limit, g, is_zero, norms, verdict, ratio, const, qe.value)


def zero_trace_function(A: Operator, grid: TimeGrid, bump1, bump2, w) -> GridFunction:
    """f = w on bump1 and a compensating vector on bump2 so that
    ``int_0^inf A e^{-sA} f ds = 0`` exactly (panel arithmetic)."""
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    f1 = GridFunction.indicator(grid, *bump1, w)
    e2 = GridFunction.indicator(grid, *bump2, np.ones(1))
    prop = propagator(A)
    cols = _support_columns(e2)
    G2 = np.einsum("jab,j->ab", prop.first(grid.upper[cols]) - prop.first(grid.lower[cols]),
                   e2.values[cols, 0])
    comp = -np.linalg.solve(G2, trace_vector(A, f1))
    return f1 + GridFunction(grid, e2.values[:, :1] * comp[None, :])


def remark_beta1_check(A: Operator, f: GridFunction) -> float:
    """``||M+ f - A e^{-tA} int_0^inf e^{-sA} f ds||_{L2(t dt)} / ||f||_{L2(t dt)}``."""
    fn = weighted_norm(f, 1.0)
    if fn == 0:
        raise ValueError("f must be non-zero")
    prop = propagator(A)
    cols = _support_columns(f)
    mp = apply_Mplus(A, f)
    w = np.einsum("jab,jb->a", prop.int1(f.grid.upper[cols]) - prop.int1(f.grid.lower[cols]),
                  f.values[cols])
    corr = np.einsum("iab,b->ia", prop.aexp(f.grid.nodes), w)
    return weighted_norm(mp - GridFunction(f.grid, corr), 1.0) / fn
