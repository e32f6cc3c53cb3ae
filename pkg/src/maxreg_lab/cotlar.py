"""Almost-orthogonality of the pieces T_u = M+ (u A e^{-uA}) and the
reproducing formula ``int_0^inf T_u du/u = M+`` on the range of A.

Products are formed on the Galerkin assembly, whose adjoint under the
L2(dt) pairing is exact, so ``T_u T_v^*`` and ``T_u^* T_v`` are genuine
operator products rather than approximations of them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .fractional import similarity_norm
from .maxreg import AssembledOperator, assemble_Mplus, block_diagonal, matrix_norm, fmt
from .operator_core import Operator, OperatorError, range_projector, require_analytic_generator
from .semigroup import propagator
from .timegrid import TimeGrid, gauss_nodes, schur_bound


def _require_injective(A: Operator, what: str):
    info = require_analytic_generator(A, what)
    if not info.is_injective:
        raise OperatorError(f"{what} needs A injective")
    return info


def spectral_radius(A: Operator) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A.entries))))


def default_u_grid(A: Operator, half_width: int = 12) -> np.ndarray:
    """Dyadic ``2^k / rho`` for ``|k| <= half_width``, rho the spectral radius."""
    rho = spectral_radius(A)
    if rho == 0:
        raise OperatorError("A = 0 has no spectral scale")
    return 2.0 ** np.arange(-half_width, half_width + 1) / rho


def calderon_u_grid(A: Operator, decades_below: float | None = None,
                    decades_above: float | None = None, per_decade: int = 64,
                    decades: float = 8.0) -> np.ndarray:
    """Log grid for the reproducing integral ``int_0^inf u A e^{-uA} du/u``.

    By default the window spans ``decades`` decades placed so that the two
    truncation losses, ``|lambda|_max u_lo`` below and ``e^{-Re lambda_min u_hi}``
    above, are equal.  ``decades_below``/``decades_above`` instead fix the
    window relative to ``1/|lambda|_max`` and ``1/Re lambda_min``.
    """
    lam = np.linalg.eigvals(A.entries)
    lam = lam[np.abs(lam) > 1e-10 * max(np.max(np.abs(lam)), 1e-300)]
    if lam.size == 0:
        raise OperatorError("A = 0 has no spectral scale")
    big, small = float(np.max(np.abs(lam))), float(np.min(lam.real))
    if small <= 0:
        raise OperatorError("spectrum must lie in the open right half-plane")
    if decades_below is not None or decades_above is not None:
        lo = 10.0 ** -(6.0 if decades_below is None else decades_below) / big
        hi = 10.0 ** (2.0 if decades_above is None else decades_above) / small
    else:
        span = 10.0 ** decades
        # head(x) = x, tail(x) = exp(-x span small / big) with x = big u_lo
        gap = lambda lx: lx + np.exp(lx) * span * small / big
        lx = scipy.optimize.brentq(gap, -60.0, 10.0)
        lo = np.exp(lx) / big
        hi = lo * span
    m = int(round(np.log10(hi / lo) * per_decade)) + 1
    return np.geomspace(lo, hi, m)


def calderon_multiplier(A: Operator, u_grid, weights=None) -> np.ndarray:
    """``sum_k w_k u_k A e^{-u_k A}``; with log-trapezoid weights this is the
    quadrature of ``int u A e^{-uA} du/u``, which tends to the range projector."""
    u = np.asarray(u_grid, dtype=float)
    if weights is None:
        weights = log_trapezoid_weights(u)
    k = propagator(A).aexp(u) * u[:, None, None]
    return np.einsum("k,kab->ab", np.asarray(weights, dtype=float), k)


def log_trapezoid_weights(u) -> np.ndarray:
    x = np.log(np.asarray(u, dtype=float))
    if x.size == 1:
        return np.ones(1)
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def multiplier_u(A: Operator, u: float) -> np.ndarray:
    """``u A e^{-uA}``."""
    if u <= 0:
        raise ValueError("u must be positive")
    return u * propagator(A).aexp(u)


def assemble_Tu(A: Operator, u: float, grid: TimeGrid, scheme: str = "galerkin",
                mplus: AssembledOperator | None = None) -> AssembledOperator:
    """``T_u g = M+(u A e^{-uA} g)`` as an exact matrix product."""
    _require_injective(A, "T_u")
    mp = mplus if mplus is not None else assemble_Mplus(A, grid, scheme)
    op = mp @ block_diagonal(grid, multiplier_u(A, u), scheme=mp.scheme)
    return AssembledOperator(grid, A.dim, op.matrix, f"Tu({u:.6g})", mp.scheme)


# --- composition kernels ---------------------------------------------------------

def _eig_parts(A: Operator):
    w, v = np.linalg.eig(A.entries)
    if np.linalg.cond(v) > 1e8:
        return None
    return w, v, np.linalg.inv(v)


def _phi1_real_times(m, c):
    # (1 - e^{-mc}) / c, stable near c*m = 0
    z = m * c
    out = np.where(np.abs(z) < 1e-8, m * (1 - z / 2), -np.expm1(-z) / np.where(c == 0, 1, c))
    return out


def composition_kernel_K(A: Operator, u: float, v: float, t: float, tau: float,
                         method: str = "auto", order: int = 24) -> np.ndarray:
    """``K(t,tau) = int_0^{min(t,tau)} u A^2 e^{-(t-s+u)A} v A*^2 e^{-(tau-s+v)A*} ds``,
    the kernel of ``T_u T_v^*``.

    ``method="eig"`` integrates in closed form in the eigenbasis;
    ``"quad"`` uses composite Gauss-Legendre graded toward s = min(t, tau).
    """
    if min(u, v) <= 0 or min(t, tau) < 0:
        raise ValueError("need u, v > 0 and t, tau >= 0")
    m = min(t, tau)
    if m == 0:
        return np.zeros((A.dim, A.dim), dtype=complex)
    parts = _eig_parts(A) if method in ("auto", "eig") else None
    if parts is not None:
        w, V, Vi = parts
        # A = V diag(w) Vi, A* = Vi^H diag(conj w) V^H
        left = u * w ** 2 * np.exp(-(t - m + u) * w)
        right = v * np.conj(w) ** 2 * np.exp(-(tau - m + v) * np.conj(w))
        c = w[:, None] + np.conj(w)[None, :]
        core = (Vi @ Vi.conj().T) * left[:, None] * right[None, :] * _phi1_real_times(m, c)
        return V @ core @ V.conj().T
    if method == "eig":
        raise OperatorError("eigenvector basis ill-conditioned; use method='quad'")
    a = A.entries
    p = propagator(A)
    ps = propagator(A.adjoint())
    s, wts = _graded_nodes(0.0, m, min(u, v), order, toward="hi")
    left = u * np.einsum("ab,sbc,cd->sad", a, p.exp(t - s + u), a)
    ah = a.conj().T
    right = v * np.einsum("ab,sbc,cd->sad", ah, ps.exp(tau - s + v), ah)
    return np.einsum("s,sab,sbc->ac", wts, left, right)


def composition_kernel_Ktilde(A: Operator, u: float, v: float, t: float, tau: float,
                              method: str = "auto", order: int = 24) -> np.ndarray:
    """``int_{max(t,tau)}^inf u A*^2 e^{-(s-t+u)A*} v A^2 e^{-(s-tau+v)A} ds``,
    the kernel of ``T_u^* T_v``."""
    if min(u, v) <= 0 or min(t, tau) < 0:
        raise ValueError("need u, v > 0 and t, tau >= 0")
    M = max(t, tau)
    parts = _eig_parts(A) if method in ("auto", "eig") else None
    if parts is not None:
        w, V, Vi = parts
        left = u * np.conj(w) ** 2 * np.exp(-(M - t + u) * np.conj(w))
        right = v * w ** 2 * np.exp(-(M - tau + v) * w)
        c = np.conj(w)[:, None] + w[None, :]
        core = (V.conj().T @ V) * left[:, None] * right[None, :] / c
        return Vi.conj().T @ core @ Vi
    if method == "eig":
        raise OperatorError("eigenvector basis ill-conditioned; use method='quad'")
    a = A.entries
    lam = np.linalg.eigvals(a)
    decay = 60.0 / max(np.min(lam.real), 1e-300)
    s, wts = _graded_nodes(M, M + decay, min(u, v), order, toward="lo")
    p = propagator(A)
    ps = propagator(A.adjoint())
    ah = a.conj().T
    left = u * np.einsum("ab,sbc,cd->sad", ah, ps.exp(s - t + u), ah)
    right = v * np.einsum("ab,sbc,cd->sad", a, p.exp(s - tau + v), a)
    return np.einsum("s,sab,sbc->ac", wts, left, right)


def _graded_nodes(lo, hi, h0, order, toward="hi"):
    # geometric panels (ratio 1.5) starting at width h0 next to the sharp end
    if hi <= lo:
        return np.zeros(0), np.zeros(0)
    cuts = [0.0]
    w = h0 / 4
    while cuts[-1] < hi - lo:
        cuts.append(min(cuts[-1] + w, hi - lo))
        w *= 1.5
    d = np.asarray(cuts)
    if toward == "hi":
        edges = hi - d[::-1]
    else:
        edges = lo + d
    s, wts = gauss_nodes(edges[:-1], edges[1:], order)
    return s.ravel(), wts.ravel()


# --- kernel envelope --------------------------------------------------------------

@dataclass
class KernelBoundReport:
    u: float
    v: float
    alpha: float
    similarity_constant: float
    max_ratio: float
    worst_point: tuple
    schur_row_integral: float
    schur_envelope: float

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.max_ratio))


def kernel_envelope(u, v, alpha, t, tau):
    """``(u/v)^a v^{1+a} / (tau-t+v)^{2+a}`` for t <= tau and the mirror
    ``(u/v)^a u^{1-a} / (t-tau+u)^{2-a}`` for t > tau."""
    t, tau = np.asarray(t, float), np.asarray(tau, float)
    x = (u / v) ** alpha
    gap = np.abs(tau - t)
    lower = x * v ** (1 + alpha) / (gap + v) ** (2 + alpha)
    upper = x * u ** (1 - alpha) / (gap + u) ** (2 - alpha)
    return np.where(t <= tau, lower, upper)


def kernel_bound_check(A: Operator, u: float, v: float, alpha: float,
                       points=None) -> KernelBoundReport:
    """Sampled ``||K(t,tau)|| / (C(a) * envelope)`` with C(a) = ||A^a A*^{-a}||.

    Also returns ``sup_tau int (||K(t,tau)|| + ||K(tau,t)||) dt`` on the
    sample grid next to ``C(a) (u/v)^a``.
    """
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    if u > v:
        raise ValueError("expects u <= v")
    _require_injective(A, "kernel bound")
    C = similarity_norm(A, alpha)
    if points is None:
        scale = min(u, v)
        points = np.geomspace(scale * 1e-2, max(u, v) * 1e2 + 1.0, 96)
    pts = np.asarray(points, dtype=float)
    norms = np.empty((pts.size, pts.size))
    for i, t in enumerate(pts):
        for j, tau in enumerate(pts):
            norms[i, j] = np.linalg.norm(composition_kernel_K(A, u, v, t, tau), 2)
    env = C * kernel_envelope(u, v, alpha, pts[:, None], pts[None, :])
    ratio = norms / env
    k = np.unravel_index(np.argmax(ratio), ratio.shape)
    # piecewise-constant row integrals on the sample points
    widths = np.gradient(pts) if pts.size > 1 else np.ones(1)
    rows = (norms + norms.T) @ widths
    return KernelBoundReport(u, v, alpha, C, float(ratio[k]), (float(pts[k[0]]), float(pts[k[1]])),
                             float(np.max(rows)), float(C * (u / v) ** alpha))


# --- Cotlar audit -----------------------------------------------------------------

@dataclass
class OrthogonalityReport:
    alpha: float
    pairs: list                # (u, v, norm_TuTv_star, norm_Tu_starTv)
    fitted_decay: float
    fit_residual: float
    constant: float            # max over u < v of max(norms) (v/u)^a
    model_bound: float         # constant * int min(x^a, x^-a) dx/x
    cotlar_sum: float          # sum over dyadic ratios of sqrt(h), both sides
    reconstructed_norm: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.fitted_decay >= self.alpha - 0.05

    def to_csv(self, path, header_line: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_line:
                fh.write(header_line.rstrip("\n") + "\n")
            w = csv.writer(fh)
            w.writerow(["alpha", "u", "v", "norm_TuTvstar", "norm_TustarTv", "envelope", "ratio"])
            for u, v, n1, n2 in self.pairs:
                env = self.constant * (u / v) ** self.alpha
                w.writerow([fmt(self.alpha), fmt(u), fmt(v), fmt(n1), fmt(n2), fmt(env),
                            fmt(max(n1, n2) / env if env > 0 else np.nan)])


def _weighted_factor(grid: TimeGrid, dim: int, mp: AssembledOperator) -> np.ndarray:
    # W^{1/2} M+ W^{-1/2}: the L2(dt) norm becomes the Euclidean one
    d = np.sqrt(np.repeat(grid.widths, dim))
    return (mp.matrix * d[:, None]) / d[None, :]


def pair_norms(A: Operator, u_grid, grid: TimeGrid, max_log2_ratio: int = 8,
               executor=None) -> list:
    """``(u, v, ||T_u T_v^*||, ||T_u^* T_v||)`` for u <= v with v/u <= 2^max_log2_ratio."""
    _require_injective(A, "almost-orthogonality audit")
    u_grid = np.sort(np.asarray(u_grid, dtype=float))
    mp = assemble_Mplus(A, grid, "galerkin")
    P = _weighted_factor(grid, A.dim, mp)
    N = grid.N
    D = {u: multiplier_u(A, u) for u in u_grid}
    eye = np.eye(N)
    todo = [(u, v) for i, u in enumerate(u_grid) for v in u_grid[i:]
            if v / u <= 2.0 ** max_log2_ratio * (1 + 1e-9)]

    def cell(pair):
        u, v = pair
        mid1 = np.kron(eye, D[u] @ D[v].conj().T)
        mid2 = np.kron(eye, D[u].conj().T)
        n1 = matrix_norm(P @ mid1 @ P.conj().T)
        # T_u^* T_v = D_u^H M+^* M+ D_v
        n2 = matrix_norm(mid2 @ (P.conj().T @ P) @ np.kron(eye, D[v]))
        return (float(u), float(v), n1, n2)

    if executor is None:
        return [cell(p) for p in todo]
    return list(executor.map(cell, todo))


def decay_profile(pairs, component: str = "max") -> tuple[np.ndarray, np.ndarray]:
    """Upper envelope ``h(x) = max_{v/u = 1/x}`` of the pair norms.

    ``component`` picks ``||T_uT_v^*||`` ("star_right"), ``||T_u^*T_v||``
    ("star_left") or the larger of the two ("max").
    """
    pick = {"max": lambda n1, n2: max(n1, n2), "star_right": lambda n1, n2: n1,
            "star_left": lambda n1, n2: n2}[component]
    buckets: dict = {}
    for u, v, n1, n2 in pairs:
        key = round(np.log2(v / u) * 1e6) / 1e6
        buckets[key] = max(buckets.get(key, 0.0), pick(n1, n2))
    ks = np.array(sorted(buckets))
    return 2.0 ** -ks, np.array([buckets[k] for k in ks])


def fit_decay(x, h) -> tuple[float, float]:
    """Least-squares slope of log h against log x over x < 1, and its rms residual."""
    fit = (x < 1) & (h > 0)
    if np.count_nonzero(fit) < 2:
        return np.nan, np.nan
    coef, res, *_ = np.polyfit(np.log(x[fit]), np.log(h[fit]), 1, full=True)
    return float(coef[0]), (float(np.sqrt(res[0] / fit.sum())) if res.size else 0.0)


def almost_orthogonality_audit(A: Operator, alpha: float, u_grid=None, grid: TimeGrid = None,
                               pairs=None, max_log2_ratio: int = 8,
                               executor=None) -> OrthogonalityReport:
    """Pairwise norms of T_u T_v^* and T_u^* T_v, their decay in u/v, and the
    constant C_a with ``h(x) <= C_a min(x^a, x^-a)``.

    ``pairs`` (from :func:`pair_norms`) can be passed to reuse one set of
    norms across several alphas.
    """
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    if u_grid is None:
        u_grid = default_u_grid(A)
    if pairs is None:
        if grid is None:
            raise ValueError("need a grid or precomputed pairs")
        pairs = pair_norms(A, u_grid, grid, max_log2_ratio, executor)
    pairs = sorted(pairs)
    x, h = decay_profile(pairs)
    slope, resid = fit_decay(x, h)
    extra = {f"decay_{c}": fit_decay(*decay_profile(pairs, c))[0]
             for c in ("star_right", "star_left")}
    constant = max(max(n1, n2) * (v / u) ** alpha for u, v, n1, n2 in pairs)
    y = np.geomspace(2.0 ** -40, 2.0 ** 40, 4001)
    model = schur_bound(y, np.minimum(y ** alpha, y ** -alpha)).value
    # both signs of k: ratios x and 1/x have the same envelope by symmetry
    cotlar = float(np.sqrt(h[0]) + 2 * np.sum(np.sqrt(h[1:])))
    return OrthogonalityReport(alpha, pairs, slope, resid, float(constant),
                               float(constant * model), cotlar, extra=extra)


def reconstruct_Mplus(A: Operator, grid: TimeGrid, u_grid=None, weights=None,
                      scheme: str = "galerkin") -> AssembledOperator:
    """``sum_k w_k T_{u_k}``: the log-quadrature of ``int_0^inf T_u du/u``."""
    # null(A) is annihilated by every T_u, so A need not be injective here
    require_analytic_generator(A, "reconstruction")
    if u_grid is None:
        u_grid = calderon_u_grid(A)
    mp = assemble_Mplus(A, grid, scheme)
    mult = calderon_multiplier(A, u_grid, weights)
    op = mp @ block_diagonal(grid, mult, scheme=scheme)
    return AssembledOperator(grid, A.dim, op.matrix, "reconstruction", scheme)


def reconstruction_error(A: Operator, grid: TimeGrid, u_grid=None, weights=None,
                         scheme: str = "galerkin") -> float:
    """``||(R - M+) P|| / ||M+ P||`` with P the projector onto range(A), in L2(dt)."""
    rec = reconstruct_Mplus(A, grid, u_grid, weights, scheme)
    mp = assemble_Mplus(A, grid, scheme)
    P = block_diagonal(grid, range_projector(A))
    d = np.sqrt(np.repeat(grid.widths, A.dim))

    def nrm(m):
        return matrix_norm((m * d[:, None]) / d[None, :])

    return nrm((rec.matrix - mp.matrix) @ P.matrix) / nrm(mp.matrix @ P.matrix)
