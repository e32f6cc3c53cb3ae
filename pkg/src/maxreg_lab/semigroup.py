"""Matrix exponentials e^{-zA}, their antiderivatives, and analyticity diagnostics.

Single evaluations go through :func:`expm_neg` (Pade scaling-and-squaring
from scipy, memoized per (A, z)).  Bulk evaluation on the thousands of lags
needed by operator assembly goes through :class:`Propagator`, which reuses
one eigendecomposition when the eigenvector basis is well conditioned and
falls back to batched block-exponentials (Van Loan) otherwise.
"""
from __future__ import annotations

import csv
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .operator_core import Operator, OperatorError

EIG_COND_MAX = 1e6


class SemigroupDomainError(OperatorError):
    pass


@lru_cache(maxsize=4096)
def _expm_cached(key, z: complex) -> np.ndarray:
    n, raw = key
    a = np.frombuffer(raw, dtype=complex).reshape(n, n)
    if np.array_equal(a, a.conj().T):
        w, v = np.linalg.eigh(a)
        out = (v * np.exp(-z * w)) @ v.conj().T
    else:
        out = scipy.linalg.expm(-z * a)
    out.setflags(write=False)
    return out


def expm_neg(A: Operator, z: complex = 1.0, *, hermitian_fast_path: bool = True) -> np.ndarray:
    """Return ``e^{-zA}`` for ``Re z > 0`` or ``z = 0``."""
    z = complex(z)
    if z.real < 0 or (z.real == 0 and z != 0):
        raise SemigroupDomainError(f"e^(-zA) is only defined for Re z > 0 or z = 0, got z={z}")
    if z == 0:
        return np.eye(A.dim, dtype=complex)
    if hermitian_fast_path:
        return _expm_cached(A.key, z).copy()
    return scipy.linalg.expm(-z * A.entries)


# --- scalar phi-functions -------------------------------------------------

def _phi1(z):
    """(1 - e^{-z}) / z, with phi1(0) = 1."""
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def _phi2(z):
    """(e^{-z} - 1 + z) / z^2, with phi2(0) = 1/2."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 0.2
    zs = z[small]
    # sum_{k>=0} (-z)^k / (k+2)!
    acc = np.zeros_like(zs)
    term = np.full_like(zs, 0.5)
    for k in range(18):
        acc += term
        term = term * (-zs) / (k + 3)
    out[small] = acc
    zl = z[~small]
    out[~small] = (np.expm1(-zl) + zl) / zl**2
    return out


class Propagator:
    """Vectorized evaluation of e^{-xA} and related functions on arrays of lags.

    All methods take a real array ``x`` of any shape and return complex arrays
    of shape ``x.shape + (n, n)``:

    ``exp``    e^{-xA}
    ``aexp``   A e^{-xA}                 (the kernel of M+ / M-)
    ``int1``   int_0^x e^{-rA} dr
    ``first``  I - e^{-xA} for x > 0, else 0      (antiderivative of the kernel)
    ``second`` int_0^x (I - e^{-rA}) dr for x > 0, else 0
    ``int2``   int_0^x (x - r) e^{-rA} dr   (any sign of x)
    """

    def __init__(self, A: Operator):
        self.A = A
        self.n = A.dim
        a = A.entries
        self._a = a
        self.mode = "vanloan"
        if np.array_equal(a, a.conj().T):
            w, v = np.linalg.eigh(a)
            self._set_eig(w.astype(complex), v, v.conj().T)
        else:
            w, v = np.linalg.eig(a)
            if np.linalg.cond(v) <= EIG_COND_MAX:
                self._set_eig(w, v, np.linalg.inv(v))

    def _set_eig(self, w, v, vinv):
        self.mode = "eig"
        self.eigvals = w
        self._v = v
        self._vinv = vinv

    # eigen path: scalar function values F with shape x.shape + (n,)
    def _from_scalar(self, F):
        return np.einsum("ak,...k,kb->...ab", self._v, F, self._vinv, optimize=True)

    def _vanloan(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n
        big = np.zeros((3 * n, 3 * n), dtype=complex)
        big[:n, :n] = -self._a
        big[:n, n:2 * n] = np.eye(n)
        big[n:2 * n, 2 * n:] = np.eye(n)
        flat = x.reshape(-1)
        out = scipy.linalg.expm(flat[:, None, None] * big[None])
        e = out[:, :n, :n].reshape(x.shape + (n, n))
        i1 = out[:, :n, n:2 * n].reshape(x.shape + (n, n))
        i2 = out[:, :n, 2 * n:].reshape(x.shape + (n, n))
        return e, i1, i2

    def exp(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "eig":
            return self._from_scalar(np.exp(-x[..., None] * self.eigvals))
        return self._vanloan(x)[0]

    def aexp(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "eig":
            lam = self.eigvals
            return self._from_scalar(lam * np.exp(-x[..., None] * lam))
        return np.einsum("ab,...bc->...ac", self._a, self.exp(x))

    def int1(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "eig":
            xl = x[..., None] * self.eigvals
            return self._from_scalar(x[..., None] * _phi1(xl))
        return self._vanloan(x)[1]

    def int2(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "eig":
            xl = x[..., None] * self.eigvals
            return self._from_scalar(x[..., None] ** 2 * _phi2(xl))
        return self._vanloan(x)[2]

    def first(self, x):
        x = np.asarray(x, dtype=float)
        pos = x > 0
        xp = np.where(pos, x, 0.0)
        if self.mode == "eig":
            xl = xp[..., None] * self.eigvals
            out = self._from_scalar(xl * _phi1(xl))
        else:
            out = np.einsum("ab,...bc->...ac", self._a, self._vanloan(xp)[1])
        out[~pos] = 0.0
        return out

    def second(self, x):
        x = np.asarray(x, dtype=float)
        pos = x > 0
        xp = np.where(pos, x, 0.0)
        if self.mode == "eig":
            xl = xp[..., None] * self.eigvals
            out = self._from_scalar(xp[..., None] * xl * _phi2(xl))
        else:
            out = np.einsum("ab,...bc->...ac", self._a, self._vanloan(xp)[2])
        out[~pos] = 0.0
        return out

    def weighted_kernel_sums(self, lags, weights, starts):
        """Segment sums of ``weights * A e^{-lags A}``.

        ``lags`` and ``weights`` are flat arrays; ``starts`` are segment start
        indices as for ``np.add.reduceat``.  Returns shape (len(starts), n, n).
        """
        lags = np.asarray(lags, dtype=float)
        weights = np.asarray(weights)
        if lags.size == 0:
            return np.zeros((len(starts), self.n, self.n), dtype=complex)
        if self.mode == "eig":
            lam = self.eigvals
            vals = weights[:, None] * lam * np.exp(-lags[:, None] * lam)
            sums = np.add.reduceat(vals, starts, axis=0)
            return self._from_scalar(sums)
        vals = weights[:, None, None] * self.aexp(lags)
        return np.add.reduceat(vals, starts, axis=0)


class PropagatorCache:
    """Thread-safe memo of Propagator objects keyed on the matrix entries."""

    def __init__(self, maxsize: int = 64):
        self._lock = threading.Lock()
        self._store: dict = {}
        self._maxsize = maxsize

    def get(self, A: Operator) -> Propagator:
        k = A.key
        with self._lock:
            p = self._store.get(k)
        if p is not None:
            return p
        p = Propagator(A)
        with self._lock:
            if len(self._store) >= self._maxsize:
                self._store.pop(next(iter(self._store)))
            self._store.setdefault(k, p)
            return self._store[k]


_CACHE = PropagatorCache()


def propagator(A: Operator) -> Propagator:
    return _CACHE.get(A)


# --- analyticity diagnostics -----------------------------------------------

def _norms(mats) -> np.ndarray:
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


def analyticity_constant(A: Operator, grid) -> float:
    """sup over grid nodes of ``t ||A e^{-tA}||``."""
    t = np.asarray(getattr(grid, "nodes", grid), dtype=float)
    return float(np.max(t * _norms(propagator(A).aexp(t))))


def semigroup_bound(A: Operator, grid) -> float:
    """Measured ``M = sup_t ||e^{-tA}||`` over the grid (t = 0 contributes 1)."""
    t = np.asarray(getattr(grid, "nodes", grid), dtype=float)
    return float(max(1.0, np.max(_norms(propagator(A).exp(t)))))


@dataclass(frozen=True)
class QuadraticEstimate:
    value: float
    converged: bool
    head: float
    tail: float
    diagnostic: str = ""

    def __float__(self):
        return self.value


def _qe_nodes(s_min, s_max, per_decade):
    decades = np.log10(s_max / s_min)
    m = int(round(decades * per_decade)) + 1
    return np.geomspace(s_min, s_max, m)


def quadratic_estimate(A: Operator, h, grid=None, s_min: float = 1e-6, s_max: float = 1e6,
                       per_decade: int = 96, rtol: float = 1e-8) -> QuadraticEstimate:
    """``(int_0^inf ||s A e^{-sA} h||^2 ds/s)^{1/2}`` by trapezoid in log s.

    The nodes are those of ``grid`` (a TimeGrid or array, ideally log
    spaced) when given, else ``per_decade`` points per decade on
    ``[s_min, s_max]``.  The head below the first node is estimated from the
    quadratic decay of the integrand at 0, the tail from its last sample; the
    result is flagged as non-converged when either exceeds ``rtol`` of the
    total.
    """
    h = np.asarray(h, dtype=complex)
    if grid is not None:
        s = np.asarray(getattr(grid, "nodes", grid), dtype=float)
    else:
        s = _qe_nodes(s_min, s_max, per_decade)
    vecs = s[:, None] * np.einsum("sab,b->sa", propagator(A).aexp(s), h)
    g = np.sum(np.abs(vecs) ** 2, axis=1)
    total = float(np.trapezoid(g, np.log(s)))
    head = 0.5 * g[0]
    tail = float(g[-1])
    value = np.sqrt(max(total + head, 0.0))
    if total == 0.0:
        return QuadraticEstimate(0.0, tail == 0.0, head, tail)
    ok = (head + tail) <= rtol * total and g[-1] <= g.max() * rtol
    diag = "" if ok else f"integrand not negligible at ends (head={head:.3e}, tail={tail:.3e})"
    return QuadraticEstimate(float(value), bool(ok), float(head), tail, diag)


def quadratic_estimate_constant(A: Operator, s_min: float = 1e-6, s_max: float = 1e6,
                                per_decade: int = 96) -> QuadraticEstimate:
    """Best constant C with qe(A, h) <= C ||h|| for all h (top eigenvalue of the Gram form)."""
    s = _qe_nodes(s_min, s_max, per_decade)
    k = s[:, None, None] * propagator(A).aexp(s)
    gram_s = np.einsum("sba,sbc->sac", k.conj(), k)
    gram = np.trapezoid(gram_s, np.log(s), axis=0)
    gram = 0.5 * (gram + gram.conj().T)
    top = float(np.linalg.eigvalsh(gram)[-1])
    g_end = float(np.linalg.eigvalsh(0.5 * (gram_s[-1] + gram_s[-1].conj().T))[-1])
    g_head = 0.5 * float(np.linalg.eigvalsh(0.5 * (gram_s[0] + gram_s[0].conj().T))[-1])
    ok = top == 0.0 or (g_end + g_head) <= 1e-8 * top
    return QuadraticEstimate(float(np.sqrt(max(top, 0.0))), bool(ok), g_head, g_end,
                             "" if ok else "quadratic estimate did not converge on the span")


def dump_profile_csv(A: Operator, grid, path) -> None:
    """Diagnostic CSV: t, ||e^{-tA}||, t ||A e^{-tA}||."""
    t = np.asarray(getattr(grid, "nodes", grid), dtype=float)
    p = propagator(A)
    e = _norms(p.exp(t))
    k = t * _norms(p.aexp(t))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "norm_exp", "t_norm_A_exp"])
        for row in zip(t, e, k):
            w.writerow([f"{v:.12g}" for v in row])
