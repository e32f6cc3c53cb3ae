"""Principal fractional powers of accretive matrices and the Kato comparison
of ``||A*^a f||`` with ``||A^a f||``."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .operator_core import Operator, OperatorError, hermitian_part

EIG_COND_MAX = 1e8
ACCRETIVE_TOL = 1e-10


class FractionalPowerError(OperatorError):
    pass


def kato_bound(alpha: float) -> float:
    return float(np.tan(np.pi * (1.0 + 2.0 * alpha) / 4.0))


def _check_accretive_injective(A: Operator) -> float:
    # the sector angle is not needed here, only the margin and injectivity
    a = A.entries
    margin = float(np.linalg.eigvalsh(hermitian_part(a))[0])
    if margin < -ACCRETIVE_TOL * max(np.linalg.norm(a, 2), 1.0):
        raise FractionalPowerError(f"operator is not accretive (margin {margin:.3e})")
    norm = np.linalg.norm(a, 2)
    if norm == 0 or np.min(np.abs(np.linalg.eigvals(a))) <= 1e-10 * norm:
        raise FractionalPowerError("operator is not injective; fractional powers need A injective")
    return margin


def _eig_power(a, alpha):
    if np.array_equal(a, a.conj().T):
        w, v = np.linalg.eigh(a)
        return (v * np.exp(alpha * np.log(w.astype(complex)))) @ v.conj().T
    w, v = np.linalg.eig(a)
    if np.linalg.cond(v) > EIG_COND_MAX:
        return None
    # principal branch: spectrum of an accretive injective matrix avoids (-inf, 0]
    return (v * np.exp(alpha * np.log(w))) @ np.linalg.inv(v)


def balakrishnan_power(a: np.ndarray, alpha: float, per_decade: int = 64,
                       span: float = 1e8) -> np.ndarray:
    """``A^a = (sin(pi a)/pi) int_0^inf s^{a-1} (s + A)^{-1} A ds`` for 0 < a < 1.

    Trapezoid rule in log s on ``[rho/span, rho*span]`` plus two-term series
    for the pieces below and above the span.
    """
    if not 0 < alpha < 1:
        raise FractionalPowerError("Balakrishnan integral needs 0 < alpha < 1")
    n = a.shape[0]
    eye = np.eye(n)
    rho = max(np.max(np.abs(np.linalg.eigvals(a))), 1e-300)
    s_lo, s_hi = rho / span, rho * span
    m = int(round(2 * np.log10(span) * per_decade)) + 1
    s = np.geomspace(s_lo, s_hi, m)
    res = np.linalg.solve(s[:, None, None] * eye + a[None], np.broadcast_to(a, (m, n, n)))
    integrand = s[:, None, None] ** alpha * res
    dx = np.log(s[1] / s[0])
    body = np.trapezoid(integrand, dx=dx, axis=0)
    # Euler-Maclaurin end correction; d/dx of s^a (s+A)^{-1}A with x = log s
    ends = []
    for k in (0, -1):
        r = np.linalg.solve(s[k] * eye + a, eye)
        ends.append(alpha * integrand[k] - s[k] ** (alpha + 1) * (r @ res[k]))
    body -= dx ** 2 / 12.0 * (ends[1] - ends[0])
    ainv = np.linalg.inv(a)
    # (s+A)^{-1}A = I - s A^{-1} + ...  below,  A/s - A^2/s^2 + ...  above
    head = s_lo ** alpha / alpha * eye - s_lo ** (alpha + 1) / (alpha + 1) * ainv
    tail = s_hi ** (alpha - 1) / (1 - alpha) * a - s_hi ** (alpha - 2) / (2 - alpha) * (a @ a)
    return np.sin(np.pi * alpha) / np.pi * (head + body + tail)


def frac_power(A: Operator, alpha: float, method: str = "auto") -> Operator:
    """Principal power ``A^alpha`` for accretive injective A and ``-1 <= alpha <= 1``.

    ``method`` is ``"auto"`` (eigendecomposition unless the eigenvector
    basis is ill-conditioned), ``"eig"`` or ``"balakrishnan"``.
    """
    if not -1.0 <= alpha <= 1.0:
        raise FractionalPowerError(f"alpha={alpha} outside [-1, 1]")
    _check_accretive_injective(A)
    a = A.entries
    meta = {"power": alpha}
    if alpha == 0:
        return Operator(np.eye(A.dim), meta)
    if alpha == 1:
        return Operator(a.copy(), meta)
    if alpha == -1:
        return Operator(np.linalg.inv(a), meta)
    if alpha < 0:
        return Operator(np.linalg.inv(frac_power(A, -alpha, method).entries), meta)
    out = None
    if method in ("auto", "eig"):
        out = _eig_power(a, alpha)
        if out is None and method == "eig":
            raise FractionalPowerError("eigenvector matrix is ill-conditioned")
    if out is None:
        out = balakrishnan_power(a, alpha)
    return Operator(out, meta)


def kato_ratio(A: Operator, alpha: float, f) -> float:
    """``||A*^alpha f|| / ||A^alpha f||``."""
    if not 0 < alpha < 0.5:
        raise FractionalPowerError("alpha must lie in (0, 1/2)")
    f = np.asarray(f, dtype=complex)
    num = np.linalg.norm(frac_power(A.adjoint(), alpha).entries @ f)
    den = np.linalg.norm(frac_power(A, alpha).entries @ f)
    if den <= 1e-14:
        raise FractionalPowerError("||A^alpha f|| is numerically zero; resample f")
    return float(num / den)


@dataclass(frozen=True)
class KatoReport:
    alpha: float
    bound: float
    worst_ratio: float
    num_samples: int
    passed: bool
    sup_ratio: float = float("nan")  # exact sup over f: ||A*^a A^{-a}||

    @property
    def pass_(self) -> bool:
        return self.passed


def unit_samples(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    """``count`` complex unit vectors, uniform on the sphere (rows)."""
    z = rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def kato_audit(A: Operator, alphas, samples: int = 1000, seed: int = 0,
               mirrored: bool = False) -> list[KatoReport]:
    """Worst sampled Kato ratio for each alpha, with pass/fail against the tan bound.

    With ``mirrored=True`` the roles of A and A* are swapped (the same
    inequality applied to A*).
    """
    _check_accretive_injective(A)
    B, Bs = (A.adjoint(), A) if mirrored else (A, A.adjoint())
    reports = []
    for idx, alpha in enumerate(alphas):
        if not 0 < alpha < 0.5:
            raise FractionalPowerError(f"alpha={alpha} (index {idx}) outside (0, 1/2)")
        try:
            p = frac_power(B, alpha).entries
            ps = frac_power(Bs, alpha).entries
        except OperatorError as exc:
            raise FractionalPowerError(f"alpha={alpha}: {exc}") from exc
        rng = np.random.default_rng([seed, idx])
        f = unit_samples(rng, A.dim, samples)
        num = np.linalg.norm(f @ ps.T, axis=1)
        den = np.linalg.norm(f @ p.T, axis=1)
        worst = float(np.max(num / den))
        sup = float(np.linalg.norm(ps @ np.linalg.inv(p), 2))
        bound = kato_bound(alpha)
        reports.append(KatoReport(alpha, bound, worst, samples,
                                  worst <= bound * (1 + 1e-8), sup))
    return reports


def similarity_norm(A: Operator, alpha: float) -> float:
    """``||A^alpha (A*)^{-alpha}||``; finite for ``-1/2 < alpha < 1/2``."""
    if not -0.5 < alpha < 0.5:
        raise FractionalPowerError("alpha must lie in (-1/2, 1/2)")
    if alpha == 0:
        return 1.0
    p = frac_power(A, alpha).entries
    q = frac_power(A.adjoint(), -alpha).entries
    return float(np.linalg.norm(p @ q, 2))


def write_kato_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "bound", "worst_ratio", "num_samples", "pass"])
        for r in reports:
            w.writerow([f"{r.alpha:.12g}", f"{r.bound:.12g}", f"{r.worst_ratio:.12g}",
                        r.num_samples, int(r.passed)])
