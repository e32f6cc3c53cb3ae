"""Finite-dimensional stand-in for the generator ``A`` acting on ``C^n``.

Domain questions (density of D(A), closedness) are vacuous in finite
dimension; what remains testable is accretivity, the sector of the
numerical range, injectivity and norms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# half-angle sampling for the numerical-range sector
_THETA_SAMPLES = 1024
_BISECT_TOL = 1e-8


class OperatorError(ValueError):
    """Invalid operator data or an operator failing a precondition."""


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense complex n x n matrix with free-form metadata (seed, margin, ...)."""

    entries: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise OperatorError(f"operator must be square, got shape {a.shape}")
        if a.shape[0] < 1:
            raise OperatorError("operator dimension must be >= 1")
        if not np.all(np.isfinite(a)):
            raise OperatorError("operator entries must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def cached_adjoint(self) -> np.ndarray:
        h = self.entries.conj().T.copy()
        h.setflags(write=False)
        return h

    def adjoint(self) -> "Operator":
        return Operator(self.cached_adjoint, dict(self.metadata))

    @property
    def key(self) -> tuple:
        """Hashable identity of the matrix entries (used by memo caches)."""
        return (self.dim, self.entries.tobytes())

    def is_hermitian(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.entries - self.cached_adjoint)) <= tol)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "re": self.entries.real.tolist(),
            "im": self.entries.imag.tolist(),
        }
        if self.metadata:
            d["metadata"] = dict(self.metadata)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Operator":
        try:
            re = np.asarray(d["re"], dtype=float)
            im = np.asarray(d.get("im", np.zeros_like(re)), dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise OperatorError(f"malformed operator record: {exc}") from exc
        if re.shape != im.shape:
            raise OperatorError("real and imaginary parts differ in shape")
        op = cls(re + 1j * im, dict(d.get("metadata", {})))
        if "dim" in d and int(d["dim"]) != op.dim:
            raise OperatorError(f"declared dim {d['dim']} != {op.dim}")
        return op

    @classmethod
    def from_json(cls, text: str) -> "Operator":
        return cls.from_dict(json.loads(text))


def make_operator(entries, **metadata) -> Operator:
    return Operator(entries, metadata)


def adjoint(A: Operator) -> Operator:
    return A.adjoint()


@dataclass(frozen=True)
class SpectralInfo:
    eigenvalues: np.ndarray
    accretivity_margin: float
    sector_angle: float
    is_injective: bool

    @property
    def is_accretive(self) -> bool:
        return self.accretivity_margin >= 0.0

    @property
    def is_analytic_generator(self) -> bool:
        """Numerical range inside an open sector of half-angle < pi/2."""
        return self.sector_angle < np.pi / 2 - 1e-6


def hermitian_part(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def _min_rotated(a: np.ndarray, theta: float) -> float:
    return float(np.linalg.eigvalsh(hermitian_part(np.exp(1j * theta) * a))[0])


def _largest_good_rotation(a, sign, tol) -> float:
    """Largest theta in [0, pi/2] with H(e^{i sign theta} A) >= -tol."""
    thetas = np.linspace(0.0, np.pi / 2, _THETA_SAMPLES)
    good = 0.0
    for th in thetas[1:]:
        if _min_rotated(a, sign * th) < -tol:
            lo, hi = good, th
            while hi - lo > _BISECT_TOL:
                mid = 0.5 * (lo + hi)
                if _min_rotated(a, sign * mid) >= -tol:
                    lo = mid
                else:
                    hi = mid
            return lo
        good = th
    return np.pi / 2


def _numerical_range_angle(a: np.ndarray, tol: float) -> float:
    # boundary points of W(A) from the support function; pi if 0 is interior
    phis = np.linspace(0.0, 2 * np.pi, _THETA_SAMPLES, endpoint=False)
    support = np.empty(phis.size)
    args = np.empty(phis.size)
    for k, phi in enumerate(phis):
        w, v = np.linalg.eigh(hermitian_part(np.exp(-1j * phi) * a))
        support[k] = w[-1]
        x = v[:, -1]
        args[k] = np.angle(np.vdot(x, a @ x))
    if support.min() >= -tol:
        return float(np.pi)
    return float(np.max(np.abs(args)))


def spectral_info(A: Operator, tol: float = 1e-10) -> SpectralInfo:
    """Eigenvalues, accretivity margin, numerical-range sector and injectivity.

    ``sector_angle`` is the half-angle of the smallest closed sector about
    the positive real axis containing the numerical range. For accretive
    matrices it is found from the rotations ``theta`` for which the
    Hermitian part of ``e^{i theta} A`` stays positive semidefinite.
    """
    if tol <= 0:
        raise OperatorError("tol must be positive")
    a = A.entries
    try:
        eig = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise OperatorError(f"eigensolver failed: {exc}") from exc
    margin = float(np.linalg.eigvalsh(hermitian_part(a))[0])
    scale = max(np.linalg.norm(a, 2), 1.0)
    atol = tol * scale
    if margin >= -atol:
        up = _largest_good_rotation(a, +1, atol)
        down = _largest_good_rotation(a, -1, atol)
        angle = np.pi / 2 - min(up, down)
    else:
        angle = _numerical_range_angle(a, atol)
    norm = np.linalg.norm(a, 2)
    injective = bool(np.all(np.abs(eig) > 1e-10 * norm)) if norm > 0 else False
    return SpectralInfo(eig, margin, float(angle), injective)


def random_accretive(dim: int, margin: float = 0.0, seed: int = 0,
                     skew_scale: float = 1.0) -> Operator:
    """Seeded ``S + K + margin I`` with ``S >= 0`` Hermitian, ``K`` skew-Hermitian."""
    if dim < 1:
        raise OperatorError("dim must be >= 1")
    if margin < 0:
        raise OperatorError("margin must be >= 0")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    s = g @ g.conj().T / (2 * dim)
    h = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    k = skew_scale * 0.5 * (h - h.conj().T) / np.sqrt(2 * dim)
    a = s + k + margin * np.eye(dim)
    return Operator(a, {"seed": int(seed), "margin": float(margin),
                        "skew_scale": float(skew_scale), "source": "random_accretive"})


def random_hermitian_positive(dim: int, seed: int = 0, floor: float = 0.1) -> Operator:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    a = g @ g.conj().T / (2 * dim) + floor * np.eye(dim)
    a = 0.5 * (a + a.conj().T)
    return Operator(a, {"seed": int(seed), "source": "random_hermitian_positive"})


def operator_norm(A: Operator | np.ndarray) -> float:
    """Largest singular value (dense SVD)."""
    return float(np.linalg.norm(np.asarray(A, dtype=complex), 2))


def require_analytic_generator(A: Operator, what: str = "operation") -> SpectralInfo:
    info = spectral_info(A)
    if not info.is_analytic_generator:
        raise OperatorError(
            f"{what} needs -A to generate a bounded analytic semigroup; "
            f"numerical-range sector angle is {info.sector_angle:.6f} >= pi/2")
    return info


def range_projector(A: Operator, rtol: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto the column space of A."""
    u, s, _ = np.linalg.svd(A.entries)
    if s.size == 0 or s[0] == 0:
        return np.zeros((A.dim, A.dim), dtype=complex)
    r = int(np.sum(s > rtol * s[0]))
    q = u[:, :r]
    return q @ q.conj().T
