"""Finite truncations of a control pair ``[A, B]`` and the operator calculus
built on them: semigroups, fractional powers of ``rho0*I - A``, graded
norms, adjoints and the half-grade state-space shift used when the control
operator is strongly unbounded (``gamma >= 1/2``).

On a truncation the extension of ``A`` to the extrapolation space coincides
with ``A`` itself, so every formula involving the extended operator is
evaluated with the same matrix.
"""

from dataclasses import dataclass, field
import json

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import expm_multiply

from .errors import (
    DimensionError,
    GaugeError,
    NonFiniteError,
    SingularGaugeError,
    SystemFormatError,
)
from ._numerics import EIG_COND_LIMIT

__all__ = [
    "ControlSystem",
    "DualPair",
    "GradedVector",
    "ShiftedSystem",
    "adjoint",
    "fractional_power",
    "fractional_power_matrix",
    "graded_norm",
    "semigroup_apply",
    "shift_state_space",
    "spectral_abscissa",
    "system_to_dict",
    "system_from_dict",
    "dumps_system",
    "loads_system",
]


def _as_matrix(M, name):
    M = np.array(M, dtype=complex)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {M.shape}")
    if not np.isfinite(M).all():
        raise NonFiniteError(f"{name} has non-finite entries")
    M.setflags(write=False)
    return M


def spectral_abscissa(A):
    """Largest real part of the eigenvalues of a square matrix."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Truncated control pair ``y' = A y + B u``.

    Parameters
    ----------
    A : (n, n) array_like
        State matrix.
    B : (n, m) array_like
        Control matrix.  A one-dimensional array is read as a single column.
    gamma : float
        Unboundedness exponent in ``[0, 1)``: ``B`` maps controls into the
        space of grade ``-gamma``.
    rho0 : float, optional
        Gauge strictly right of the spectrum of ``A``.  Defaults to the
        spectral abscissa plus one.
    labels : sequence, optional
        Per-coordinate metadata (mode index, Fourier frequency, ...).
    """

    A: np.ndarray
    B: np.ndarray
    gamma: float = 0.0
    rho0: float = None
    labels: tuple = field(default=None, compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        n = A.shape[0]
        if n < 1 or A.shape[1] != n:
            raise DimensionError(f"A must be square with n >= 1, got {A.shape}")
        if B.shape[0] != n or B.shape[1] < 1:
            raise DimensionError(f"B must have shape ({n}, m) with m >= 1, got {B.shape}")
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
        abscissa = spectral_abscissa(A)
        rho0 = abscissa + 1.0 if self.rho0 is None else float(self.rho0)
        if not np.isfinite(rho0) or rho0 <= abscissa:
            raise GaugeError(f"rho0={rho0} must exceed the spectral abscissa {abscissa}")
        labels = None if self.labels is None else tuple(self.labels)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "labels", labels)

    def __eq__(self, other):
        if not isinstance(other, ControlSystem):
            return NotImplemented
        return (np.array_equal(self.A, other.A) and np.array_equal(self.B, other.B)
                and self.gamma == other.gamma and self.rho0 == other.rho0)

    __hash__ = None

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def abscissa(self):
        return spectral_abscissa(self.A)

    @property
    def resolvent_gauge(self):
        """The matrix ``rho0*I - A``."""
        return self.rho0 * np.eye(self.n) - self.A

    def replace(self, **changes):
        kw = dict(A=self.A, B=self.B, gamma=self.gamma, rho0=self.rho0, labels=self.labels)
        kw.update(changes)
        return ControlSystem(**kw)


@dataclass(frozen=True, eq=False)
class DualPair:
    """The adjoint pair ``(A*, B*)`` with ``B*`` of shape ``(m, n)``."""

    Astar: np.ndarray
    Bstar: np.ndarray
    gamma: float = 0.0
    rho0: float = None

    @property
    def n(self):
        return self.Astar.shape[0]


@dataclass(frozen=True)
class GradedVector:
    """A coordinate vector tagged with the grade of the norm that applies."""

    coords: np.ndarray
    grade: float = 0.0

    def __post_init__(self):
        c = np.array(self.coords, dtype=complex).ravel()
        if not np.isfinite(c).all():
            raise NonFiniteError("graded vector has non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "grade", float(self.grade))

    def norm(self, sys):
        return graded_norm(sys, self.coords, self.grade)


def semigroup_apply(sys, t, x):
    """Apply ``exp(t*A)`` to ``x``; negative ``t`` is allowed.

    ``x`` may be a vector of length ``n`` or an ``(n, k)`` block.
    """
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != sys.n:
        raise DimensionError(f"x has leading dimension {x.shape[0]}, expected {sys.n}")
    t = float(t)
    if not np.isfinite(t):
        raise NonFiniteError("t must be finite")
    if not np.isfinite(x).all():
        raise NonFiniteError("x has non-finite entries")
    if t == 0.0:
        return x.copy()
    return expm_multiply(t * sys.A, x)


def fractional_power_matrix(R, beta):
    """Principal power ``R**beta`` of a matrix with spectrum off ``(-inf, 0]``.

    Diagonalizable ``R`` (well-conditioned eigenvectors) goes through its
    eigendecomposition; otherwise the Schur-Pade algorithm of
    :func:`scipy.linalg.fractional_matrix_power` is used.
    """
    R = np.asarray(R, dtype=complex)
    n = R.shape[0]
    beta = float(beta)
    if not np.isfinite(beta):
        raise NonFiniteError("beta must be finite")
    mu, V = np.linalg.eig(R)
    scale = max(1.0, np.max(np.abs(mu))) if n else 1.0
    on_cut = (np.abs(mu.imag) <= 1e-12 * scale) & (mu.real <= 1e-14 * scale)
    if on_cut.any():
        raise SingularGaugeError(
            f"rho0*I - A has eigenvalue {mu[on_cut][0]} on the branch cut (-inf, 0]"
        )
    if beta == 0.0:
        return np.eye(n, dtype=complex)
    if beta == round(beta) and abs(beta) <= 8:
        k = int(round(beta))
        P = np.linalg.matrix_power(R, abs(k))
        return P if k > 0 else np.linalg.inv(P)
    if np.linalg.cond(V) < EIG_COND_LIMIT:
        return (V * mu**beta) @ np.linalg.inv(V)
    return np.asarray(sla.fractional_matrix_power(R, beta), dtype=complex)


def fractional_power(sys, beta):
    """``(rho0*I - A)**beta`` for the system's gauge."""
    return fractional_power_matrix(sys.resolvent_gauge, beta)


def graded_norm(sys, x, grade):
    """Norm of ``x`` in the graded space of the given grade.

    Positive grades use ``||(rho0 I - A)**grade x||``, negative grades
    ``||(rho0 I - A)**(-|grade|) x||``; grade 0 is the Euclidean norm.
    """
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != sys.n:
        raise DimensionError(f"x has length {x.shape[0]}, expected {sys.n}")
    if grade == 0:
        return float(np.linalg.norm(x))
    return float(np.linalg.norm(fractional_power(sys, grade) @ x))


@dataclass(frozen=True)
class ShiftedSystem:
    """State-space shift of a control pair.

    For ``gamma in [1/2, 1)`` the state space is the grade ``-1/2`` space
    and ``A_shift = R^{1/2} A R^{-1/2}``, ``Bstar_shift = B* R*^{-1/2} R^{-1/2}``
    with ``R = rho0*I - A``.  Both are stored in raw coordinates.  The
    isometric representation, in which the grade ``-1/2`` norm becomes the
    Euclidean one, is ``(R^{-1/2} A_shift R^{1/2}, R^{-1/2} B)`` and is what
    the frequency tests and the stabilization pipeline operate on.
    """

    base: ControlSystem
    A_shift: np.ndarray
    Bstar_shift: np.ndarray
    R_half: np.ndarray
    R_mhalf: np.ndarray

    @property
    def shifted(self):
        return self.base.gamma >= 0.5

    @property
    def A_iso(self):
        return self.R_mhalf @ self.A_shift @ self.R_half

    @property
    def B_iso(self):
        return self.R_mhalf @ self.base.B

    def isometric_system(self):
        """The shifted pair as a :class:`ControlSystem` in isometric coordinates."""
        if not self.shifted:
            return self.base
        return ControlSystem(self.A_iso, self.B_iso, gamma=0.0, rho0=self.base.rho0,
                             labels=self.base.labels)

    def gain_to_raw(self, K_iso):
        """Map a gain acting on isometric coordinates back to raw coordinates."""
        return K_iso @ self.R_mhalf if self.shifted else np.asarray(K_iso)


def shift_state_space(sys):
    """Build the :class:`ShiftedSystem` of a control pair."""
    n = sys.n
    if sys.gamma < 0.5:
        eye = np.eye(n, dtype=complex)
        return ShiftedSystem(sys, sys.A, sys.B.conj().T, eye, eye)
    R = sys.resolvent_gauge
    Rh = fractional_power_matrix(R, 0.5)
    Rmh = fractional_power_matrix(R, -0.5)
    A_shift = Rh @ sys.A @ Rmh
    Rstar_mh = fractional_power_matrix(R.conj().T, -0.5)
    Bstar_shift = sys.B.conj().T @ Rstar_mh @ Rmh
    return ShiftedSystem(sys, A_shift, Bstar_shift, Rh, Rmh)


def adjoint(pair):
    """Adjoint of a control pair.

    A :class:`ControlSystem` maps to the :class:`DualPair` ``(A*, B*)`` and a
    :class:`DualPair` maps back, so ``adjoint(adjoint(sys)) == sys``.
    """
    if isinstance(pair, ControlSystem):
        Astar = pair.A.conj().T.copy()
        Bstar = pair.B.conj().T.copy()
        Astar.setflags(write=False)
        Bstar.setflags(write=False)
        return DualPair(Astar, Bstar, pair.gamma, pair.rho0)
    if isinstance(pair, DualPair):
        return ControlSystem(pair.Astar.conj().T, pair.Bstar.conj().T, pair.gamma, pair.rho0)
    raise TypeError(f"cannot take the adjoint of {type(pair).__name__}")


# -- structured-text import/export ------------------------------------------

def _encode_matrix(M):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(M)]


def _decode_matrix(rows, name, shape):
    try:
        M = np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)
    except (TypeError, ValueError) as exc:
        raise SystemFormatError(f"field {name!r}: expected rows of [re, im] pairs ({exc})")
    if M.shape != shape:
        raise SystemFormatError(f"field {name!r}: shape {M.shape} does not match {shape}")
    return M


def system_to_dict(sys):
    d = {
        "n": sys.n,
        "m": sys.m,
        "gamma": sys.gamma,
        "rho0": sys.rho0,
        "A": _encode_matrix(sys.A),
        "B": _encode_matrix(sys.B),
    }
    if sys.labels is not None:
        d["labels"] = [float(v) if isinstance(v, (int, float, np.number)) else str(v)
                       for v in sys.labels]
    return d


def system_from_dict(d):
    for key in ("n", "m", "A", "B"):
        if key not in d:
            raise SystemFormatError(f"missing field {key!r}")
    n, m = int(d["n"]), int(d["m"])
    A = _decode_matrix(d["A"], "A", (n, n))
    B = _decode_matrix(d["B"], "B", (n, m))
    return ControlSystem(A, B, gamma=d.get("gamma", 0.0), rho0=d.get("rho0"),
                         labels=d.get("labels"))


def dumps_system(sys):
    """Serialize to JSON text.  Floats use shortest round-trip repr."""
    return json.dumps(system_to_dict(sys), indent=1)


def _line_of_key(text, key):
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def loads_system(text):
    """Parse JSON text produced by :func:`dumps_system`.

    Raises
    ------
    SystemFormatError
        With the offending line number where it can be determined.
    """
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemFormatError(exc.msg, line=exc.lineno) from exc
    if not isinstance(d, dict):
        raise SystemFormatError("top level must be an object", line=1)
    try:
        return system_from_dict(d)
    except SystemFormatError as exc:
        if exc.line is None:
            for key in ("A", "B", "n", "m", "gamma", "rho0"):
                if f"{key!r}" in str(exc):
                    raise SystemFormatError(str(exc), line=_line_of_key(text, key)) from exc
        raise
    except (ValueError, TypeError) as exc:
        raise SystemFormatError(str(exc), line=1) from exc
