"""Spectral truncations of two boundary and interior control problems.

* 1-D heat equation on ``(0, pi)`` with Dirichlet boundary control at
  ``x = 0``: sine modes ``e_k = sqrt(2/pi) sin(kx)``, ``A = diag(-k^2)``
  and the control column ``b_k = k sqrt(2/pi)`` obtained from
  ``B = -Delta D`` with ``D`` the harmonic extension of the boundary value.
* Heat equation on the torus ``[0, 2 pi)`` controlled from a set ``omega``
  through ``B u = (-Delta)^s (a_omega u)``, discretized with ``n_grid``
  collocation points and a Fourier basis.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import SystemFormatError
from .operators import ControlSystem

__all__ = [
    "HeatDirichletModel",
    "FractionalThickModel",
    "ThickSetSpec",
    "dirichlet_map_1d",
    "build_heat_dirichlet",
    "thickness_check",
    "build_fractional_model",
    "fractional_hautus_bound",
    "spectral_inequality_probe",
    "half_torus_mask",
    "rle_encode",
    "rle_decode",
    "load_mask_text",
    "model_manifest",
    "build_from_manifest",
]

TORUS = 2.0 * math.pi


# -- heat equation with Dirichlet boundary control --------------------------------

def dirichlet_map_1d(u, N):
    """Sine coefficients of the harmonic extension ``phi(x) = u (1 - x/pi)``.

    ``c_k = <phi, e_k> = u sqrt(2/pi) / k`` for ``k = 1..N``.
    """
    k = np.arange(1, N + 1)
    return u * math.sqrt(2.0 / math.pi) / k


def sine_series(coeffs, x):
    """Evaluate ``sum_k c_k sqrt(2/pi) sin(k x)``."""
    k = np.arange(1, len(coeffs) + 1)
    return math.sqrt(2.0 / math.pi) * np.sin(np.outer(np.atleast_1d(x), k)) @ coeffs


@dataclass(frozen=True)
class HeatDirichletModel:
    """Truncated heat equation with boundary control.

    Attributes
    ----------
    N : int
        Number of sine modes.
    sys : ControlSystem
        ``A = diag(-k^2)``, ``B = b`` as one column, ``gamma = 3/4 + eps_decl``
        and gauge ``rho0 = 0``.
    b : ndarray
        ``b_k = k sqrt(2/pi)``.
    gamma_declared : float
    """

    N: int
    sys: ControlSystem
    b: np.ndarray
    gamma_declared: float
    eps_decl: float = 0.01

    @property
    def growth_ratios(self):
        """``b_k / (k^2)^gamma``; decreasing to zero for ``gamma > 1/2``."""
        k = np.arange(1, self.N + 1)
        return self.b / (k**2.0) ** self.gamma_declared

    def control_pairing(self, u, phi):
        """``<B u, phi>`` through the Dirichlet map: ``sum_k k^2 c_k(u) phi_k``."""
        k = np.arange(1, self.N + 1)
        return float(np.sum(k**2 * dirichlet_map_1d(u, self.N) * np.asarray(phi)))


def build_heat_dirichlet(N, eps_decl=0.01):
    """Spectral truncation of the boundary-controlled heat equation.

    The sign of ``b`` follows the Dirichlet-map route, ``<B u, e_k> =
    k^2 <D u, e_k> = u k sqrt(2/pi)``; changing ``u`` to ``-u`` leaves every
    stabilizability quantity unchanged.
    """
    N = int(N)
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0 < eps_decl < 0.25:
        raise ValueError("eps_decl must lie in (0, 1/4)")
    k = np.arange(1, N + 1)
    b = k * math.sqrt(2.0 / math.pi)
    gamma = 0.75 + eps_decl
    sys = ControlSystem(np.diag(-(k**2.0)), b.reshape(-1, 1), gamma=gamma, rho0=0.0,
                        labels=tuple(int(v) for v in k))
    return HeatDirichletModel(N, sys, b, gamma, eps_decl)


# -- thick sets -----------------------------------------------------------------------

@dataclass(frozen=True)
class ThickSetSpec:
    """``|E cap Q_L(x)| >= epsilon L`` for every window ``Q_L(x)`` of length ``L``."""

    epsilon: float
    L: float

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if not self.L > 0:
            raise ValueError("L must be positive")


def thickness_check(mask, spec, length=TORUS):
    """Check thickness of a grid set on the periodic interval ``[0, length)``.

    Each grid point carries measure ``h = length / n``; a window of length
    ``L`` covers ``w = round(L / h)`` consecutive points (periodically) and
    must contain at least ``epsilon * w`` of them.
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    n = mask.size
    h = length / n
    if h > spec.L / 8 + 1e-12:
        raise ValueError(f"grid spacing {h:.4g} exceeds L/8; refine the grid")
    w = int(round(spec.L / h))
    reps = w // n + 2
    c = np.concatenate([[0], np.cumsum(np.tile(mask, reps))])
    counts = c[np.arange(n) + w] - c[np.arange(n)]
    return bool(np.all(counts >= spec.epsilon * w * (1 - 1e-12)))


def half_torus_mask(n_grid):
    """Indicator of ``[0, pi)`` on the ``n_grid``-point torus."""
    x = TORUS * np.arange(n_grid) / n_grid
    return x < math.pi - 1e-12


# -- fractional control on the torus ----------------------------------------------------

def _frequencies(n_grid, theta):
    # the n_grid lattice points k + theta of smallest modulus, ties to the right
    xi = np.arange(-n_grid, n_grid + 1) + theta
    keep = np.lexsort((-xi, np.abs(xi)))[:n_grid]
    return np.sort(xi[keep])


def _fourier_matrix(n_grid, xi):
    x = TORUS * np.arange(n_grid) / n_grid
    return np.exp(-1j * np.outer(xi, x)) / math.sqrt(n_grid)


@dataclass(frozen=True)
class FractionalThickModel:
    """Torus truncation of ``y' = Delta y + (-Delta)^s (a_omega u)``.

    The state is expressed in the Fourier coefficients on the frequencies
    ``xi = k + theta`` and the control in collocation values.  With
    ``theta = 0`` these are the periodic modes; ``theta = 1/2`` uses the
    antiperiodic (Floquet) lattice, which has no zero frequency.

    Attributes
    ----------
    omega_mask : ndarray of bool
    a : ndarray
        ``a_omega`` at the grid points, zero off the mask.
    a_floor : float
        ``min a`` over the mask.
    xi : ndarray
    F : ndarray
        Unitary map from collocation values to Fourier coefficients.
    """

    n_grid: int
    s: float
    theta: float
    omega_mask: np.ndarray
    a: np.ndarray
    a_floor: float
    xi: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    sys: ControlSystem = field(repr=False)

    def B_star(self, phi):
        """``a_omega (-Delta)^s phi`` in collocation values."""
        return self.a * (self.F.conj().T @ (np.abs(self.xi) ** (2 * self.s) * phi))


def build_fractional_model(n_grid, s, mask=None, a=1.0, a_floor=None, theta=0.5):
    """Assemble the torus model.

    Parameters
    ----------
    n_grid : int
        Power of two.
    s : float
        Fractional order in ``[0, 1)``; used as the unboundedness exponent.
    mask : array_like of bool, optional
        Control set; the half torus ``[0, pi)`` by default.
    a : float or array_like
        Weight on the mask (values off the mask are ignored).
    a_floor : float, optional
        Required lower bound ``a >= a_floor > 0`` on the mask.
    theta : float
        Frequency shift, ``xi = k + theta``.
    """
    n_grid = int(n_grid)
    if n_grid < 2 or n_grid & (n_grid - 1):
        raise ValueError("n_grid must be a power of two")
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    mask = half_torus_mask(n_grid) if mask is None else np.asarray(mask, dtype=bool).ravel()
    if mask.size != n_grid:
        raise ValueError("mask length must equal n_grid")
    a = np.broadcast_to(np.asarray(a, dtype=float), (n_grid,)).copy()
    a_on = a[mask]
    floor = float(a_on.min()) if a_on.size else 0.0
    if a_on.size and (floor <= 0 or (a_floor is not None and floor < a_floor)):
        raise ValueError(f"a drops to {floor:.4g} on the mask, below the floor")
    a_omega = np.where(mask, a, 0.0)
    xi = _frequencies(n_grid, theta)
    F = _fourier_matrix(n_grid, xi)
    A = np.diag(-(xi**2)).astype(complex)
    B = (np.abs(xi) ** (2 * s))[:, None] * F * a_omega[None, :]
    sys = ControlSystem(A, B, gamma=float(s), labels=tuple(float(v) for v in xi))
    return FractionalThickModel(n_grid, float(s), float(theta), mask, a_omega, floor, xi, F, sys)


def fractional_hautus_bound(s, alpha, n_scan=200001, check=True):
    """``(inf_{r >= 2 alpha} (r - alpha) / (1 + r)^s)^2 = (alpha / (1 + 2 alpha)^s)^2``.

    The ratio is increasing in ``r`` because ``(1 + r) - s (r - alpha) > 0``
    for ``s < 1``, so the infimum sits at ``r = 2 alpha``.  With ``check``
    the closed form is compared with a radial grid scan.
    """
    if not 0 <= s < 1 or not alpha > 0:
        raise ValueError("need s in [0, 1) and alpha > 0")
    value = (alpha / (1.0 + 2.0 * alpha) ** s) ** 2
    if check:
        r = 2 * alpha + np.concatenate([[0.0], np.geomspace(1e-9, 1e4 * (1 + alpha), n_scan)])
        scan = float(np.min((r - alpha) / (1 + r) ** s)) ** 2
        if abs(scan - value) > 1e-10 * max(1.0, value):
            raise ArithmeticError(f"grid scan {scan} disagrees with closed form {value}")
    return value


def spectral_inequality_probe(mask, R):
    """Smallest ``||chi_omega f|| / ||f||`` over band-limited ``f``.

    ``f`` ranges over trigonometric polynomials with integer frequencies
    ``|k| <= R`` sampled on the grid of ``mask``; the value is the smallest
    singular value of the masked synthesis matrix.
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    n = mask.size
    if not 0 <= R < n / 2:
        raise ValueError("need 0 <= R < n_grid / 2")
    if not mask.any():
        return 0.0
    k = np.arange(-math.floor(R), math.floor(R) + 1)
    x = TORUS * np.arange(n) / n
    S = np.exp(1j * np.outer(x[mask], k)) / math.sqrt(n)
    return float(np.linalg.svd(S, compute_uv=False)[-1]) if S.shape[0] >= S.shape[1] else 0.0


# -- manifests --------------------------------------------------------------------------

def rle_encode(mask):
    """Run-length encoding ``[[value, count], ...]`` of a boolean vector."""
    mask = np.asarray(mask, dtype=bool).ravel()
    out = []
    for v in mask:
        if out and out[-1][0] == int(v):
            out[-1][1] += 1
        else:
            out.append([int(v), 1])
    return out


def rle_decode(runs):
    return np.concatenate([np.full(int(c), bool(v)) for v, c in runs]) if runs else np.zeros(0, bool)


def load_mask_text(text):
    """Parse a mask written as rows of ``0``/``1`` characters.

    Whitespace is ignored and blank lines or lines starting with ``#`` are
    skipped; rows are concatenated.
    """
    bits = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        for ch in body:
            if ch in "01":
                bits.append(ch == "1")
            elif not ch.isspace():
                raise SystemFormatError(f"unexpected character {ch!r} in mask", line=lineno)
    return np.array(bits, dtype=bool)


def model_manifest(model):
    """Structured-text description of a model that rebuilds it exactly."""
    if isinstance(model, HeatDirichletModel):
        return {"model": "heat", "N": model.N, "eps_decl": model.eps_decl}
    if isinstance(model, FractionalThickModel):
        on = model.a[model.omega_mask]
        a = float(on[0]) if on.size and np.all(on == on[0]) else [float(v) for v in model.a]
        return {"model": "fractional", "n_grid": model.n_grid, "s": model.s,
                "theta": model.theta, "mask_rle": rle_encode(model.omega_mask), "a": a}
    raise TypeError(f"unknown model {type(model).__name__}")


def build_from_manifest(d):
    kind = d.get("model")
    if kind == "heat":
        return build_heat_dirichlet(d["N"], d.get("eps_decl", 0.01))
    if kind == "fractional":
        mask = rle_decode(d["mask_rle"]) if "mask_rle" in d else None
        a = d.get("a", 1.0)
        a = 1.0 if isinstance(a, list) and not a else a
        return build_fractional_model(d["n_grid"], d["s"], mask=mask, a=a,
                                      theta=d.get("theta", 0.5))
    raise ValueError(f"unknown model kind {kind!r}")
