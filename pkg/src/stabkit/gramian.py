"""Gramian feedback for exactly controllable pairs with bounded ``A`` and ``B``.

The construction takes constants ``D1, D2`` in the weak observability
inequality

    ||S*(t) phi||^2 <= D1 int_0^t ||B* S*(s) phi||^2 ds + D2 exp(-a t) ||phi||^2

at rate ``a = 4 alpha``, forms the weighted backward Gramian ``Pi`` and
sets ``K = -T D1 exp(4 alpha T) B* Pi^{-1}``.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import (
    ConstantsNotCertified,
    DimensionError,
    FeedbackNotCertified,
    NotExactlyControllable,
    QuadratureUnderResolved,
    SingularGramian,
)
from ._numerics import Exponential, gauss_legendre, gauss_legendre_edges, hermitian_part

__all__ = [
    "ObservabilityConstants",
    "GramianFeedback",
    "check_exact_controllability",
    "controllability_gramian",
    "estimate_observability_constants",
    "verify_observability_constants",
    "build_gramian",
    "synthesize_feedback_KT",
    "decay_certificate",
]

D2_LADDER = (2.0, 4.0, 16.0, 256.0, 4096.0, 65536.0)
ABSCISSA_SLACK = 0.05


def _pair(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    B = np.asarray(B, dtype=complex)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise DimensionError(f"incompatible shapes A{A.shape}, B{B.shape}")
    return A, B


def _gram_stack(E, B):
    """``E_k B B^H E_k^H`` for a stack of matrices ``E``."""
    EB = E @ B
    return EB @ EB.conj().transpose(0, 2, 1)


def controllability_gramian(A, B, T, panels=32, order=8):
    """``int_0^T exp(tA) B B^H exp(tA^H) dt`` by composite Gauss-Legendre."""
    A, B = _pair(A, B)
    panels = max(panels, math.ceil(T * max(1.0, np.linalg.norm(A, 2))))
    s, w = gauss_legendre(0.0, T, panels=panels, order=order)
    G = np.tensordot(w, _gram_stack(Exponential(A).stack(s), B), axes=1)
    return hermitian_part(G)


def check_exact_controllability(A, B, T=1.0, threshold=1e-10):
    """Gramian test for exact controllability on ``[0, T]``.

    Returns
    -------
    dict
        ``controllable`` (bool), ``margin`` (``lambda_min / lambda_max`` of
        the Gramian) and ``gramian``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    G = controllability_gramian(A, B, T)
    ev = np.linalg.eigvalsh(G)
    margin = float(ev[0] / ev[-1]) if ev[-1] > 0 else 0.0
    return {"controllable": margin > threshold, "margin": margin, "gramian": G}


# -- observability constants --------------------------------------------------

@dataclass(frozen=True)
class ObservabilityConstants:
    """Certified constants of the weak observability inequality.

    Attributes
    ----------
    alpha : float
        Rate ``a`` in the decay term ``D2 exp(-a t)``.
    D1, D2 : float
    T_max : float
        Right end of the certification grid.
    n_grid : int
        Number of log-spaced certification times.
    """

    alpha: float
    D1: float
    D2: float
    T_max: float
    n_grid: int = 200
    t_min: float = 1e-4


def _time_grid(t_min, T_max, n):
    return np.concatenate([[0.0], np.geomspace(t_min, T_max, n)])


def _cumulative_gramians(A, B, edges, order=8):
    """``G(t_k) = int_0^{t_k} e^{sA} B B^H e^{sA^H} ds`` on increasing ``edges``."""
    scale = max(1.0, np.linalg.norm(A, 2))
    fine = [edges[0]]
    owner = []
    for k in range(len(edges) - 1):
        pieces = max(1, math.ceil((edges[k + 1] - edges[k]) * scale))
        fine.extend(np.linspace(edges[k], edges[k + 1], pieces + 1)[1:])
        owner.extend([k] * pieces)
    s, w = gauss_legendre_edges(np.array(fine), order=order)
    terms = w[:, None, None] * _gram_stack(Exponential(A).stack(s), B)
    per_panel = terms.reshape(len(owner), order, *terms.shape[1:]).sum(axis=1)
    per_interval = np.zeros((len(edges) - 1,) + terms.shape[1:], dtype=complex)
    np.add.at(per_interval, np.array(owner), per_panel)
    G = np.concatenate([np.zeros((1,) + terms.shape[1:], dtype=complex),
                        np.cumsum(per_interval, axis=0)])
    return hermitian_part_stack(G)


def hermitian_part_stack(M):
    return 0.5 * (M + M.conj().transpose(0, 2, 1))


def _inequality_forms(A, B, a, D2, ts):
    n = A.shape[0]
    S = Exponential(A).stack(ts)
    M = hermitian_part_stack(S @ S.conj().transpose(0, 2, 1)
                             - D2 * np.exp(-a * ts)[:, None, None] * np.eye(n))
    G = _cumulative_gramians(A, B, ts)
    return M, G


def _pencil_sup(M, G, floor=1e-14):
    """``sup_k max_phi (phi^H M_k phi) / (phi^H G_k phi)`` over the stack.

    Times where ``M_k`` is negative semidefinite contribute nothing.
    Eigenvalues of ``G_k`` below ``floor * max(G_k)`` are numerically zero
    and are raised to that floor, so near-invisible directions produce a
    large but finite ``D1`` that the a-posteriori verification then judges.
    A vanishing ``G_k`` with ``M_k`` positive raises
    :class:`ConstantsNotCertified`.
    """
    best = 0.0
    for Mk, Gk in zip(M, G):
        mscale = max(1.0, np.abs(Mk).max())
        if np.linalg.eigvalsh(Mk)[-1] <= 1e-13 * mscale:
            continue
        g, V = np.linalg.eigh(Gk)
        gmax = g[-1] if g.size else 0.0
        if not gmax > 0:
            raise ConstantsNotCertified(
                "the decay term alone fails on directions invisible to the control"
            )
        W = V / np.sqrt(np.maximum(g, floor * gmax))
        best = max(best, float(np.linalg.eigvalsh(hermitian_part(W.conj().T @ Mk @ W))[-1]))
    return best


def _default_T_max(A, a):
    T_max = max(10.0 / a, 2.0)
    growth = float(np.max(np.linalg.eigvals(A).real))
    if growth > 0:
        T_max = min(T_max, 13.0 / growth)
    return T_max


def estimate_observability_constants(A, B, alpha, D2=2.0, T_max=None, n_grid=200,
                                     safety=1.2, seed=0, t_min=1e-4):
    """Certify the weak observability inequality at rate ``alpha``.

    Parameters
    ----------
    A, B : array_like
    alpha : float
        Rate in the decay term.
    D2 : float
        Fixed decay constant, at least 1.
    T_max : float, optional
        Certification horizon.  Defaults to ``max(10/alpha, 2)``, shortened
        so that the open-loop growth stays below ``e^26``.
    n_grid : int
        Log-spaced times on ``[t_min, T_max]``.
    safety : float
        Inflation factor applied to the estimated supremum.
    seed : int
        Seed for the a-posteriori probe vectors.

    Returns
    -------
    ObservabilityConstants

    Raises
    ------
    ConstantsNotCertified
        If no finite ``D1`` works or verification fails after one retry.
    """
    A, B = _pair(A, B)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if D2 < 1:
        raise ValueError("D2 must be at least 1")
    if T_max is None:
        T_max = _default_T_max(A, alpha)
    ts = _time_grid(t_min, T_max, n_grid)
    M, G = _inequality_forms(A, B, alpha, D2, ts)
    D1 = _pencil_sup(M, G)
    # the inequality does not need D1 when decay alone suffices; keep it positive
    D1 = max(safety * D1, 1e-12)
    c = ObservabilityConstants(float(alpha), D1, float(D2), float(T_max), n_grid, t_min)
    ok, _ = verify_observability_constants(A, B, c, seed=seed)
    if ok:
        return c
    fine = _time_grid(t_min, T_max, 4 * n_grid)
    Mf, Gf = _inequality_forms(A, B, alpha, D2, fine)
    D1 = max(safety * _pencil_sup(Mf, Gf), D1)
    c = ObservabilityConstants(float(alpha), D1, float(D2), float(T_max), n_grid, t_min)
    ok, worst = verify_observability_constants(A, B, c, seed=seed)
    if not ok:
        raise ConstantsNotCertified(f"verification failed with relative violation {worst:.3g}")
    return c


def verify_observability_constants(A, B, constants, n_probes=64, refine=4, seed=1,
                                   slack=1e-8):
    """Re-check a certified inequality on random probes and a finer grid.

    Returns
    -------
    ok : bool
    worst : float
        Largest relative violation ``(lhs - rhs) / max(lhs, rhs)`` seen
        (negative when every check holds with room).
    """
    A, B = _pair(A, B)
    c = constants
    ts = _time_grid(c.t_min, c.T_max, refine * c.n_grid)
    M, G = _inequality_forms(A, B, c.alpha, c.D2, ts)
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((n, n_probes)) + 1j * rng.standard_normal((n, n_probes))
    phi /= np.linalg.norm(phi, axis=0)
    S = Exponential(A).stack(ts)
    lhs = np.linalg.norm(S.conj().transpose(0, 2, 1) @ phi, axis=1) ** 2
    obs = np.einsum("ik,tij,jk->tk", phi.conj(), G, phi).real
    rhs = c.D1 * obs + c.D2 * np.exp(-c.alpha * ts)[:, None]
    rel = (lhs - rhs) / np.maximum(np.maximum(lhs, rhs), 1e-300)
    worst = float(rel.max())
    # matrix form: D2 e^{-at} I + D1 G - S S^H must be positive semidefinite
    R = c.D1 * G - M
    scale = np.maximum(np.abs(M).max(axis=(1, 2)), 1.0)
    mat = float((-np.linalg.eigvalsh(R)[:, 0] / scale).max())
    worst = max(worst, mat)
    return bool(worst <= slack), worst


# -- Gramian and gain ----------------------------------------------------------

def _pi_quadrature(A, B, a, D1, D2, eps, T, panels, order=8):
    s, w = gauss_legendre(0.0, T, panels=panels, order=order)
    E = Exponential(-A).stack(s)
    weight = np.exp(-(a - eps) * s)
    ctrl = np.tensordot(w * (T - s) * weight, _gram_stack(E, B), axes=1)
    free = np.tensordot(w * weight, E @ E.conj().transpose(0, 2, 1), axes=1)
    return hermitian_part(D1 * math.exp(a * T) * ctrl + D2 * free)


def build_gramian(A, B, constants, eps, T, panels=64, rtol=1e-8, max_panels=1024):
    """Weighted backward Gramian ``Pi = int_0^T Lambda(t) dt``.

    ``constants.alpha`` is the rate ``4 alpha`` of the observability
    inequality, so the weights read ``exp(-(constants.alpha - eps) s)``.
    The inner integral of ``Lambda`` is folded into the outer one by
    exchanging the order of integration, leaving a single smooth integral
    with the kernel ``(T - s)``.

    Raises
    ------
    QuadratureUnderResolved
        If two successive panel counts disagree beyond ``rtol`` up to
        ``max_panels``.
    """
    A, B = _pair(A, B)
    if not T > 0 or eps < 0:
        raise ValueError("need T > 0 and eps >= 0")
    a, D1, D2 = constants.alpha, constants.D1, constants.D2
    panels = max(panels, math.ceil(T * max(1.0, np.linalg.norm(A, 2))))
    coarse = _pi_quadrature(A, B, a, D1, D2, eps, T, panels)
    while True:
        fine = _pi_quadrature(A, B, a, D1, D2, eps, T, 2 * panels)
        err = np.linalg.norm(fine - coarse) / max(np.linalg.norm(fine), 1e-300)
        if err <= rtol:
            return fine
        panels *= 2
        if 2 * panels > max_panels:
            raise QuadratureUnderResolved(f"relative Richardson gap {err:.3g} at {panels} panels")
        coarse = fine


@dataclass
class GramianFeedback:
    """Gain ``K_T`` with its certificates.

    Attributes
    ----------
    T, eps_hat : float
        Horizon and ``ln(D2) / T``.
    Pi : ndarray
        Weighted Gramian at ``eps_hat``.
    K : ndarray
        Gain of shape ``(m, n)``.
    alpha : float
        Requested decay rate.
    constants : ObservabilityConstants
        Certified at rate ``4 alpha``.
    closed_loop_abscissa, decay_rate, C_alpha : float
        Eigenvalue check and the simulated decay certificate.
    """

    T: float
    eps_hat: float
    Pi: np.ndarray
    K: np.ndarray
    alpha: float
    constants: ObservabilityConstants
    closed_loop_abscissa: float
    decay_rate: float = float("nan")
    C_alpha: float = float("nan")
    decay_times: np.ndarray = field(default=None, repr=False)
    decay_norms: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {
            "T": self.T,
            "eps_hat": self.eps_hat,
            "D1": self.constants.D1,
            "D2": self.constants.D2,
            "alpha": self.alpha,
            "closed_loop_abscissa": self.closed_loop_abscissa,
            "decay_rate": self.decay_rate,
            "C_alpha": self.C_alpha,
            "K": [[[float(z.real), float(z.imag)] for z in row] for row in self.K],
        }


def decay_certificate(Acl, alpha, n_probes=16, seed=0, horizon=None, n_times=201):
    """Simulate ``exp(t Acl) x0`` for random ``x0`` over ``[0, 10/alpha]``.

    Returns ``(rate, C, ts, worst_norms)`` where ``rate`` is the slowest
    least-squares decay rate of ``log ||x(t)||`` over the second half of the
    horizon and ``C = sup e^{alpha t} ||x(t)|| / ||x0||``.
    """
    Acl = np.asarray(Acl, dtype=complex)
    n = Acl.shape[0]
    horizon = 10.0 / alpha if horizon is None else horizon
    ts = np.linspace(0.0, horizon, n_times)
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n, n_probes)) + 1j * rng.standard_normal((n, n_probes))
    x0 /= np.linalg.norm(x0, axis=0)
    norms = np.linalg.norm(Exponential(Acl).stack(ts) @ x0, axis=1)
    tail = ts >= horizon / 2
    rates = []
    for k in range(n_probes):
        ok = tail & (norms[:, k] > 1e-250)
        if ok.sum() < 2:
            ok = norms[:, k] > 1e-250
        if ok.sum() < 2:
            rates.append(-np.inf)
            continue
        rates.append(np.polyfit(ts[ok], np.log(norms[ok, k]), 1)[0])
    C = float(np.max(np.exp(alpha * ts)[:, None] * norms))
    return float(np.max(rates)), C, ts, norms.max(axis=1)


def synthesize_feedback_KT(A, B, alpha, D2_ladder=D2_LADDER, seed=0, T=None,
                           verify_decay=True, ctrl_threshold=1e-10):
    """Gramian feedback ``K_T`` placing ``A + B K_T`` left of ``-alpha``.

    ``D2`` is taken from ``D2_ladder`` in order; the first value whose
    constants certify and whose gain passes the abscissa check wins.

    Raises
    ------
    NotExactlyControllable
        If the controllability Gramian is numerically singular.
    ConstantsNotCertified, SingularGramian, FeedbackNotCertified
        When every rung of the ladder fails; the last failure is raised.

    Notes
    -----
    ``ctrl_threshold`` bounds ``lambda_min / lambda_max`` of the Gramian on
    ``[0, 1]``.  Callers that have already certified controllability by
    other means (a PBH test) may relax it.
    """
    A, B = _pair(A, B)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    ctrl = None if ctrl_threshold is None else check_exact_controllability(
        A, B, threshold=ctrl_threshold)
    if ctrl is not None and not ctrl["controllable"]:
        raise NotExactlyControllable(f"Gramian margin {ctrl['margin']:.3g} below threshold")
    last = None
    for D2 in D2_ladder:
        try:
            consts = estimate_observability_constants(A, B, 4 * alpha, D2, seed=seed)
        except ConstantsNotCertified as exc:
            last = exc
            continue
        T_use = T if T is not None else max(1.0, 1.5 * math.log(D2) / (2 * alpha))
        if T_use <= math.log(D2) / (2 * alpha):
            raise ValueError("T must exceed ln(D2) / (2 alpha)")
        eps_hat = math.log(D2) / T_use
        Pi = build_gramian(A, B, consts, eps_hat, T_use)
        scale = consts.D1 * math.exp(4 * alpha * T_use)
        Pis = Pi / scale
        if np.linalg.eigvalsh(Pis)[0] <= 0:
            last = SingularGramian(f"Pi is not positive definite for D2={D2}")
            continue
        K = -T_use * np.linalg.solve(Pis, B).conj().T
        abscissa = float(np.max(np.linalg.eigvals(A + B @ K).real))
        if abscissa > -alpha + ABSCISSA_SLACK:
            last = FeedbackNotCertified(
                f"closed-loop abscissa {abscissa:.4g} exceeds {-alpha + ABSCISSA_SLACK:.4g}"
            )
            continue
        fb = GramianFeedback(T_use, eps_hat, Pi, K, float(alpha), consts, abscissa)
        if verify_decay:
            rate, C, ts, worst = decay_certificate(A + B @ K, alpha, seed=seed)
            if rate > -alpha + ABSCISSA_SLACK:
                last = FeedbackNotCertified(f"simulated decay rate {rate:.4g} too slow")
                continue
            fb.decay_rate, fb.C_alpha, fb.decay_times, fb.decay_norms = rate, C, ts, worst
        return fb
    raise last
