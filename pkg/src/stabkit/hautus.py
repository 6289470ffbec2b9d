"""Frequency-domain stabilizability tests.

The half-plane Hautus margin at ``lambda`` is the smallest singular value
of the stacked map ``phi -> ((lambda I - A*) phi, B* phi)``.  A positive
lower bound over ``Re(lambda) >= -alpha`` is equivalent to stabilizability
at rate ``alpha``; on diagonalizable truncations it reduces to the PBH
eigenvector test.
"""

from dataclasses import dataclass, field
import csv
import io
import math

import numpy as np

from .aedc import SPLIT_TOL
from .operators import shift_state_space, spectral_abscissa

__all__ = [
    "HautusReport",
    "PBHReport",
    "AuditReport",
    "working_pair",
    "hautus_margin",
    "sweep_halfplane",
    "pbh_test",
    "rapid_sweep",
    "equivalence_audit",
]

DENSE_LIMIT = 64
BOUNDARY_NUDGE = 1e-3


def working_pair(sys, shifted=None):
    """The ``(A, B)`` matrices a frequency test runs on.

    ``shifted=None`` selects the isometric shifted pair when
    ``gamma >= 1/2`` and the raw pair otherwise; a boolean forces the choice.
    """
    use = sys.gamma >= 0.5 if shifted is None else bool(shifted)
    if use and sys.gamma >= 0.5:
        sh = shift_state_space(sys)
        return sh.A_iso, sh.B_iso, True
    return sys.A, sys.B, False


def _margin_svd(Ah, Bh, lam):
    n = Ah.shape[0]
    M = np.vstack([lam * np.eye(n) - Ah, Bh])
    _, s, Vh = np.linalg.svd(M)
    return float(s[-1]), Vh[-1].conj()


def hautus_margin(sys, lam, shifted=None, return_witness=False):
    """Smallest singular value of ``[lam I - A*; B*]``.

    Parameters
    ----------
    sys : ControlSystem
    lam : complex
    shifted : bool, optional
        See :func:`working_pair`.
    return_witness : bool
        Also return the unit vector attaining the minimum.
    """
    A, B, _ = working_pair(sys, shifted)
    m, phi = _margin_svd(A.conj().T, B.conj().T, complex(lam))
    return (m, phi) if return_witness else m


def _is_normal(A):
    scale = max(1.0, np.linalg.norm(A) ** 2)
    return np.linalg.norm(A @ A.conj().T - A.conj().T @ A) <= 1e-12 * scale


@dataclass
class HautusReport:
    """Margins of the Hautus inequality over a sample of the half-plane.

    ``margins[k]`` is exact for ``grid[k]`` when ``exact[k]`` is true and a
    certified lower bound (the distance to the spectrum of a normal ``A``)
    otherwise; skipped points never undercut the reported minimum.
    """

    alpha: float
    grid: np.ndarray
    margins: np.ndarray
    worst_lambda: complex
    worst_witness: np.ndarray
    C_alpha: float
    tol: float
    shifted: bool
    imag_bound: float
    exact: np.ndarray = field(default=None, repr=False)

    @property
    def min_margin(self):
        return float(np.min(self.margins))

    @property
    def passed(self):
        return self.min_margin > self.tol

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "min_margin": self.min_margin,
            "C_alpha": self.C_alpha if math.isfinite(self.C_alpha) else "inf",
            "worst_lambda": [self.worst_lambda.real, self.worst_lambda.imag],
            "worst_witness": [[float(z.real), float(z.imag)] for z in self.worst_witness],
            "tol": self.tol,
            "shifted": self.shifted,
            "passed": self.passed,
            "grid_size": int(self.grid.size),
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re_lambda", "im_lambda", "margin"])
        for z, m in zip(self.grid, self.margins):
            w.writerow(["%.17g" % z.real, "%.17g" % z.imag, "%.17g" % m])
        return buf.getvalue()


def _imag_samples(bound, n_im):
    pos = np.geomspace(min(1e-2, bound), bound, n_im)
    return np.concatenate([-pos[::-1], [0.0], pos])


def _build_grid(A, alpha, n_re, n_im, imag_bound):
    mu = np.linalg.eigvals(A.conj().T) if A.size else np.zeros(0)
    ims = _imag_samples(imag_bound, n_im)
    right = max(spectral_abscissa(A) + 1.0, -alpha)
    res = np.linspace(-alpha, right, n_re) if right > -alpha else np.array([-alpha])
    pts = [(-alpha + 1j * ims)]
    pts.append((res[1:, None] + 1j * ims[None, :]).ravel())
    pts.append(np.maximum(mu.real, -alpha) + 1j * mu.imag)
    return np.unique(np.concatenate(pts)), mu


def sweep_halfplane(sys, alpha, resolution=None, shifted=None, imag_bound=None, tol=None):
    """Sample the Hautus margin over ``Re(lambda) >= -alpha``.

    Parameters
    ----------
    sys : ControlSystem
    alpha : float
    resolution : dict or int, optional
        ``{"n_re": .., "n_im": ..}`` or a single int used for both.  The real
        axis of the rectangle spans ``[-alpha, abscissa + 1]`` and the
        imaginary axis ``|Im| <= imag_bound`` with log-spaced samples.
    shifted : bool, optional
        See :func:`working_pair`.
    imag_bound : float, optional
        Defaults to ``2 (||A|| + 1)``; beyond it the margin exceeds
        ``|lambda| - ||A||``.
    tol : float, optional
        Margins at or below this count as zero.  Defaults to
        ``1e-8 * max(1, ||A||, ||B||)``.

    Notes
    -----
    Besides the rectangle the grid always contains the eigenvalues of
    ``A*`` right of ``-alpha`` and the projections of the others onto the
    boundary line, since that is where the margin dips.
    """
    if resolution is None:
        n_re, n_im = 12, 20
    elif isinstance(resolution, int):
        n_re = n_im = resolution
    else:
        n_re, n_im = int(resolution.get("n_re", 12)), int(resolution.get("n_im", 20))
    if n_re < 1 or n_im < 1:
        raise ValueError("empty grid")
    A, B, used_shift = working_pair(sys, shifted)
    Ah, Bh = A.conj().T, B.conj().T
    nA = float(np.linalg.norm(A, 2))
    if imag_bound is None:
        imag_bound = 2.0 * (nA + 1.0)
    if tol is None:
        tol = 1e-8 * max(1.0, nA, float(np.linalg.norm(B, 2)))
    grid, mu = _build_grid(A, alpha, n_re, n_im, imag_bound)
    n = A.shape[0]
    margins = np.empty(grid.size)
    exact = np.zeros(grid.size, dtype=bool)
    if n > DENSE_LIMIT and _is_normal(A):
        # sigma_min([X; Y]) >= sigma_min(X) = dist(lambda, spectrum) for normal A
        dist = np.min(np.abs(grid[:, None] - mu[None, :]), axis=1)
        order = np.argsort(dist)
        best = np.inf
        for k in order:
            if dist[k] >= best:
                margins[k] = dist[k]
                continue
            margins[k], _ = _margin_svd(Ah, Bh, grid[k])
            exact[k] = True
            best = min(best, margins[k])
    elif n > DENSE_LIMIT:
        eye = np.eye(n)
        BBh = B @ Bh
        for k, z in enumerate(grid):
            X = z * eye - Ah
            H = X.conj().T @ X + BBh
            margins[k] = math.sqrt(max(np.linalg.eigvalsh(H)[0], 0.0))
        for k in np.argsort(margins)[:8]:
            margins[k], _ = _margin_svd(Ah, Bh, grid[k])
            exact[k] = True
    else:
        for k, z in enumerate(grid):
            margins[k], _ = _margin_svd(Ah, Bh, z)
        exact[:] = True
    kmin = int(np.argmin(margins))
    mmin, witness = _margin_svd(Ah, Bh, grid[kmin])
    margins[kmin] = mmin
    C = 1.0 / mmin**2 if mmin > tol else math.inf
    return HautusReport(float(alpha), grid, margins, complex(grid[kmin]), witness, C,
                        float(tol), used_shift, float(imag_bound), exact)


# -- PBH -----------------------------------------------------------------------

@dataclass
class PBHReport:
    """Eigenpairs ``(lambda, phi)`` of ``A*`` right of ``-alpha`` with ``B* phi = 0``."""

    alpha: float
    failures: list
    tol: float

    @property
    def passed(self):
        return not self.failures

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "passed": self.passed,
            "failures": [
                {"lambda": [complex(l).real, complex(l).imag],
                 "phi": [[float(z.real), float(z.imag)] for z in p]}
                for l, p in self.failures
            ],
        }


def _cluster(values, tol):
    groups = []
    for k in np.argsort(values.real):
        for g in groups:
            if abs(values[k] - values[g[0]]) <= tol:
                g.append(k)
                break
        else:
            groups.append([k])
    return [values[g].mean() for g in groups], [len(g) for g in groups]


def pbh_test(sys, alpha, tol=1e-8):
    """PBH eigenvector test of the raw pair at level ``alpha``.

    For each eigenvalue ``mu`` of ``A*`` with ``Re(mu) > -alpha`` the
    eigenspace is computed numerically and intersected with the kernel of
    ``B*``.  Every unit vector of that intersection (one per basis
    direction) is a failure.

    Parameters
    ----------
    tol : float
        Relative zero tolerance, scaled by ``max(1, ||A||)`` for the
        eigen-residual and by ``max(1, ||B||)`` for ``||B* phi||``.
    """
    A, B = sys.A, sys.B
    Ah, Bh = A.conj().T, B.conj().T
    n = A.shape[0]
    a_tol = tol * max(1.0, float(np.linalg.norm(A, 2)))
    b_tol = tol * max(1.0, float(np.linalg.norm(B, 2)))
    mu = np.linalg.eigvals(Ah)
    centers, mults = _cluster(mu, max(1e3 * a_tol, 1e-6))
    failures = []
    for c, k in zip(centers, mults):
        if c.real <= -alpha:
            continue
        _, s, Vh = np.linalg.svd(c * np.eye(n) - Ah)
        # geometric multiplicity: singular values at rounding level, at most k
        small = max(1, min(k, int(np.sum(s <= max(1e3 * a_tol, 1e-6)))))
        E = Vh[-small:].conj().T
        _, t, Wh = np.linalg.svd(Bh @ E)
        t = np.concatenate([t, np.zeros(small - t.size)]) if t.size < small else t
        for j in range(small):
            if t[j] <= b_tol:
                phi = E @ Wh[j].conj()
                phi /= np.linalg.norm(phi)
                failures.append((complex(c), phi))
    return PBHReport(float(alpha), failures, tol)


def rapid_sweep(sys, alphas, **kw):
    """:func:`sweep_halfplane` for each ``alpha`` in ascending order.

    Whether ``C_alpha`` grows with ``alpha`` is left to the caller; no
    monotonicity is asserted.
    """
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas) or alphas != sorted(alphas):
        raise ValueError("alphas must be positive and ascending")
    return [sweep_halfplane(sys, a, **kw) for a in alphas]


# -- equivalence audit ------------------------------------------------------------

@dataclass
class AuditReport:
    """Three verdicts on stabilizability at one rate and whether they agree."""

    alpha: float
    hautus: HautusReport
    hautus_raw: HautusReport
    pbh: PBHReport
    stabilize_ok: bool
    closed_loop_abscissa: float
    K_norm: float
    error: str
    witness_alignment: float = None
    stabilization: object = field(default=None, repr=False)

    @property
    def verdicts(self):
        return {"hautus": self.hautus.passed, "pbh": self.pbh.passed,
                "stabilize": self.stabilize_ok}

    @property
    def agree(self):
        return len(set(self.verdicts.values())) == 1

    @property
    def passed(self):
        return self.agree and self.stabilize_ok

    def to_dict(self):
        def f(x):
            return x if x is None or math.isfinite(x) else str(x)

        return {
            "alpha": self.alpha,
            "verdicts": self.verdicts,
            "agree": self.agree,
            "hautus": self.hautus.to_dict(),
            "hautus_raw": self.hautus_raw.to_dict(),
            "pbh": self.pbh.to_dict(),
            "closed_loop_abscissa": f(self.closed_loop_abscissa),
            "K_norm": f(self.K_norm),
            "error": self.error,
            "witness_alignment": f(self.witness_alignment),
        }


def equivalence_audit(sys, alpha, seed=0, resolution=None, **stabilize_kw):
    """Check that the frequency tests agree with the feedback pipeline.

    The pipeline is run with the split at ``alpha`` itself so that all
    three tests address the same unstable subspace, or ``1e-3`` further
    left when an eigenvalue lies on the line ``Re = -alpha``.  On failures the PBH
    witness is compared with the Hautus witness of the raw pair through
    ``|| |phi_1| - |phi_2| ||``.
    """
    from .pipeline import stabilize

    hr = sweep_halfplane(sys, alpha, resolution=resolution)
    raw = hr if not hr.shifted else sweep_halfplane(sys, alpha, resolution=resolution,
                                                   shifted=False)
    pbh = pbh_test(sys, alpha)
    if "split_margin" not in stabilize_kw:
        # modes on the line Re = -alpha would make the split degenerate; they
        # join the controlled part instead
        lam = np.linalg.eigvals(sys.A)
        on_line = np.any(np.abs(lam.real + alpha) <= SPLIT_TOL)
        stabilize_kw["split_margin"] = BOUNDARY_NUDGE if on_line else 0.0
    ok, absc, knorm, err, result = False, math.nan, math.nan, None, None
    try:
        result = stabilize(sys, alpha, seed=seed, **stabilize_kw)
        absc = result.report["closed_loop_abscissa"]
        knorm = result.report["K_norm"]
        ok = bool(absc < 0 and result.report["passed"])
    except Exception as exc:  # every failure is a verdict here
        err = f"{type(exc).__name__}: {exc}"
    align = None
    if pbh.failures:
        # compare with the failure nearest to the Hautus minimizer
        lam, phi = min(pbh.failures, key=lambda f: abs(f[0] - raw.worst_lambda))
        align = float(np.linalg.norm(np.abs(phi) - np.abs(raw.worst_witness)))
    return AuditReport(float(alpha), hr, raw, pbh, ok, absc, knorm, err, align, result)
