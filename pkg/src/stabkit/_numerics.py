"""Small numerical helpers: composite Gauss-Legendre rules and batched
matrix exponentials.  Internal to the package."""

from functools import lru_cache

import numpy as np
import scipy.linalg as sla

# eigenvector matrices worse than this are treated as non-diagonalizable
EIG_COND_LIMIT = 1e6


@lru_cache(maxsize=16)
def _legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def gauss_legendre(a, b, panels=64, order=8):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[a, b]``.

    Parameters
    ----------
    a, b : float
        Interval end points.
    panels : int
        Number of equal panels.
    order : int
        Points per panel.

    Returns
    -------
    nodes, weights : ndarray
        One-dimensional arrays of length ``panels * order``.
    """
    x, w = _legendre(order)
    edges = np.linspace(a, b, panels + 1)
    lo = edges[:-1, None]
    half = (edges[1:, None] - lo) / 2.0
    nodes = (lo + half * (x + 1.0)).ravel()
    weights = (half * w).ravel()
    return nodes, weights


def gauss_legendre_edges(edges, order=8):
    """Composite rule over arbitrary panel edges (must be increasing)."""
    x, w = _legendre(order)
    edges = np.asarray(edges, dtype=float)
    lo = edges[:-1, None]
    half = (edges[1:, None] - lo) / 2.0
    return (lo + half * (x + 1.0)).ravel(), (half * w).ravel()


class Exponential:
    """Evaluate ``exp(t*A)`` for many ``t`` with one factorization of ``A``.

    Uses an eigendecomposition when the eigenvector matrix is well
    conditioned and falls back to :func:`scipy.linalg.expm` otherwise.
    """

    def __init__(self, A):
        A = np.asarray(A, dtype=complex)
        self.A = A
        self.n = A.shape[0]
        self._eig = None
        if self.n:
            lam, V = np.linalg.eig(A)
            if np.isfinite(lam).all() and np.linalg.cond(V) < EIG_COND_LIMIT:
                self._eig = (lam, V, np.linalg.inv(V))

    @property
    def diagonalizable(self):
        return self._eig is not None

    def matrix(self, t):
        """``exp(t*A)`` as a dense matrix."""
        if self._eig is None:
            return sla.expm(t * self.A)
        lam, V, Vi = self._eig
        return (V * np.exp(t * lam)) @ Vi

    def stack(self, ts):
        """Array of shape ``(len(ts), n, n)`` holding ``exp(t*A)``."""
        ts = np.asarray(ts, dtype=float)
        if self._eig is None:
            return np.array([sla.expm(t * self.A) for t in ts]).reshape(len(ts), self.n, self.n)
        lam, V, Vi = self._eig
        E = np.exp(ts[:, None] * lam[None, :])
        return np.einsum("ij,tj,jk->tik", V, E, Vi)


def hermitian_part(M):
    return 0.5 * (M + M.conj().T)


def orth_complement(Q, n):
    """Orthonormal basis of the orthogonal complement of ``range(Q)`` in C^n."""
    if Q.shape[1] == 0:
        return np.eye(n, dtype=complex)
    if Q.shape[1] >= n:
        return np.zeros((n, 0), dtype=complex)
    return sla.null_space(Q.conj().T)
