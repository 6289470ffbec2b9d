import numpy as np


def random_spectrum_matrix(rng, n, alpha, gap=0.1, re=(-4.0, 2.0), im=3.0):
    """Complex ``V diag(lam) V^{-1}`` with no eigenvalue within ``gap/2`` of ``-alpha``."""
    while True:
        lam = rng.uniform(*re, n) + 1j * rng.uniform(-im, im, n)
        if np.all(np.abs(lam.real + alpha) >= gap / 2):
            break
    V = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return V @ np.diag(lam) @ np.linalg.inv(V)


def audit_system(rng, i, gap=0.05):
    """Random diagonalizable system for the equivalence audit.

    Every third system has one mode right of ``-alpha`` removed from the
    range of ``B`` (hidden from the control); ``gamma`` alternates between
    gauges below and above one half.
    """
    from stabkit.operators import ControlSystem

    n = int(rng.integers(2, 11))
    m = int(rng.integers(1, 4))
    alpha = float(rng.uniform(0.3, 1.5))
    while True:
        lam = rng.uniform(-3, 2, n) + 1j * rng.uniform(-3, 3, n)
        if np.all(np.abs(lam.real + alpha) >= gap):
            break
    V = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Vi = np.linalg.inv(V)
    A = V @ np.diag(lam) @ Vi
    B = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    if i % 3 == 1:
        idx = np.flatnonzero(lam.real > -alpha)
        if idx.size:
            # left eigenvector w: w^H A = lam_j w^H, so w^H B = 0 hides the mode
            w = Vi[rng.choice(idx)].conj()
            w /= np.linalg.norm(w)
            B = B - np.outer(w, w.conj() @ B)
    gamma = float(rng.choice([0.2, 0.6, 0.8]))
    return ControlSystem(A, B, gamma=gamma), alpha
