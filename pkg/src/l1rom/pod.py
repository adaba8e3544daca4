"""Snapshot POD and the slow spectral decay of a travelling front.

The left singular vectors of a snapshot matrix ``S`` (one column per time)
minimize the mean squared projection error; the error left after ``M``
modes is the sum of the discarded eigenvalues ``lambda_l = sigma_l^2`` of
``S^T S``. For a front moving across the grid the singular values decay
only like ``1 / l``, so no small basis captures it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .hdm import advect1d_exact

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60
DECAY_SIZES = (400, 600, 800, 1000, 1500)


@dataclass
class SnapshotMatrix:
    """Snapshots as columns, ordered by ``times``."""

    S: np.ndarray
    x: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float)
        if self.S.ndim != 2 or self.S.shape != (len(self.x), len(self.times)):
            raise DimensionMismatch("S must be (len(x), len(times))")
        if not np.all(np.isfinite(self.S)):
            raise ValueError("snapshots must be finite")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must increase")


@dataclass
class PodBasis:
    modes: np.ndarray
    singular_values: np.ndarray  # full spectrum, non-increasing

    @property
    def eigenvalues(self):
        """``lambda_l = sigma_l^2``, the eigenvalues of ``S^T S``."""
        return self.singular_values ** 2

    @property
    def M(self):
        return self.modes.shape[1]


def _rotation_rounds(n):
    """Round-robin pairings: each round holds disjoint pairs, and every pair
    ``(i, j)`` appears in exactly one of the ``n - 1`` rounds (``n`` even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(players[:half]), np.array(players[half:][::-1])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_svd(A, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Thin SVD ``A = U diag(s) V^T`` by one-sided (Hestenes) Jacobi.

    Column pairs are orthogonalized by plane rotations until every pair has
    ``|a_i . a_j| <= tol ||a_i|| ||a_j||``. Disjoint pairs are rotated
    together, one round-robin round at a time. Tall and square inputs work
    on columns; wide inputs go through the transpose.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch("jacobi_svd needs a matrix")
    m, n = A.shape
    if m < n:
        U, s, V = jacobi_svd(A.T, tol, max_sweeps)
        return V, s, U
    pad = n % 2
    W = np.hstack([A, np.zeros((m, pad))]) if pad else A.copy()
    V = np.eye(n + pad)
    rounds = _rotation_rounds(n + pad)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            wp, wq = W[:, p], W[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            act = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not act.any():
                continue
            rotated = True
            p, q = p[act], q[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta ** 2))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t ** 2)
            s = c * t
            for X in (W, V):
                xp, xq = X[:, p].copy(), X[:, q]
                X[:, p] = c * xp - s * xq
                X[:, q] = s * xp + c * xq
        if not rotated:
            break
    W, V = W[:, :n], V[:n, :n]
    sv = np.linalg.norm(W, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, W, V = sv[order], W[:, order], V[:, order]
    U = np.zeros_like(W)
    nz = sv > 0
    U[:, nz] = W[:, nz] / sv[nz]
    if not nz.all():
        U = _complete(U, nz)
    return U, sv, V


def _complete(U, nz):
    """Fill the columns of ``U`` for zero singular values orthonormally."""
    k = int(nz.sum())
    Q, _ = np.linalg.qr(np.hstack([U[:, nz], np.eye(U.shape[0])]))
    out = U.copy()
    out[:, ~nz] = Q[:, k:k + int((~nz).sum())]
    return out


def pod_compute(S, M, method="jacobi") -> PodBasis:
    """First ``M`` left singular vectors of ``S`` and its full spectrum.

    ``method`` is ``"jacobi"`` (:func:`jacobi_svd`) or ``"lapack"``
    (``numpy.linalg.svd``, for large studies).
    """
    S = S.S if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    if S.ndim != 2:
        raise DimensionMismatch("snapshot matrix must be 2-D")
    if not 0 <= M <= min(S.shape):
        raise DimensionMismatch(f"M = {M} exceeds min{S.shape}")
    if method == "jacobi":
        U, s, _ = jacobi_svd(S)
    elif method == "lapack":
        U, s, _ = np.linalg.svd(S, full_matrices=False)
    else:
        raise ValueError(f"unknown SVD method {method!r}")
    return PodBasis(modes=U[:, :M], singular_values=s)


def truncation_error(basis: PodBasis, M):
    """Relative energy ``sum_{l > M} lambda_l / sum_l lambda_l`` left out."""
    lam = basis.eigenvalues
    total = lam.sum()
    if total == 0:
        return 0.0
    return float(lam[M:].sum() / total)


def projection_error(S, modes):
    """Frobenius norm of ``S`` minus its projection on ``modes``."""
    S = np.asarray(S, dtype=float)
    return float(np.linalg.norm(S - modes @ (modes.T @ S)))


def front_snapshots(N) -> SnapshotMatrix:
    """Exact front on ``x_i = i / N`` at ``t_k = k / N``, ``k = 0..N``."""
    times = np.arange(N + 1) / N
    S = np.column_stack([advect1d_exact(N, t) for t in times])
    return SnapshotMatrix(S, np.arange(N + 1) / N, times)


@dataclass
class DecayResult:
    N: int
    singular_values: np.ndarray

    @property
    def ratios(self):
        return self.singular_values / self.singular_values[0]

    def slope(self, window=(2, 40)):
        """Least-squares slope of ``log(ratio_l)`` against ``log(l)``."""
        lo, hi = window
        ell = np.arange(lo, hi + 1)
        return float(np.polyfit(np.log(ell), np.log(self.ratios[ell - 1]), 1)[0])


def pod_decay_study(sizes=DECAY_SIZES, method="lapack"):
    """Spectra of the front snapshot matrices for each grid size.

    The decay quantities are the singular values ``sigma_l`` of ``S``:
    ``sigma_1 ~ 2N / pi`` and ``sigma_l / sigma_1 ~ 1 / (2l - 1)``.
    """
    out = []
    for N in sizes:
        s = pod_compute(front_snapshots(N), 0, method).singular_values
        out.append(DecayResult(int(N), s))
    return out


def decay_table(results):
    """Rows ``(N, ell, ratio)`` for every result, ``ell`` from 1."""
    rows = []
    for res in results:
        for ell, ratio in enumerate(res.ratios, start=1):
            rows.append((res.N, ell, float(ratio)))
    return rows
