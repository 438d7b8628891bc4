"""Scaled unscented transform: weights, sigma points and moment recovery.

The covariance weights are carried as a full (2N+1)x(2N+1) matrix ``W`` that
already contains the centering operator, so second moments are recovered as
``X @ W @ X.T`` without subtracting the mean explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NotPSD(np.linalg.LinAlgError):
    """Raised when a covariance cannot be factored as S @ S.T."""


ALPHA_MIN = 1e-4
ALPHA_MAX = 1.0

# beta = 2 is folded in: 1 - alpha**2 + beta == 3 - alpha**2
_CENTER_COV_OFFSET = 3.0


@dataclass(frozen=True)
class UTConfig:
    alpha: float = 1.0

    def __post_init__(self):
        if not (ALPHA_MIN <= self.alpha <= ALPHA_MAX):
            raise ValueError(
                f"alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}], got {self.alpha}"
            )


@dataclass(frozen=True, eq=False)
class UTWeights:
    """Weights of the scaled unscented transform for an ``n``-dim state.

    Attributes:
        n: State dimension.
        lam: ``3 * alpha**2 - n``.
        mean_weights: Vector of length ``2n+1``.
        cov_weights: Diagonal covariance weights (length ``2n+1``).
        cov_weight_matrix: ``(I - [w..w]) diag(cov_weights) (I - [w..w])^T``.
    """

    n: int
    alpha: float
    lam: float
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    cov_weight_matrix: np.ndarray

    @property
    def n_points(self) -> int:
        return 2 * self.n + 1

    @property
    def spread(self) -> float:
        """Sigma-point scale ``sqrt(n + lam)``, which equals ``sqrt(3) * alpha``."""
        return math.sqrt(3.0) * self.alpha


@dataclass(frozen=True, eq=False)
class SigmaSet:
    """Sigma points stored column-wise, shape ``(N, 2N+1)``."""

    points: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[0]


def compute_weights(n: int, cfg: UTConfig | None = None) -> UTWeights:
    cfg = cfg or UTConfig()
    if n < 1:
        raise ValueError(f"state dimension must be >= 1, got {n}")
    alpha = float(cfg.alpha)
    lam = 3.0 * alpha**2 - n
    # n + lam, formed without the cancellation of n + (3 alpha^2 - n)
    denom = 3.0 * alpha**2
    if denom == 0.0:
        raise ValueError("n + lambda is zero; alpha must be positive")

    n_pts = 2 * n + 1
    wm = np.full(n_pts, 1.0 / (2.0 * denom))
    wc = wm.copy()
    wm[0] = 1.0 - n / denom
    wc[0] = wm[0] + (_CENTER_COV_OFFSET - alpha**2)

    centering = np.eye(n_pts) - np.outer(wm, np.ones(n_pts))
    W = centering @ np.diag(wc) @ centering.T
    W = 0.5 * (W + W.T)

    for arr in (wm, wc, W):
        arr.setflags(write=False)
    return UTWeights(n=n, alpha=alpha, lam=lam, mean_weights=wm,
                     cov_weights=wc, cov_weight_matrix=W)


def _semidefinite_cholesky(p: np.ndarray, tol: float) -> np.ndarray | None:
    """Outer-product Cholesky that zeroes columns with a vanishing pivot.

    Returns None when a pivot is negative beyond ``tol``.
    """
    n = p.shape[0]
    a = p.astype(float).copy()
    s = np.zeros_like(a)
    for j in range(n):
        d = a[j, j]
        if d < -tol:
            return None
        if d <= tol:
            # the rest of this column must vanish for a PSD input
            if np.max(np.abs(a[j + 1:, j]), initial=0.0) > math.sqrt(tol):
                return None
            continue
        col = a[j:, j] / math.sqrt(d)
        s[j:, j] = col
        a[j:, j:] -= np.outer(col, col)
    return s


def matrix_sqrt_psd(p, max_retries: int = 10) -> np.ndarray:
    """Lower-triangular ``S`` with ``S @ S.T == p`` for a symmetric PSD ``p``.

    Plain Cholesky is tried first. Singular inputs (zero variance directions)
    go through a semidefinite Cholesky; anything still failing is retried with
    diagonal jitter starting at 1e-12 and doubling.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {p.shape}")
    scale = 1.0 + float(np.max(np.abs(p), initial=0.0))
    if np.max(np.abs(p - p.T), initial=0.0) > 1e-9 * scale:
        raise NotPSD("matrix is not symmetric")
    p = 0.5 * (p + p.T)

    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        pass

    s = _semidefinite_cholesky(p, tol=1e-14 * scale)
    if s is not None:
        return s

    eps = 1e-12
    eye = np.eye(p.shape[0])
    for _ in range(max_retries):
        try:
            return np.linalg.cholesky(p + eps * eye)
        except np.linalg.LinAlgError:
            eps *= 2.0
    raise NotPSD(f"Cholesky failed after {max_retries} jitter retries")


def compute_sigma_points(mean, cov, w: UTWeights) -> SigmaSet:
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    n = mean.shape[0]
    if n != w.n or cov.shape != (n, n):
        raise ValueError(
            f"dimension mismatch: mean {mean.shape}, cov {cov.shape}, weights n={w.n}"
        )
    offsets = w.spread * matrix_sqrt_psd(cov)
    points = np.empty((n, 2 * n + 1))
    points[:, 0] = mean
    points[:, 1:n + 1] = mean[:, None] + offsets
    points[:, n + 1:] = mean[:, None] - offsets
    return SigmaSet(points)


def reconstruct_statistics(sigma, w: UTWeights) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and covariance of a (possibly propagated) sigma set.

    ``sigma`` may be a :class:`SigmaSet` or a raw ``(D, 2N+1)`` array; the row
    count need not match the state dimension.
    """
    pts = sigma.points if isinstance(sigma, SigmaSet) else np.asarray(sigma, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != w.n_points:
        raise ValueError(
            f"expected {w.n_points} sigma columns, got array of shape {pts.shape}"
        )
    mean = pts @ w.mean_weights
    cov = pts @ w.cov_weight_matrix @ pts.T
    return mean, 0.5 * (cov + cov.T)


def cross_covariance(a, b, w: UTWeights) -> np.ndarray:
    """``A W B^T`` for two sigma sets propagated from the same draw."""
    a = a.points if isinstance(a, SigmaSet) else np.asarray(a, dtype=float)
    b = b.points if isinstance(b, SigmaSet) else np.asarray(b, dtype=float)
    return a @ w.cov_weight_matrix @ b.T
