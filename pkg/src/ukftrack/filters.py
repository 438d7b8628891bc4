"""Linear Kalman filter baseline and the unscented Kalman filter recursion.

All functions are pure: they take a :class:`GaussianState` and return a new
one. Noise covariances are passed per call, so time-varying noise is just a
different :class:`NoiseModel` on a given step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ut_core import (
    UTWeights,
    compute_sigma_points,
    cross_covariance,
    reconstruct_statistics,
)

COND_LIMIT = 1e12


class MissingLinearForm(ValueError):
    """The KF was asked to run on a model without F or H."""


class SingularInnovation(np.linalg.LinAlgError):
    """Innovation covariance is numerically singular."""


def _symmetrize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class NoiseModel:
    process_cov: np.ndarray
    measurement_cov: np.ndarray

    def __post_init__(self):
        for name in ("process_cov", "measurement_cov"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square, got shape {m.shape}")
            if np.max(np.abs(m - m.T), initial=0.0) > 1e-9 * (1.0 + np.max(np.abs(m), initial=0.0)):
                raise ValueError(f"{name} is not symmetric")
            object.__setattr__(self, name, m)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Process function ``f`` and measurement function ``h``.

    ``F`` and ``H`` are optional linear forms; when given, the KF uses them
    and ``f``/``h`` are expected to agree with them. With ``vectorized`` set,
    ``f`` and ``h`` also accept a 2-D array and map each column.
    """

    f: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    F: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    vectorized: bool = False

    @classmethod
    def linear(cls, F, H) -> "SystemModel":
        F = np.asarray(F, dtype=float)
        H = np.asarray(H, dtype=float)
        return cls(f=lambda x: F @ x, h=lambda x: H @ x, F=F, H=H, vectorized=True)

    def check_linear_forms(self, rng=None, trials: int = 5, tol: float = 1e-9) -> bool:
        """Spot-check ``f(x) == F x`` and ``h(x) == H x`` on random vectors."""
        if self.F is None or self.H is None:
            return False
        rng = rng if rng is not None else np.random.default_rng(0)
        n = self.F.shape[1]
        for _ in range(trials):
            x = rng.standard_normal(n)
            if not np.allclose(self.f(x), self.F @ x, rtol=tol, atol=tol):
                return False
            if not np.allclose(self.h(x), self.H @ x, rtol=tol, atol=tol):
                return False
        return True


def _apply_columns(fn, points: np.ndarray, vectorized: bool = False) -> np.ndarray:
    if vectorized:
        out = np.asarray(fn(points), dtype=float)
        return out.reshape(-1, points.shape[1])
    return np.column_stack([np.asarray(fn(points[:, i]), dtype=float).reshape(-1)
                            for i in range(points.shape[1])])


def _gain(cross: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Solve ``K S = cross`` for K without forming ``S^-1``."""
    if not np.all(np.isfinite(s)):
        raise SingularInnovation("innovation covariance has non-finite entries")
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularInnovation(f"innovation covariance condition number {cond:.3g}")
    # S is symmetric, so K^T = S^-1 cross^T
    return np.linalg.solve(s, cross.T).T


def kf_predict(state: GaussianState, model: SystemModel, noise: NoiseModel) -> GaussianState:
    if model.F is None:
        raise MissingLinearForm("kf_predict needs the linear transition matrix F")
    F = model.F
    mean = F @ state.mean
    cov = F @ state.cov @ F.T + noise.process_cov
    return GaussianState(mean, _symmetrize(cov))


def kf_update(state: GaussianState, model: SystemModel, noise: NoiseModel, y) -> GaussianState:
    if model.H is None:
        raise MissingLinearForm("kf_update needs the linear measurement matrix H")
    H = model.H
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != H.shape[0]:
        raise ValueError(f"measurement has {y.size} entries, H expects {H.shape[0]}")
    r = y - H @ state.mean
    s = _symmetrize(H @ state.cov @ H.T + noise.measurement_cov)
    k = _gain(state.cov @ H.T, s)
    mean = state.mean + k @ r
    cov = state.cov - k @ s @ k.T
    return GaussianState(mean, _symmetrize(cov))


def ukf_predict(state: GaussianState, model: SystemModel, noise: NoiseModel,
                w: UTWeights):
    """Propagate sigma points through ``f``.

    Returns:
        ``(predicted_state, propagated_sigma_points)``; the second item is the
        ``(N, 2N+1)`` array of ``f`` applied to each sigma column.
    """
    sigma = compute_sigma_points(state.mean, state.cov, w)
    propagated = _apply_columns(model.f, sigma.points, model.vectorized)
    mean, cov = reconstruct_statistics(propagated, w)
    cov = _symmetrize(cov + noise.process_cov)
    return GaussianState(mean, cov), propagated


def ukf_update(predicted: GaussianState, model: SystemModel, noise: NoiseModel,
               w: UTWeights, y, gain_mask=None) -> GaussianState:
    """Measurement update with sigma points redrawn from ``predicted``.

    Args:
        gain_mask: Optional boolean vector over state entries. Rows of the
            gain where the mask is False are zeroed, leaving those entries
            (mean and covariance block) exactly at their predicted values.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    sigma = compute_sigma_points(predicted.mean, predicted.cov, w)
    ys = _apply_columns(model.h, sigma.points, model.vectorized)
    if ys.shape[0] != y.size:
        raise ValueError(f"measurement has {y.size} entries, h returns {ys.shape[0]}")

    y_pred = ys @ w.mean_weights
    s = _symmetrize(cross_covariance(ys, ys, w) + noise.measurement_cov)
    k = _gain(cross_covariance(sigma.points, ys, w), s)
    if gain_mask is not None:
        keep = np.asarray(gain_mask, dtype=bool).reshape(-1)
        k = np.where(keep[:, None], k, 0.0)

    mean = predicted.mean + k @ (y - y_pred)
    cov = predicted.cov - k @ s @ k.T
    if gain_mask is not None:
        frozen = ~keep
        mean[frozen] = predicted.mean[frozen]
        cov[np.ix_(frozen, frozen)] = predicted.cov[np.ix_(frozen, frozen)]
    return GaussianState(mean, _symmetrize(cov))


def ukf_step(state: GaussianState, model: SystemModel, noise: NoiseModel,
             w: UTWeights, y) -> GaussianState:
    predicted, _ = ukf_predict(state, model, noise, w)
    return ukf_update(predicted, model, noise, w, y)
