"""Stacked constant-acceleration model for M objects moving in the image plane.

State layout per object is ``[x, vx, ax, y, vy, ay]``; measurements are
``[x1, y1, x2, y2, ...]``.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .filters import NoiseModel, SystemModel

OBJ_DIM = 6
MEAS_PER_OBJ = 2
_POS_IDX = (0, 3)


@dataclass(frozen=True)
class MultiObjectLayout:
    m: int
    dt: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"object count must be a positive integer, got {self.m}")
        if not math.isfinite(self.dt) or self.dt < 0:
            raise ValueError(f"dt must be finite and non-negative, got {self.dt}")

    @property
    def state_dim(self) -> int:
        return OBJ_DIM * self.m

    @property
    def meas_dim(self) -> int:
        return MEAS_PER_OBJ * self.m

    def object_slice(self, i: int) -> slice:
        return slice(OBJ_DIM * i, OBJ_DIM * (i + 1))

    def measurement_slice(self, i: int) -> slice:
        return slice(MEAS_PER_OBJ * i, MEAS_PER_OBJ * (i + 1))


@dataclass(frozen=True)
class ObjectKinematics:
    x: float
    vx: float
    ax: float
    y: float
    vy: float
    ay: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in astuple(self)):
            raise ValueError(f"non-finite kinematics: {self}")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.vx, self.vy)


def _axis_block(dt: float) -> np.ndarray:
    return np.array([[1.0, dt, 0.5 * dt * dt],
                     [0.0, 1.0, dt],
                     [0.0, 0.0, 1.0]])


def object_transition(dt: float = 1.0) -> np.ndarray:
    """The 6x6 per-object transition block."""
    a = _axis_block(dt)
    return block_diag(a, a)


def build_transition(layout: MultiObjectLayout) -> np.ndarray:
    return block_diag(*([object_transition(layout.dt)] * layout.m))


def object_measurement() -> np.ndarray:
    h = np.zeros((MEAS_PER_OBJ, OBJ_DIM))
    h[0, _POS_IDX[0]] = 1.0
    h[1, _POS_IDX[1]] = 1.0
    return h


def build_measurement(layout: MultiObjectLayout) -> np.ndarray:
    return block_diag(*([object_measurement()] * layout.m))


def propagate(state, layout: MultiObjectLayout) -> np.ndarray:
    """Advance every object one frame under constant acceleration.

    ``state`` is one stacked state vector or a 2-D array with one per column.
    """
    s = np.asarray(state, dtype=float)
    if s.shape[:1] != (layout.state_dim,) or s.ndim > 2:
        raise ValueError(f"expected state of length {layout.state_dim}, got {s.shape}")
    dt = layout.dt
    axes = s.reshape(-1, 3, *s.shape[1:])
    pos, vel, acc = axes[:, 0], axes[:, 1], axes[:, 2]
    out = np.empty_like(axes)
    out[:, 0] = pos + vel * dt + 0.5 * acc * (dt * dt)
    out[:, 1] = vel + acc * dt
    out[:, 2] = acc
    return out.reshape(s.shape)


def measure(state, layout: MultiObjectLayout) -> np.ndarray:
    """Positions ``[x1, y1, x2, y2, ...]``; column-wise for 2-D input."""
    s = np.asarray(state, dtype=float)
    rows = s.reshape(layout.m, OBJ_DIM, *s.shape[1:])[:, _POS_IDX]
    return rows.reshape(layout.meas_dim, *s.shape[1:])


def pack_state(objs: Sequence[ObjectKinematics]) -> np.ndarray:
    return np.array([v for o in objs for v in astuple(o)], dtype=float)


def unpack_state(v) -> list[ObjectKinematics]:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size % OBJ_DIM:
        raise ValueError(f"state length {v.size} is not a multiple of {OBJ_DIM}")
    return [ObjectKinematics(*map(float, row)) for row in v.reshape(-1, OBJ_DIM)]


def constant_acceleration_model(layout: MultiObjectLayout) -> SystemModel:
    """Nonlinear-interface model whose ``f``/``h`` agree with ``F``/``H``."""
    return SystemModel(
        f=lambda x: propagate(x, layout),
        h=lambda x: measure(x, layout),
        F=build_transition(layout),
        H=build_measurement(layout),
        vectorized=True,
    )


def default_process_noise(layout: MultiObjectLayout, q: float = 0.05) -> np.ndarray:
    """Diagonal per-axis ``[q dt^4/4, q dt^2, q]`` process covariance."""
    dt = layout.dt
    axis = np.array([q * dt**4 / 4.0, q * dt**2, q])
    return np.diag(np.tile(axis, 2 * layout.m))


def default_measurement_noise(layout: MultiObjectLayout, sigma_m: float = 2.0) -> np.ndarray:
    return sigma_m**2 * np.eye(layout.meas_dim)


def default_noise(layout: MultiObjectLayout, q: float = 0.05, sigma_m: float = 2.0) -> NoiseModel:
    return NoiseModel(default_process_noise(layout, q),
                      default_measurement_noise(layout, sigma_m))


def initial_covariance(layout: MultiObjectLayout, sigma_p: float, sigma_v: float,
                       sigma_a: float) -> np.ndarray:
    axis = np.array([sigma_p**2, sigma_v**2, sigma_a**2])
    return np.diag(np.tile(axis, 2 * layout.m))
