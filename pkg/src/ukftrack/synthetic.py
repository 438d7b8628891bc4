"""Synthetic frame sequences with known ground truth.

Used by the test suite and the demo data generator of the CLI. Object
textures are periodic Gaussian-bump lattices: their SAD surface is close to
isotropic and unimodal over a +/-7 pixel search range, which is what
three-step search needs to land on the true displacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .detector import Frame


def _to_uint8(t: np.ndarray, lo: float = 10.0, hi: float = 245.0) -> np.ndarray:
    span = t.max() - t.min()
    t = (t - t.min()) / span if span > 0 else np.zeros_like(t)
    return np.round(lo + (hi - lo) * t).astype(np.uint8)


def bump_texture(rng: np.random.Generator, height: int, width: int,
                 period: float | None = None, width_px: float | None = None,
                 noise: float = 0.02, lo: float = 10.0, hi: float = 245.0) -> np.ndarray:
    """Lattice of Gaussian bumps with random offset, period and bump width."""
    period = rng.uniform(16.0, 20.0) if period is None else period
    width_px = rng.uniform(3.0, 4.5) if width_px is None else width_px
    ox, oy = rng.uniform(0.0, period, 2)
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    dx = (xx - ox) % period - period / 2.0
    dy = (yy - oy) % period - period / 2.0
    t = np.exp(-(dx**2 + dy**2) / (2.0 * width_px**2))
    t = t + noise * rng.standard_normal((height, width))
    return _to_uint8(t, lo, hi)


def smooth_texture(rng: np.random.Generator, height: int, width: int,
                   sigma: float = 3.0, lo: float = 10.0, hi: float = 245.0) -> np.ndarray:
    """Gaussian-filtered white noise."""
    t = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
    return _to_uint8(t, lo, hi)


def shifted_pair(texture: np.ndarray, shape: tuple[int, int], p: int, q: int,
                 margin: int = 7) -> tuple[Frame, Frame]:
    """``(current, reference)`` crops with ``current(x, y) == ref(x + p, y + q)``.

    ``texture`` must be at least ``shape + 2 * margin`` in each dimension.
    """
    h, w = shape
    if abs(p) > margin or abs(q) > margin:
        raise ValueError("shift exceeds margin")
    ref = texture[margin:margin + h, margin:margin + w]
    cur = texture[margin + q:margin + q + h, margin + p:margin + p + w]
    return Frame(cur), Frame(ref)


@dataclass
class MovingSquare:
    """Rigid textured square moving at constant integer velocity."""

    start: tuple[int, int]
    velocity: tuple[int, int]
    texture: np.ndarray

    @property
    def size(self) -> int:
        return self.texture.shape[0]

    def top_left(self, t: int) -> tuple[int, int]:
        return (self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t)

    def center(self, t: int) -> tuple[float, float]:
        x, y = self.top_left(t)
        return (x + self.size / 2.0, y + self.size / 2.0)

    def box(self, t: int) -> tuple[int, int, int, int]:
        x, y = self.top_left(t)
        return (x, y, x + self.size, y + self.size)

    def draw(self, canvas: np.ndarray, t: int) -> None:
        _paste(canvas, self.texture, *self.top_left(t))


@dataclass
class SwayingPatch:
    """Fixed window whose content shifts back and forth every frame.

    Stands in for foliage moving in place: lots of block motion, zero net
    displacement.
    """

    origin: tuple[int, int]
    size: int
    amplitude: int
    texture: np.ndarray = field(repr=False)

    def draw(self, canvas: np.ndarray, t: int) -> None:
        off = self.amplitude if t % 2 else 0
        patch = self.texture[:self.size, off:off + self.size]
        _paste(canvas, patch, *self.origin)


def _paste(canvas: np.ndarray, patch: np.ndarray, x: int, y: int) -> None:
    h, w = canvas.shape
    ph, pw = patch.shape
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + pw, w), min(y + ph, h)
    if x0 >= x1 or y0 >= y1:
        return
    canvas[y0:y1, x0:x1] = patch[y0 - y:y1 - y, x0 - x:x1 - x]


def render(background: np.ndarray, items: Sequence, t: int) -> Frame:
    canvas = background.copy()
    for item in items:
        item.draw(canvas, t)
    return Frame(canvas)


def render_sequence(background: np.ndarray, items: Sequence, n_frames: int) -> list[Frame]:
    return [render(background, items, t) for t in range(n_frames)]


def flat_background(height: int, width: int, level: int = 60) -> np.ndarray:
    return np.full((height, width), level, dtype=np.uint8)


def square_scene(rng: np.random.Generator, height: int = 128, width: int = 256,
                 start=(24, 48), velocity=(4, 0), size: int = 32):
    """Single textured square on a static smooth background."""
    bg = smooth_texture(rng, height, width, sigma=4.0, lo=40, hi=90)
    sq = MovingSquare(start, velocity, bump_texture(rng, size, size, lo=120, hi=250))
    return bg, sq


def crossing_scene(rng: np.random.Generator, height: int = 256, width: int = 448,
                   size: int = 32, separation: int = 160, x0: int = 16,
                   velocities=((3, 1), (3, -1))):
    """Two squares whose vertical paths cross; returns ``(background, [a, b])``."""
    bg = smooth_texture(rng, height, width, sigma=4.0, lo=40, hi=90)
    y_mid = height // 2 - size // 2
    a = MovingSquare((x0, y_mid - separation // 2), velocities[0],
                     bump_texture(rng, size, size, lo=120, hi=250))
    b = MovingSquare((x0, y_mid + separation // 2), velocities[1],
                     bump_texture(rng, size, size, lo=110, hi=240))
    return bg, [a, b]
