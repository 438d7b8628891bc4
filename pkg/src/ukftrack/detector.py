"""Block-matching motion detection.

Conventions: a block origin ``(x, y)`` is its top-left pixel (column, row). A
motion vector ``(p, q)`` is the offset, in pixels along x and y, from a block
in the current frame to its best match in the reference frame, so a region
that moved by ``(dx, dy)`` between reference and current frame gets vectors
close to ``(-dx, -dy)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage


class OutOfBounds(IndexError):
    pass


class DimensionMismatch(ValueError):
    pass


class PGMError(ValueError):
    """Unreadable or malformed PGM file."""


# --------------------------------------------------------------------------
# frames

@dataclass(frozen=True, eq=False)
class Frame:
    """8-bit grayscale image, ``pixels[row, col]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"frame must be 2-D, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i >= len(data):
            raise PGMError("truncated header")
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def read_pgm(path) -> Frame:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PGMError(f"{path}: {exc.strerror or exc}") from exc
    try:
        (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
        if magic != b"P5":
            raise PGMError(f"unsupported magic number {magic!r}, expected P5")
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise PGMError(f"{path}: malformed header ({exc})") from exc
    if width <= 0 or height <= 0:
        raise PGMError(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise PGMError(f"{path}: only 8-bit PGM supported (maxval={maxval})")
    raster = data[offset:offset + width * height]
    if len(raster) != width * height:
        raise PGMError(f"{path}: expected {width * height} pixel bytes, found {len(raster)}")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return Frame(px)


def write_pgm(path, frame: Frame) -> None:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + frame.pixels.tobytes())


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".pgm")


def load_frames(directory) -> list[Frame]:
    return [read_pgm(p) for p in list_frames(directory)]


# --------------------------------------------------------------------------
# matching criterion and search

def _sad(cur: np.ndarray, ref: np.ndarray, x: int, y: int, n: int, p: int, q: int) -> int:
    a = cur[y:y + n, x:x + n]
    b = ref[y + q:y + q + n, x + p:x + p + n]
    return int(np.abs(a - b).sum())


def _in_frame(shape, x: int, y: int, n: int) -> bool:
    return 0 <= x and 0 <= y and x + n <= shape[1] and y + n <= shape[0]


def sad(current: Frame, ref: Frame, block_origin, block_size: int, displacement) -> int:
    x, y = map(int, block_origin)
    p, q = map(int, displacement)
    n = int(block_size)
    if not _in_frame(current.pixels.shape, x, y, n):
        raise OutOfBounds(f"block at ({x}, {y}) size {n} outside current frame")
    if not _in_frame(ref.pixels.shape, x + p, y + q, n):
        raise OutOfBounds(f"displaced block at ({x + p}, {y + q}) outside reference frame")
    return _sad(current.pixels.astype(np.int32), ref.pixels.astype(np.int32), x, y, n, p, q)


def default_threshold(block_size: int) -> int:
    return 2 * block_size * block_size


def _rank(value: float, p: int, q: int) -> tuple:
    # lower SAD first, then smaller displacement, then lexicographic (p, q)
    return (value, p * p + q * q, p, q)


def _tss(cur: np.ndarray, ref: np.ndarray, x: int, y: int, n: int,
         initial_step: int, threshold: float, trace: Optional[list] = None):
    shape = ref.shape

    def evaluate(p, q):
        if trace is not None:
            trace.append((p, q))
        if not _in_frame(shape, x + p, y + q, n):
            return math.inf
        return _sad(cur, ref, x, y, n, p, q)

    best_p = best_q = 0
    best = evaluate(0, 0)
    if best < threshold:
        return (0, 0), best

    step = initial_step
    while step >= 1:
        cp, cq = best_p, best_q
        best_key = _rank(best, best_p, best_q)
        for dq in (-step, 0, step):
            for dp in (-step, 0, step):
                if dp == 0 and dq == 0:
                    continue
                p, q = cp + dp, cq + dq
                val = evaluate(p, q)
                key = _rank(val, p, q)
                if key < best_key:
                    best_key, best, best_p, best_q = key, val, p, q
        step //= 2
    return (best_p, best_q), best


def _check_step(initial_step: int) -> int:
    s = int(initial_step)
    if s < 1 or s & (s - 1):
        raise ValueError(f"initial step must be a power of two, got {initial_step}")
    return s


def tss_search(current: Frame, ref: Frame, block_origin, block_size: int = 16,
               initial_step: int = 4, stop_threshold: Optional[float] = None,
               trace: Optional[list] = None):
    """Three-step search for one block.

    Off-frame candidates count as infinite SAD. If ``trace`` is a list, every
    evaluated candidate ``(p, q)`` is appended to it.

    Returns:
        ``((p, q), best_sad)``
    """
    x, y = map(int, block_origin)
    n = int(block_size)
    if not _in_frame(current.pixels.shape, x, y, n):
        raise OutOfBounds(f"block at ({x}, {y}) size {n} outside current frame")
    t = default_threshold(n) if stop_threshold is None else stop_threshold
    if t < 0:
        raise ValueError("stop threshold must be non-negative")
    return _tss(current.pixels.astype(np.int32), ref.pixels.astype(np.int32), x, y, n,
                _check_step(initial_step), t, trace)


def full_search(current: Frame, ref: Frame, block_origin, block_size: int = 16,
                max_disp: int = 7):
    """Exhaustive search over ``|p|, |q| <= max_disp`` (same tie rule as TSS).

    Returns:
        ``((p, q), best_sad)``
    """
    x, y = map(int, block_origin)
    n = int(block_size)
    if not _in_frame(current.pixels.shape, x, y, n):
        raise OutOfBounds(f"block at ({x}, {y}) size {n} outside current frame")
    h, w = ref.pixels.shape
    # clip the search window to the frame; off-frame candidates are never valid
    p_lo, p_hi = max(-max_disp, -x), min(max_disp, w - n - x)
    q_lo, q_hi = max(-max_disp, -y), min(max_disp, h - n - y)
    if p_lo > p_hi or q_lo > q_hi:
        return (0, 0), math.inf
    cur = current.pixels[y:y + n, x:x + n].astype(np.int32)
    win = ref.pixels[y + q_lo:y + q_hi + n, x + p_lo:x + p_hi + n].astype(np.int32)
    sads = np.abs(sliding_window_view(win, (n, n)) - cur).sum(axis=(2, 3))
    qq, pp = np.mgrid[q_lo:q_hi + 1, p_lo:p_hi + 1]
    order = np.lexsort((qq.ravel(), pp.ravel(), (pp * pp + qq * qq).ravel(), sads.ravel()))
    k = order[0]
    return (int(pp.ravel()[k]), int(qq.ravel()[k])), int(sads.ravel()[k])


# --------------------------------------------------------------------------
# motion field

@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-block motion vectors; ``vectors[by, bx] == (p, q)``."""

    vectors: np.ndarray
    block_size: int
    sads: Optional[np.ndarray] = None

    @property
    def blocks_y(self) -> int:
        return self.vectors.shape[0]

    @property
    def blocks_x(self) -> int:
        return self.vectors.shape[1]

    def nonzero_mask(self) -> np.ndarray:
        return np.any(self.vectors != 0, axis=2)


def compute_motion_field(current: Frame, ref: Frame, block_size: int = 16,
                         initial_step: int = 4,
                         stop_threshold: Optional[float] = None) -> MotionField:
    if current.pixels.shape != ref.pixels.shape:
        raise DimensionMismatch(
            f"frame sizes differ: {current.pixels.shape} vs {ref.pixels.shape}")
    n = int(block_size)
    if n < 1 or n > min(current.width, current.height):
        raise ValueError(f"block size {n} does not fit a {current.width}x{current.height} frame")
    step = _check_step(initial_step)
    t = default_threshold(n) if stop_threshold is None else stop_threshold

    cur = current.pixels.astype(np.int32)
    rf = ref.pixels.astype(np.int32)
    by_n = -(-current.height // n)
    bx_n = -(-current.width // n)
    vectors = np.zeros((by_n, bx_n, 2), dtype=np.int64)
    sads = np.zeros((by_n, bx_n), dtype=float)
    for by in range(by_n):
        for bx in range(bx_n):
            x, y = bx * n, by * n
            if not _in_frame(cur.shape, x, y, n):
                continue  # partial edge block
            (p, q), s = _tss(cur, rf, x, y, n, step, t)
            vectors[by, bx] = (p, q)
            sads[by, bx] = s
    vectors.setflags(write=False)
    sads.setflags(write=False)
    return MotionField(vectors=vectors, block_size=n, sads=sads)


# --------------------------------------------------------------------------
# grouping

@dataclass(frozen=True)
class Detection:
    """A connected group of moving blocks.

    Attributes:
        centroid: Mean of member block centres, ``(x, y)`` in pixels.
        block_count: Number of member blocks.
        bbox: Block-aligned ``(x0, y0, x1, y1)``, end-exclusive, in pixels.
        mean_vector: Average search vector ``(p, q)`` over member blocks.
        blocks: Member ``(by, bx)`` grid indices in raster order.
    """

    centroid: tuple[float, float]
    block_count: int
    bbox: tuple[int, int, int, int]
    mean_vector: tuple[float, float]
    blocks: tuple[tuple[int, int], ...] = field(default=(), compare=False, repr=False)

    @property
    def mean_motion(self) -> tuple[float, float]:
        """Apparent region displacement from reference to current frame."""
        return (-self.mean_vector[0] + 0.0, -self.mean_vector[1] + 0.0)

    def intersects(self, box) -> bool:
        x0, y0, x1, y1 = self.bbox
        bx0, by0, bx1, by1 = box
        return x0 < bx1 and bx0 < x1 and y0 < by1 and by0 < y1


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def extract_objects(field: MotionField, min_region_blocks: int = 3) -> list[Detection]:
    """8-connected groups of non-zero blocks with at least ``min_region_blocks`` members."""
    if min_region_blocks < 1:
        raise ValueError("min_region_blocks must be >= 1")
    labels, count = ndimage.label(field.nonzero_mask(), structure=_EIGHT_CONNECTED)
    n = field.block_size
    out = []
    for lab in range(1, count + 1):
        rows, cols = np.nonzero(labels == lab)
        if rows.size < min_region_blocks:
            continue
        cx = float(np.mean(cols * n + n / 2.0))
        cy = float(np.mean(rows * n + n / 2.0))
        vecs = field.vectors[rows, cols].astype(float)
        out.append(Detection(
            centroid=(cx, cy),
            block_count=int(rows.size),
            bbox=(int(cols.min() * n), int(rows.min() * n),
                  int((cols.max() + 1) * n), int((rows.max() + 1) * n)),
            mean_vector=(float(vecs[:, 0].mean()), float(vecs[:, 1].mean())),
            blocks=tuple(zip(rows.tolist(), cols.tolist())),
        ))
    return out


def detect(current: Frame, ref: Frame, block_size: int = 16, initial_step: int = 4,
           stop_threshold: Optional[float] = None, min_region_blocks: int = 3):
    field_ = compute_motion_field(current, ref, block_size, initial_step, stop_threshold)
    return field_, extract_objects(field_, min_region_blocks)


# --------------------------------------------------------------------------
# temporal consistency

def _persistent_chains(history: Sequence[Sequence[Detection]], block_size: int):
    """Chains of detections linked backwards through every frame of ``history``.

    Each chain is a list of indices, oldest frame first. A detection links to
    the nearest detection of the previous frame whose centroid lies within one
    block size.
    """
    chains = []
    newest = len(history) - 1
    for j in range(len(history[newest])):
        chain = [j]
        for k in range(newest, 0, -1):
            cx, cy = history[k][chain[-1]].centroid
            best, best_d = None, math.inf
            for i, d in enumerate(history[k - 1]):
                dist = math.hypot(d.centroid[0] - cx, d.centroid[1] - cy)
                if dist <= block_size and dist < best_d:
                    best, best_d = i, dist
            if best is None:
                break
            chain.append(best)
        else:
            chains.append(chain[::-1])
    return chains


def _net_displacement(history, chain) -> float:
    dx = sum(history[k][i].mean_motion[0] for k, i in enumerate(chain))
    dy = sum(history[k][i].mean_motion[1] for k, i in enumerate(chain))
    return math.hypot(dx, dy)


def temporal_consistency_filter(history: Sequence[Sequence[Detection]],
                                block_size: int = 16) -> list[Detection]:
    """Drop detections of the newest frame that lack consistent movement.

    ``history`` holds the detections of the last ``w`` frame pairs, oldest
    first. A newest-frame detection survives only if it can be linked back
    through all ``w`` frames and the summed region motion along that chain
    exceeds half a block.
    """
    if len(history) < 2:
        raise ValueError("temporal window must span at least 2 frames")
    keep = set()
    for chain in _persistent_chains(history, block_size):
        if _net_displacement(history, chain) > block_size / 2.0:
            keep.add(chain[-1])
    return [d for j, d in enumerate(history[-1]) if j in keep]


def filter_sequence(per_frame: Sequence[Sequence[Detection]], window: int = 3,
                    block_size: int = 16) -> list[list[Detection]]:
    """Offline form of :func:`temporal_consistency_filter`.

    A detection is kept if it belongs to a passing chain in any window that
    contains its frame.
    """
    if window < 2:
        raise ValueError("temporal window must span at least 2 frames")
    keep = [set() for _ in per_frame]
    for end in range(window - 1, len(per_frame)):
        start = end - window + 1
        hist = per_frame[start:end + 1]
        for chain in _persistent_chains(hist, block_size):
            if _net_displacement(hist, chain) > block_size / 2.0:
                for k, i in enumerate(chain):
                    keep[start + k].add(i)
    return [[d for i, d in enumerate(dets) if i in keep[k]]
            for k, dets in enumerate(per_frame)]
