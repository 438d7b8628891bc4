"""Closed-loop multi-object tracker: block-matching detection + stacked UKF.

Each frame pair runs predict -> windowed detection -> association -> update.
Predicted positions centre the detection windows; tracks that get no
measurement (or whose nearest region is shared with another track) coast on
the prediction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import detector as det
from .detector import Detection, Frame
from .filters import GaussianState, NoiseModel, SystemModel, ukf_predict, ukf_update
from .motion_models import (
    MEAS_PER_OBJ,
    MultiObjectLayout,
    ObjectKinematics,
    constant_acceleration_model,
    default_noise,
    initial_covariance,
    measure,
    pack_state,
    unpack_state,
)
from .ut_core import UTConfig, UTWeights, compute_weights

TRACKED = "tracked"
OCCLUDED = "occluded"

TRACK_COLUMNS = ("frame", "id", "x", "y", "vx", "vy", "ax", "ay", "status", "associated")


class EmptyDetections(ValueError):
    """Tracker initialisation received no objects."""


@dataclass(frozen=True)
class TrackerConfig:
    """Detector, filter and gating settings of a tracking run.

    Long occlusions call for a smaller ``q`` than the default: the coast
    extrapolates the velocity and acceleration estimates, and block-quantized
    centroids make those noisy unless the prior is close to constant
    velocity (``q=1e-6`` and ``sigma_m=5``, about the spread of a 16 px
    quantization step, hold identity through merges lasting 60+ frames).
    """

    block_size: int = 16
    initial_step: int = 4
    stop_threshold: Optional[float] = None
    min_region_blocks: int = 3
    dt: float = 1.0
    alpha: float = 1.0
    q: float = 0.05
    sigma_m: float = 2.0
    # None -> per-track 2 * block_size + |predicted velocity| * dt
    gate_radius: Optional[float] = None
    init_sigma_p: Optional[float] = None
    init_sigma_v: float = 2.0
    init_sigma_a: float = 1.0

    def __post_init__(self):
        if self.gate_radius is not None and self.gate_radius < self.block_size:
            raise ValueError("gate_radius must be at least one block size")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        UTConfig(self.alpha)

    @property
    def ut(self) -> UTConfig:
        return UTConfig(self.alpha)


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    estimate: ObjectKinematics
    detection: Optional[Detection]
    status: str
    window_center: tuple[float, float]
    gate: float


@dataclass
class Track:
    id: int
    state: GaussianState
    status: str = TRACKED
    history: list[TrackRecord] = field(default_factory=list)

    @property
    def kinematics(self) -> ObjectKinematics:
        return unpack_state(self.state.mean)[0]


def associate(predictions: Sequence, detections: Sequence[Detection],
              gate_radius) -> list[Optional[Detection]]:
    """Greedy nearest-neighbour assignment inside per-track gates.

    Args:
        predictions: Predicted ``(x, y)`` positions (or ``ObjectKinematics``).
        gate_radius: Scalar or one radius per prediction.

    Returns:
        One entry per prediction: the assigned detection, or None.
    """
    preds = [p.position if isinstance(p, ObjectKinematics) else tuple(p) for p in predictions]
    gates = ([float(gate_radius)] * len(preds) if np.isscalar(gate_radius)
             else [float(g) for g in gate_radius])
    pairs = []
    for i, (px, py) in enumerate(preds):
        for j, d in enumerate(detections):
            dist = math.hypot(d.centroid[0] - px, d.centroid[1] - py)
            if dist <= gates[i]:
                pairs.append((dist, i, j))
    pairs.sort()
    out: list[Optional[Detection]] = [None] * len(preds)
    taken = set()
    for _, i, j in pairs:
        if out[i] is None and j not in taken:
            out[i] = detections[j]
            taken.add(j)
    return out


def _window(center, radius) -> tuple[float, float, float, float]:
    return (center[0] - radius, center[1] - radius, center[0] + radius, center[1] + radius)


class Tracker:
    """Fixed-count tracker over a stacked ``6M``-dimensional state."""

    def __init__(self, state: GaussianState, layout: MultiObjectLayout,
                 cfg: TrackerConfig, frame_index: int = 1):
        self.cfg = cfg
        self.layout = layout
        self.model: SystemModel = constant_acceleration_model(layout)
        self.noise: NoiseModel = default_noise(layout, cfg.q, cfg.sigma_m)
        self.weights: UTWeights = compute_weights(layout.state_dim, cfg.ut)
        self.state = state
        self.frame_index = frame_index
        self.tracks = [Track(i, self._block(state, i)) for i in range(layout.m)]
        self.last_predicted: Optional[GaussianState] = None

    @property
    def m(self) -> int:
        return self.layout.m

    def _block(self, state: GaussianState, i: int) -> GaussianState:
        s = self.layout.object_slice(i)
        return GaussianState(state.mean[s].copy(), state.cov[s, s].copy())

    def gate_for(self, kin: ObjectKinematics) -> float:
        if self.cfg.gate_radius is not None:
            return float(self.cfg.gate_radius)
        return 2.0 * self.cfg.block_size + math.hypot(kin.vx, kin.vy) * self.layout.dt

    def predict(self) -> list[ObjectKinematics]:
        """UKF prediction of every object for the next frame."""
        predicted, _ = ukf_predict(self.state, self.model, self.noise, self.weights)
        self.last_predicted = predicted
        return unpack_state(predicted.mean)

    def step(self, current: Frame, reference: Frame) -> list[ObjectKinematics]:
        preds = self.predict()
        predicted = self.last_predicted
        gates = [self.gate_for(k) for k in preds]
        windows = [_window(k.position, g) for k, g in zip(preds, gates)]

        cfg = self.cfg
        _, found = det.detect(current, reference, cfg.block_size, cfg.initial_step,
                              cfg.stop_threshold, cfg.min_region_blocks)
        found = [d for d in found if any(d.intersects(w) for w in windows)]

        # a region reaching into the windows of several tracks may be a merge
        # of those objects; its centroid is not a measurement of either, so
        # tracks whose nearest candidate it is coast instead
        merged = {j for j, d in enumerate(found)
                  if sum(d.intersects(w) for w in windows) > 1}
        contested = set()
        for i, (k, g) in enumerate(zip(preds, gates)):
            best = None
            for j, d in enumerate(found):
                dist = math.hypot(d.centroid[0] - k.x, d.centroid[1] - k.y)
                if dist <= g and (best is None or dist < best[0]):
                    best = (dist, j)
            if best is not None and best[1] in merged:
                contested.add(i)

        free_tracks = [i for i in range(self.m) if i not in contested]
        free_dets = [d for j, d in enumerate(found) if j not in merged]
        picked = associate([preds[i].position for i in free_tracks], free_dets,
                           [gates[i] for i in free_tracks])
        assignment: list[Optional[Detection]] = [None] * self.m
        for i, d in zip(free_tracks, picked):
            assignment[i] = d

        self.state = self._update(predicted, assignment)
        self.frame_index += 1
        estimates = unpack_state(self.state.mean)
        for i, tr in enumerate(self.tracks):
            tr.state = self._block(self.state, i)
            tr.status = TRACKED if assignment[i] is not None else OCCLUDED
            tr.history.append(TrackRecord(self.frame_index, estimates[i], assignment[i],
                                          tr.status, preds[i].position, gates[i]))
        return estimates

    def _update(self, predicted: GaussianState,
                assignment: Sequence[Optional[Detection]]) -> GaussianState:
        active = [i for i, d in enumerate(assignment) if d is not None]
        if not active:
            return predicted
        layout = self.layout
        rows = np.concatenate([np.arange(MEAS_PER_OBJ * i, MEAS_PER_OBJ * (i + 1)) for i in active])
        y = np.array([c for i in active for c in assignment[i].centroid])
        h_sub = SystemModel(f=self.model.f, h=lambda x: measure(x, layout)[rows],
                            vectorized=True)
        r = self.noise.measurement_cov
        noise_sub = NoiseModel(self.noise.process_cov, r[np.ix_(rows, rows)])
        mask = np.zeros(layout.state_dim, dtype=bool)
        for i in active:
            mask[layout.object_slice(i)] = True
        return ukf_update(predicted, h_sub, noise_sub, self.weights, y, gain_mask=mask)

    def export(self) -> list[tuple]:
        rows = []
        frames = sorted({rec.frame for tr in self.tracks for rec in tr.history})
        by_track = [{rec.frame: rec for rec in tr.history} for tr in self.tracks]
        for f in frames:
            for tr, recs in zip(self.tracks, by_track):
                rec = recs.get(f)
                if rec is None:
                    continue
                k = rec.estimate
                rows.append((f, tr.id, k.x, k.y, k.vx, k.vy, k.ax, k.ay, rec.status,
                             int(rec.detection is not None)))
        return rows


def init_tracker(first_detections: Sequence[Detection], cfg: TrackerConfig | None = None,
                 frame_index: int = 1) -> Tracker:
    """Start one track per detection, velocity taken from the region motion."""
    cfg = cfg or TrackerConfig()
    if not first_detections:
        raise EmptyDetections("no moving objects found to initialise the tracker")
    layout = MultiObjectLayout(len(first_detections), cfg.dt)
    objs = [ObjectKinematics(d.centroid[0], d.mean_motion[0] / cfg.dt, 0.0,
                             d.centroid[1], d.mean_motion[1] / cfg.dt, 0.0)
            for d in first_detections]
    sigma_p = cfg.block_size if cfg.init_sigma_p is None else cfg.init_sigma_p
    cov = initial_covariance(layout, sigma_p, cfg.init_sigma_v, cfg.init_sigma_a)
    return Tracker(GaussianState(pack_state(objs), cov), layout, cfg, frame_index)


def predict_all(tracker: Tracker) -> list[ObjectKinematics]:
    return tracker.predict()


def step(tracker: Tracker, current: Frame, reference: Frame) -> list[ObjectKinematics]:
    return tracker.step(current, reference)


def export_tracks(tracker: Tracker) -> list[tuple]:
    return tracker.export()


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_track_table(path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_COLUMNS)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def run_sequence(frames: Sequence[Frame], cfg: TrackerConfig | None = None,
                 initial: Sequence[Detection] | None = None) -> Tracker:
    """Initialise on frames 0/1 and track through the rest of the sequence."""
    cfg = cfg or TrackerConfig()
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    if initial is None:
        _, initial = det.detect(frames[1], frames[0], cfg.block_size, cfg.initial_step,
                                cfg.stop_threshold, cfg.min_region_blocks)
    tracker = init_tracker(initial, cfg, frame_index=1)
    for k in range(2, len(frames)):
        tracker.step(frames[k], frames[k - 1])
    return tracker


def summarize(tracker: Tracker) -> dict:
    occluded = {tr.id: sum(rec.status == OCCLUDED for rec in tr.history) for tr in tracker.tracks}
    return {
        "frames": len({rec.frame for tr in tracker.tracks for rec in tr.history}),
        "tracks": tracker.m,
        "occluded_frames": occluded,
    }
