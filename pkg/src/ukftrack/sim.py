"""Monte-Carlo comparison of the UKF and the linear KF on a turning path.

A single object follows a straight-turn-straight path; its positions are
corrupted by Gaussian noise of several levels and both filters track the
noisy positions with the same constant-acceleration model. Every trial draws
its noise from a generator keyed on ``(seed, trial)``, and the standard
normal draws are shared across noise levels (common random numbers), so
results do not depend on execution order and the sigma sweep is smooth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .filters import GaussianState, kf_predict, kf_update, ukf_predict, ukf_update
from .motion_models import (
    MultiObjectLayout,
    constant_acceleration_model,
    default_noise,
    initial_covariance,
)
from .ut_core import UTConfig, compute_weights

FILTERS = ("UKF", "KF")
TRIAL_COLUMNS = ("filter", "sigma", "trial", "mse", "rmse")
PATH_COLUMNS = ("frame", "true_x", "true_y", "meas_x", "meas_y", "ukf_x", "ukf_y")


class LengthMismatch(ValueError):
    """Estimated and true paths have different lengths."""


@dataclass(frozen=True)
class PathSpec:
    """Straight segment, constant-rate turn, straight segment.

    Attributes:
        segments: Frame counts of the lead-in, turn and lead-out segments.
        speed: Pixels per frame, constant along the whole path.
        turn_deg: Total heading change over the turn, counterclockwise in
            the ``(x, y)`` plane.
        start: Position before the first frame.
        heading_deg: Initial heading.
    """

    segments: tuple[int, int, int] = (50, 20, 50)
    speed: float = 2.0
    turn_deg: float = 90.0
    start: tuple[float, float] = (0.0, 0.0)
    heading_deg: float = 0.0

    def __post_init__(self):
        if len(self.segments) != 3 or any(int(n) != n or n < 0 for n in self.segments):
            raise ValueError(f"segments must be three non-negative ints, got {self.segments}")
        if sum(self.segments) < 1:
            raise ValueError("path needs at least one frame")
        if not math.isfinite(self.speed) or self.speed < 0:
            raise ValueError(f"speed must be finite and non-negative, got {self.speed}")
        if self.segments[1] == 0 and self.turn_deg != 0:
            raise ValueError("a non-zero turn needs at least one turn frame")

    @property
    def n_frames(self) -> int:
        return int(sum(self.segments))


@dataclass(frozen=True)
class Scenario:
    path: PathSpec = field(default_factory=PathSpec)
    sigma_levels: tuple[float, ...] = (1.0, 3.0, 5.0, 10.0)
    trials: int = 100
    seed: int = 20240101
    alpha: float = 1.0
    q: float = 0.05
    init_sigma_v: float = 2.0
    init_sigma_a: float = 1.0
    # which run is kept for the path overlay
    path_sigma: float = 3.0
    path_trial: int = 0

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError(f"trials must be a positive integer, got {self.trials}")
        if not self.sigma_levels or any(not (s > 0 and math.isfinite(s)) for s in self.sigma_levels):
            raise ValueError(f"sigma levels must be positive, got {self.sigma_levels}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.q < 0:
            raise ValueError("q must be non-negative")
        if not 0 <= self.path_trial < self.trials:
            raise ValueError("path_trial out of range")
        UTConfig(self.alpha)


@dataclass(frozen=True)
class TrialError:
    filter: str
    sigma: float
    trial: int
    mse: float
    rmse: float


@dataclass(frozen=True)
class Aggregate:
    filter: str
    sigma: float
    mean_rmse: float
    se_rmse: float
    mean_mse: float
    se_mse: float


@dataclass(frozen=True)
class PathTrace:
    sigma: float
    trial: int
    truth: np.ndarray
    measurements: np.ndarray
    ukf: np.ndarray


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    trial_seeds: tuple[tuple[int, int], ...]
    trials: tuple[TrialError, ...]
    aggregates: tuple[Aggregate, ...]
    path: PathTrace

    def aggregate(self, filt: str, sigma: float) -> Aggregate:
        for a in self.aggregates:
            if a.filter == filt and a.sigma == sigma:
                return a
        raise KeyError((filt, sigma))

    def mean_rmse(self, filt: str) -> np.ndarray:
        return np.array([self.aggregate(filt, s).mean_rmse for s in self.scenario.sigma_levels])


def headings(path: PathSpec) -> np.ndarray:
    """Per-frame heading in radians."""
    n1, n2, n3 = path.segments
    h0 = math.radians(path.heading_deg)
    turn = math.radians(path.turn_deg)
    mid = h0 + turn * np.arange(1, n2 + 1) / n2 if n2 else np.empty(0)
    return np.concatenate([np.full(n1, h0), mid, np.full(n3, h0 + turn)])


def gen_turning_path(path: PathSpec | None = None) -> np.ndarray:
    """True positions after each frame, shape ``(n_frames, 2)``.

    Each frame moves ``speed`` pixels along that frame's heading; the turn
    advances the heading by an equal amount every turn frame.
    """
    path = path or PathSpec()
    h = headings(path)
    steps = path.speed * np.column_stack([np.cos(h), np.sin(h)])
    return np.asarray(path.start, dtype=float) + np.cumsum(steps, axis=0)


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    """PCG64 stream for one trial; the ziggurat normal sampler is used throughout."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trial])))


def add_noise(path, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Independent zero-mean Gaussian noise per axis and frame."""
    if not sigma >= 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    path = np.asarray(path, dtype=float)
    return path + sigma * rng.standard_normal(path.shape)


def tracking_error(estimated, truth) -> tuple[float, float]:
    """Mean squared Euclidean position error and its square root."""
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise LengthMismatch(f"estimated shape {est.shape} != truth shape {tru.shape}")
    if est.shape[0] == 0:
        raise LengthMismatch("empty path")
    mse = float(np.mean(np.sum((est - tru) ** 2, axis=1)))
    return mse, math.sqrt(mse)


def _filter_setup(scenario: Scenario, sigma: float):
    layout = MultiObjectLayout(1)
    model = constant_acceleration_model(layout)
    noise = default_noise(layout, scenario.q, sigma)
    cov0 = initial_covariance(layout, sigma, scenario.init_sigma_v, scenario.init_sigma_a)
    return layout, model, noise, cov0


def _initial_state(first_meas, cov0) -> GaussianState:
    return GaussianState(np.array([first_meas[0], 0.0, 0.0, first_meas[1], 0.0, 0.0]), cov0)


def run_filters(measurements, scenario: Scenario, sigma: float) -> dict[str, np.ndarray]:
    """Track ``measurements`` with both filters; returns position estimates.

    Both start from the first measurement with zero velocity and
    acceleration; the first frame's estimate is that initial position.
    """
    meas = np.asarray(measurements, dtype=float)
    _, model, noise, cov0 = _filter_setup(scenario, sigma)
    w = compute_weights(6, UTConfig(scenario.alpha))
    ukf = kf = _initial_state(meas[0], cov0)
    out = {name: np.empty_like(meas) for name in FILTERS}
    out["UKF"][0] = out["KF"][0] = meas[0]
    for n in range(1, meas.shape[0]):
        pred, _ = ukf_predict(ukf, model, noise, w)
        ukf = ukf_update(pred, model, noise, w, meas[n])
        kf = kf_update(kf_predict(kf, model, noise), model, noise, meas[n])
        out["UKF"][n] = ukf.mean[[0, 3]]
        out["KF"][n] = kf.mean[[0, 3]]
    return out


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se


def run_comparison(scenario: Scenario | None = None) -> ScenarioResult:
    scenario = scenario or Scenario()
    truth = gen_turning_path(scenario.path)
    errors: list[TrialError] = []
    trace = None
    for sigma in scenario.sigma_levels:
        for t in range(scenario.trials):
            meas = add_noise(truth, sigma, trial_generator(scenario.seed, t))
            est = run_filters(meas, scenario, sigma)
            for name in FILTERS:
                mse, rmse = tracking_error(est[name], truth)
                errors.append(TrialError(name, float(sigma), t, mse, rmse))
            if sigma == scenario.path_sigma and t == scenario.path_trial:
                trace = PathTrace(float(sigma), t, truth, meas, est["UKF"])
    if trace is None:
        meas = add_noise(truth, scenario.path_sigma,
                         trial_generator(scenario.seed, scenario.path_trial))
        trace = PathTrace(float(scenario.path_sigma), scenario.path_trial, truth, meas,
                          run_filters(meas, scenario, scenario.path_sigma)["UKF"])

    aggs = []
    for name in FILTERS:
        for sigma in scenario.sigma_levels:
            rows = [e for e in errors if e.filter == name and e.sigma == sigma]
            m_r, se_r = _mean_se([e.rmse for e in rows])
            m_m, se_m = _mean_se([e.mse for e in rows])
            aggs.append(Aggregate(name, float(sigma), m_r, se_r, m_m, se_m))
    seeds = tuple((scenario.seed, t) for t in range(scenario.trials))
    return ScenarioResult(scenario, seeds, tuple(errors), tuple(aggs), trace)


def velocity_curves(track_rows) -> dict[int, np.ndarray]:
    """Per-track velocity curves from a track table.

    ``track_rows`` are rows ``(frame, id, x, y, vx, vy, ...)`` as exported by
    the tracker (numbers or their CSV strings). Returns, per id, an array of
    ``(frame, vx, vy)`` rows in frame order.
    """
    curves: dict[int, list] = {}
    for row in track_rows:
        frame, tid = int(row[0]), int(row[1])
        curves.setdefault(tid, []).append((frame, float(row[4]), float(row[5])))
    return {tid: np.array(sorted(v)) for tid, v in sorted(curves.items())}


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_trials_csv(path, result: ScenarioResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for e in result.trials:
            w.writerow([e.filter, _fmt(e.sigma), e.trial, _fmt(e.mse), _fmt(e.rmse)])


def write_path_csv(path, trace: PathTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for i in range(trace.truth.shape[0]):
            row = [*trace.truth[i], *trace.measurements[i], *trace.ukf[i]]
            w.writerow([i] + [_fmt(float(v)) for v in row])


def format_report(result: ScenarioResult) -> str:
    """Plain-text table: one row per (filter, sigma) plus the scenario."""
    sc = result.scenario
    lines = ["# tracking error on the turning path",
             f"# trials={sc.trials} seed={sc.seed}",
             f"# scenario={asdict(sc)}",
             f"{'filter':<6} {'sigma':>10} {'mean_rmse':>12} {'se_rmse':>12} "
             f"{'mean_mse':>14} {'se_mse':>14}"]
    for a in result.aggregates:
        lines.append(f"{a.filter:<6} {a.sigma:>10.6f} {a.mean_rmse:>12.6f} {a.se_rmse:>12.6f} "
                     f"{a.mean_mse:>14.6f} {a.se_mse:>14.6f}")
    return "\n".join(lines) + "\n"


def write_report(path, result: ScenarioResult) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(result))
