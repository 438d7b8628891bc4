"""Multi-object tracking with block-matching detection and an unscented Kalman filter."""

from .detector import Detection, Frame, MotionField, detect, full_search, tss_search
from .filters import GaussianState, NoiseModel, SystemModel, kf_predict, kf_update, ukf_predict, ukf_update
from .sim import Scenario, ScenarioResult, run_comparison
from .tracker import Tracker, TrackerConfig, init_tracker, run_sequence
from .ut_core import UTConfig, UTWeights, compute_sigma_points, compute_weights

__version__ = "0.1.0"

__all__ = [
    "Detection", "Frame", "MotionField", "detect", "full_search", "tss_search",
    "GaussianState", "NoiseModel", "SystemModel", "kf_predict", "kf_update",
    "ukf_predict", "ukf_update", "Scenario", "ScenarioResult", "run_comparison",
    "Tracker", "TrackerConfig", "init_tracker", "run_sequence",
    "UTConfig", "UTWeights", "compute_sigma_points", "compute_weights",
]
