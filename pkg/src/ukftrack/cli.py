"""Command-line entry point.

Workflows: ``detect``, ``track``, ``simulate``, ``compare``, plus ``synth``
which writes demo PGM sequences with known ground truth.

Parameters come from built-in defaults, then an INI file (``--config``),
then command-line flags; later sources win. The resolved configuration is
written to ``<out>/config.ini`` and can be fed back with ``--config`` to
reproduce a run.

Exit codes: 0 ok, 2 input/output failure, 3 invalid configuration,
4 no objects found to initialise tracking.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import detector as det
from . import sim, synthetic
from .detector import Detection, DimensionMismatch, PGMError
from .tracker import EmptyDetections, TrackerConfig, format_value, run_sequence, summarize, write_track_table

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_EMPTY_INIT = 4

WORKFLOWS = ("detect", "track", "simulate", "compare", "synth")
DETECTION_COLUMNS = ("frame", "region", "centroid_x", "centroid_y", "block_count", "mean_p", "mean_q")
FIELD_COLUMNS = ("frame", "block_x", "block_y", "p", "q", "sad")
AGGREGATE_COLUMNS = ("filter", "sigma", "mean_rmse", "se_rmse", "mean_mse", "se_mse")


class ConfigError(ValueError):
    pass


class InputError(OSError):
    pass


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _opt_str(s: str) -> Optional[str]:
    return None if s.strip().lower() in ("", "none") else s.strip()


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(" ", "").split(",") if v)


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(" ", "").split(",") if v)


@dataclass(frozen=True)
class Param:
    section: str
    key: str
    parse: Callable[[str], Any]
    default: str
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


# every setting, with its INI section and textual default
PARAMS = (
    Param("run", "input", _opt_str, "", "input directory of PGM frames"),
    Param("run", "out", str, "out", "output directory"),
    Param("run", "seed", int, "20240101", "64-bit seed"),
    Param("detector", "block_size", int, "16", "block size in pixels"),
    Param("detector", "initial_step", int, "4", "first three-step-search step size"),
    Param("detector", "stop_threshold", _opt_float, "auto", "early-stop SAD threshold (auto: 2*block^2)"),
    Param("detector", "min_region_blocks", int, "3", "smallest connected region kept"),
    Param("detector", "temporal_window", int, "3", "frame pairs in the consistency window (1 disables)"),
    Param("detector", "dump_field", _bool, "false", "also write the per-block motion field"),
    Param("filter", "alpha", float, "1.0", "unscented transform spread"),
    Param("tracker", "q", float, "0.05", "tracker process noise"),
    Param("tracker", "sigma_m", float, "2.0", "tracker measurement noise std (px)"),
    Param("tracker", "gate_radius", _opt_float, "auto", "association gate (auto: 2*block + |v|*dt)"),
    Param("tracker", "init_sigma_p", _opt_float, "auto", "initial position std (auto: block size)"),
    Param("tracker", "init_sigma_v", float, "2.0", "initial velocity std"),
    Param("tracker", "init_sigma_a", float, "1.0", "initial acceleration std"),
    Param("tracker", "initial", _opt_str, "", "CSV of initial locations x,y[,vx,vy]"),
    Param("sim", "sigma_levels", _float_list, "1,3,5,10", "measurement noise levels"),
    Param("sim", "trials", int, "100", "Monte-Carlo trials per level"),
    Param("sim", "segments", _int_list, "50,20,50", "straight,turn,straight frame counts"),
    Param("sim", "speed", float, "2.0", "path speed (px/frame)"),
    Param("sim", "turn_deg", float, "90.0", "total turn angle"),
    Param("sim", "sim_q", float, "0.05", "process noise of both filters"),
    Param("sim", "path_sigma", float, "3.0", "noise level kept for the path overlay"),
    Param("sim", "path_trial", int, "0", "trial kept for the path overlay"),
    Param("synth", "scene", str, "square", "demo scene: square or crossing"),
    Param("synth", "frames", int, "40", "number of frames to write"),
)
_BY_KEY = {p.key: p for p in PARAMS}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ukftrack", description=__doc__.splitlines()[0])
    ap.add_argument("workflow", choices=WORKFLOWS)
    ap.add_argument("--config", help="INI file with [run]/[detector]/[filter]/[tracker]/[sim]/[synth]")
    for p in PARAMS:
        ap.add_argument(p.flag, dest=p.key, default=None, help=f"{p.help} (default {p.default!r})")
    return ap


def resolve(args: argparse.Namespace) -> tuple[dict[str, Any], dict[str, str]]:
    """Merge defaults, config file and flags.

    Returns:
        ``(values, raw)``: parsed values and their textual form.
    """
    raw = {p.key: p.default for p in PARAMS}
    if args.config:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(args.config) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise InputError(f"{args.config}: {exc.strerror or exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        for section in cp.sections():
            for key, value in cp.items(section):
                p = _BY_KEY.get(key)
                if p is None or p.section != section:
                    raise ConfigError(f"{args.config}: unknown setting [{section}] {key}")
                raw[key] = value
    for p in PARAMS:
        v = getattr(args, p.key)
        if v is not None:
            raw[p.key] = v
    values = {}
    for p in PARAMS:
        try:
            values[p.key] = p.parse(raw[p.key])
        except ValueError as exc:
            raise ConfigError(f"{p.key}: {exc}") from exc
    return values, raw


def write_config(path: Path, raw: dict[str, str]) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    for p in PARAMS:
        if not cp.has_section(p.section):
            cp.add_section(p.section)
        cp.set(p.section, p.key, str(raw[p.key]))
    with open(path, "w") as fh:
        cp.write(fh)


def tracker_config(v: dict[str, Any]) -> TrackerConfig:
    return TrackerConfig(
        block_size=v["block_size"], initial_step=v["initial_step"],
        stop_threshold=v["stop_threshold"], min_region_blocks=v["min_region_blocks"],
        alpha=v["alpha"], q=v["q"], sigma_m=v["sigma_m"], gate_radius=v["gate_radius"],
        init_sigma_p=v["init_sigma_p"], init_sigma_v=v["init_sigma_v"],
        init_sigma_a=v["init_sigma_a"])


def scenario(v: dict[str, Any]) -> sim.Scenario:
    return sim.Scenario(
        path=sim.PathSpec(segments=v["segments"], speed=v["speed"], turn_deg=v["turn_deg"]),
        sigma_levels=v["sigma_levels"], trials=v["trials"], seed=v["seed"],
        alpha=v["alpha"], q=v["sim_q"], path_sigma=v["path_sigma"], path_trial=v["path_trial"])


def _validate_detector(v: dict[str, Any]) -> None:
    if v["block_size"] < 1:
        raise ConfigError("block_size must be positive")
    if v["initial_step"] < 1 or v["initial_step"] & (v["initial_step"] - 1):
        raise ConfigError("initial_step must be a power of two")
    if v["min_region_blocks"] < 1:
        raise ConfigError("min_region_blocks must be positive")
    if v["temporal_window"] < 1:
        raise ConfigError("temporal_window must be at least 1")


def _load_input(v: dict[str, Any]) -> list[det.Frame]:
    if v["input"] is None:
        raise ConfigError("--input is required for this workflow")
    src = Path(v["input"])
    if not src.is_dir():
        raise InputError(f"{src}: not a directory")
    frames = det.load_frames(src)
    if len(frames) < 2:
        raise InputError(f"{src}: need at least 2 PGM frames, found {len(frames)}")
    shape = frames[0].pixels.shape
    for path, f in zip(det.list_frames(src), frames):
        if f.pixels.shape != shape:
            raise InputError(f"{path}: size {f.pixels.shape} differs from first frame {shape}")
    return frames


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def cmd_detect(v: dict[str, Any], out: Path) -> int:
    _validate_detector(v)
    frames = _load_input(v)
    per_frame, fields = [], []
    for k in range(1, len(frames)):
        field_, dets = det.detect(frames[k], frames[k - 1], v["block_size"], v["initial_step"],
                                  v["stop_threshold"], v["min_region_blocks"])
        per_frame.append(dets)
        fields.append(field_)
    if v["temporal_window"] > 1:
        per_frame = det.filter_sequence(per_frame, v["temporal_window"], v["block_size"])
    with open(out / "detections.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(DETECTION_COLUMNS)
        for k, dets in enumerate(per_frame, start=1):
            for r, d in enumerate(dets):
                w.writerow([k, r] + [format_value(float(x)) for x in d.centroid]
                           + [d.block_count] + [format_value(float(x)) for x in d.mean_vector])
    if v["dump_field"]:
        with open(out / "motion_field.csv", "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(FIELD_COLUMNS)
            for k, f in enumerate(fields, start=1):
                for by in range(f.blocks_y):
                    for bx in range(f.blocks_x):
                        p, q = f.vectors[by, bx]
                        w.writerow([k, bx, by, int(p), int(q), format_value(float(f.sads[by, bx]))])
    return EXIT_OK


def read_initial(path) -> list[Detection]:
    """Initial locations: CSV with header ``x,y`` and optional ``vx,vy``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    out = []
    for row in rows:
        try:
            x, y = float(row["x"]), float(row["y"])
            vx, vy = float(row.get("vx") or 0.0), float(row.get("vy") or 0.0)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: bad initial-location row {row}") from exc
        if not all(map(math.isfinite, (x, y, vx, vy))):
            raise ConfigError(f"{path}: non-finite initial location")
        out.append(Detection((x, y), 0, (int(x), int(y), int(x), int(y)), (-vx + 0.0, -vy + 0.0)))
    return out


def cmd_track(v: dict[str, Any], out: Path) -> int:
    _validate_detector(v)
    try:
        cfg = tracker_config(v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    initial = read_initial(v["initial"]) if v["initial"] else None
    frames = _load_input(v)
    tracker = run_sequence(frames, cfg, initial)
    write_track_table(out / "tracks.csv", tracker.export())
    s = summarize(tracker)
    with open(out / "summary.txt", "w") as fh:
        fh.write(f"frames {s['frames']}\n")
        fh.write(f"tracks {s['tracks']}\n")
        for tid, n in sorted(s["occluded_frames"].items()):
            fh.write(f"track {tid} occluded_frames {n}\n")
    return EXIT_OK


def _scenario_or_config_error(v) -> sim.Scenario:
    try:
        return scenario(v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(v: dict[str, Any], out: Path) -> int:
    sc = _scenario_or_config_error(v)
    truth = sim.gen_turning_path(sc.path)
    for sigma in sc.sigma_levels:
        meas = sim.add_noise(truth, sigma, sim.trial_generator(sc.seed, sc.path_trial))
        est = sim.run_filters(meas, sc, sigma)
        trace = sim.PathTrace(sigma, sc.path_trial, truth, meas, est["UKF"])
        sim.write_path_csv(out / f"path_sigma{sigma:g}.csv", trace)
    return EXIT_OK


def cmd_compare(v: dict[str, Any], out: Path) -> int:
    sc = _scenario_or_config_error(v)
    result = sim.run_comparison(sc)
    sim.write_report(out / "report.txt", result)
    sim.write_trials_csv(out / "trials.csv", result)
    sim.write_path_csv(out / "path.csv", result.path)
    with open(out / "aggregates.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(AGGREGATE_COLUMNS)
        for a in result.aggregates:
            w.writerow([a.filter] + [format_value(float(x)) for x in
                                     (a.sigma, a.mean_rmse, a.se_rmse, a.mean_mse, a.se_mse)])
    return EXIT_OK


def cmd_synth(v: dict[str, Any], out: Path) -> int:
    """Demo sequence plus ``truth.csv`` (frame, id, x, y of object centres)."""
    rng = np.random.default_rng(v["seed"])
    if v["scene"] == "square":
        bg, sq = synthetic.square_scene(rng, width=512, start=(17, 32))
        items = [sq]
    elif v["scene"] == "crossing":
        bg, items = synthetic.crossing_scene(rng)
    else:
        raise ConfigError(f"unknown scene {v['scene']!r}")
    if v["frames"] < 2:
        raise ConfigError("frames must be at least 2")
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    width = len(str(v["frames"] - 1))
    for t, frame in enumerate(synthetic.render_sequence(bg, items, v["frames"])):
        det.write_pgm(frames_dir / f"frame_{t:0{width}d}.pgm", frame)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("frame", "id", "x", "y"))
        for t in range(v["frames"]):
            for i, item in enumerate(items):
                w.writerow([t, i] + [format_value(float(c)) for c in item.center(t)])
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "track": cmd_track,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values, raw = resolve(args)
        out = Path(values["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_config(out / "config.ini", raw)
        return COMMANDS[args.workflow](values, out)
    # the detector and tracker errors subclass ValueError, so order matters
    except EmptyDetections as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_INIT
    except (PGMError, DimensionMismatch, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
