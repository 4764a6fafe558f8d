"""Command line: ``simulate``, ``run``, ``evaluate`` and ``bench``.

The log level is taken from ``DYNOTRACK_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig
from .evaluation import clear_mot, cloud_accuracy_completeness, static_precision, write_histograms_csv
from .io import DatasetError, read_cloud, read_jsonl
from .pipeline import CORE_STAGES, DynamicObstacleTracker, core_time, run_dataset

log = logging.getLogger("dynotrack")

LOG_ENV = "DYNOTRACK_LOG_LEVEL"
BENCH_BUDGET_MS = 50.0
HYPOTHESIS_CLASSES = ("dynamic", "person")
_TIME_TOL = 1e-6


class CommandError(RuntimeError):
    """User-facing failure; the message is printed and the exit code is 1."""


def cmd_simulate(args) -> int:
    from .simulator import SceneError, generate_dataset, load_scene

    try:
        scene = load_scene(args.scene)
    except SceneError as exc:
        raise CommandError(str(exc)) from exc
    source = args.scene if Path(args.scene).is_file() else None
    root = generate_dataset(scene, args.out, seed=args.seed, scene_source=source)
    print(f"wrote {scene.n_frames} frames of {scene.name!r} to {root}")
    return 0


def cmd_run(args) -> int:
    config = PipelineConfig.load(args.config)
    tracker = run_dataset(args.dataset, args.out, config, use_detector=not args.no_detector,
                          export_grids=args.export_grids, n_jobs=args.threads, seed=args.seed)
    n = len(tracker.results_)
    med = 1e3 * float(np.median([r.timings["total"] for r in tracker.results_])) if n else 0.0
    print(f"processed {n} frames, median {med:.1f} ms/frame; outputs in {args.out}")
    return 0


def load_hypotheses(tracks_file) -> tuple[dict, dict]:
    """``({frame: {track_id: (x, y)}}, {frame: timestamp})`` for moving-class tracks."""
    hyp, stamps = {}, {}
    for rec in read_jsonl(tracks_file):
        f = int(rec["frame"])
        stamps[f] = float(rec["timestamp"])
        frame = hyp.setdefault(f, {})
        if rec["class"] in HYPOTHESIS_CLASSES:
            frame[int(rec["track_id"])] = tuple(rec["centroid"][:2])
    return hyp, stamps


def load_ground_truth(gt_file) -> tuple[dict, dict]:
    """``({frame: {actor_id: (x, y)}}, {frame: timestamp})`` for visible actors."""
    gt, stamps = {}, {}
    for rec in read_jsonl(gt_file):
        f = int(rec["frame"])
        stamps[f] = float(rec["timestamp"])
        gt[f] = {int(a["id"]): tuple(a["centroid"][:2]) for a in rec["actors"] if a.get("centroid") is not None}
    return gt, stamps


def check_timelines(hyp_stamps: dict, gt_stamps: dict) -> None:
    extra = sorted(set(hyp_stamps) - set(gt_stamps))
    if extra:
        raise CommandError(f"tracks reference frame {extra[0]} which is absent from the ground truth")
    for f, t in hyp_stamps.items():
        if abs(t - gt_stamps[f]) > _TIME_TOL:
            raise CommandError(f"frame {f}: track timestamp {t} differs from ground truth {gt_stamps[f]}")


def cmd_evaluate(args) -> int:
    config = PipelineConfig.load(args.config)
    hyp, hyp_stamps = load_hypotheses(args.tracks)
    gt, gt_stamps = load_ground_truth(args.gt)
    check_timelines(hyp_stamps, gt_stamps)
    report = clear_mot(gt, {f: hyp.get(f, {}) for f in gt}, config.mot)
    out = {"mot": report.summary()}

    static_cloud = Path(args.static_cloud) if args.static_cloud else Path(args.tracks).with_name("static_cloud.dpc")
    static_map = Path(args.static_map) if args.static_map else Path(args.gt).with_name("static_map.dpc")
    if static_cloud.is_file() and static_map.is_file():
        m_s, m_l = read_cloud(static_cloud), read_cloud(static_map)
        out["static_precision"] = static_precision(m_s, m_l, args.error_threshold) if len(m_l) else None
        if len(m_s) and len(m_l) and args.out:
            hist = cloud_accuracy_completeness(m_s, m_l)
            Path(args.out).mkdir(parents=True, exist_ok=True)
            write_histograms_csv(Path(args.out) / "histograms.csv", hist)
            out["within_accuracy_limit"] = hist.within_limit(args.accuracy_limit)

    def fmt(v, pct=False):
        if v is None:
            return "undefined"
        return f"{100 * v:.1f}%" if pct else f"{v:.3f}"

    s = out["mot"]
    print(f"MOTA {fmt(s['mota'])}  MOTP {fmt(s['motp'])} m  "
          f"fn {fmt(s['fn_rate'], True)}  fp {fmt(s['fp_rate'], True)}  mismatches {fmt(s['mismatch_rate'], True)}  "
          f"(GT positions {s['gt_count']})")
    if "static_precision" in out:
        print(f"static precision {fmt(out['static_precision'], True)}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.json").write_text(json.dumps(out, indent=2) + "\n")
    return 0


def _bench_frames(source: str, n_frames: int):
    """Frames and camera from a dataset directory or a (shipped) scene."""
    from .io import iter_frames, load_camera
    from .simulator import load_scene, render_frame

    p = Path(source)
    if p.is_dir():
        frames = list(iter_frames(p))[:n_frames]
        return frames, load_camera(p)
    scene = load_scene(source)
    frames = [render_frame(scene, k)[0] for k in range(min(n_frames, scene.n_frames))]
    return frames, scene.camera


def cmd_bench(args) -> int:
    from .simulator import SceneError

    try:
        frames, cam = _bench_frames(args.source, args.frames)
    except SceneError as exc:
        raise CommandError(str(exc)) from exc
    if not frames:
        raise CommandError("no frames to benchmark")
    tracker = DynamicObstacleTracker(cam, PipelineConfig.load(args.config), use_detector=True, n_jobs=args.threads)
    tracker.fit(frames)
    core_ms = 1e3 * np.array([core_time(r.timings) for r in tracker.results_])
    total_ms = 1e3 * np.array([r.timings["total"] for r in tracker.results_])
    points = int(np.median([len(f.dense_cloud) for f in frames]))
    med = float(np.median(core_ms))
    print(f"{len(frames)} frames, median dense cloud {points} points")
    for stage in CORE_STAGES + ("fusion",):
        print(f"  {stage:<15}{1e3 * np.median([r.timings[stage] for r in tracker.results_]):8.2f} ms")
    print(f"core median {med:.2f} ms (budget {args.budget_ms:.0f} ms), total median {np.median(total_ms):.2f} ms")
    if med > args.budget_ms:
        print("FAIL: core processing exceeds the budget", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynotrack", description="Dynamic obstacle detection and tracking on depth clouds.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a scene into a dataset directory")
    s.add_argument("scene", help="scene JSON file or shipped scene name")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=None, help="override the scene's noise seed")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run the pipeline over a dataset")
    r.add_argument("dataset")
    r.add_argument("out")
    r.add_argument("--config")
    r.add_argument("--no-detector", action="store_true", help="skip person-detection fusion")
    r.add_argument("--export-grids", action="store_true")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--seed", type=int, default=0, help="seed for depth-map subsampling")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="CLEAR-MOT and static precision against ground truth")
    e.add_argument("tracks", help="tracks.jsonl written by run")
    e.add_argument("gt", help="gt.jsonl written by simulate")
    e.add_argument("--config")
    e.add_argument("--static-cloud")
    e.add_argument("--static-map")
    e.add_argument("--error-threshold", type=float, default=0.4)
    e.add_argument("--accuracy-limit", type=float, default=0.8)
    e.add_argument("--out", help="directory for report.json and histograms.csv")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="time the core stages and check the per-frame budget")
    b.add_argument("source", nargs="?", default="crowd-5", help="dataset directory or scene (default crowd-5)")
    b.add_argument("--frames", type=int, default=40)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--config")
    b.add_argument("--budget-ms", type=float, default=BENCH_BUDGET_MS)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CommandError, ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
