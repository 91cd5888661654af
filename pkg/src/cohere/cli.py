"""Command-line entry points.

Every command is a pure function of (inputs, config, seed): rerunning with
the same arguments writes byte-identical files, regardless of --threads.
Log level comes from the COHERE_LOG environment variable; logs go to
stderr so stdout and all output files stay deterministic.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .assoc import Tracker, TrackSet
from .cluster import identify_instances
from .config import (PipelineConfig, dumps_scene_spec, load_pipeline_config)
from .errors import CohereError
from .ground import segment_ground
from .io import (read_frames_dir, read_ground_truth, write_ground_truth,
                 write_scene_dir)
from .plots import length_histogram_svg, track_overlay_svg
from .pretrain import (default_sim_spec, loss_csv, run_gradient_checks,
                       run_pretrain_sim)
from .synth import generate, score_tracks

log = logging.getLogger("cohere")


def _setup_logging() -> None:
    name = os.environ.get("COHERE_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_config(args) -> PipelineConfig:
    if args.config is None:
        return PipelineConfig()
    return load_pipeline_config(args.config)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_golden_manifest(out: Path) -> None:
    """Checksum manifest over every file in the output directory."""
    names = sorted(p.name for p in out.iterdir()
                   if p.is_file() and p.name != "golden.sha256")
    lines = [f"{hashlib.sha256((out / n).read_bytes()).hexdigest()}  {n}"
             for n in names]
    (out / "golden.sha256").write_text("\n".join(lines) + "\n",
                                       encoding="utf-8")


def _finish(args, out: Path) -> int:
    if args.golden:
        _write_golden_manifest(out)
    return 0


def _scene_spec(cfg: PipelineConfig, seed: int):
    return cfg.scene if cfg.scene is not None else default_sim_spec(seed)


# ------------------------------------------------------------------- commands

def cmd_synth_gen(args) -> int:
    cfg = _load_config(args)
    spec = _scene_spec(cfg, args.seed)
    out = _out_dir(args)
    scene = generate(spec)
    write_scene_dir(out, scene.frames)
    write_ground_truth(out / "gt.json", scene.gt)
    (out / "scene.json").write_text(dumps_scene_spec(spec), encoding="utf-8")
    n_points = sum(len(f.merged_points) for f in scene.frames)
    print(f"synth-gen: {spec.frames} frames, {len(spec.objects)} objects, "
          f"{n_points} points -> {out}")
    return _finish(args, out)


def _cluster_frame(frame, cfg: PipelineConfig):
    return identify_instances(frame, segment_ground(frame, cfg.ground),
                              cfg.cluster)


def cmd_track(args) -> int:
    cfg = _load_config(args)
    frames = read_frames_dir(args.input)
    log.info("tracking %d frames with %d threads", len(frames), args.threads)
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(lambda f: _cluster_frame(f, cfg), frames))
    else:
        results = [_cluster_frame(f, cfg) for f in frames]

    tracker = Tracker(match_radius=cfg.match_radius,
                      history_length=cfg.history_length)
    for frame, result in zip(frames, results):
        tracker.step(frame.index, result, frame.frame_pose)
    tracks = tracker.result()

    out = _out_dir(args)
    (out / "tracks.jsonl").write_text(tracks.to_jsonl(), encoding="utf-8")
    lengths = {}
    for track in tracks.tracks:
        lengths[str(len(track.entries))] = lengths.get(str(len(track.entries)), 0) + 1
    summary = {
        "frames": len(frames),
        "points": sum(len(f.merged_points) for f in frames),
        "instances_per_frame": [r.n_clusters for r in results],
        "tracks": tracks.n_tracks,
        "track_length_counts": lengths,
    }
    (out / "summary.json").write_text(_dump_json(summary), encoding="utf-8")
    print(f"track: {len(frames)} frames -> {tracks.n_tracks} tracks -> {out}")
    return _finish(args, out)


def cmd_pretrain_sim(args) -> int:
    cfg = _load_config(args)
    spec = _scene_spec(cfg, args.seed)
    out = _out_dir(args)

    if args.gradcheck:
        code = _run_gradcheck(args.seed, args.trials, out)
        if code != 0:
            return code

    res = run_pretrain_sim(spec, args.steps, args.seed,
                           config=cfg.pretrain_config(), grid=cfg.grid,
                           rig=cfg.rig, ground_params=cfg.ground,
                           cluster_params=cfg.cluster,
                           match_radius=cfg.match_radius)
    (out / "loss.csv").write_text(loss_csv(res.rows), encoding="utf-8")
    params = {
        "channels": res.params.channels,
        "online": {"weight": res.params.weight.tolist(),
                   "bias": res.params.bias.tolist()},
        "target": {"weight": res.target_params.weight.tolist(),
                   "bias": res.target_params.bias.tolist()},
    }
    (out / "params.json").write_text(_dump_json(params), encoding="utf-8")
    (out / "banks.json").write_text(_dump_json(res.banks.to_json_obj()),
                                    encoding="utf-8")
    (out / "tracks.jsonl").write_text(res.tracks.to_jsonl(), encoding="utf-8")

    losses = res.losses
    if len(losses) and not np.isfinite(losses).all():
        print("error: non-finite loss encountered", file=sys.stderr)
        return 1
    if len(losses):
        print(f"pretrain-sim: {args.steps} steps, loss "
              f"{losses[0]:.6f} -> {losses[-1]:.6f} -> {out}")
    else:
        print(f"pretrain-sim: 0 steps, wrote initialization -> {out}")
    return _finish(args, out)


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    pred_text = Path(args.pred).read_text(encoding="utf-8")
    tracks = TrackSet.from_jsonl(pred_text)
    gt = read_ground_truth(args.gt)

    entry_frames = [e.frame for t in tracks.tracks for e in t.entries]
    if entry_frames and (max(entry_frames) >= gt.n_frames
                         or min(entry_frames) < 0):
        raise CohereError(
            f"frame range mismatch: predictions cover frames "
            f"{min(entry_frames)}..{max(entry_frames)} but ground truth "
            f"covers 0..{gt.n_frames - 1}")

    metrics = score_tracks(tracks, gt)
    out = _out_dir(args)
    (out / "metrics.json").write_text(_dump_json(metrics), encoding="utf-8")
    (out / "overlay.svg").write_text(track_overlay_svg(tracks, gt),
                                     encoding="utf-8")
    (out / "lengths.svg").write_text(length_histogram_svg(tracks),
                                     encoding="utf-8")
    print(f"eval: purity={metrics['purity']:.4f} "
          f"recall={metrics['recall']:.4f} "
          f"id_switches={metrics['id_switches']} -> {out}")
    return _finish(args, out)


def _run_gradcheck(seed: int, trials: int, out: Path | None) -> int:
    checks = run_gradient_checks(seed, trials=trials)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"trial {c.trial}: M={c.n_instances} N_B={c.n_background} "
              f"N_F={c.n_foreground} tau={c.temperature:.4f} "
              f"max_rel_err={c.max_rel_error:.3e} {status}")
    all_passed = all(c.passed for c in checks)
    if out is not None:
        report = {
            "trials": trials,
            "tolerance": checks[0].tolerance if checks else 1e-5,
            "all_passed": all_passed,
            "results": [{
                "trial": c.trial, "n_instances": c.n_instances,
                "n_background": c.n_background,
                "n_foreground": c.n_foreground,
                "temperature": c.temperature,
                "max_rel_error": c.max_rel_error, "passed": c.passed,
            } for c in checks],
        }
        (out / "gradcheck.json").write_text(_dump_json(report),
                                            encoding="utf-8")
    if not all_passed:
        print("error: gradient check failed", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    out = _out_dir(args) if args.out else None
    code = _run_gradcheck(args.seed, args.trials, out)
    if code == 0 and out is not None and args.golden:
        _write_golden_manifest(out)
    return code


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="pipeline config JSON (defaults used if omitted)")
    common.add_argument("--seed", metavar="N", type=int, default=0,
                        help="root seed for every random stream")
    common.add_argument("--threads", metavar="N", type=int, default=1,
                        help="worker threads for per-frame stages")
    common.add_argument("--golden", action="store_true",
                        help="also write a golden.sha256 checksum manifest")

    parser = argparse.ArgumentParser(
        prog="cohere",
        description="instance correspondences from multi-sweep point clouds, "
                    "plus a simulated contrastive-pretraining core")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common],
                       help="generate a synthetic scene directory")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("track", parents=[common],
                       help="build instance tracks from a scene directory")
    p.add_argument("--input", metavar="DIR", required=True,
                   help="directory with sweep binaries and poses.jsonl")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("pretrain-sim", parents=[common],
                       help="run the simulated pretraining loop")
    p.add_argument("--out", metavar="DIR", required=True)
    p.add_argument("--steps", metavar="N", type=int, default=100)
    p.add_argument("--gradcheck", action="store_true",
                   help="verify loss gradients first; nonzero exit on failure")
    p.add_argument("--trials", metavar="N", type=int, default=50,
                   help="gradient-check trial count")
    p.set_defaults(func=cmd_pretrain_sim)

    p = sub.add_parser("eval", parents=[common],
                       help="score predicted tracks against ground truth")
    p.add_argument("--pred", metavar="PATH", required=True,
                   help="predicted tracks JSON-lines file")
    p.add_argument("--gt", metavar="PATH", required=True,
                   help="ground-truth JSON file")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of the loss gradient")
    p.add_argument("--out", metavar="DIR", default=None,
                   help="optional directory for a JSON report")
    p.add_argument("--trials", metavar="N", type=int, default=50)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CohereError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
