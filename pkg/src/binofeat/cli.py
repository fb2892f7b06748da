"""``binofeat`` command-line entry point.

Subcommands: prep, train, extract, track, eval, bench, plot. Settings come
from an optional YAML file (``--config``); explicit flags override it.

Exit codes: 0 ok, 1 unexpected error, 2 usage/config error, 3 missing or
unreadable dataset, 4 corrupt checkpoint, 5 tracking/evaluation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import synthetic
from .dataset_tum import (
    DatasetConfig,
    associate,
    associate_sequence,
    load_sequence,
    make_correspondences,
    read_lost_stamps,
    read_trajectory,
    sequence_intrinsics,
    write_sequence,
    write_trajectory,
)
from .descriptor_matching import write_descriptor_dump
from .detection import write_keypoints
from .errors import (
    BinofeatError,
    CheckpointError,
    EmptyBatchError,
    GeometryError,
    IngestionError,
    InsufficientOverlapError,
    TrackingFailure,
    UnsupervisedPairError,
)
from .evaluation import ate_rmse, matching_benchmark, write_ate_csv
from .extractors import BriefExtractor, NetExtractor, RandomDescriptorExtractor, shi_tomasi_keypoints
from .feature_net import NetConfig, init_params, load_params, save_params
from .odometry import TrackerConfig, read_stats_csv, stats_report, track_sequence, write_stats_csv
from .training import TrainConfig, read_loss_csv, train, write_loss_csv

log = logging.getLogger("binofeat")

EXIT_OK, EXIT_UNEXPECTED, EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT, EXIT_DOMAIN = 0, 1, 2, 3, 4, 5

# held-out synthetic pairs are drawn from a seed disjoint from the training one
BENCH_SEED_OFFSET = 12345


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    subcommand: str
    dataset: str | None
    config_path: str | None
    seed: int
    out: str | None
    net: dict = dataclasses.field(default_factory=dict)
    train: dict = dataclasses.field(default_factory=dict)
    track: dict = dataclasses.field(default_factory=dict)
    data: dict = dataclasses.field(default_factory=dict)
    extract: dict = dataclasses.field(default_factory=dict)
    synthetic: dict = dataclasses.field(default_factory=dict)


_SECTIONS = {
    "net": {"width", "height", "channels", "tiny"},
    "train": {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"},
    "track": {f.name for f in dataclasses.fields(TrackerConfig)} - {"seed"},
    "data": {"depth_scale", "max_dt", "downsample", "max_frames", "pair_gap"},
    "extract": {"threshold", "max_kp", "nms_grid", "keypoints"},
    "synthetic": {"train_pairs", "bench_pairs", "frames", "path_length"},
}


def load_config_file(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a mapping")
    for key, val in raw.items():
        if key == "seed":
            continue
        if key not in _SECTIONS:
            raise UsageError(f"config {path}: unknown section {key!r}")
        if not isinstance(val, dict):
            raise UsageError(f"config {path}: section {key!r} must be a mapping")
        bad = set(val) - _SECTIONS[key]
        if bad:
            raise UsageError(f"config {path}: unknown keys in {key!r}: {sorted(bad)}")
    return raw


def build_run_config(args) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    rc = RunConfig(args.command, getattr(args, "dataset", None), args.config, seed, getattr(args, "out", None),
                   **{s: dict(raw.get(s, {})) for s in _SECTIONS})
    if getattr(args, "tiny", False):
        rc.net["tiny"] = True
    if getattr(args, "epochs", None) is not None:
        rc.train["epochs"] = args.epochs
    if getattr(args, "max_kp", None) is not None:
        rc.extract["max_kp"] = args.max_kp
    if getattr(args, "threshold", None) is not None:
        rc.extract["threshold"] = args.threshold
    if getattr(args, "keypoints", None) is not None:
        rc.extract["keypoints"] = args.keypoints
    if getattr(args, "max_frames", None) is not None:
        rc.data["max_frames"] = args.max_frames
    if getattr(args, "downsample", None) is not None:
        rc.data["downsample"] = args.downsample
    return rc


def _train_cfg(rc: RunConfig) -> TrainConfig:
    kw = dict(rc.train)
    if "relaxed" in kw:
        kw["relaxed"] = tuple(kw["relaxed"])
    try:
        return TrainConfig(seed=rc.seed, **kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train settings: {exc}") from exc


def _track_cfg(rc: RunConfig) -> TrackerConfig:
    return TrackerConfig(seed=rc.seed, **rc.track)


def _dataset_cfg(rc: RunConfig, downsample: int | None = None) -> DatasetConfig:
    d = {k: v for k, v in rc.data.items() if k != "pair_gap"}
    if downsample is not None and "downsample" not in rc.data:
        d["downsample"] = downsample
    return DatasetConfig(**d)


def _need_dataset(rc: RunConfig) -> Path:
    if not rc.dataset:
        raise UsageError("--dataset is required")
    p = Path(rc.dataset)
    if not p.is_dir():
        raise IngestionError(f"dataset directory not found: {p}")
    return p


def _make_extractor(rc: RunConfig, checkpoint):
    ex = rc.extract
    max_kp = int(ex.get("max_kp", 1000))
    nms = int(ex.get("nms_grid", 8))
    if checkpoint is None:
        return BriefExtractor(max_kp=max_kp, nms_grid=nms), None
    params, net_cfg = load_params(checkpoint)
    kw = {"max_kp": max_kp, "nms_grid": nms, "keypoints": ex.get("keypoints", "net")}
    if "threshold" in ex:
        kw["threshold"] = float(ex["threshold"])
    return NetExtractor(params, net_cfg, **kw), net_cfg


def _load_frames(rc: RunConfig, net_cfg: NetConfig | None):
    """Load the dataset; with a network, downsample so frames match its training width."""
    d = _need_dataset(rc)
    factor = None
    if net_cfg is not None and "downsample" not in rc.data:
        full = sequence_intrinsics(d, DatasetConfig())
        factor = max(1, full.width // net_cfg.width)
    cfg = _dataset_cfg(rc, factor)
    frames = load_sequence(d, cfg)
    if not frames:
        raise IngestionError(f"{d}: no associated rgb/depth frames")
    return frames, sequence_intrinsics(d, cfg)


def _frame_pairs(frames, gap: int):
    return [(frames[i], frames[i + gap]) for i in range(len(frames) - gap)
            if frames[i].gt_pose is not None and frames[i + gap].gt_pose is not None]


def _out_path(rc: RunConfig, default: str) -> Path:
    p = Path(rc.out or default)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _out_dir(rc: RunConfig, default: str) -> Path:
    p = Path(rc.out or default)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ----------------------------------------------------------------- commands

def cmd_prep(rc: RunConfig, args) -> int:
    out = _out_dir(rc, "prep")
    if rc.dataset == "synthetic":
        n = int(rc.synthetic.get("frames", 60))
        poses = synthetic.straight_path(n, float(rc.synthetic.get("path_length", 0.5)))
        seq_dir = out / "sequence"
        write_sequence(seq_dir, synthetic.make_sequence(poses, seed=rc.seed), synthetic.QVGA_K)
        print(f"wrote synthetic sequence of {n} frames to {seq_dir}")
        rc = dataclasses.replace(rc, dataset=str(seq_dir))
    d = _need_dataset(rc)
    cfg = _dataset_cfg(rc)
    entries = associate_sequence(d, cfg)
    if cfg.max_frames is not None:
        entries = entries[: cfg.max_frames]
    lines = ["# timestamp rgb depth has_gt"]
    lines += [f"{ts:.6f} {rgb.relative_to(d)} {dep.relative_to(d)} {int(gt is not None)}" for ts, rgb, dep, gt in entries]
    (out / "associations.txt").write_text("\n".join(lines) + "\n")

    frames = load_sequence(d, cfg)
    k = sequence_intrinsics(d, cfg)
    gap = int(rc.data.get("pair_gap", 1))
    arrays, stamps = {}, []
    for i, (a, b) in enumerate(_frame_pairs(frames, gap)):
        uv, _ = shi_tomasi_keypoints(a.gray)
        c = make_correspondences(a, b, uv, k, float(rc.train.get("occlusion_tol", 0.05)))
        arrays[f"pair{i}_uv_a"] = c.uv_a
        arrays[f"pair{i}_uv_b"] = c.uv_b
        arrays[f"pair{i}_rel"] = c.relative_pose.matrix()
        stamps.append((a.timestamp, b.timestamp))
    arrays["stamps"] = np.asarray(stamps, dtype=np.float64).reshape(-1, 2)
    with open(out / "correspondences.npz", "wb") as fh:
        np.savez(fh, **arrays)
    print(f"{len(entries)} associated frames, {len(stamps)} supervised pairs -> {out}")
    return EXIT_OK


def cmd_train(rc: RunConfig, args) -> int:
    cfg = _train_cfg(rc)
    out = _out_dir(rc, "run")
    if args.pairs == "synthetic":
        pairs = synthetic.make_pairs(int(rc.synthetic.get("train_pairs", 20)), seed=rc.seed)
        k = synthetic.DESK_K
    else:
        rc = dataclasses.replace(rc, dataset=args.pairs)
        frames, k = _load_frames(rc, None)
        pairs = _frame_pairs(frames, int(rc.data.get("pair_gap", 1)))
        if not pairs:
            raise IngestionError(f"{args.pairs}: no frame pairs with ground truth")
    h, w = pairs[0][0].gray.shape
    net_kw = {kk: v for kk, v in rc.net.items() if kk not in ("width", "height")}
    if "channels" in net_kw:
        net_kw["channels"] = tuple(net_kw["channels"])
    net_cfg = NetConfig(width=w, height=h, **net_kw)
    params = init_params(net_cfg, seed=rc.seed)

    def progress(row):
        e = row["epoch"]
        if e > 0 and e % cfg.lr_halve_every == 0:
            print(f"epoch {e}: lr halved to {row['lr']:.3e}")

    print(f"training on {len(pairs)} pairs ({w}x{h}), {cfg.epochs} epochs, lr {cfg.lr:.3e}")
    result = train(pairs, cfg, params, net_cfg, k, progress=progress)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_params(ckpt, result.params, net_cfg, {"seed": rc.seed, "epochs": cfg.epochs})
    write_loss_csv(out / "loss.csv", result.log)
    if result.log:
        first, last = result.log[0]["total"], result.log[-1]["total"]
        print(f"loss {first:.6g} -> {last:.6g}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_extract(rc: RunConfig, args) -> int:
    extractor, net_cfg = _make_extractor(rc, args.checkpoint)
    frames, _ = _load_frames(rc, net_cfg)
    out = _out_dir(rc, "features")
    total = 0
    for f in frames:
        feats = extractor(f.gray)
        stem = f.name or f"{f.timestamp:.6f}"
        write_keypoints(out / f"{stem}.kp.txt", feats.uv, feats.confidence)
        write_descriptor_dump(out / f"{stem}.desc", feats.uv, feats.confidence, feats.descriptors)
        total += len(feats)
    print(f"{len(frames)} frames, {total} keypoints -> {out}")
    return EXIT_OK


def cmd_track(rc: RunConfig, args) -> int:
    extractor, net_cfg = _make_extractor(rc, args.checkpoint)
    frames, k = _load_frames(rc, net_cfg)
    traj, stats = track_sequence(frames, extractor, k, _track_cfg(rc))
    out = _out_path(rc, "traj.txt")
    lost = [ts for ts, flag in zip(traj.stamps, traj.lost) if flag]
    write_trajectory(out, traj.stamps, traj.poses, lost)
    stats_path = Path(args.stats) if args.stats else out.with_suffix(".stats.csv")
    write_stats_csv(stats_path, stats)
    agg = stats_report(stats)["aggregate"]
    print(f"frames {len(traj)} lost {len(lost)} keyframes {sum(s.keyframe for s in stats)}")
    print(f"mean inlier_fraction {agg['mean_inlier_fraction']:.3f} keypoint_fraction {agg['mean_keypoint_fraction']:.3f}")
    if all(f.gt_pose is not None for f in frames) and len(frames) >= 2:
        r = ate_rmse(traj.stamps, traj.poses, [f.timestamp for f in frames], [f.gt_pose for f in frames])
        print(f"ate_rmse {r.rmse_m:.4f}")
    print(f"trajectory {out}")
    return EXIT_OK


def cmd_eval(rc: RunConfig, args) -> int:
    for p in (args.est, args.gt):
        if not Path(p).is_file():
            raise IngestionError(f"trajectory file not found: {p}")
    est_t, est_p = read_trajectory(args.est)
    gt_t, gt_p = read_trajectory(args.gt)
    r = ate_rmse(est_t, est_p, gt_t, gt_p, float(rc.data.get("max_dt", 0.02)))
    print(f"rmse {r.rmse_m:.3f}")
    print(f"pairs {len(r.errors)}")
    if rc.out:
        write_ate_csv(_out_path(rc, "ate.csv"), r)
    return EXIT_OK


def cmd_bench(rc: RunConfig, args) -> int:
    extractor, net_cfg = _make_extractor(rc, args.checkpoint)
    if args.pairs == "synthetic":
        pairs = synthetic.make_pairs(int(rc.synthetic.get("bench_pairs", 8)), seed=rc.seed + BENCH_SEED_OFFSET)
        k = synthetic.DESK_K
    else:
        frames, k = _load_frames(dataclasses.replace(rc, dataset=args.pairs), net_cfg)
        pairs = _frame_pairs(frames, int(rc.data.get("pair_gap", 1)))
        if not pairs:
            raise IngestionError(f"{args.pairs}: no frame pairs with ground truth")
    rows = []
    for name, ex in (("model", extractor), ("random", RandomDescriptorExtractor(extractor, seed=rc.seed))):
        r = matching_benchmark(pairs, ex, k, px_tol=args.px_tol)
        rows.append((name, r))
        print(f"{name:8s} precision {r.precision:.4f} density {r.density:.4f} "
              f"matched {r.n_matched} correct {r.n_correct} keypoints {r.n_keypoints}")
    if rc.out:
        lines = ["extractor,precision,density,matched,correct,keypoints"]
        lines += [f"{n},{r.precision!r},{r.density!r},{r.n_matched},{r.n_correct},{r.n_keypoints}" for n, r in rows]
        _out_path(rc, "bench.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_plot(rc: RunConfig, args) -> int:
    from . import plotting

    out = _out_dir(rc, "plots")
    made = []
    if args.loss:
        plotting.plot_loss(read_loss_csv(args.loss), out / "loss.png")
        made.append("loss.png")
    if args.est:
        stamps, poses = read_trajectory(args.est)
        lost_ts = set(read_lost_stamps(args.est).tolist())
        lost = [ts in lost_ts for ts in stamps.tolist()]
        gt = None
        if args.gt:
            gt_t, gt_p = read_trajectory(args.gt)
            pairs = associate(stamps, gt_t, float(rc.data.get("max_dt", 0.02)))
            if len(pairs) >= 2:
                r = ate_rmse(stamps, poses, gt_t, gt_p)
                poses = [r.alignment @ p for p in poses]
                gt = [gt_p[j] for _, j in pairs]
        plotting.plot_trajectory(poses, out / "trajectory.png", gt, lost)
        made.append("trajectory.png")
    if args.stats:
        plotting.plot_inliers(read_stats_csv(args.stats), out / "inliers.png")
        made.append("inliers.png")
    if not made:
        raise UsageError("nothing to plot: give --loss, --est and/or --stats")
    print(" ".join(str(out / m) for m in made))
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML settings file; flags override it")
    common.add_argument("--seed", type=int, help="seed for every stochastic component (default 0)")
    common.add_argument("--out", help="output file or directory")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="TUM-layout sequence directory")
    data.add_argument("--max-frames", type=int)
    data.add_argument("--downsample", type=int)

    feat = argparse.ArgumentParser(add_help=False)
    feat.add_argument("--checkpoint", help="trained network; without it the handcrafted baseline is used")
    feat.add_argument("--max-kp", type=int)
    feat.add_argument("--threshold", type=float, help="detector probability threshold")
    feat.add_argument("--keypoints", choices=("net", "shi_tomasi"))

    p = argparse.ArgumentParser(prog="binofeat", description="Binary local features and RGB-D tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prep", parents=[common, data], help="association + correspondence caches")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("train", parents=[common, data], help="train the feature network")
    s.add_argument("--pairs", default="synthetic", help="'synthetic' or a TUM-layout directory")
    s.add_argument("--epochs", type=int)
    s.add_argument("--tiny", action="store_true", help="halve channel widths after the first layer")
    s.add_argument("--checkpoint", help="checkpoint path (default <out>/model.ckpt)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", parents=[common, data, feat], help="dump keypoints and descriptors per frame")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("track", parents=[common, data, feat], help="track a sequence, write a TUM trajectory")
    s.add_argument("--stats", help="per-frame stats CSV (default <out>.stats.csv)")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", parents=[common], help="absolute trajectory error")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common, data, feat], help="matching precision vs a random-bit baseline")
    s.add_argument("--pairs", default="synthetic", help="'synthetic' or a TUM-layout directory")
    s.add_argument("--px-tol", type=float, default=4.0)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plot", parents=[common], help="render loss, trajectory and inlier figures")
    s.add_argument("--loss")
    s.add_argument("--est")
    s.add_argument("--gt")
    s.add_argument("--stats")
    s.set_defaults(func=cmd_plot)
    return p


def _setup_logging():
    level = os.environ.get("BINOFEAT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        rc = build_run_config(args)
        return args.func(rc, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (IngestionError, FileNotFoundError, UnsupervisedPairError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrackingFailure, InsufficientOverlapError, EmptyBatchError, GeometryError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except BinofeatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected", exc_info=True)
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
