import numpy as np
import pytest

from binofeat.cli import build_parser, build_run_config, main
from binofeat.dataset_tum import read_trajectory, write_trajectory
from binofeat.geometry import Se3Pose


@pytest.fixture(scope="module")
def prepped(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text("seed: 0\nsynthetic:\n  frames: 12\n  path_length: 0.1\n")
    assert main(["prep", "--dataset", "synthetic", "--config", str(cfg), "--out", str(root / "prep")]) == 0
    return root


def test_prep_writes_caches(prepped):
    prep = prepped / "prep"
    assoc = (prep / "associations.txt").read_text().splitlines()
    assert len(assoc) == 13 and assoc[1].endswith(" 1")
    z = np.load(prep / "correspondences.npz")
    assert z["stamps"].shape == (11, 2) and z["pair0_rel"].shape == (4, 4)
    assert len(z["pair0_uv_a"]) == len(z["pair0_uv_b"]) > 0


def test_track_eval_plot(prepped, capsys):
    seq = prepped / "prep" / "sequence"
    traj = prepped / "traj.txt"
    assert main(["track", "--dataset", str(seq), "--out", str(traj)]) == 0
    out = capsys.readouterr().out
    assert "frames 12 lost 0" in out and "ate_rmse" in out
    stamps, poses = read_trajectory(traj)
    assert len(stamps) == 12 and (prepped / "traj.stats.csv").is_file()

    assert main(["eval", "--est", str(seq / "groundtruth.txt"), "--gt", str(seq / "groundtruth.txt")]) == 0
    assert "rmse 0.000" in capsys.readouterr().out
    assert main(["eval", "--est", str(traj), "--gt", str(seq / "groundtruth.txt"),
                 "--out", str(prepped / "ate.csv")]) == 0
    assert (prepped / "ate.csv").read_text().startswith("timestamp,error_m")

    plots = prepped / "plots"
    assert main(["plot", "--est", str(traj), "--gt", str(seq / "groundtruth.txt"),
                 "--stats", str(prepped / "traj.stats.csv"), "--out", str(plots)]) == 0
    assert (plots / "trajectory.png").stat().st_size > 0 and (plots / "inliers.png").is_file()


def test_train_extract_bench(prepped, capsys):
    cfg = prepped / "train.yaml"
    cfg.write_text("net:\n  tiny: true\ntrain:\n  epochs: 3\n  lr_halve_every: 1\nsynthetic:\n  train_pairs: 1\n  bench_pairs: 1\n")
    run = prepped / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    out = capsys.readouterr().out
    assert "epoch 1: lr halved to 5.000e-05" in out and "epoch 2: lr halved to 2.500e-05" in out
    assert (run / "model.ckpt").is_file() and len((run / "loss.csv").read_text().splitlines()) == 4

    assert main(["plot", "--loss", str(run / "loss.csv"), "--out", str(prepped / "plots")]) == 0

    feats = prepped / "feats"
    assert main(["extract", "--dataset", str(prepped / "prep" / "sequence"), "--max-frames", "2",
                 "--checkpoint", str(run / "model.ckpt"), "--out", str(feats)]) == 0
    assert len(list(feats.glob("*.desc"))) == 2 and len(list(feats.glob("*.kp.txt"))) == 2

    assert main(["bench", "--config", str(cfg), "--checkpoint", str(run / "model.ckpt"),
                 "--keypoints", "shi_tomasi", "--out", str(prepped / "bench.csv")]) == 0
    rows = (prepped / "bench.csv").read_text().splitlines()
    assert rows[0].startswith("extractor,precision") and [r.split(",")[0] for r in rows[1:]] == ["model", "random"]


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 3\ntrain:\n  epochs: 7\nextract:\n  max_kp: 50\n")
    args = build_parser().parse_args(["train", "--config", str(cfg), "--epochs", "2"])
    rc = build_run_config(args)
    assert (rc.seed, rc.train["epochs"]) == (3, 2)
    args = build_parser().parse_args(["track", "--config", str(cfg), "--seed", "9", "--max-kp", "10"])
    rc = build_run_config(args)
    assert (rc.seed, rc.extract["max_kp"]) == (9, 10)


def test_exit_codes(tmp_path, capsys):
    assert main(["--help"]) == 0
    assert main(["track", "--bogus"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  nonsense: 1\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert main(["plot", "--out", str(tmp_path)]) == 2
    assert main(["track", "--dataset", str(tmp_path / "missing")]) == 3
    assert main(["eval", "--est", str(tmp_path / "none.txt"), "--gt", str(tmp_path / "none.txt")]) == 3
    (tmp_path / "seq").mkdir()
    ck = tmp_path / "junk.ckpt"
    ck.write_bytes(b"not a checkpoint")
    assert main(["track", "--dataset", str(tmp_path / "seq"), "--checkpoint", str(ck)]) == 4
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    write_trajectory(a, [1.0, 2.0], [Se3Pose.identity()] * 2)
    write_trajectory(b, [100.0, 200.0], [Se3Pose.identity()] * 2)
    assert main(["eval", "--est", str(a), "--gt", str(b)]) == 5
    capsys.readouterr()
