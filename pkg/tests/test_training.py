import math

import numpy as np
import pytest

from binofeat import tensor_engine as te
from binofeat.dataset_tum import Frame
from binofeat.descriptor_matching import binarize
from binofeat.detection import DetectionTarget
from binofeat.errors import EmptyBatchError, ShapeError, UnsupervisedPairError
from binofeat.feature_net import NetConfig, init_params
from binofeat.synthetic import DESK_K, make_pairs
from binofeat.training import (
    TrainConfig,
    TripletSample,
    cross_entropy,
    detection_loss,
    lr_at,
    mine_negative,
    mine_negatives,
    read_loss_csv,
    train,
    triplet_hinge,
    triplet_loss,
    write_loss_csv,
)
from oracles import mine_negative_literal, numeric_grad, rel_error

TINY = NetConfig(width=160, height=128, tiny=True)


def test_hinge_examples():
    assert triplet_hinge(np.array([0.0]), np.array([4.0]), 1.0).item() == 0.0
    assert triplet_hinge(np.array([2.0]), np.array([2.0]), 1.0).item() == 1.0


def test_hinge_batch_gradient_only_through_active_term():
    dp = te.Tensor(np.array([0.0, 2.0]), requires_grad=True)
    dn = te.Tensor(np.array([4.0, 2.0]), requires_grad=True)
    loss = triplet_hinge(dp, dn, 1.0)
    loss.backward()
    assert loss.item() == 1.0
    assert dp.grad.tolist() == [0.0, 1.0] and dn.grad.tolist() == [0.0, -1.0]


def test_triplet_loss_on_sign_distances():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.1, 0.9, 256) * rng.choice([-1, 1], 256)
    pos = a.copy()
    neg = a.copy()
    neg[:1] *= -1  # one flipped bit: squared sign distance 4
    s = TripletSample(te.Tensor(a), te.Tensor(pos), te.Tensor(neg))
    assert triplet_loss([s]).item() == 0.0
    # a positive two bits away and a negative two bits away sit exactly at the margin violation of 1
    pos2, neg2 = a.copy(), a.copy()
    pos2[:2] *= -1
    neg2[2:4] *= -1
    assert triplet_loss([TripletSample(te.Tensor(a), te.Tensor(pos2), te.Tensor(neg2))], margin=1.0).item() == 1.0


def test_triplet_gradient_passes_straight_through():
    a = te.Tensor(np.full((1, 256), 0.5), requires_grad=True)
    p = te.Tensor(np.full((1, 256), -0.5), requires_grad=True)
    n = te.Tensor(np.full((1, 256), 0.5), requires_grad=True)
    loss = triplet_loss([TripletSample(a, p, n)])
    loss.backward()
    # d+ = 256 * 4, d- = 0: the term is active; d/dsign_p = -2 (s_a - s_p) = -4 per entry
    assert loss.item() == 256 * 4 + 1
    assert np.all(p.grad == -4.0) and np.all(a.grad == 4.0) and np.all(n.grad == 0.0)


def test_triplet_empty_batch():
    with pytest.raises(EmptyBatchError):
        triplet_loss([])


def test_detection_loss_closed_form():
    n = 64
    o = np.full((1, 8, 8), 0.5)
    c = np.zeros((8, 8), np.uint8)
    c[3, 4] = 1
    t = DetectionTarget(c, c, np.zeros((0, 2)), np.zeros((0, 2)))
    got = detection_loss(te.Tensor(o), te.Tensor(o), t, 0.1, 1.0).item()
    assert got == pytest.approx(2 * (0.1 + (n - 1) * 1.0) * math.log(2), abs=1e-6)


def test_detection_loss_perfect_prediction_is_zero():
    c = np.zeros((4, 4))
    c[1, 2] = 1
    assert cross_entropy(te.Tensor(c.copy()), c, 0.1, 1.0).item() == 0.0
    with pytest.raises(ShapeError):
        cross_entropy(te.Tensor(np.zeros((4, 4))), np.zeros((3, 3)), 0.1, 1.0)


def test_detection_loss_gradient_on_toy_map():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 4, 4))
    c = (rng.random((4, 4)) < 0.3).astype(float)
    xt = te.Tensor(x, requires_grad=True)
    cross_entropy(te.sigmoid(xt), c, 0.1, 1.0).backward()
    num = numeric_grad(lambda: cross_entropy(te.sigmoid(te.Tensor(x)), c, 0.1, 1.0).item(), x)
    assert rel_error(xt.grad, num) < 1e-4


def test_lr_schedule():
    cfg = TrainConfig()
    for e in range(100):
        assert lr_at(e, cfg) == 1e-4 * 2.0 ** -(e // 40)
    assert (lr_at(39, cfg), lr_at(40, cfg), lr_at(80, cfg)) == (1e-4, 5e-5, 2.5e-5)


def test_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.w_metric, cfg.w_mask, cfg.alpha1, cfg.alpha2, cfg.margin) == (100.0, 1.0, 0.1, 1.0, 1.0)
    assert (cfg.epochs, cfg.lr_halve_every, cfg.lr) == (100, 40, 1e-4)
    with pytest.raises(ValueError):
        TrainConfig(mining_k=0)
    with pytest.raises(ValueError):
        TrainConfig(alpha1=0)


def _bits(rng, n, pool=None):
    if pool is None:
        return rng.integers(0, 256, (n, 32), dtype=np.uint8)
    return pool[rng.integers(0, len(pool), n)]


def test_mining_examples():
    rng = np.random.default_rng(2)
    anchor = _bits(rng, 1)[0]
    cands = np.stack([anchor, anchor ^ 1, anchor ^ 3])
    uv = np.array([[10.0, 10.0], [11.0, 12.0], [50.0, 50.0]])
    # k = 2 sees only the two nearest, both inside the window
    assert mine_negative(anchor, cands, uv, (10.0, 10.0), (4, 4), k=2) is None
    assert mine_negative(anchor, cands, uv, (10.0, 10.0), (4, 4), k=3) == 2
    # nearest candidate already far away: returned at the first step
    assert mine_negative(anchor, cands, uv, (40.0, 40.0), (4, 4), k=8) == 0
    # the window is strict: exactly c away still counts as "near"
    assert mine_negative(anchor, cands[:1], [[14.0, 6.0]], (10.0, 10.0), (4, 4), k=1) is None


@pytest.mark.parametrize("seed", range(200))
def test_mining_matches_literal_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 64))
    pool = _bits(rng, int(rng.integers(1, 8)))
    cands = _bits(rng, n, pool)
    anchor = _bits(rng, 1, pool)[0]
    uv = rng.integers(0, 12, (n, 2)).astype(float)
    gt = tuple(rng.integers(0, 12, 2).astype(float))
    c = tuple(rng.integers(0, 6, 2).astype(float))
    k = int(rng.integers(1, 17))
    want = mine_negative_literal(anchor.tobytes(), [x.tobytes() for x in cands], uv.tolist(), gt, c, k)
    assert mine_negative(anchor, cands, uv, gt, c, k) == want
    batched = mine_negatives(anchor[None], cands, uv, np.array([gt]), c, k)[0]
    assert (None if batched < 0 else batched) == want


def _one_pair():
    return make_pairs(1, seed=21)


def test_training_reduces_loss_on_one_pair():
    cfg = TrainConfig(epochs=50, seed=0)
    res = train(_one_pair(), cfg, init_params(TINY, 0), TINY, DESK_K)
    assert len(res.log) == 50
    assert res.log[-1]["total"] < res.log[0]["total"]
    assert [r["lr"] for r in res.log[38:42]] == [1e-4, 1e-4, 5e-5, 5e-5]


def test_zero_learning_rate_changes_nothing():
    params = init_params(TINY, 0)
    before = {k: p.value.copy() for k, p in params.items()}
    res = train(_one_pair(), TrainConfig(epochs=3, lr=0.0), params, TINY, DESK_K)
    assert all(np.array_equal(before[k], params[k].value) for k in params)
    assert len({r["total"] for r in res.log}) == 1


def test_training_is_deterministic(tmp_path):
    logs = []
    for i in range(2):
        res = train(_one_pair(), TrainConfig(epochs=3, seed=5), init_params(TINY, 5), TINY, DESK_K)
        write_loss_csv(tmp_path / f"{i}.csv", res.log)
        logs.append((tmp_path / f"{i}.csv").read_bytes())
    assert logs[0] == logs[1]
    back = read_loss_csv(tmp_path / "0.csv")
    assert [r["total"] for r in back] == [r["total"] for r in res.log]


def test_training_without_supervision_fails():
    a, b = _one_pair()[0]
    bare = Frame(a.gray, a.depth, a.timestamp)
    with pytest.raises(UnsupervisedPairError):
        train([(bare, b)], TrainConfig(epochs=1), init_params(TINY, 0), TINY, DESK_K)


def test_binarized_features_feed_mining():
    f = np.random.default_rng(3).normal(size=(5, 256))
    d = binarize(f)
    assert mine_negatives(d, d, np.zeros((5, 2)), np.zeros((5, 2)), (4, 4), 8).tolist() == [-1] * 5
