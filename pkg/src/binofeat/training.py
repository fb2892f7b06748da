"""Learning objectives and the training loop.

* metric loss: triplet hinge on squared distances between hard-sign
  descriptors, computed inside the graph so gradients pass the
  straight-through sign;
* negative mining: among the k Hamming-nearest candidates of the second
  frame, the first lying outside a relaxed pixel window around the true
  match;
* detection loss: class-weighted binary cross entropy against warped
  Shi-Tomasi targets, summed over both frames.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor_engine as te
from .dataset_tum import Frame, make_correspondences, relative_pose
from .descriptor_matching import binarize, hamming, hamming_matrix
from .detection import DetectionTarget, make_targets
from .errors import EmptyBatchError, ShapeError
from .feature_net import NetConfig, forward, sample_descriptors
from .geometry import CameraIntrinsics

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    margin: float = 1.0
    w_metric: float = 100.0
    w_mask: float = 1.0
    alpha1: float = 0.1  # positives
    alpha2: float = 1.0  # negatives
    lr: float = 1e-4
    lr_halve_every: int = 40
    epochs: int = 100
    mining_k: int = 8
    relaxed: tuple = (4.0, 4.0)
    n_random_samples: int = 32
    response_floor: float = 1e-4
    occlusion_tol: float = 0.05
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.w_metric, self.w_mask, self.alpha1, self.alpha2) <= 0:
            raise ValueError("loss weights must be positive")
        if self.mining_k < 1:
            raise ValueError("mining_k must be >= 1")
        if min(self.relaxed) < 0:
            raise ValueError("relaxed criteria must be non-negative")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr * 2.0 ** -(epoch // cfg.lr_halve_every)


# ------------------------------------------------------------------ losses

@dataclass
class TripletSample:
    anchor: te.Tensor  # f_1(x_i), 256-vector
    positive: te.Tensor  # f_2(x_i+)
    negative: te.Tensor  # f_2(x_i-)


def sign_distance(fa, fb) -> te.Tensor:
    """Row-wise ``sum((sign(fa) - sign(fb))^2)``, i.e. 4 x Hamming distance."""
    return te.sum_(te.square(te.sign_ste(fa) - te.sign_ste(fb)), axis=-1)


def triplet_hinge(d_pos, d_neg, margin: float = 1.0) -> te.Tensor:
    return te.sum_(te.relu(te.as_tensor(d_pos) - d_neg + margin))


def triplet_loss_batch(anchor, positive, negative, margin: float = 1.0) -> te.Tensor:
    if te.as_tensor(anchor).shape[0] == 0:
        raise EmptyBatchError("triplet loss needs at least one sample")
    return triplet_hinge(sign_distance(anchor, positive), sign_distance(anchor, negative), margin)


def triplet_loss(samples: list[TripletSample], margin: float = 1.0) -> te.Tensor:
    if not samples:
        raise EmptyBatchError("triplet loss needs at least one sample")
    return triplet_loss_batch(te.stack([s.anchor for s in samples]), te.stack([s.positive for s in samples]),
                              te.stack([s.negative for s in samples]), margin)


def cross_entropy(o, c, alpha1: float, alpha2: float) -> te.Tensor:
    """``-sum(a1 c log o + a2 (1 - c) log(1 - o))`` with logs floored at 1e-12."""
    o = te.as_tensor(o)
    c = np.asarray(c, dtype=np.float64)
    if o.shape[-2:] != c.shape[-2:] or o.value.size != c.size:
        raise ShapeError(f"prediction shape {o.shape} does not match target shape {c.shape}")
    c = c.reshape(o.shape)
    pos = te.sum_(te.log(o) * (alpha1 * c))
    neg = te.sum_(te.log(1.0 - o) * (alpha2 * (1.0 - c)))
    return -(pos + neg)


def detection_loss(o1, o2, targets: DetectionTarget, alpha1: float = 0.1, alpha2: float = 1.0) -> te.Tensor:
    return cross_entropy(o1, targets.mask_a, alpha1, alpha2) + cross_entropy(o2, targets.mask_b, alpha1, alpha2)


# ------------------------------------------------------------------ mining

def mine_negative(anchor_desc, candidate_descs, candidate_uv, x_gt, c=(4.0, 4.0), k: int = 8):
    """Index of the first of the k Hamming-nearest candidates outside the relaxed window, else None.

    Candidates at equal distance keep their input order.
    """
    d = hamming(candidate_descs, anchor_desc)
    d = np.atleast_1d(d)
    order = np.argsort(d, kind="stable")[: min(k, len(d))]
    uv = np.asarray(candidate_uv, dtype=np.float64).reshape(-1, 2)
    for j in order:
        du, dv = np.abs(uv[j] - np.asarray(x_gt, dtype=np.float64))
        if du > c[0] or dv > c[1]:
            return int(j)
    return None


def mine_negatives(anchor_descs, candidate_descs, candidate_uv, gt_uv, c=(4.0, 4.0), k: int = 8) -> np.ndarray:
    """Batched :func:`mine_negative`; -1 marks "None"."""
    dist = hamming_matrix(anchor_descs, candidate_descs)
    kk = min(k, dist.shape[1])
    order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    cand = np.asarray(candidate_uv, dtype=np.float64)[order]  # (N, kk, 2)
    delta = np.abs(cand - np.asarray(gt_uv, dtype=np.float64)[:, None, :])
    far = (delta[..., 0] > c[0]) | (delta[..., 1] > c[1])
    first = np.argmax(far, axis=1)
    return np.where(far.any(axis=1), order[np.arange(len(order)), first], -1)


# -------------------------------------------------------------- training loop

@dataclass
class PreparedPair:
    """Everything about a pair that does not depend on the network weights."""

    a: Frame
    b: Frame
    targets: DetectionTarget
    uv_a: np.ndarray  # anchors in A
    uv_b: np.ndarray  # their ground-truth matches in B (also the negative candidates)


def prepare_pair(a: Frame, b: Frame, k: CameraIntrinsics, cfg: TrainConfig, rng: np.random.Generator) -> PreparedPair:
    rel = relative_pose(a, b)
    targets = make_targets(a, b, rel, k, cfg.response_floor, cfg.occlusion_tol)
    h, w = a.gray.shape
    uv_a, uv_b = [targets.uv_a], [targets.uv_b]
    if cfg.n_random_samples > 0:
        samples = np.stack([rng.integers(0, w, cfg.n_random_samples), rng.integers(0, h, cfg.n_random_samples)], 1)
        corr = make_correspondences(a, b, samples, k, cfg.occlusion_tol)
        uv_a.append(corr.uv_a)
        uv_b.append(corr.uv_b)
    uv_a, uv_b = np.concatenate(uv_a), np.concatenate(uv_b)
    _, first = np.unique(uv_a, axis=0, return_index=True)
    first = np.sort(first)
    return PreparedPair(a, b, targets, uv_a[first], uv_b[first])


def pair_losses(pp: PreparedPair, params: dict, net_cfg: NetConfig, cfg: TrainConfig):
    """Forward both frames and build the combined loss; returns ``(total, metric, mask, n_triplets)``."""
    out_a = forward(pp.a.gray, params, net_cfg)
    out_b = forward(pp.b.gray, params, net_cfg)
    l_mask = detection_loss(out_a.prob_map, out_b.prob_map, pp.targets, cfg.alpha1, cfg.alpha2)
    if len(pp.uv_a) == 0:
        return None, None, l_mask, 0
    fa = sample_descriptors(out_a.feature_map, pp.uv_a)
    fb = sample_descriptors(out_b.feature_map, pp.uv_b)
    neg = mine_negatives(binarize(fa.value), binarize(fb.value), pp.uv_b, pp.uv_b, cfg.relaxed, cfg.mining_k)
    keep = np.flatnonzero(neg >= 0)
    if len(keep) == 0:
        return None, None, l_mask, 0
    l_metric = triplet_loss_batch(te.take_rows(fa, keep), te.take_rows(fb, keep), te.take_rows(fb, neg[keep]),
                                  cfg.margin)
    total = te.scale(l_metric, cfg.w_metric) + te.scale(l_mask, cfg.w_mask)
    return total, l_metric, l_mask, len(keep)


@dataclass
class TrainResult:
    params: dict
    log: list = field(default_factory=list)  # rows: epoch, lr, metric_loss, mask_loss, total


def train(pairs, cfg: TrainConfig, params: dict, net_cfg: NetConfig, k: CameraIntrinsics,
          progress=None) -> TrainResult:
    """ADAM over frame pairs (batch = one pair); learning rate halves every ``lr_halve_every`` epochs.

    Logged losses are per-epoch means over the pairs that produced triplets,
    measured before each pair's update.
    """
    rng = np.random.default_rng(cfg.seed)
    prepared = [prepare_pair(a, b, k, cfg, rng) for a, b in pairs]
    if not any(len(p.uv_a) for p in prepared):
        raise EmptyBatchError("no training pair has valid correspondences")
    state = te.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    result = TrainResult(params)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        sums = np.zeros(3)
        n = 0
        for idx in rng.permutation(len(prepared)):
            total, l_metric, l_mask, n_trip = pair_losses(prepared[idx], params, net_cfg, cfg)
            if total is None:
                log.warning("epoch %d: pair %d produced no triplets, skipped", epoch, idx)
                continue
            sums += (l_metric.item(), l_mask.item(), total.item())
            n += 1
            if lr > 0:
                for p in params.values():
                    p.grad = None
                total.backward()
                state.lr = lr
                te.adam_step(params, {name: p.grad for name, p in params.items()}, state)
        means = sums / max(n, 1)
        row = {"epoch": epoch, "lr": lr, "metric_loss": means[0], "mask_loss": means[1], "total": means[2]}
        result.log.append(row)
        log.info("epoch %3d lr %.3g metric %.4g mask %.4g total %.4g", epoch, lr, *means)
        if progress is not None:
            progress(row)
    return result


def write_loss_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "metric_loss", "mask_loss", "total"])
        for r in rows:
            w.writerow([r["epoch"], repr(float(r["lr"])), repr(float(r["metric_loss"])),
                        repr(float(r["mask_loss"])), repr(float(r["total"]))])


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), "lr": float(r["lr"]), "metric_loss": float(r["metric_loss"]),
                 "mask_loss": float(r["mask_loss"]), "total": float(r["total"])} for r in csv.DictReader(fh)]

