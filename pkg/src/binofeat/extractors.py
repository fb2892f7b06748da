"""Keypoint + descriptor providers used by tracking, extraction and benchmarks.

Every extractor is a callable ``gray -> Features``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import descriptor_matching as dm
from .detection import cell_maxima, extract_keypoint_arrays, shi_tomasi_response
from .feature_net import CELL, NetConfig, forward, sample_descriptors


@dataclass
class Features:
    uv: np.ndarray  # (N, 2) pixel positions (u, v)
    confidence: np.ndarray  # (N,)
    descriptors: np.ndarray  # (N, 32) uint8

    def __len__(self):
        return len(self.uv)

    def subset(self, idx) -> "Features":
        return Features(self.uv[idx], self.confidence[idx], self.descriptors[idx])


def shi_tomasi_keypoints(gray, max_kp: int = 1000, nms_grid: int = 8, rel_floor: float = 0.01,
                         abs_floor: float = 1e-4):
    """Grid-NMS maxima of the Shi-Tomasi response; confidence is response / max response."""
    resp = shi_tomasi_response(gray)
    top = resp.max()
    if top <= abs_floor:
        return np.zeros((0, 2)), np.zeros(0)
    rows, cols, vals = cell_maxima(resp, nms_grid)
    keep = (vals > abs_floor) & (vals > rel_floor * top)
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    order = np.lexsort((cols, rows, -vals))[:max_kp]
    return np.stack([cols[order], rows[order]], 1).astype(np.float64), vals[order] / top


@dataclass
class BriefExtractor:
    """Handcrafted baseline: Shi-Tomasi grid keypoints with BRIEF-style comparison bits."""

    max_kp: int = 1000
    nms_grid: int = 8
    pattern_seed: int = 0

    def __post_init__(self):
        self.pattern = dm.make_brief_pattern(self.pattern_seed)

    def __call__(self, gray) -> Features:
        h, w = gray.shape
        uv, conf = shi_tomasi_keypoints(gray, max_kp=10 * self.max_kp, nms_grid=self.nms_grid)
        ok = dm.brief_margin_ok(uv, w, h)
        uv, conf = uv[ok][: self.max_kp], conf[ok][: self.max_kp]
        if len(uv) == 0:
            return Features(uv, conf, np.zeros((0, dm.NBYTES), np.uint8))
        return Features(uv, conf, dm.brief_describe(dm.smooth_for_brief(gray), uv, self.pattern))


@dataclass
class NetExtractor:
    """Network features. ``keypoints="net"`` thresholds the probability map;
    ``"shi_tomasi"`` keeps the classical detector and only swaps descriptors."""

    params: dict
    cfg: NetConfig
    # a briefly trained detector rarely exceeds 0.3; 0.02 kept the best precision on held-out renders
    threshold: float = 0.02
    max_kp: int = 1000
    nms_grid: int = 8
    keypoints: str = "net"

    def __call__(self, gray) -> Features:
        # run on the top-left crop that tiles into whole cells; pixel coordinates are unchanged
        h, w = gray.shape
        gray = gray[: h - h % CELL, : w - w % CELL]
        out = forward(gray, self.params, self.cfg)
        if self.keypoints == "net":
            uv, conf = extract_keypoint_arrays(out.prob_map.value, self.threshold, self.nms_grid, self.max_kp)
        elif self.keypoints == "shi_tomasi":
            uv, conf = shi_tomasi_keypoints(gray, self.max_kp, self.nms_grid)
        else:
            raise ValueError(f"unknown keypoint source {self.keypoints!r}")
        if len(uv) == 0:
            return Features(uv, conf, np.zeros((0, dm.NBYTES), np.uint8))
        return Features(uv, conf, dm.binarize(sample_descriptors(out.feature_map, uv).value))


@dataclass
class RandomDescriptorExtractor:
    """Keeps another extractor's keypoints but draws uniformly random bits (chance baseline)."""

    base: object
    seed: int = 0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def __call__(self, gray) -> Features:
        f = self.base(gray)
        return Features(f.uv, f.confidence, self.rng.integers(0, 256, size=(len(f), dm.NBYTES), dtype=np.uint8))
