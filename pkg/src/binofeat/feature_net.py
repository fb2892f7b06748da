"""Fully-convolutional keypoint/descriptor network.

Backbone: four conv(4x4, stride 2, pad 1) + relu stages, so every output
location covers a 16x16 pixel cell. Two 1x1 heads sit on the last stage:

* detector: 256 logits per cell -> pixel_shuffle(16) -> sigmoid, giving a
  full-resolution 1xHxW keypoint probability map;
* descriptor: 256 real-valued channels kept on the coarse cell grid and
  bilinearly sampled at keypoints (binarized downstream).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_engine as te
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import BoundsError, CheckpointError, ShapeError

CELL = 16


@dataclass(frozen=True)
class NetConfig:
    width: int = 320
    height: int = 240
    channels: tuple = (32, 64, 128, 256)
    tiny: bool = False
    descriptor_dim: int = 256

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ValueError("the backbone has exactly four stride-2 stages")
        if self.descriptor_dim != 256:
            raise ValueError("descriptor_dim is fixed at 256 bits")

    @property
    def stage_channels(self) -> tuple:
        if not self.tiny:
            return tuple(self.channels)
        # halve from the second layer onward
        return (self.channels[0],) + tuple(max(1, c // 2) for c in self.channels[1:])

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "channels": list(self.channels),
                "tiny": self.tiny, "descriptor_dim": self.descriptor_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


@dataclass
class DenseOutputs:
    prob_map: te.Tensor  # (1, H, W)
    feature_map: te.Tensor  # (256, H/16, W/16), pre-sign


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    cin = 1
    for i, cout in enumerate(cfg.stage_channels, start=1):
        params[f"conv{i}.weight"] = te.kaiming_uniform(rng, (cout, cin, 4, 4), cin * 16, dtype)
        params[f"conv{i}.bias"] = np.zeros(cout, dtype)
        cin = cout
    params["det.weight"] = te.kaiming_uniform(rng, (CELL * CELL, cin, 1, 1), cin, dtype)
    params["det.bias"] = np.zeros(CELL * CELL, dtype)
    params["desc.weight"] = te.kaiming_uniform(rng, (cfg.descriptor_dim, cin, 1, 1), cin, dtype)
    params["desc.bias"] = np.zeros(cfg.descriptor_dim, dtype)
    return {k: te.Tensor(v, requires_grad=True) for k, v in params.items()}


def param_count(params: dict) -> int:
    return int(sum(p.value.size for p in params.values()))


def normalize(gray: np.ndarray) -> np.ndarray:
    # gray is already in [0, 1]; zero-centre it
    return (np.asarray(gray, dtype=np.float32) - 0.5)[None]


def forward(gray: np.ndarray, params: dict, cfg: NetConfig) -> DenseOutputs:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ShapeError(f"expected a single-channel HxW image, got shape {gray.shape}")
    h, w = gray.shape
    if h % CELL or w % CELL:
        raise ShapeError(f"image {w}x{h} is not divisible into {CELL}x{CELL} cells")
    x = te.Tensor(normalize(gray).astype(params["conv1.weight"].dtype))
    for i in range(1, 5):
        x = te.relu(te.conv2d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"], stride=2, padding=1))
    logits = te.conv2d(x, params["det.weight"], params["det.bias"])
    prob = te.sigmoid(te.pixel_shuffle(logits, CELL))
    feats = te.conv2d(x, params["desc.weight"], params["desc.bias"])
    return DenseOutputs(prob_map=prob, feature_map=feats)


def to_grid(uv) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates -> coarse-grid coordinates (cell centres at integers)."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    off = (CELL - 1) / 2.0
    return (uv[:, 0] - off) / CELL, (uv[:, 1] - off) / CELL


def sample_descriptors(feature_map: te.Tensor, uv) -> te.Tensor:
    """Bilinearly sample pre-sign descriptors at pixel positions; returns (N, 256)."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    _, hg, wg = feature_map.shape
    w, h = wg * CELL, hg * CELL
    bad = ~((uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= h - 1))
    if np.any(bad):
        raise BoundsError(f"keypoint {uv[bad][0].tolist()} outside {w}x{h} image")
    gx, gy = to_grid(uv)
    return te.bilinear_sample(feature_map, gx, gy)


def sample_descriptor(feature_map: te.Tensor, kp) -> np.ndarray:
    """Single keypoint (anything with ``.position`` or a (u, v) pair) -> 256-vector."""
    pos = getattr(kp, "position", kp)
    return sample_descriptors(feature_map, [tuple(pos)]).value[0]


def save_params(path, params: dict, cfg: NetConfig, extra_meta: dict | None = None):
    meta = {"net": cfg.to_dict(), **(extra_meta or {})}
    save_checkpoint(path, {k: p.value for k, p in params.items()}, meta)


def load_params(path) -> tuple[dict, NetConfig]:
    arrays, meta = load_checkpoint(path)
    try:
        cfg = NetConfig.from_dict(meta["net"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: missing or invalid network config ({exc})") from exc
    expected = init_params(cfg)
    if set(arrays) != set(expected) or any(arrays[k].shape != expected[k].shape for k in expected):
        raise CheckpointError(f"{path}: parameter names/shapes do not match the stored config")
    return {k: te.Tensor(np.array(v), requires_grad=True) for k, v in arrays.items()}, cfg
