"""Two-stream bidirectional matching network.

A small SE-augmented convolutional backbone produces L2-normalized feature
maps; a correlation layer builds dense-correspondence volumes between two
feature maps; a single shared regression head turns every volume into six
affine parameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .affine import IDENTITY
from .errors import ShapeMismatch
from .tensor import Tensor

FEATURE_EPS = 1e-12
CORR_EPS = 1e-12


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple[int, ...] = (16, 32, 64)
    se_ratio: int = 4
    input_size: int = 64
    reg_channels: tuple[int, int] = (32, 16)
    reg_kernels: tuple[int, int] = (5, 3)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "reg_channels", tuple(int(c) for c in self.reg_channels))
        object.__setattr__(self, "reg_kernels", tuple(int(k) for k in self.reg_kernels))
        if self.input_size % self.stride:
            raise ShapeMismatch(f"input size {self.input_size} not divisible by stride {self.stride}")
        for w in self.widths[1:]:
            if w % self.se_ratio:
                raise ShapeMismatch(f"width {w} not divisible by SE ratio {self.se_ratio}")

    @property
    def stride(self) -> int:
        return 2 ** len(self.widths)

    @property
    def feature_size(self) -> int:
        return self.input_size // self.stride

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


TINY_CONFIG = BackboneConfig(widths=(4, 8, 8), se_ratio=4, input_size=16, reg_channels=(8, 4))


def init_weights(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """He-uniform weights, zero biases; regression output starts at the identity affine."""

    def he(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n), requires_grad=True)

    w = {}
    cin = 3
    for i, cout in enumerate(cfg.widths):
        w[f"backbone.conv{i}.w"] = he((cout, cin, 3, 3), cin * 9)
        w[f"backbone.conv{i}.b"] = zeros(cout)
        if i >= 1:
            mid = cout // cfg.se_ratio
            w[f"backbone.se{i}.w1"] = he((cout, mid), cout)
            w[f"backbone.se{i}.b1"] = zeros(mid)
            w[f"backbone.se{i}.w2"] = he((mid, cout), mid)
            w[f"backbone.se{i}.b2"] = zeros(cout)
        cin = cout

    hw = cfg.feature_size**2
    c1, c2 = cfg.reg_channels
    k1, k2 = cfg.reg_kernels
    w["reg.conv1.w"] = he((c1, hw, k1, k1), hw * k1 * k1)
    w["reg.conv1.b"] = zeros(c1)
    w["reg.conv2.w"] = he((c2, c1, k2, k2), c1 * k2 * k2)
    w["reg.conv2.b"] = zeros(c2)
    w["reg.fc.w"] = Tensor(np.zeros((c2 * hw, 6)), requires_grad=True)
    w["reg.fc.b"] = Tensor(IDENTITY.copy(), requires_grad=True)
    return w


def regression_params(weights: dict) -> dict:
    return {k: v for k, v in weights.items() if k.startswith("reg.")}


def parameter_count(weights: dict) -> int:
    return int(sum(t.data.size for t in weights.values()))


def se_block(x: Tensor, w_reduce: Tensor, b_reduce: Tensor, w_expand: Tensor, b_expand: Tensor) -> Tensor:
    """Channel attention: GAP -> MLP -> sigmoid scores -> per-channel rescale."""
    n, c = x.shape[:2]
    if w_reduce.shape[0] != c or w_expand.shape[1] != c:
        raise ShapeMismatch(f"SE weights {w_reduce.shape}/{w_expand.shape} for {c} channels")
    squeezed = F.global_avg_pool(x)
    hidden = F.relu(F.linear(squeezed, w_reduce, b_reduce))
    scores = F.sigmoid(F.linear(hidden, w_expand, b_expand))
    return x * scores.reshape(n, c, 1, 1)


def as_batch(images) -> Tensor:
    """(H, W, 3) or (N, H, W, 3) arrays -> (N, 3, H, W) tensor; tensors pass through."""
    if isinstance(images, Tensor):
        return images
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def extract_features(images, weights: dict, cfg: BackboneConfig) -> Tensor:
    x = as_batch(images)
    if x.shape[1:] != (3, cfg.input_size, cfg.input_size):
        raise ShapeMismatch(f"expected images of {cfg.input_size}x{cfg.input_size}x3, got {x.shape}")
    for i in range(len(cfg.widths)):
        x = F.relu(F.conv2d(x, weights[f"backbone.conv{i}.w"], weights[f"backbone.conv{i}.b"], pad=1))
        if i >= 1:
            x = se_block(
                x,
                weights[f"backbone.se{i}.w1"],
                weights[f"backbone.se{i}.b1"],
                weights[f"backbone.se{i}.w2"],
                weights[f"backbone.se{i}.b2"],
            )
        x = F.maxpool2(x)
    return F.l2_normalize_channels(x, FEATURE_EPS)


def correlate(f_src: Tensor, f_tgt: Tensor) -> Tensor:
    """Dense-correspondence volume (N, h*w, h, w), rectified and L2-normalized over k.

    Entry (k, i, j) is the inner product of the target fiber at (i, j) with
    the source fiber at row-major location k.
    """
    if f_src.shape != f_tgt.shape:
        raise ShapeMismatch(f"correlate: {f_src.shape} vs {f_tgt.shape}")
    n, c, h, w = f_src.shape
    a = f_src.reshape(n, c, h * w).transpose(0, 2, 1)  # (N, k, C)
    b = f_tgt.reshape(n, c, h * w)  # (N, C, p)
    corr = (a @ b).reshape(n, h * w, h, w)
    return F.l2_normalize_channels(F.relu(corr), CORR_EPS)


def regress(corr: Tensor, weights: dict) -> Tensor:
    """Regression head: (N, h*w, h, w) volume -> (N, 6) affine parameters."""
    k1 = weights["reg.conv1.w"].shape[2]
    k2 = weights["reg.conv2.w"].shape[2]
    x = F.relu(F.conv2d(corr, weights["reg.conv1.w"], weights["reg.conv1.b"], pad=k1 // 2))
    x = F.relu(F.conv2d(x, weights["reg.conv2.w"], weights["reg.conv2.b"], pad=k2 // 2))
    x = x.reshape(x.shape[0], -1)
    return F.linear(x, weights["reg.fc.w"], weights["reg.fc.b"])


def forward_bidirectional(src, tgt, weights: dict, cfg: BackboneConfig):
    """Inference path: (theta_ST, theta_TS) for a source/target batch."""
    f_s = extract_features(src, weights, cfg)
    f_t = extract_features(tgt, weights, cfg)
    theta_st = regress(correlate(f_s, f_t), weights)
    theta_ts = regress(correlate(f_t, f_s), weights)
    return theta_st, theta_ts


def forward_two_stream(src, tgt, tgt_aug, weights: dict, cfg: BackboneConfig):
    """Training path: (theta_ST, theta_TS, theta_ST', theta_T'S).

    Each image goes through the backbone once; all four volumes share the
    one regression head.
    """
    f_s = extract_features(src, weights, cfg)
    f_t = extract_features(tgt, weights, cfg)
    f_a = extract_features(tgt_aug, weights, cfg)
    return (
        regress(correlate(f_s, f_t), weights),
        regress(correlate(f_t, f_s), weights),
        regress(correlate(f_s, f_a), weights),
        regress(correlate(f_a, f_s), weights),
    )
