"""Affine sampling grids, differentiable bilinear sampling and image utilities.

Images are float64 arrays ``(H, W, 3)`` with values in ``[0, 1]``.  Pixel
``(i, j)`` sits at normalized coordinates ``x = -1 + 2j/(W-1)``,
``y = -1 + 2i/(H-1)`` so sampling at the identity grid hits pixel centres
exactly.  Samples outside the image read zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import affine
from .errors import ShapeMismatch
from .tensor import Tensor, record

LUMA = np.array([0.299, 0.587, 0.114])


def lattice(h: int, w: int) -> np.ndarray:
    """Regular normalized lattice, shape (h, w, 2) holding (x, y)."""
    if h < 2 or w < 2:
        raise ShapeMismatch(f"grid extents must be >= 2, got {h}x{w}")
    xs = -1.0 + 2.0 * np.arange(w) / (w - 1)
    ys = -1.0 + 2.0 * np.arange(h) / (h - 1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def affine_grid(p, h_out: int, w_out: int) -> np.ndarray:
    """Source sampling coordinates for every output pixel.

    ``p`` of shape (6,) gives (h_out, w_out, 2); a batch (N, 6) gives
    (N, h_out, w_out, 2).
    """
    p = affine.as_affine(p)
    base = lattice(h_out, w_out)
    if p.ndim == 1:
        return affine.apply(p, base)
    return affine.apply(p[:, None, None, :], base[None])


SNAP_TOL = 1e-9


def _snap(p: np.ndarray) -> np.ndarray:
    r = np.rint(p)
    return np.where(np.abs(p - r) < SNAP_TOL, r, p)


def _taps(src: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    """Corner values/weights for bilinear interpolation.

    src is (N, C, H, W); gx, gy are (N, Ho, Wo).  Returns the four corner
    values (N, Ho, Wo, C) with out-of-bounds corners zeroed, their indices
    and validity masks, and the fractional offsets.
    """
    n, c, h, w = src.shape
    px = (gx + 1.0) * (0.5 * (w - 1))
    py = (gy + 1.0) * (0.5 * (h - 1))
    # undo the ulp lost in the normalize/denormalize round trip so knots are hit exactly
    px = _snap(px)
    py = _snap(py)
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    nidx = np.arange(n)[:, None, None]
    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc, xc = np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)
        vals = src[nidx, :, yc, xc] * valid[..., None]
        corners.append((vals, yc, xc, valid))
    return corners, fx, fy


def _interp(corners, fx, fy) -> np.ndarray:
    (v00, *_), (v01, *_), (v10, *_), (v11, *_) = corners
    wx1, wy1 = fx[..., None], fy[..., None]
    wx0, wy0 = 1.0 - wx1, 1.0 - wy1
    return wy0 * wx0 * v00 + wy0 * wx1 * v01 + wy1 * wx0 * v10 + wy1 * wx1 * v11


def bilinear_sample(src: Tensor, grid) -> Tensor:
    """Sample ``src`` (N, C, H, W) at ``grid`` (N or none, Ho, Wo, 2).

    Differentiable w.r.t. the source values and, when ``grid`` is a Tensor,
    the grid coordinates.
    """
    if not isinstance(grid, Tensor):
        grid = Tensor(grid)
    n, c, h, w = src.shape
    gdata = grid.data
    if gdata.ndim == 3:
        gdata = np.broadcast_to(gdata, (n,) + gdata.shape)
    if gdata.shape[0] != n or gdata.shape[-1] != 2:
        raise ShapeMismatch(f"grid {grid.shape} incompatible with source {src.shape}")
    gx, gy = gdata[..., 0], gdata[..., 1]
    corners, fx, fy = _taps(src.data, gx, gy)
    out = _interp(corners, fx, fy).transpose(0, 3, 1, 2)

    def grads(g):
        g = g.transpose(0, 2, 3, 1)  # (N, Ho, Wo, C)
        wx1, wy1 = fx[..., None], fy[..., None]
        wx0, wy0 = 1.0 - wx1, 1.0 - wy1
        gsrc = None
        if src.requires_grad:
            acc = np.zeros((n, h, w, c))
            nidx = np.broadcast_to(np.arange(n)[:, None, None], fx.shape)
            for (_, yc, xc, valid), wgt in zip(
                corners, (wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1)
            ):
                np.add.at(acc, (nidx, yc, xc), g * wgt * valid[..., None])
            gsrc = acc.transpose(0, 3, 1, 2)
        ggrid = None
        if grid.requires_grad:
            (v00, *_), (v01, *_), (v10, *_), (v11, *_) = corners
            dpx = np.sum(g * (wy0 * (v01 - v00) + wy1 * (v11 - v10)), axis=-1)
            dpy = np.sum(g * (wx0 * (v10 - v00) + wx1 * (v11 - v01)), axis=-1)
            ggrid = np.stack([dpx * 0.5 * (w - 1), dpy * 0.5 * (h - 1)], axis=-1)
            if grid.ndim == 3:
                ggrid = ggrid.sum(axis=0)
        return gsrc, ggrid

    return record(out, (src, grid), grads, "bilinear_sample")


def _to_nchw(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1)[None]


def sample_image(img: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Non-differentiable bilinear sampling of an (H, W, C) array."""
    corners, fx, fy = _taps(_to_nchw(img), grid[None, ..., 0], grid[None, ..., 1])
    return _interp(corners, fx, fy)[0]


def coverage(h: int, w: int, grid: np.ndarray) -> np.ndarray:
    """Fraction of each sample's bilinear weight that falls inside an h x w image."""
    return sample_image(np.ones((h, w, 1)), grid)[..., 0]


def warp_image(img: np.ndarray, p, out_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Resample ``img`` so that ``out(q) = img(apply(p, q))``; result clamped to [0, 1]."""
    affine.invert(p)  # rejects singular transforms
    h, w = img.shape[:2] if out_hw is None else out_hw
    return np.clip(sample_image(img, affine_grid(p, h, w)), 0.0, 1.0)


def resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    if img.shape[:2] == (h, w):
        return np.array(img, dtype=np.float64)
    return warp_image(img, affine.IDENTITY, (h, w))


def center_crop(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    if (h - out_h) % 2 or (w - out_w) % 2:
        raise ShapeMismatch(f"crop {h}x{w} -> {out_h}x{out_w} is not centred (parity)")
    top, left = (h - out_h) // 2, (w - out_w) // 2
    return img[top : top + out_h, left : left + out_w].copy()


def crop_scale(full: int, crop: int) -> float:
    """Normalized-coordinate scale from a centred crop frame to the full frame.

    A symmetric crop maps crop coordinate ``x_c`` to full coordinate
    ``x_c * (crop - 1) / (full - 1)`` with no offset.
    """
    return (crop - 1) / (full - 1)


@dataclass(frozen=True)
class JitterRanges:
    brightness: tuple[float, float] = (0.6, 1.4)
    contrast: tuple[float, float] = (0.6, 1.4)
    saturation: tuple[float, float] = (0.6, 1.4)

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} range must satisfy 0 <= lo <= hi")

    @classmethod
    def collapsed(cls) -> "JitterRanges":
        return cls((1.0, 1.0), (1.0, 1.0), (1.0, 1.0))


def luma(img: np.ndarray) -> np.ndarray:
    return img @ LUMA


def adjust(img: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    """Brightness, then contrast about the mean luma, then saturation; clamped after each."""
    out = np.clip(img * brightness, 0.0, 1.0)
    mean = luma(out).mean()
    out = np.clip(out * contrast + mean * (1.0 - contrast), 0.0, 1.0)
    gray = luma(out)[..., None]
    return np.clip(out * saturation + gray * (1.0 - saturation), 0.0, 1.0)


def color_jitter(img: np.ndarray, rng: np.random.Generator, ranges: JitterRanges = JitterRanges()) -> np.ndarray:
    b = rng.uniform(*ranges.brightness)
    c = rng.uniform(*ranges.contrast)
    s = rng.uniform(*ranges.saturation)
    return adjust(img, b, c, s)
