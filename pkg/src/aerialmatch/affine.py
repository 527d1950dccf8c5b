"""Affine parameter algebra.

Parameters are float64 arrays of shape ``(..., 6)`` ordered
``[a1, a2, tx, a3, a4, ty]``, i.e. the top two rows of the homogeneous
matrix ``[[a1, a2, tx], [a3, a4, ty], [0, 0, 1]]``.

Coordinate convention (used everywhere in the package): points live in a
normalized frame where the image extent spans ``[-1, 1]`` on each axis,
x to the right, y downward.  A transform ``theta_ST`` maps *target-frame*
coordinates to *source-frame* sampling coordinates, the spatial-transformer
convention, so warping the source onto the target is a single grid sample
``out(p) = source(apply(theta_ST, p))``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMean, SingularTransform

DET_TOL = 1e-9
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
MEAN_KINDS = ("arithmetic", "harmonic", "geometric")


def as_affine(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1:] != (6,):
        raise ValueError(f"affine parameters need a trailing dimension of 6, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("affine parameters must be finite")
    return p


def identity(batch: int | None = None) -> np.ndarray:
    if batch is None:
        return IDENTITY.copy()
    return np.tile(IDENTITY, (batch, 1))


def determinant(p) -> np.ndarray:
    p = as_affine(p)
    return p[..., 0] * p[..., 4] - p[..., 1] * p[..., 3]


def to_homogeneous(p) -> np.ndarray:
    p = as_affine(p)
    m = np.zeros(p.shape[:-1] + (3, 3))
    m[..., 0, :] = p[..., 0:3]
    m[..., 1, :] = p[..., 3:6]
    m[..., 2, 2] = 1.0
    return m


def from_homogeneous(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., 0, :], m[..., 1, :]], axis=-1)


def invert(p) -> np.ndarray:
    """Closed-form inverse of the homogeneous matrix, returned as parameters."""
    p = as_affine(p)
    det = determinant(p)
    if np.any(np.abs(det) < DET_TOL):
        raise SingularTransform(f"|det| below {DET_TOL:g}: {np.min(np.abs(det)):.3g}")
    a1, a2, tx, a3, a4, ty = np.moveaxis(p, -1, 0)
    b1 = a4 / det
    b2 = -a2 / det
    b3 = -a3 / det
    b4 = a1 / det
    return np.stack([b1, b2, -(b1 * tx + b2 * ty), b3, b4, -(b3 * tx + b4 * ty)], axis=-1)


def compose(outer, inner) -> np.ndarray:
    """Parameters of ``outer ∘ inner`` (apply ``inner`` first)."""
    outer, inner = as_affine(outer), as_affine(inner)
    return from_homogeneous(to_homogeneous(outer) @ to_homogeneous(inner))


def apply(p, pts) -> np.ndarray:
    """Map points of shape ``(..., 2)``.

    Leading dimensions of ``p[..., k]`` and the points broadcast with the
    usual numpy rules, so a batch ``(N, 6)`` pairs with points ``(N, 2)``.
    """
    p = as_affine(p)
    pts = np.asarray(pts, dtype=np.float64)
    x, y = pts[..., 0], pts[..., 1]
    xo = p[..., 0] * x + p[..., 1] * y + p[..., 2]
    yo = p[..., 3] * x + p[..., 4] * y + p[..., 5]
    return np.stack([xo, yo], axis=-1)


def _fuse(a: np.ndarray, b: np.ndarray, mean: str):
    arith = 0.5 * (a + b)
    if mean == "arithmetic":
        return arith, np.zeros(a.shape, dtype=bool)
    same = a * b > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        if mean == "harmonic":
            val = 2.0 * a * b / (a + b)
        else:
            val = np.sign(a) * np.sqrt(np.abs(a * b))
    out = np.where(same, val, arith)
    equal = a == b
    out = np.where(equal & ~same, a, out)
    return out, ~(same | equal)


def ensemble_fuse(fwd, bwd, mean: str = "arithmetic", return_mask: bool = False):
    """Fuse the forward estimate with the inverse of the backward estimate.

    The mean is taken entrywise over the six parameters.  Harmonic and
    geometric means are only defined for same-sign pairs; any other pair
    (unless both entries are equal) falls back to the arithmetic mean and a
    :class:`DegenerateMean` warning is emitted.  With ``return_mask`` the
    boolean mask of fallback entries is returned alongside the result.
    """
    if mean not in MEAN_KINDS:
        raise ValueError(f"unknown mean {mean!r}; expected one of {MEAN_KINDS}")
    fwd = as_affine(fwd)
    bwd = as_affine(bwd)
    bwd_inv = invert(bwd)
    # a backward estimate that is bitwise the computed inverse of the forward
    # one agrees with it exactly; skip the lossy double inversion
    consistent = np.all(invert(fwd) == bwd, axis=-1, keepdims=True)
    bwd_inv = np.where(consistent, fwd, bwd_inv)
    out, degenerate = _fuse(fwd, bwd_inv, mean)
    if degenerate.any():
        warnings.warn(
            f"{mean} mean undefined for {int(degenerate.sum())} entries; used arithmetic",
            DegenerateMean,
            stacklevel=2,
        )
    if return_mask:
        return out, degenerate
    return out


@dataclass(frozen=True)
class AffineRanges:
    rotation_deg: float = 30.0
    scale: tuple[float, float] = (0.8, 1.2)
    shear: float = 0.1
    translation: float = 0.15

    def __post_init__(self):
        lo, hi = self.scale
        if not (0 < lo <= hi):
            raise ValueError("scale range must satisfy 0 < lo <= hi")
        if self.rotation_deg < 0 or self.shear < 0 or self.translation < 0:
            raise ValueError("range half-widths must be nonnegative")

    @classmethod
    def collapsed(cls) -> "AffineRanges":
        return cls(rotation_deg=0.0, scale=(1.0, 1.0), shear=0.0, translation=0.0)

    def contains(self, p, slack: float = 1e-9) -> bool:
        """Whether ``p`` can be produced by :func:`random_affine` with these ranges."""
        lin, t = decompose(p)
        rot, sx, sy, sh = lin
        lo, hi = self.scale
        return bool(
            abs(np.degrees(rot)) <= self.rotation_deg + slack
            and lo - slack <= sx <= hi + slack
            and lo - slack <= sy <= hi + slack
            and abs(sh) <= self.shear + slack
            and np.all(np.abs(t) <= self.translation + slack)
        )


def _linear(rot: float, sx: float, sy: float, sh: float) -> np.ndarray:
    c, s = np.cos(rot), np.sin(rot)
    r = np.array([[c, -s], [s, c]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    return r @ shear @ np.diag([sx, sy])


def decompose(p):
    """Inverse of the generator's factorisation: ``((rot, sx, sy, shear), (tx, ty))``.

    Uses a QR split of the linear part (rotation times upper-triangular).
    Only meaningful for positive determinants.
    """
    p = as_affine(p)
    a = np.array([[p[0], p[1]], [p[3], p[4]]])
    sx = np.hypot(a[0, 0], a[1, 0])
    rot = np.arctan2(a[1, 0], a[0, 0])
    c, s = np.cos(rot), np.sin(rot)
    u = np.array([[c, s], [-s, c]]) @ a
    sy = u[1, 1]
    sh = u[0, 1] / sy
    return (rot, sx, sy, sh), np.array([p[2], p[5]])


def random_affine(rng: np.random.Generator, ranges: AffineRanges = AffineRanges()) -> np.ndarray:
    """Draw ``translation ∘ (rotation · shear · scale)`` uniformly per factor."""
    rot = np.radians(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg))
    sx = rng.uniform(*ranges.scale)
    sy = rng.uniform(*ranges.scale)
    sh = rng.uniform(-ranges.shear, ranges.shear)
    tx = rng.uniform(-ranges.translation, ranges.translation)
    ty = rng.uniform(-ranges.translation, ranges.translation)
    a = _linear(rot, sx, sy, sh)
    return np.array([a[0, 0], a[0, 1], tx, a[1, 0], a[1, 1], ty])


def format_affine(p) -> str:
    """Whitespace-separated text form; ``repr`` keeps full float64 precision."""
    return " ".join(repr(float(v)) for v in as_affine(p).reshape(6))


def parse_affine(text: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != 6:
        raise ValueError(f"expected 6 numbers, got {len(parts)}")
    return as_affine([float(v) for v in parts])
