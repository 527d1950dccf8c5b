"""Synthetic aerial-style imagery, training-pair generation and dataset files.

Dataset layout on disk::

    manifest.json            format_version, root, count, image_size, seed
    gt.jsonl                 {"id": N, "theta": [6 floats]} per pair
    kp.jsonl                 {"id": N, "points": [[x, y], ...]} per pair
    pairs/NNNNNN_src.ppm     source image I_S
    pairs/NNNNNN_tgt.ppm     target image I_T

``theta`` is expressed in the cropped frame: warping ``I_S`` by it
reproduces ``I_T`` (up to temporal variation and interpolation).
Keypoints are pixel coordinates ``(x, y)`` in the target image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import affine, imageio, sampler
from .errors import FormatViolation, InsufficientTexture, PaddingLeak

FORMAT_VERSION = 1
COVERAGE_TOL = 1e-9


@dataclass
class TrainingPair:
    source: np.ndarray
    target: np.ndarray
    theta: np.ndarray
    pair_id: int = 0


@dataclass
class KeypointSet:
    pair_id: int
    points: np.ndarray  # (K, 2) pixel (x, y) in the target frame


@dataclass
class DatasetManifest:
    count: int
    image_size: int
    seed: int
    root: str = "."
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "root": self.root,
            "count": self.count,
            "image_size": self.image_size,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2) + "\n"


@dataclass
class Dataset:
    manifest: DatasetManifest
    pairs: list[TrainingPair]
    keypoints: dict[int, KeypointSet] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)


def pair_rng(seed: int, pair_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, pair_id])


# -- procedural imagery ------------------------------------------------------


def _smooth_noise(rng, size: int, cells: int, channels: int) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1, channels))
    return sampler.sample_image(coarse, sampler.lattice(size, size))


def _segment_distance(px, py, a, b) -> np.ndarray:
    d = b - a
    t = ((px - a[0]) * d[0] + (py - a[1]) * d[1]) / max(float(d @ d), 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


def gen_base_image(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    """Seeded texture: layered smooth noise, roads, buildings and tree clumps."""
    if size < 32:
        raise ValueError(f"base image size must be >= 32, got {size}")
    area = (size / 128.0) ** 2
    py, px = np.mgrid[0:size, 0:size].astype(np.float64)

    ground = rng.uniform(0.3, 0.55, size=3)
    img = np.broadcast_to(ground, (size, size, 3)).copy()
    for cells, amp in ((3, 0.18), (7, 0.10), (15, 0.05)):
        shared = _smooth_noise(rng, size, cells, 1)
        tint = _smooth_noise(rng, size, cells, 3)
        img += amp * (0.8 * shared + 0.2 * tint)

    for _ in range(rng.integers(2, 5)):
        pts = rng.uniform(-0.1 * size, 1.1 * size, size=(rng.integers(2, 5), 2))
        width = rng.uniform(1.0, 2.5)
        tone = rng.uniform(0.55, 0.85)
        dist = np.min([_segment_distance(px, py, pts[i], pts[i + 1]) for i in range(len(pts) - 1)], axis=0)
        img[dist < width] = tone

    for _ in range(int(rng.integers(14, 26) * area) + 1):
        cx, cy = rng.uniform(0, size, size=2)
        hw, hh = rng.uniform(2.5, 9.0, size=2)
        ang = rng.uniform(0, np.pi)
        c, s = np.cos(ang), np.sin(ang)
        u = (px - cx) * c + (py - cy) * s
        v = -(px - cx) * s + (py - cy) * c
        roof = rng.uniform(0.1, 0.95, size=3)
        shadow = (np.abs(u - 1.5) < hw) & (np.abs(v - 1.5) < hh)
        img[shadow] *= 0.55
        img[(np.abs(u) < hw) & (np.abs(v) < hh)] = roof

    for _ in range(int(rng.integers(4, 10) * area) + 1):
        cx, cy = rng.uniform(0, size, size=2)
        rx, ry = rng.uniform(2.0, 6.0, size=2)
        green = np.array([rng.uniform(0.05, 0.2), rng.uniform(0.25, 0.45), rng.uniform(0.05, 0.2)])
        img[((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2 < 1.0] = green

    return np.clip(img, 0.0, 1.0)


def make_temporal_variant(img: np.ndarray, rng: np.random.Generator, strength: float = 1.0) -> np.ndarray:
    """Same scene, different date: colour drift, sensor noise, repainted patches.

    Geometry is untouched; ``strength=0`` returns an identical copy.
    """
    spread = 0.25 * strength
    ranges = sampler.JitterRanges(*(((1 - spread), (1 + spread)),) * 3)
    out = sampler.color_jitter(img, rng, ranges)
    noise = rng.normal(0.0, 0.02, size=img.shape)
    if strength > 0:
        out = out + strength * noise
        h, w = img.shape[:2]
        for _ in range(int(round(3 * strength))):
            ph, pw = rng.integers(h // 16, h // 6, size=2)
            top, left = rng.integers(0, h - ph), rng.integers(0, w - pw)
            color = rng.uniform(0.1, 0.9, size=3)
            patch = out[top : top + ph, left : left + pw]
            out[top : top + ph, left : left + pw] = (1 - 0.7 * strength) * patch + 0.7 * strength * color
    return np.clip(out, 0.0, 1.0)


# -- training pairs ----------------------------------------------------------


def crop_to_full(theta_crop, full: int, crop: int) -> np.ndarray:
    """Express a crop-frame transform in the full-image frame (translation scales)."""
    s = sampler.crop_scale(full, crop)
    p = affine.as_affine(theta_crop).copy()
    p[..., 2] *= s
    p[..., 5] *= s
    return p


def make_pair(base: np.ndarray, variant: np.ndarray, theta_gt, crop: int, pair_id: int = 0) -> TrainingPair:
    """I_S = crop(base); I_T = crop(warp(variant)), with theta_gt in the crop frame.

    Raises :class:`PaddingLeak` if any zero-padded sample would land in I_T.
    """
    full = base.shape[0]
    if base.shape[:2] != (full, full) or variant.shape != base.shape:
        raise ValueError("base and variant must be square and equally sized")
    if crop >= full:
        raise ValueError(f"crop {crop} must be smaller than image size {full}")
    theta_gt = affine.as_affine(theta_gt)
    theta_full = crop_to_full(theta_gt, full, crop)
    grid = sampler.affine_grid(theta_full, full, full)
    shadow = sampler.center_crop(sampler.coverage(full, full, grid)[..., None], crop, crop)
    if np.any(shadow < 1.0 - COVERAGE_TOL):
        raise PaddingLeak(f"pair {pair_id}: padding reaches the target crop (min coverage {shadow.min():.4f})")
    warped = np.clip(sampler.sample_image(variant, grid), 0.0, 1.0)
    return TrainingPair(
        source=sampler.center_crop(base, crop, crop),
        target=sampler.center_crop(warped, crop, crop),
        theta=theta_gt,
        pair_id=pair_id,
    )


# -- keypoints ---------------------------------------------------------------


def _box_sum(a: np.ndarray, r: int) -> np.ndarray:
    return sliding_window_view(np.pad(a, r), (2 * r + 1, 2 * r + 1)).sum(axis=(-1, -2))


def corner_score(img: np.ndarray, radius: int = 2) -> np.ndarray:
    """Smaller eigenvalue of the box-summed luma structure tensor."""
    g = sampler.luma(img) if img.ndim == 3 else img
    gy, gx = np.gradient(g)
    sxx = _box_sum(gx * gx, radius)
    syy = _box_sum(gy * gy, radius)
    sxy = _box_sum(gx * gy, radius)
    return 0.5 * (sxx + syy) - np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy**2)


def pixel_to_norm(pts, h: int, w: int) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return np.stack([-1.0 + 2.0 * pts[..., 0] / (w - 1), -1.0 + 2.0 * pts[..., 1] / (h - 1)], axis=-1)


def norm_to_pixel(pts, h: int, w: int) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return np.stack([(pts[..., 0] + 1.0) * (0.5 * (w - 1)), (pts[..., 1] + 1.0) * (0.5 * (h - 1))], axis=-1)


def keypoint_candidates(img: np.ndarray, theta=None, margin: int = 3, threshold: float = 1e-4) -> np.ndarray:
    """Boolean mask of pixels eligible as keypoints.

    With ``theta`` only points whose mapped location stays ``margin`` pixels
    inside the source image are eligible (the overlapping region).
    """
    h, w = img.shape[:2]
    ok = corner_score(img) > threshold
    inner = np.zeros((h, w), dtype=bool)
    inner[margin : h - margin, margin : w - margin] = True
    ok &= inner
    if theta is not None:
        yy, xx = np.mgrid[0:h, 0:w]
        mapped = norm_to_pixel(affine.apply(theta, pixel_to_norm(np.stack([xx, yy], -1), h, w)), h, w)
        ok &= (
            (mapped[..., 0] >= margin)
            & (mapped[..., 0] <= w - 1 - margin)
            & (mapped[..., 1] >= margin)
            & (mapped[..., 1] <= h - 1 - margin)
        )
    return ok


def sample_keypoints(
    img: np.ndarray,
    k: int = 20,
    theta=None,
    min_distance: float = 5.0,
    margin: int = 3,
    threshold: float = 1e-4,
    pair_id: int = 0,
) -> KeypointSet:
    """Greedy non-max suppression over the corner score, strongest first.

    Ties are broken by row-major pixel order, so the result is a pure
    function of the image.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    score = corner_score(img)
    ok = keypoint_candidates(img, theta, margin, threshold)
    ys, xs = np.nonzero(ok)
    vals = score[ys, xs]
    order = np.lexsort((ys * img.shape[1] + xs, -vals))
    chosen: list[tuple[int, int]] = []
    for idx in order:
        x, y = int(xs[idx]), int(ys[idx])
        if all((x - cx) ** 2 + (y - cy) ** 2 >= min_distance**2 for cx, cy in chosen):
            chosen.append((x, y))
            if len(chosen) == k:
                break
    if len(chosen) < k:
        raise InsufficientTexture(f"only {len(chosen)} of {k} keypoints above threshold")
    return KeypointSet(pair_id, np.array(chosen, dtype=np.float64))


# -- dataset generation and files -------------------------------------------


def generate_pair(
    seed: int,
    pair_id: int,
    size: int = 64,
    ranges: affine.AffineRanges = affine.AffineRanges(),
    n_keypoints: int = 20,
    max_attempts: int = 20,
):
    """One (TrainingPair, KeypointSet), a pure function of (seed, pair_id)."""
    rng = pair_rng(seed, pair_id)
    for _ in range(max_attempts):
        base = gen_base_image(rng, 2 * size)
        variant = make_temporal_variant(base, rng)
        theta = affine.random_affine(rng, ranges)
        try:
            pair = make_pair(base, variant, theta, size, pair_id)
            kps = sample_keypoints(pair.target, n_keypoints, theta=theta, pair_id=pair_id)
        except (PaddingLeak, InsufficientTexture):
            continue
        return pair, kps
    raise InsufficientTexture(f"pair {pair_id}: no usable draw after {max_attempts} attempts")


def generate_dataset(
    seed: int,
    count: int,
    size: int = 64,
    ranges: affine.AffineRanges = affine.AffineRanges(),
    n_keypoints: int = 20,
) -> Dataset:
    pairs, kps = [], {}
    for i in range(count):
        pair, kp = generate_pair(seed, i, size, ranges, n_keypoints)
        pairs.append(pair)
        kps[i] = kp
    return Dataset(DatasetManifest(count=count, image_size=size, seed=seed), pairs, kps)


def _pair_path(root: Path, pair_id: int, kind: str) -> Path:
    return root / "pairs" / f"{pair_id:06d}_{kind}.ppm"


def write_dataset(root, dataset: Dataset) -> None:
    root = Path(root)
    (root / "pairs").mkdir(parents=True, exist_ok=True)
    gt_lines, kp_lines = [], []
    for pair in dataset.pairs:
        imageio.write_ppm(_pair_path(root, pair.pair_id, "src"), pair.source)
        imageio.write_ppm(_pair_path(root, pair.pair_id, "tgt"), pair.target)
        gt_lines.append(json.dumps({"id": pair.pair_id, "theta": [float(v) for v in pair.theta]}))
        kp = dataset.keypoints.get(pair.pair_id)
        if kp is not None:
            kp_lines.append(json.dumps({"id": pair.pair_id, "points": kp.points.tolist()}))
    (root / "gt.jsonl").write_text("".join(line + "\n" for line in gt_lines), encoding="utf-8")
    (root / "kp.jsonl").write_text("".join(line + "\n" for line in kp_lines), encoding="utf-8")
    (root / "manifest.json").write_text(dataset.manifest.to_json(), encoding="utf-8")


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    records = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatViolation(f"{path}:{n}: {exc}") from None
    return records


def read_manifest(root) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatViolation(f"{path}: {exc}") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatViolation(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        return DatasetManifest(
            count=int(doc["count"]),
            image_size=int(doc["image_size"]),
            seed=int(doc["seed"]),
            root=doc.get("root", "."),
        )
    except KeyError as exc:
        raise FormatViolation(f"{path}: missing field {exc}") from None


def read_dataset(root) -> Dataset:
    root = Path(root)
    manifest = read_manifest(root)
    gts = _read_jsonl(root / "gt.jsonl")
    if len(gts) != manifest.count:
        raise FormatViolation(f"{root / 'gt.jsonl'}: {len(gts)} records, manifest says {manifest.count}")
    pairs = []
    for rec in gts:
        pid = int(rec["id"])
        theta = np.array(rec["theta"], dtype=np.float64)
        if theta.shape != (6,):
            raise FormatViolation(f"{root / 'gt.jsonl'}: pair {pid} theta has shape {theta.shape}")
        src = imageio.read_ppm(_pair_path(root, pid, "src"))
        tgt = imageio.read_ppm(_pair_path(root, pid, "tgt"))
        size = manifest.image_size
        if src.shape != (size, size, 3) or tgt.shape != (size, size, 3):
            raise FormatViolation(f"pair {pid}: image size differs from manifest ({size})")
        pairs.append(TrainingPair(src, tgt, theta, pid))
    kps = {}
    for rec in _read_jsonl(root / "kp.jsonl"):
        pid = int(rec["id"])
        pts = np.array(rec["points"], dtype=np.float64).reshape(-1, 2)
        kps[pid] = KeypointSet(pid, pts)
    return Dataset(manifest, pairs, kps)
