"""Probability of correct keypoints.

A keypoint ``p`` (target-frame pixels) is correct when its images under the
predicted and the ground-truth transform lie strictly closer than
``tau * max(h, w)`` pixels.  Dataset scores pool all keypoints of all pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import affine
from .data import Dataset, norm_to_pixel, pixel_to_norm
from .errors import MissingKeypoints

DEFAULT_TAUS = (0.05, 0.03, 0.01)
TEXT_TAUS = (0.1, 0.3, 0.5)


def keypoint_distances(theta_hat, theta_gt, points, h: int, w: int) -> np.ndarray:
    norm = pixel_to_norm(points, h, w)
    a = norm_to_pixel(affine.apply(theta_hat, norm), h, w)
    b = norm_to_pixel(affine.apply(theta_gt, norm), h, w)
    return np.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])


def pck_pair(theta_hat, theta_gt, points, h: int, w: int, tau: float) -> tuple[int, int]:
    if tau <= 0:
        raise ValueError("tau must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    d = keypoint_distances(theta_hat, theta_gt, points, h, w)
    return int(np.count_nonzero(d < tau * max(h, w))), len(points)


@dataclass
class PckReport:
    taus: list[float]
    correct: list[int]
    total: int
    thresholds: dict[int, list[float]] = field(default_factory=dict)
    per_pair: dict[int, dict] = field(default_factory=dict)

    @property
    def scores(self) -> list[float]:
        return [c / self.total if self.total else 0.0 for c in self.correct]

    def to_records(self) -> list[dict]:
        return [
            {"tau": t, "pck": s, "correct": c, "total": self.total}
            for t, s, c in zip(self.taus, self.scores, self.correct)
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_records())

    def to_table(self) -> str:
        lines = [f"{'tau':>8}  {'pck':>8}  {'correct':>8}  {'total':>8}"]
        for r in self.to_records():
            lines.append(f"{r['tau']:>8g}  {r['pck']:>8.4f}  {r['correct']:>8d}  {r['total']:>8d}")
        return "\n".join(lines)


def pck_dataset(predict, dataset: Dataset, taus=DEFAULT_TAUS) -> PckReport:
    """Pooled PCK over ``dataset``.

    ``predict`` is either a mapping ``pair_id -> theta_hat`` or a callable
    taking a :class:`~aerialmatch.data.TrainingPair` and returning theta_hat.
    """
    taus = [float(t) for t in taus]
    correct = [0] * len(taus)
    total = 0
    report = PckReport(taus, correct, 0)
    for pair in dataset.pairs:
        kp = dataset.keypoints.get(pair.pair_id)
        if kp is None:
            raise MissingKeypoints(f"no keypoints for pair {pair.pair_id}")
        theta_hat = predict(pair) if callable(predict) else predict[pair.pair_id]
        h, w = pair.target.shape[:2]
        counts = [pck_pair(theta_hat, pair.theta, kp.points, h, w, t) for t in taus]
        for i, (c, _) in enumerate(counts):
            correct[i] += c
        total += len(kp.points)
        report.per_pair[pair.pair_id] = {"correct": [c for c, _ in counts], "total": len(kp.points)}
        report.thresholds[pair.pair_id] = [t * max(h, w) for t in taus]
    report.total = total
    return report
