"""Bidirectional inference with inverse-fusion ensembling."""

from __future__ import annotations

import numpy as np

from . import affine, sampler
from .matchnet import BackboneConfig, forward_bidirectional
from .tensor import Tensor, no_grad


class Matcher:
    """Wraps trained weights; images are resized to the configured input size."""

    def __init__(self, weights: dict, cfg: BackboneConfig, mean: str = "arithmetic", ensemble: bool = True):
        self.weights = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in weights.items()}
        self.cfg = cfg
        self.mean = mean
        self.ensemble = ensemble

    def _prep(self, img: np.ndarray) -> np.ndarray:
        n = self.cfg.input_size
        return sampler.resize(img, n, n)

    def predict_both(self, src: np.ndarray, tgt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with no_grad():
            st, ts = forward_bidirectional(self._prep(src), self._prep(tgt), self.weights, self.cfg)
        return st.data[0].copy(), ts.data[0].copy()

    def fuse(self, theta_st, theta_ts) -> np.ndarray:
        if not self.ensemble:
            return np.array(theta_st)
        return affine.ensemble_fuse(theta_st, theta_ts, self.mean)

    def predict(self, src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
        return self.fuse(*self.predict_both(src, tgt))

    def predict_pair(self, pair) -> np.ndarray:
        return self.predict(pair.source, pair.target)

    __call__ = predict_pair

    def warp(self, src: np.ndarray, tgt: np.ndarray):
        """Returns (warped source, theta_ST, theta_TS, theta_used)."""
        st, ts = self.predict_both(src, tgt)
        theta = self.fuse(st, ts)
        n = self.cfg.input_size
        return sampler.warp_image(self._prep(src), theta, (n, n)), st, ts, theta
