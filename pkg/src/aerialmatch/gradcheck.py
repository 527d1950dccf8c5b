"""Central finite-difference checks for every differentiable op.

Each check projects the op output onto a fixed random direction to get a
scalar, compares the reverse-mode gradient with ``(f(x+h) - f(x-h)) / 2h``
and reports the largest elementwise relative error
``|a - n| / max(|a|, |n|, GRAD_FLOOR)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import affine, losses, matchnet
from . import functional as F
from .sampler import bilinear_sample
from .tensor import Tensor, backward, no_grad

STEP = 1e-5
GRAD_FLOOR = 1e-4
TOL = 1e-4
TOL_ELEMENTWISE = 1e-5


@dataclass
class GradResult:
    op: str
    seed: int
    max_rel_error: float
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: list[np.ndarray],
    rng: np.random.Generator,
    wrt: list[int] | None = None,
    max_entries: int | None = None,
    h: float = STEP,
) -> tuple[float, int]:
    """Max relative error of d(<fn(inputs), R>)/d(inputs[i]) over the checked entries."""
    wrt = list(range(len(inputs))) if wrt is None else wrt
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(x, requires_grad=i in wrt) for i, x in enumerate(inputs)]
    out = fn(*tensors)
    proj = rng.standard_normal(out.shape)
    backward((out * proj).sum())

    def value() -> float:
        with no_grad():
            return float(np.sum(fn(*[Tensor(x) for x in inputs]).data * proj))

    worst, count = 0.0, 0
    for i in wrt:
        x = inputs[i]
        flat = x.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        analytic = tensors[i].grad.reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for n, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + h
            fp = value()
            flat[j] = orig - h
            fm = value()
            flat[j] = orig
            numeric[n] = (fp - fm) / (2 * h)
        worst = max(worst, rel_error(analytic, numeric))
        count += len(idx)
    return worst, count


def _away_from_zero(rng, shape, band=1e-3):
    x = rng.standard_normal(shape)
    small = np.abs(x) < band
    x[small] = np.sign(x[small] + 1e-300) * (band + rng.uniform(0, 1, small.sum()))
    return x


def _grid_off_knots(rng, n, ho, wo, h, w):
    """Sample coordinates whose pixel-space fractional part avoids the kinks at integers."""
    px = rng.integers(-1, w, size=(n, ho, wo)) + rng.uniform(0.1, 0.9, size=(n, ho, wo))
    py = rng.integers(-1, h, size=(n, ho, wo)) + rng.uniform(0.1, 0.9, size=(n, ho, wo))
    return np.stack([px / (0.5 * (w - 1)) - 1.0, py / (0.5 * (h - 1)) - 1.0], axis=-1)


def _tiny_weights(rng, cfg=matchnet.TINY_CONFIG):
    w = matchnet.init_weights(cfg, rng)
    # a zero head would make every upstream gradient vanish
    w["reg.fc.w"].data[...] = 0.1 * rng.standard_normal(w["reg.fc.w"].shape)
    for k, v in w.items():
        if k.endswith(".b") or k.endswith("b1") or k.endswith("b2"):
            v.data[...] = 0.05 * rng.standard_normal(v.shape)
    return {k: v.data for k, v in w.items()}


def _near_identity(rng, n):
    return affine.identity(n) + 0.1 * rng.standard_normal((n, 6))


def suite(seed: int):
    """Yield (name, tol, fn, inputs, wrt, max_entries) for every op."""
    rng = np.random.default_rng([seed, 7])
    cfg = matchnet.TINY_CONFIG
    yield "conv2d", TOL, lambda x, k, b: F.conv2d(x, k, b, stride=1, pad=1), [
        rng.standard_normal((1, 2, 6, 6)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    ], None, None
    yield "conv2d_stride2", TOL, lambda x, k, b: F.conv2d(x, k, b, stride=2, pad=1), [
        rng.standard_normal((2, 2, 7, 7)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    ], None, None
    yield "relu", TOL_ELEMENTWISE, F.relu, [_away_from_zero(rng, (2, 3, 4, 4))], None, None
    yield "maxpool2", TOL, F.maxpool2, [rng.standard_normal((2, 3, 4, 6))], None, None
    yield "global_avg_pool", TOL, F.global_avg_pool, [rng.standard_normal((2, 3, 4, 5))], None, None
    yield "linear", TOL, F.linear, [
        rng.standard_normal((3, 5)), rng.standard_normal((5, 4)), rng.standard_normal(4)
    ], None, None
    yield "sigmoid", TOL_ELEMENTWISE, F.sigmoid, [3 * rng.standard_normal((3, 7))], None, None
    yield "l2_normalize_channels", TOL, lambda x: F.l2_normalize_channels(x, 1e-12), [
        rng.standard_normal((2, 4, 3, 3))
    ], None, None
    yield "bilinear_sample", TOL, bilinear_sample, [
        rng.standard_normal((2, 2, 5, 6)), _grid_off_knots(rng, 2, 3, 4, 5, 6)
    ], None, None
    f = np.abs(rng.standard_normal((2, 5, 3, 3)))
    yield "correlate", TOL, matchnet.correlate, [f, f + 0.3 * rng.standard_normal(f.shape)], None, None
    yield "se_block", TOL, matchnet.se_block, [
        rng.standard_normal((2, 8, 3, 3)),
        rng.standard_normal((8, 2)), rng.standard_normal(2),
        rng.standard_normal((2, 8)), rng.standard_normal(8),
    ], None, None

    w = _tiny_weights(rng, cfg)
    reg_names = [k for k in w if k.startswith("reg.")]
    hw = cfg.feature_size**2
    corr = np.abs(rng.standard_normal((2, hw, cfg.feature_size, cfg.feature_size)))

    def regress_fn(c, *params):
        return matchnet.regress(c, dict(zip(reg_names, params)))

    yield "regress", TOL, regress_fn, [corr] + [w[k] for k in reg_names], None, None

    gt = affine.compose(affine.identity(3), _near_identity(rng, 3))
    yield "grid_loss", TOL, losses.grid_loss, [_near_identity(rng, 3), _near_identity(rng, 3)], None, None
    yield "loss_org", TOL, lambda a, b: losses.loss_org(a, b, gt), [
        _near_identity(rng, 3), _near_identity(rng, 3)
    ], None, None
    yield "loss_aug", TOL, lambda a, b: losses.loss_aug(a, b, gt), [
        _near_identity(rng, 3), _near_identity(rng, 3)
    ], None, None
    yield "loss_id", TOL, losses.loss_id, [_near_identity(rng, 3) for _ in range(4)], None, None
    yield "total_loss", TOL, lambda *p: losses.total_loss(p, gt), [
        _near_identity(rng, 3) for _ in range(4)
    ], None, None

    names = list(w)
    n_img = 2
    imgs = [rng.uniform(0, 1, (n_img, cfg.input_size, cfg.input_size, 3)) for _ in range(3)]
    theta_gt = affine.identity(n_img) + 0.1 * rng.uniform(-1, 1, (n_img, 6))

    def end_to_end(*params):
        weights = dict(zip(names, params))
        preds = matchnet.forward_two_stream(*imgs, weights, cfg)
        return losses.total_loss(preds, theta_gt)

    yield "end_to_end", TOL, end_to_end, [w[k] for k in names], None, 40


def run(seeds=(0,), only: set[str] | None = None) -> list[GradResult]:
    results = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 11])
        for name, tol, fn, inputs, wrt, max_entries in suite(seed):
            if only is not None and name not in only:
                continue
            err, n = check_gradients(fn, inputs, rng, wrt, max_entries)
            results.append(GradResult(name, seed, err, tol, n))
    return results


def report(results: list[GradResult], elapsed: float | None = None) -> str:
    lines = [f"{'op':<24}{'seed':>5}{'max rel err':>14}{'tol':>10}{'n':>6}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.op:<24}{r.seed:>5}{r.max_rel_error:>14.3e}{r.tol:>10.0e}{r.n_checked:>6}  {status}")
    if elapsed is not None:
        lines.append(f"elapsed {elapsed:.1f}s")
    return "\n".join(lines)


def main_check(seeds=(0,)) -> tuple[bool, str]:
    t0 = time.perf_counter()
    results = run(seeds)
    return all(r.passed for r in results), report(results, time.perf_counter() - t0)
