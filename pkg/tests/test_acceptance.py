"""Acceptance gate: one test per criterion, summarised at the end of the run."""

import time

import numpy as np
import pytest

from aerialmatch import affine, checkpoint, gradcheck, imageio, losses, matchnet, pck
from aerialmatch.cli import main as cli_main
from aerialmatch.data import generate_dataset, read_dataset
from aerialmatch.errors import FormatViolation
from aerialmatch.inference import Matcher
from aerialmatch.matchnet import BackboneConfig
from aerialmatch.train import TrainConfig, train

SUITE_OPS = {
    "conv2d", "relu", "maxpool2", "global_avg_pool", "linear", "sigmoid", "l2_normalize_channels",
    "bilinear_sample", "correlate", "regress", "grid_loss", "loss_org", "loss_aug", "loss_id",
    "total_loss", "end_to_end",
}


def test_gradient_suite(criterion):
    c = criterion(1, "finite-difference gradient suite, seeds 0-2, under 2 min")
    t0 = time.perf_counter()
    results = gradcheck.run((0, 1, 2))
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_error / r.tol)
    c.detail = f"{len(results)} checks, worst {worst.op} {worst.max_rel_error:.2e}, {elapsed:.1f}s"
    assert SUITE_OPS <= {r.op for r in results}
    assert all(r.tol == (gradcheck.TOL_ELEMENTWISE if r.op in ("relu", "sigmoid") else gradcheck.TOL) for r in results)
    assert [r.op for r in results if not r.passed] == []
    assert elapsed < 120


def test_affine_algebra(criterion):
    c = criterion(2, "affine group laws, homomorphism, inverse round trip, fuse fixed point")
    rng = np.random.default_rng(2)
    n = 10_000
    a = np.stack([affine.random_affine(rng) for _ in range(n)])
    b = np.stack([affine.random_affine(rng) for _ in range(n)])
    d = np.stack([affine.random_affine(rng) for _ in range(n)])
    H = affine.to_homogeneous
    errs = {
        "associativity": np.abs(affine.compose(affine.compose(a, b), d) - affine.compose(a, affine.compose(b, d))).max(),
        "identity": max(np.abs(affine.compose(a, affine.IDENTITY) - a).max(), np.abs(affine.compose(affine.IDENTITY, a) - a).max()),
        "inverse": max(np.abs(affine.compose(a, affine.invert(a)) - affine.IDENTITY).max(),
                       np.abs(affine.compose(affine.invert(a), a) - affine.IDENTITY).max()),
        "homomorphism": np.abs(H(affine.compose(a, b)) - H(a) @ H(b)).max(),
        "round trip": np.abs(affine.invert(affine.invert(a)) - a).max(),
    }
    fused = affine.ensemble_fuse(a, affine.invert(a))
    c.detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert max(errs.values()) <= 1e-10
    assert np.array_equal(fused, a)


def test_loss_closed_forms(criterion):
    c = criterion(3, "grid loss translation closed form, weighted total")
    rng = np.random.default_rng(3)
    worst = 0.0
    for dx, dy in rng.uniform(-0.5, 0.5, (100, 2)):
        val = losses.grid_loss(affine.IDENTITY, [1, 0, dx, 0, 1, dy]).item()
        worst = max(worst, abs(val - (dx * dx + dy * dy)))
    # sub-losses built from translations so each grid loss is a known squared offset
    t = lambda x, y=0.0: np.array([1.0, 0, x, 0, 1.0, y])
    gt = t(0.2)
    preds = (t(0.3), t(-0.2, 0.2), t(0.5), t(-0.2, 0.25))
    # theta_ST off by 0.1 in x; theta_TS off by 0.2 in y from invert(gt) = t(-0.2)
    expect_org = 0.1**2 + 0.2**2
    expect_aug = 0.3**2 + 0.25**2
    expect_id = 0.2**2 + 0.05**2
    terms = losses.loss_terms(preds, gt)
    total = losses.total_loss(preds, gt).item()
    hand = 0.5 * expect_org + 0.3 * expect_aug + 0.2 * expect_id
    errs = [abs(terms["l_org"].item() - expect_org), abs(terms["l_aug"].item() - expect_aug),
            abs(terms["l_id"].item() - expect_id), abs(total - hand)]
    c.detail = f"translation max err {worst:.1e}, weighted max err {max(errs):.1e}"
    assert worst <= 1e-12
    assert max(errs) <= 1e-12


def brute_pck(theta_hat, theta_gt, pts, size, tau):
    correct = 0
    for x, y in pts:
        nx, ny = -1 + 2 * x / (size - 1), -1 + 2 * y / (size - 1)
        hx = theta_hat[0] * nx + theta_hat[1] * ny + theta_hat[2]
        hy = theta_hat[3] * nx + theta_hat[4] * ny + theta_hat[5]
        gx = theta_gt[0] * nx + theta_gt[1] * ny + theta_gt[2]
        gy = theta_gt[3] * nx + theta_gt[4] * ny + theta_gt[5]
        dist = np.hypot((hx - gx) * (size - 1) / 2, (hy - gy) * (size - 1) / 2)
        correct += bool(dist < tau * size)
    return correct


def test_pck_oracle(criterion):
    c = criterion(4, "pooled PCK equals brute-force recount, monotone, exact and boundary cases")
    ds = generate_dataset(seed=40, count=50)
    rng = np.random.default_rng(4)
    preds = {p.pair_id: p.theta + 0.03 * rng.standard_normal(6) for p in ds.pairs}
    taus = [0.01, 0.03, 0.05, 0.1, 0.3]
    rep = pck.pck_dataset(preds, ds, taus)
    brute = [sum(brute_pck(preds[p.pair_id], p.theta, ds.keypoints[p.pair_id].points, 64, t) for p in ds.pairs) for t in taus]
    exact = pck.pck_dataset(lambda p: p.theta, ds, taus)
    # shift every prediction by ~8 px and put the threshold exactly on the nearest point;
    # scaling by the power of two 64 is exact, so that point sits on the boundary
    shift = {p.pair_id: p.theta + [0, 0, 16 / 63, 0, 0, 0] for p in ds.pairs}
    d = np.concatenate([pck.keypoint_distances(shift[p.pair_id], p.theta, ds.keypoints[p.pair_id].points, 64, 64) for p in ds.pairs])
    tau_b = d.min() / 64
    assert tau_b * 64 == d.min()
    boundary = pck.pck_dataset(shift, ds, [tau_b, np.nextafter(d.min(), np.inf) / 64])
    c.detail = f"counts {rep.correct} of {rep.total}, boundary tau {tau_b:.6f}"
    assert rep.correct == brute and rep.total == 1000
    assert rep.scores == sorted(rep.scores)
    assert exact.scores == [1.0] * len(taus)
    assert boundary.correct[0] == 0 and boundary.correct[1] >= 1


def test_ensemble_perturbation(criterion):
    c = criterion(5, "ensemble beats forward estimate in >= 95% of 1000 perturbation trials")
    rng = np.random.default_rng(5)
    wins = 0
    for _ in range(1000):
        gt = affine.random_affine(rng)
        delta = np.zeros((3, 3))
        delta[:2] = rng.uniform(-0.1, 0.1, (2, 3))
        H = affine.to_homogeneous(gt)
        st = affine.from_homogeneous(H @ (np.eye(3) + delta))
        ts = affine.invert(affine.from_homogeneous(H @ (np.eye(3) - delta)))
        fused = affine.ensemble_fuse(st, ts)
        wins += losses.grid_loss(fused, gt).item() <= losses.grid_loss(st, gt).item()
    c.detail = f"{wins}/1000"
    assert wins >= 950


@pytest.fixture(scope="module")
def trend_run():
    ds = generate_dataset(seed=0, count=200)
    cfg = TrainConfig(lr=5e-4, batch=10, iterations=300, seed=0, backbone=BackboneConfig())
    records = []

    class Sink:
        def write(self, line):
            import json

            rec = json.loads(line)
            if "step" in rec:
                records.append(rec)

    t0 = time.perf_counter()
    ckpt = train(ds, cfg, Sink())
    return ckpt, records, time.perf_counter() - t0


@pytest.mark.slow
def test_training_trend(criterion, trend_run):
    c = criterion(6, "300-step training: last-50 mean loss < 50% of first-50, no NaN, < 15 min")
    ckpt, records, elapsed = trend_run
    loss = np.array([r["loss"] for r in records])
    first, last = loss[:50].mean(), loss[-50:].mean()
    c.detail = f"first {first:.4f}, last {last:.4f}, ratio {last / first:.3f}, {elapsed:.0f}s"
    assert len(loss) == 300 and ckpt.step == 300
    assert np.all(np.isfinite(loss))
    assert last < 0.5 * first
    assert elapsed < 15 * 60


@pytest.mark.slow
def test_matching_gain(criterion, trend_run):
    c = criterion(7, "trained ensemble PCK@0.1 on 50 held-out pairs beats identity")
    ckpt, _, _ = trend_run
    held = generate_dataset(seed=1000, count=50)
    model = pck.pck_dataset(Matcher(ckpt.weights, ckpt.config), held, [0.1]).scores[0]
    ident = pck.pck_dataset(lambda p: affine.IDENTITY, held, [0.1]).scores[0]
    c.detail = f"model {model:.3f} vs identity {ident:.3f}"
    assert model > ident


def test_determinism_and_formats(criterion, tmp_path):
    c = criterion(8, "byte-identical regeneration and retraining, bit-exact round trips, corruption rejected")

    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    for run in ("a", "b"):
        assert cli_main(["gen-data", "--seed", "8", "--count", "5", "--out", str(tmp_path / run / "data")]) == 0
        assert cli_main(["train", "--data", str(tmp_path / run / "data"), "--out", str(tmp_path / run / "m.ckpt"),
                         "--iterations", "3", "--batch", "2", "--seed", "8"]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")

    ckpt = checkpoint.load_model(tmp_path / "a" / "m.ckpt")
    assert checkpoint.encode(checkpoint.decode(checkpoint.encode(ckpt))) == checkpoint.encode(ckpt)
    ppm = (tmp_path / "a" / "data" / "pairs" / "000000_src.ppm").read_bytes()
    assert imageio.encode_ppm(imageio.decode_ppm(ppm)) == ppm
    ds = read_dataset(tmp_path / "a" / "data")
    assert np.array_equal(imageio.decode_ppm(imageio.encode_ppm(ds.pairs[0].source)), ds.pairs[0].source)

    rejected = 0
    raw = (tmp_path / "a" / "m.ckpt").read_bytes()
    for bad in (b"ZZZZ" + raw[4:], raw[:-1], raw + b"\0"):
        with pytest.raises(FormatViolation):
            checkpoint.decode(bad)
        rejected += 1
    for bad in (b"P3" + ppm[2:], ppm[:-1]):
        with pytest.raises(FormatViolation):
            imageio.decode_ppm(bad)
        rejected += 1
    c.detail = f"{len(tree(tmp_path / 'a'))} files identical, {rejected} corruptions rejected"


def test_two_stream_consistency(criterion):
    c = criterion(9, "two-stream: identical augmented target, loss_id zero, swap symmetry")
    cfg = BackboneConfig()
    rng = np.random.default_rng(9)
    w = matchnet.init_weights(cfg, rng)
    w["reg.fc.w"].data[...] = 0.01 * rng.standard_normal(w["reg.fc.w"].shape)
    s, t = rng.uniform(0, 1, (2, 3, 64, 64, 3))
    st, ts, st_a, ts_a = matchnet.forward_two_stream(s, t, t, w, cfg)
    lid = losses.loss_id(st, ts, st_a, ts_a).item()
    sw = matchnet.forward_two_stream(t, s, s, w, cfg)
    c.detail = f"loss_id {lid:.1e}"
    assert np.array_equal(st.data, st_a.data) and np.array_equal(ts.data, ts_a.data)
    assert abs(lid) <= 1e-10
    assert np.array_equal(sw[0].data, ts.data) and np.array_equal(sw[1].data, st.data)
    assert not np.array_equal(st.data, ts.data)
