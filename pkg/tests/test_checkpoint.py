import numpy as np
import pytest

from aerialmatch import checkpoint
from aerialmatch.checkpoint import Checkpoint
from aerialmatch.errors import FormatViolation
from aerialmatch.matchnet import TINY_CONFIG, init_weights
from aerialmatch.optim import AdamState, adam_step


@pytest.fixture
def ckpt():
    rng = np.random.default_rng(0)
    w = init_weights(TINY_CONFIG, rng)
    state = AdamState()
    adam_step(w, state, {k: rng.standard_normal(v.shape) for k, v in w.items()})
    gen = np.random.default_rng(5)
    gen.uniform(size=3)
    return Checkpoint(TINY_CONFIG, {k: v.data for k, v in w.items()}, state, 7, gen.bit_generator.state, {"note": "x"})


def test_round_trip_bit_exact(tmp_path, ckpt):
    path = tmp_path / "m.ckpt"
    checkpoint.save_model(path, ckpt)
    back = checkpoint.load_model(path)
    assert back.config == TINY_CONFIG and back.step == 7 and back.extra == {"note": "x"}
    for k, v in ckpt.weights.items():
        np.testing.assert_array_equal(back.weights[k], v)
        np.testing.assert_array_equal(back.adam.m[k], ckpt.adam.m[k])
        np.testing.assert_array_equal(back.adam.v[k], ckpt.adam.v[k])
    assert back.adam.t == 1
    gen = np.random.default_rng()
    gen.bit_generator.state = back.rng_state
    ref = np.random.default_rng(5)
    ref.uniform(size=3)
    np.testing.assert_array_equal(gen.uniform(size=4), ref.uniform(size=4))
    assert checkpoint.encode(back) == path.read_bytes()


def test_header_layout(ckpt):
    raw = checkpoint.encode(ckpt)
    assert raw[:4] == b"AEMN"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 3 * len(ckpt.weights)


def test_rejects_bad_magic(ckpt):
    raw = bytearray(checkpoint.encode(ckpt))
    raw[0] ^= 0xFF
    with pytest.raises(FormatViolation, match="magic"):
        checkpoint.decode(bytes(raw), "m.ckpt")


def test_rejects_version(ckpt):
    raw = bytearray(checkpoint.encode(ckpt))
    raw[4] = 9
    with pytest.raises(FormatViolation, match="version 9.*expected 1"):
        checkpoint.decode(bytes(raw))


@pytest.mark.parametrize("cut", [5, 40, -3])
def test_rejects_truncation(ckpt, cut):
    raw = checkpoint.encode(ckpt)
    with pytest.raises(FormatViolation):
        checkpoint.decode(raw[:cut])


def test_rejects_trailing_bytes(ckpt):
    with pytest.raises(FormatViolation, match="trailing"):
        checkpoint.decode(checkpoint.encode(ckpt) + b"\0")


def test_weights_only(ckpt):
    bare = Checkpoint(TINY_CONFIG, ckpt.weights)
    back = checkpoint.decode(checkpoint.encode(bare))
    assert back.adam is None and back.step == 0
    assert set(back.tensors()) == set(ckpt.weights)
