"""Binary model checkpoints.

Layout (all integers and floats little-endian)::

    b"AEMN"  u32 version  u32 n_tensors
    n_tensors x { u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dim, f64 values }
    u32 n_blobs
    n_blobs   x { u16 name_len, name (UTF-8), u32 byte_len, bytes }

Tensors are named ``w/<param>``, ``adam.m/<param>`` and ``adam.v/<param>``.
Blobs hold JSON: ``config`` (BackboneConfig), ``adam`` (hyperparameters and
step count) and ``state`` (training step, rng state, train config).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatViolation
from .matchnet import BackboneConfig
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"AEMN"
VERSION = 1


@dataclass
class Checkpoint:
    config: BackboneConfig
    weights: dict[str, np.ndarray]
    adam: AdamState | None = None
    step: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v.copy(), requires_grad=True) for k, v in self.weights.items()}


def _put_name(buf, name: str) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def encode(ckpt: Checkpoint) -> bytes:
    tensors = {f"w/{k}": v for k, v in ckpt.weights.items()}
    blobs = {"config": ckpt.config.to_dict()}
    if ckpt.adam is not None:
        a = ckpt.adam
        tensors.update({f"adam.m/{k}": v for k, v in a.m.items()})
        tensors.update({f"adam.v/{k}": v for k, v in a.v.items()})
        blobs["adam"] = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
    blobs["state"] = {"step": ckpt.step, "rng": ckpt.rng_state, "extra": ckpt.extra}

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        _put_name(buf, name)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    buf.write(struct.pack("<I", len(blobs)))
    for name, doc in blobs.items():
        raw = json.dumps(doc, sort_keys=True).encode("utf-8")
        _put_name(buf, name)
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data, self.pos, self.name = data, 0, name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatViolation(f"{self.name}: truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name_field(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def decode(data: bytes, name: str = "<checkpoint>") -> Checkpoint:
    r = _Reader(data, name)
    if r.take(4) != MAGIC:
        raise FormatViolation(f"{name}: bad magic, not an AEMN checkpoint")
    version, n_tensors = r.unpack("<II")
    if version != VERSION:
        raise FormatViolation(f"{name}: checkpoint version {version} unsupported (expected {VERSION})")
    tensors = {}
    for _ in range(n_tensors):
        tname = r.name_field()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64))
        tensors[tname] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    (n_blobs,) = r.unpack("<I")
    blobs = {}
    for _ in range(n_blobs):
        bname = r.name_field()
        (n,) = r.unpack("<I")
        blobs[bname] = json.loads(r.take(n).decode("utf-8"))
    if r.pos != len(data):
        raise FormatViolation(f"{name}: {len(data) - r.pos} trailing bytes")
    if "config" not in blobs:
        raise FormatViolation(f"{name}: missing config blob")

    weights = {k[2:]: v for k, v in tensors.items() if k.startswith("w/")}
    adam = None
    if "adam" in blobs:
        a = blobs["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"])
        adam.m = {k[7:]: v for k, v in tensors.items() if k.startswith("adam.m/")}
        adam.v = {k[7:]: v for k, v in tensors.items() if k.startswith("adam.v/")}
    state = blobs.get("state", {})
    return Checkpoint(
        config=BackboneConfig.from_dict(blobs["config"]),
        weights=weights,
        adam=adam,
        step=int(state.get("step", 0)),
        rng_state=state.get("rng"),
        extra=state.get("extra") or {},
    )


def save_model(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load_model(path) -> Checkpoint:
    path = Path(path)
    return decode(path.read_bytes(), str(path))
