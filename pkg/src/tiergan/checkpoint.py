"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TGAN"  u32 version  32-byte model-spec digest
    u32 tag_len   tag (utf-8)            "partial" | "trained" | "diverged"
    u32 epoch     u64 step
    tensor table: u32 count, then per tensor
        u32 name_len, name, u32 rank, u32 dims[rank], f32 payload
    u32 optimizer count, then per optimizer
        u32 name_len, name, f64 lr, f64 beta1, f64 beta2, f64 eps, u64 t,
        tensor table of first moments, tensor table of second moments
    u32 rng_len   rng state as canonical JSON
    u64 history count, then per record u32 epoch, u64 step, f64 d_loss, f64 g_loss
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import (BadMagicError, CheckpointError, DigestMismatchError,
                     TruncatedCheckpointError, VersionMismatchError)
from .optim import AdamState
from .training import LossRecord

MAGIC = b"TGAN"
VERSION = 1
DIGEST_LEN = 32


@dataclass
class Checkpoint:
    digest: bytes
    tensors: Dict[str, np.ndarray]
    optimizers: Dict[str, AdamState] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    tag: str = "partial"
    history: List[LossRecord] = field(default_factory=list)


def _pack_str(out, s: str) -> None:
    b = s.encode("utf-8")
    out.write(struct.pack("<I", len(b)))
    out.write(b)


def _pack_tensors(out, tensors: Dict[str, np.ndarray]) -> None:
    out.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype != np.float32:
            if not np.array_equal(arr.astype(np.float32), arr):
                raise CheckpointError(f"tensor {name!r} ({arr.dtype}) is not representable as float32")
            arr = arr.astype(np.float32)
        _pack_str(out, name)
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    if len(ckpt.digest) != DIGEST_LEN:
        raise CheckpointError(f"digest must be {DIGEST_LEN} bytes")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(ckpt.digest)
    _pack_str(out, ckpt.tag)
    out.write(struct.pack("<IQ", ckpt.epoch, ckpt.step))
    _pack_tensors(out, ckpt.tensors)
    out.write(struct.pack("<I", len(ckpt.optimizers)))
    for name in sorted(ckpt.optimizers):
        st = ckpt.optimizers[name]
        _pack_str(out, name)
        out.write(struct.pack("<ddddQ", st.lr, st.beta1, st.beta2, st.eps, st.t))
        _pack_tensors(out, st.m)
        _pack_tensors(out, st.v)
    _pack_str(out, json.dumps(ckpt.rng_state, sort_keys=True))
    out.write(struct.pack("<Q", len(ckpt.history)))
    for r in ckpt.history:
        out.write(struct.pack("<IQdd", r.epoch, r.step, r.d_loss, r.g_loss))
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def tensors(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            name = self.string()
            (rank,) = self.unpack("<I")
            dims = self.unpack(f"<{rank}I") if rank else ()
            n = int(np.prod(dims)) if rank else 1
            out[name] = np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        return out


def decode_checkpoint(buf: bytes, expected_digest: Optional[bytes] = None) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < len(MAGIC) and MAGIC.startswith(buf):
        raise TruncatedCheckpointError(f"file ends after {len(buf)} bytes, inside the magic")
    magic = r.take(4) if len(buf) >= 4 else buf
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version} but this build reads version {VERSION}")
    digest = r.take(DIGEST_LEN)
    if expected_digest is not None and digest != expected_digest:
        raise DigestMismatchError(
            f"checkpoint was written for model spec {digest.hex()[:16]}, expected {expected_digest.hex()[:16]}"
        )
    tag = r.string()
    epoch, step = r.unpack("<IQ")
    tensors = r.tensors()
    (n_opt,) = r.unpack("<I")
    optimizers = {}
    for _ in range(n_opt):
        name = r.string()
        lr, b1, b2, eps, t = r.unpack("<ddddQ")
        optimizers[name] = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t, m=r.tensors(), v=r.tensors())
    rng_state = json.loads(r.string())
    (n_hist,) = r.unpack("<Q")
    history = [LossRecord(*r.unpack("<IQdd")) for _ in range(n_hist)]
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(digest, tensors, optimizers, rng_state, epoch, step, tag, history)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(ckpt)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path, expected_digest: Optional[bytes] = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), expected_digest)


def state_to_checkpoint(state, tag: Optional[str] = None) -> Checkpoint:
    from .models import spec_digest

    tensors = {f"G.{k}": v for k, v in state.g.state_arrays().items()}
    tensors.update({f"D.{k}": v for k, v in state.d.state_arrays().items()})
    return Checkpoint(
        digest=spec_digest(state.g.spec, state.d.spec),
        tensors=tensors,
        optimizers={"G": state.opt_g, "D": state.opt_d},
        rng_state=state.rng.bit_generator.state,
        epoch=state.epoch,
        step=state.step,
        tag=tag or state.status,
        history=list(state.history),
    )


def restore_state(ckpt: Checkpoint, g_spec, d_spec):
    """Rebuild a :class:`~tiergan.training.TrainState` from a checkpoint."""
    from .models import Model, spec_digest
    from .training import TrainState

    if ckpt.digest != spec_digest(g_spec, d_spec):
        raise DigestMismatchError("checkpoint does not belong to these model specs")
    g, d = Model(g_spec), Model(d_spec)
    g.load_arrays({k[2:]: v for k, v in ckpt.tensors.items() if k.startswith("G.")})
    d.load_arrays({k[2:]: v for k, v in ckpt.tensors.items() if k.startswith("D.")})
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = ckpt.rng_state
    return TrainState(g, d, ckpt.optimizers["G"], ckpt.optimizers["D"], rng,
                      epoch=ckpt.epoch, step=ckpt.step, history=list(ckpt.history), status=ckpt.tag)
