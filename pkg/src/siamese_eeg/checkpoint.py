"""SMNE binary checkpoints for encoder parameters and (optionally) ADAM state.

Layout, little-endian::

    b"SMNE"  u16 version (= 1)
    for each parameter tensor, in EncoderParams order:
        u8 rank, rank x u32 dims, prod(dims) float64 values
    optional ADAM block:
        u64 step count, first-moment tensors, second-moment tensors
        (same per-tensor layout and order as the parameters)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoder import AdamState, Architecture, EncoderParams
from .errors import FormatError, RejectedInputError

MAGIC = b"SMNE"
VERSION = 1


def _tensor_bytes(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype="<f8")
    if a.ndim > 255:
        raise RejectedInputError("tensor rank too large")
    header = struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a).tobytes()


def encode_checkpoint(params: EncoderParams, state: AdamState | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    parts += [_tensor_bytes(v) for v in params.values()]
    if state is not None:
        parts.append(struct.pack("<Q", state.t))
        parts += [_tensor_bytes(state.m[k]) for k in params]
        parts += [_tensor_bytes(state.v[k]) for k in params]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def tensor(self, what: str, expected: tuple[int, ...]) -> np.ndarray:
        start = self.pos
        (rank,) = struct.unpack("<B", self.take(1, f"{what} rank"))
        dims = struct.unpack(f"<{rank}I", self.take(4 * rank, f"{what} dims"))
        if tuple(dims) != expected:
            raise FormatError(f"{what} has shape {dims}, expected {expected}", start)
        count = int(np.prod(dims)) if rank else 1
        raw = self.take(8 * count, f"{what} values")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)


def decode_checkpoint(buf: bytes, arch: Architecture | None = None
                      ) -> tuple[EncoderParams, AdamState | None]:
    arch = arch or Architecture()
    shapes = arch.param_shapes()
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an SMNE checkpoint", 0)
    (version,) = struct.unpack("<H", r.take(2, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    tensors = {k: r.tensor(k, s) for k, s in shapes.items()}
    params = EncoderParams(arch, tensors)
    state = None
    if r.pos < len(buf):
        (t,) = struct.unpack("<Q", r.take(8, "ADAM step count"))
        m = {k: r.tensor(f"first moment of {k}", s) for k, s in shapes.items()}
        v = {k: r.tensor(f"second moment of {k}", s) for k, s in shapes.items()}
        state = AdamState(m, v, t)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return params, state


def save_checkpoint(path, params: EncoderParams, state: AdamState | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, state))


def load_checkpoint(path, arch: Architecture | None = None
                    ) -> tuple[EncoderParams, AdamState | None]:
    return decode_checkpoint(Path(path).read_bytes(), arch)
