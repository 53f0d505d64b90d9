"""Binary file formats. All integers and floats are little-endian.

``.actmat`` (activation matrix)::

    b"ACTM" | u32 version=1 | u64 L | u64 d | L*d f64 row-major
    | u32 tag byte length | tag UTF-8

``.ckpt`` (checkpoint)::

    b"MLAB" | u32 version=1 | u32 n_sizes | n_sizes * u32 layer size
    | u8 activation (0 tanh, 1 relu)
    | per layer: W (out*in f64, row-major) then b (out f64)
    | u64 seed | u32 label byte length | label UTF-8

Readers reject a wrong magic, an unknown version, truncation and trailing
bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .cka import ActivationMatrix
from .errors import ParseError
from .nn import ACTIVATIONS, ArchitectureDescriptor, Checkpoint

ACTMAT_MAGIC = b"ACTM"
CKPT_MAGIC = b"MLAB"
VERSION = 1

_F64 = np.dtype("<f8")


class _Reader:
    def __init__(self, blob: bytes, what: str):
        self.blob = blob
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ParseError(f"truncated {self.what} file at byte {self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 8), dtype=_F64).astype(np.float64)

    def text(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"{self.what} string is not valid UTF-8") from exc

    def header(self, magic: bytes):
        if self.take(4) != magic:
            raise ParseError(f"not a {self.what} file (bad magic)")
        (version,) = self.unpack("<I")
        if version != VERSION:
            raise ParseError(f"unsupported {self.what} version {version}")

    def done(self):
        if self.pos != len(self.blob):
            raise ParseError(f"{len(self.blob) - self.pos} trailing bytes in {self.what} file")


def _text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def actmat_bytes(h: ActivationMatrix) -> bytes:
    rows, cols = h.data.shape
    return (
        ACTMAT_MAGIC
        + struct.pack("<IQQ", VERSION, rows, cols)
        + h.data.astype(_F64).tobytes(order="C")
        + _text(h.tag)
    )


def parse_actmat(blob: bytes) -> ActivationMatrix:
    r = _Reader(blob, "actmat")
    r.header(ACTMAT_MAGIC)
    rows, cols = r.unpack("<QQ")
    if rows * cols * 8 > len(blob):
        raise ParseError(f"actmat header claims {rows}x{cols} values but file is too short")
    data = r.floats(rows * cols).reshape(rows, cols)
    tag = r.text()
    r.done()
    return ActivationMatrix(data, tag=tag)


def save_actmat(h: ActivationMatrix, path) -> None:
    Path(path).write_bytes(actmat_bytes(h))


def load_actmat(path) -> ActivationMatrix:
    return parse_actmat(Path(path).read_bytes())


def checkpoint_bytes(cp: Checkpoint) -> bytes:
    sizes = cp.descriptor.layer_sizes
    parts = [
        CKPT_MAGIC,
        struct.pack("<II", VERSION, len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
        struct.pack("<B", cp.descriptor.activation_code),
    ]
    for w, b in zip(cp.weights, cp.biases):
        parts.append(w.astype(_F64).tobytes(order="C"))
        parts.append(b.astype(_F64).tobytes())
    parts.append(struct.pack("<Q", cp.seed))
    parts.append(_text(cp.stage_label))
    return b"".join(parts)


def parse_checkpoint(blob: bytes) -> Checkpoint:
    r = _Reader(blob, "checkpoint")
    r.header(CKPT_MAGIC)
    (count,) = r.unpack("<I")
    if count > 1024:
        raise ParseError(f"implausible layer count {count}")
    sizes = r.unpack(f"<{count}I")
    (act,) = r.unpack("<B")
    if act >= len(ACTIVATIONS):
        raise ParseError(f"unknown activation code {act}")
    try:
        descriptor = ArchitectureDescriptor(sizes, ACTIVATIONS[act])
    except Exception as exc:
        raise ParseError(f"invalid architecture in checkpoint: {exc}") from exc
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(r.floats(fan_in * fan_out).reshape(fan_out, fan_in))
        biases.append(r.floats(fan_out))
    (seed,) = r.unpack("<Q")
    label = r.text()
    r.done()
    return Checkpoint(descriptor, weights, biases, seed=seed, stage_label=label)


def save_checkpoint(cp: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(cp))


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
