"""Binary tensor-section files used for checkpoints and cached features.

Layout, all integers little-endian ``u32``::

    magic "CRNN" | version | section count
    per section: name length | name (UTF-8) | ndim | dims... | float64 data (LE, row-major)
    text length | text (UTF-8)     -- config echo, ``key=value`` lines

Sections are written in the order given, so ``save(load(b)) == b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Standardizer
from .errors import FormatError
from .features import CnnParams
from .recurrent import StackParams

MAGIC = b"CRNN"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    text: str = ""

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            parts.append(arr.tobytes())
        text = self.text.encode("utf-8")
        parts.append(struct.pack("<I", len(text)))
        parts.append(text)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, source: str = "<bytes>") -> "Checkpoint":
        view = memoryview(buf)
        pos = 0

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(view):
                raise FormatError(f"{source}: truncated file")
            out = view[pos:pos + n]
            pos += n
            return out

        def u32() -> int:
            return struct.unpack("<I", take(4))[0]

        if bytes(take(4)) != MAGIC:
            raise FormatError(f"{source}: bad magic, not a CRNN tensor file")
        version = u32()
        if version != FORMAT_VERSION:
            raise FormatError(f"{source}: unsupported format version {version}")
        tensors = {}
        for _ in range(u32()):
            try:
                name = bytes(take(u32())).decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError(f"{source}: section name is not UTF-8") from None
            ndim = u32()
            dims = tuple(u32() for _ in range(ndim))
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
            if name in tensors:
                raise FormatError(f"{source}: duplicate section {name}")
            tensors[name] = data.reshape(dims)
        try:
            text = bytes(take(u32())).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{source}: config block is not UTF-8") from None
        if pos != len(view):
            raise FormatError(f"{source}: {len(view) - pos} trailing bytes")
        return cls(tensors, text)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            buf = Path(path).read_bytes()
        except OSError as exc:
            raise FormatError(f"{path}: {exc.strerror}") from None
        return cls.from_bytes(buf, str(path))


def model_checkpoint(
    cnn: CnnParams | None = None,
    stack: StackParams | None = None,
    standardizer: Standardizer | None = None,
    config_text: str = "",
) -> Checkpoint:
    tensors = {}
    if cnn is not None:
        tensors.update(cnn.tensors())
    if stack is not None:
        tensors.update(stack.tensors())
    if standardizer is not None:
        tensors["std.mean"] = standardizer.mean
        tensors["std.std"] = standardizer.std
    return Checkpoint({k: v.copy() for k, v in tensors.items()}, config_text)


def cnn_from(ckpt: Checkpoint) -> CnnParams:
    try:
        return CnnParams.from_tensors(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint has no usable CNN parameters ({exc})") from None


def stack_from(ckpt: Checkpoint) -> StackParams:
    try:
        return StackParams.from_tensors(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint has no usable recurrent parameters ({exc})") from None


def standardizer_from(ckpt: Checkpoint) -> Standardizer:
    if "std.mean" not in ckpt.tensors or "std.std" not in ckpt.tensors:
        raise FormatError("checkpoint has no standardizer")
    return Standardizer(ckpt.tensors["std.mean"], ckpt.tensors["std.std"])
