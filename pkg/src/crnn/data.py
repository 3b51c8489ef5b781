"""Synthetic digit strings, framing, feature standardisation and dataset files.

Dataset directory layout::

    images/NNNNNN.pgm        binary P5, maxval 255
    labels.tsv               NNNNNN<TAB><digit string>
    extents.tsv (optional)   NNNNNN<TAB>start,end,class;start,end,class...

Glyph extents are ink column ranges ``[start, end)`` in image coordinates.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, UsageError
from .features import FRAME_HEIGHT, FRAME_WIDTH
from .numerics import Rng

DEFAULT_STRIDE = 8
GLYPH_W = 16
GLYPH_H = 24
STD_FLOOR = 1e-8

_FONT_5X7 = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


def _scaled_glyph(digit: int) -> np.ndarray:
    bitmap = np.array([[c == "1" for c in row] for row in _FONT_5X7[digit]], dtype=np.float64)
    rows = np.arange(GLYPH_H) * 7 // GLYPH_H
    cols = np.arange(GLYPH_W) * 5 // GLYPH_W
    return bitmap[np.ix_(rows, cols)]


GLYPHS = {d: _scaled_glyph(d) for d in range(10)}


@dataclass
class RenderSpec:
    """Knobs for :func:`render_sample`.

    ``num_digits`` is a fixed count or an inclusive ``(min, max)`` range;
    ``jitter`` bounds the vertical glyph offset in pixels; ``noise_level`` is
    the upper bound of additive uniform pixel noise.
    """

    num_digits: int | tuple[int, int] = (1, 5)
    jitter: int = 2
    noise_level: float = 0.2
    spacing: tuple[int, int] = (2, 8)
    margin: tuple[int, int] = (2, 6)
    ink: tuple[float, float] = (0.7, 1.0)

    def digit_range(self) -> tuple[int, int]:
        if isinstance(self.num_digits, int):
            return self.num_digits, self.num_digits
        return tuple(self.num_digits)

    def validate(self) -> None:
        lo, hi = self.digit_range()
        if not 0 <= lo <= hi:
            raise UsageError(f"bad digit count range {self.num_digits}")
        top = (FRAME_HEIGHT - GLYPH_H) // 2
        if not 0 <= self.jitter <= top:
            raise UsageError(f"jitter must lie in [0, {top}]")
        if self.noise_level < 0 or self.spacing[0] < 0 or self.margin[0] < 0:
            raise UsageError("noise, spacing and margins must be non-negative")


def quantize(image: np.ndarray) -> np.ndarray:
    """Round to the nearest step of 1/255, the precision of the on-disk format."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def render_sample(spec: RenderSpec, rng: Rng):
    """Draw one digit-string image.

    Returns ``(image [32, W], target, extents)`` with ``extents`` a list of
    ``(start, end, digit)`` ink column ranges.
    """
    spec.validate()
    lo, hi = spec.digit_range()
    n = rng.integers(lo, hi + 1)
    digits = [rng.integers(0, 10) for _ in range(n)]
    left = rng.integers(spec.margin[0], spec.margin[1] + 1)
    gaps = [rng.integers(spec.spacing[0], spec.spacing[1] + 1) for _ in range(max(n - 1, 0))]
    right = rng.integers(spec.margin[0], spec.margin[1] + 1)
    width = left + n * GLYPH_W + sum(gaps) + right
    image = np.zeros((FRAME_HEIGHT, max(width, 1)))
    top0 = (FRAME_HEIGHT - GLYPH_H) // 2
    extents = []
    x = left
    for k, d in enumerate(digits):
        dy = rng.integers(-spec.jitter, spec.jitter + 1) if spec.jitter else 0
        level = rng.uniform(spec.ink[0], spec.ink[1])
        g = GLYPHS[d]
        top = top0 + dy
        image[top:top + GLYPH_H, x:x + GLYPH_W] = np.maximum(image[top:top + GLYPH_H, x:x + GLYPH_W], level * g)
        ink_cols = np.flatnonzero(g.any(axis=0))
        extents.append((x + int(ink_cols[0]), x + int(ink_cols[-1]) + 1, d))
        x += GLYPH_W + (gaps[k] if k < len(gaps) else 0)
    if spec.noise_level > 0:
        image = image + rng.uniform(0.0, spec.noise_level, image.shape)
    return quantize(image), tuple(digits), extents


def normalize_height(image: np.ndarray, height: int = FRAME_HEIGHT) -> np.ndarray:
    """Nearest-neighbour rescale to ``height`` rows, keeping the aspect ratio."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if h == height:
        return image
    new_w = max(1, int(round(w * height / h)))
    rows = np.arange(height) * h // height
    cols = np.arange(new_w) * w // new_w
    return image[np.ix_(rows, cols)]


def num_frames(width: int, window: int = FRAME_WIDTH, stride: int = DEFAULT_STRIDE) -> int:
    return math.ceil(max(width - window, 0) / stride) + 1


def frame_sequence(image: np.ndarray, window: int = FRAME_WIDTH, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Slide a ``32 x window`` box every ``stride`` columns -> ``[T, 32, window]``.

    The right edge is zero-padded so the last window reaches the last column.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != FRAME_HEIGHT:
        raise UsageError(f"image must be {FRAME_HEIGHT} rows high; rescale first")
    if image.shape[1] < 1 or stride < 1:
        raise UsageError("image width and stride must be positive")
    T = num_frames(image.shape[1], window, stride)
    padded = np.zeros((FRAME_HEIGHT, (T - 1) * stride + window))
    padded[:, : image.shape[1]] = image[:, : padded.shape[1]]
    return np.stack([padded[:, t * stride:t * stride + window] for t in range(T)])


def glyph_crops(image: np.ndarray, extents, window: int = FRAME_WIDTH):
    """Windows centred on each glyph extent, zero-padded at the borders."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    frames, labels = [], []
    for start, end, cls in extents:
        left = (start + end) // 2 - window // 2
        crop = np.zeros((h, window))
        lo, hi = max(left, 0), min(left + window, w)
        if hi > lo:
            crop[:, lo - left:hi - left] = image[:, lo:hi]
        frames.append(crop)
        labels.append(int(cls))
    return frames, labels


# --------------------------------------------------------------------------
# samples and standardisation


@dataclass
class SequenceSample:
    name: str
    target: tuple[int, ...]
    image: np.ndarray | None = None
    glyph_extents: list | None = None
    frames: np.ndarray | None = None
    features: np.ndarray | None = None


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def inverse(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) * self.std + self.mean


def fit_standardizer(features) -> Standardizer:
    """Per-dimension mean and population std; the std is floored at 1e-8."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise UsageError("need at least two feature vectors to standardise")
    return Standardizer(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


def generate_dataset(count: int, seed: int, spec: RenderSpec | None = None, start: int = 0) -> list[SequenceSample]:
    """``count`` samples named by index; sample ``i`` draws from its own stream."""
    spec = spec or RenderSpec()
    out = []
    for i in range(start, start + count):
        image, target, extents = render_sample(spec, Rng.for_stream(seed, i))
        out.append(SequenceSample(f"{i:06d}", target, image=image, glyph_extents=extents))
    return out


# --------------------------------------------------------------------------
# file I/O


def write_pgm(path, image: np.ndarray) -> None:
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(data, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: bad PGM header") from None
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + w * h]
    if len(raw) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


def _parse_digits(text: str, where: str) -> tuple[int, ...]:
    if not re.fullmatch(r"[0-9]*", text):
        raise FormatError(f"{where}: label {text!r} is not a digit string")
    return tuple(int(c) for c in text)


def _parse_extents(text: str, where: str) -> list:
    if not text:
        return []
    out = []
    for item in text.split(";"):
        parts = item.split(",")
        if len(parts) != 3 or not all(re.fullmatch(r"[0-9]+", p) for p in parts):
            raise FormatError(f"{where}: bad extent {item!r}")
        out.append(tuple(int(p) for p in parts))
    return out


def _read_tsv(path: Path) -> list[tuple[str, str, str]]:
    """Rows of ``(name, value, location)``; raises on malformed lines."""
    rows = []
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, 1):
        parts = line.split("\t")
        where = f"{path.name}:{lineno}"
        if len(parts) != 2 or not re.fullmatch(r"[0-9]+", parts[0]):
            raise FormatError(f"{where}: expected NNNNNN<TAB>value")
        rows.append((parts[0], parts[1], where))
    return rows


def load_dataset(directory) -> list[SequenceSample]:
    d = Path(directory)
    labels_path = d / "labels.tsv"
    if not labels_path.exists():
        raise FormatError(f"{d}: missing labels.tsv")
    samples = []
    for name, value, where in _read_tsv(labels_path):
        target = _parse_digits(value, where)
        img_path = d / "images" / f"{name}.pgm"
        if not img_path.exists():
            raise FormatError(f"{where}: missing image {img_path}")
        samples.append(SequenceSample(name, target, image=read_pgm(img_path)))
    ext_path = d / "extents.tsv"
    if ext_path.exists():
        by_name = {s.name: s for s in samples}
        for name, value, where in _read_tsv(ext_path):
            if name not in by_name:
                raise FormatError(f"{where}: extents for unknown sample {name}")
            by_name[name].glyph_extents = _parse_extents(value, where)
    return samples


def save_dataset(directory, samples: Sequence[SequenceSample]) -> None:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    labels, extents = [], []
    for s in samples:
        if s.image is None:
            raise UsageError(f"sample {s.name} has no image")
        write_pgm(d / "images" / f"{s.name}.pgm", s.image)
        labels.append(f"{s.name}\t{''.join(str(c) for c in s.target)}\n")
        if s.glyph_extents is not None:
            body = ";".join(f"{a},{b},{c}" for a, b, c in s.glyph_extents)
            extents.append(f"{s.name}\t{body}\n")
    with open(d / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(labels))
    if extents:
        with open(d / "extents.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(extents))
    elif os.path.exists(d / "extents.tsv"):
        os.remove(d / "extents.tsv")
