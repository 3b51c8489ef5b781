"""Glue between images, the CNN feature extractor and the recurrent stack."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    DEFAULT_STRIDE,
    SequenceSample,
    Standardizer,
    fit_standardizer,
    frame_sequence,
    glyph_crops,
    normalize_height,
)
from .decode import best_path_decode, merge_repeats
from .errors import UsageError
from .features import FRAME_WIDTH, CnnParams, cnn_extract, cnn_logits
from .recurrent import StackParams, stack_forward


def sample_frames(sample: SequenceSample, window: int = FRAME_WIDTH, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    if sample.frames is None:
        if sample.image is None:
            raise UsageError(f"sample {sample.name} has neither frames nor an image")
        sample.frames = frame_sequence(normalize_height(sample.image), window, stride)
    return sample.frames


def crop_set(samples, window: int = FRAME_WIDTH):
    """Glyph-centred training crops and their digit labels."""
    frames, labels = [], []
    for s in samples:
        if s.glyph_extents is None:
            raise UsageError(f"sample {s.name} has no glyph extents for CNN training")
        f, l = glyph_crops(normalize_height(s.image), s.glyph_extents, window)
        frames.extend(f)
        labels.extend(l)
    return np.array(frames).reshape(-1, normalize_height(samples[0].image).shape[0], window), np.array(labels)


def extract_features(samples, cnn: CnnParams, window: int = FRAME_WIDTH, stride: int = DEFAULT_STRIDE) -> None:
    """Attach raw CNN features ``[T, 128]`` to every sample, batching all frames together."""
    seqs = [sample_frames(s, window, stride) for s in samples]
    if not seqs:
        return
    feats = cnn_extract(np.concatenate(seqs), cnn)
    pos = 0
    for s, f in zip(samples, seqs):
        s.features = feats[pos:pos + len(f)]
        pos += len(f)


def standardized(samples, standardizer: Standardizer) -> list[SequenceSample]:
    """Copies of ``samples`` whose features are standardised."""
    return [
        SequenceSample(s.name, s.target, s.image, s.glyph_extents, s.frames, standardizer.apply(s.features))
        for s in samples
    ]


def fit_on(samples) -> Standardizer:
    return fit_standardizer(np.concatenate([s.features for s in samples]))


def cnn_baseline_decode(sample: SequenceSample, cnn: CnnParams, window: int = FRAME_WIDTH, stride: int = DEFAULT_STRIDE):
    """Frame-wise CNN argmax followed by merging consecutive repeats."""
    logits = cnn_logits(sample_frames(sample, window, stride), cnn)
    return merge_repeats(logits.argmax(axis=1))


@dataclass
class CrnnModel:
    cnn: CnnParams
    stack: StackParams
    standardizer: Standardizer
    config: dict = field(default_factory=dict)
    window: int = FRAME_WIDTH
    stride: int = DEFAULT_STRIDE

    def probabilities(self, sample: SequenceSample) -> np.ndarray:
        if sample.features is None:
            extract_features([sample], self.cnn, self.window, self.stride)
        _, y, _ = stack_forward(self.standardizer.apply(sample.features), self.stack)
        return y

    def decode(self, sample: SequenceSample) -> tuple[int, ...]:
        return best_path_decode(self.probabilities(sample))

    def decode_all(self, samples) -> list[tuple[int, ...]]:
        missing = [s for s in samples if s.features is None]
        extract_features(missing, self.cnn, self.window, self.stride)
        return [self.decode(s) for s in samples]
