"""Best-path decoding."""

from __future__ import annotations

import numpy as np

from .ctc import blank_index, collapse


def best_path(y) -> np.ndarray:
    """Per-frame argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    return np.asarray(y).argmax(axis=1)


def best_path_decode(y) -> tuple[int, ...]:
    y = np.asarray(y, dtype=np.float64)
    return collapse(best_path(y), blank_index(y.shape[1]))


def merge_repeats(path) -> tuple[int, ...]:
    """Collapse runs without any blank, as used by the frame-wise CNN baseline."""
    return collapse(path, blank=-1)
