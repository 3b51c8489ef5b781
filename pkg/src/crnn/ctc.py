"""Connectionist temporal classification.

Probabilities ``y`` are ``[T, K]`` arrays whose last class (``K - 1``) is the
blank.  The lattice runs over the blank-augmented target
``(blank, z1, blank, z2, ..., blank)`` of length ``2U + 1`` entirely in the
log domain.  ``alpha[t, s]`` includes the emission at ``t``; ``beta[t, s]``
covers frames ``t+1 .. T-1`` only, so ``alpha + beta`` summed over ``s`` equals
``log p(z|x)`` at every ``t``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UsageError
from .numerics import log_softmax, logsumexp

BRUTEFORCE_LIMIT = 10**7


def blank_index(num_classes: int) -> int:
    return num_classes - 1


def collapse(path: Sequence[int], blank: int) -> tuple[int, ...]:
    """Merge runs of repeated symbols, then drop blanks."""
    out = []
    prev = None
    for s in path:
        s = int(s)
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


def path_prob(y, path: Sequence[int]) -> float:
    """``sum_t log y[t, path[t]]``."""
    y = np.asarray(y, dtype=np.float64)
    if len(path) != y.shape[0]:
        raise UsageError(f"path length {len(path)} != frame count {y.shape[0]}")
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(y[np.arange(len(path)), np.asarray(path, dtype=np.int64)])))


def label_prob_bruteforce(y, z: Sequence[int]) -> float:
    """Log of the summed probability of every path that collapses to ``z``.

    Enumerates all ``K**T`` paths; meant as a test oracle only.
    """
    y = np.asarray(y, dtype=np.float64)
    T, K = y.shape
    if K**T > BRUTEFORCE_LIMIT:
        raise UsageError(f"{K}**{T} paths exceed the enumeration limit")
    blank = blank_index(K)
    target = tuple(int(s) for s in z)
    logs = [path_prob(y, p) for p in itertools.product(range(K), repeat=T) if collapse(p, blank) == target]
    if not logs:
        return -math.inf
    return logsumexp(logs)


def required_frames(z: Sequence[int]) -> int:
    """Minimum ``T`` admitting an alignment: one frame per label plus a blank between repeats."""
    z = list(z)
    return len(z) + sum(1 for a, b in zip(z, z[1:]) if a == b)


def augment(z: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(z) + 1, blank, dtype=np.int64)
    ext[1::2] = np.asarray(z, dtype=np.int64)
    return ext


@dataclass
class CtcResult:
    alpha: np.ndarray
    beta: np.ndarray
    log_p: float
    loss: float
    grad: np.ndarray  # dL/du, [T, K]
    feasible: bool


def _lattice(log_y: np.ndarray, z: Sequence[int]):
    T, K = log_y.shape
    blank = blank_index(K)
    ext = augment(z, blank)
    S = ext.shape[0]
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = log_y[:, ext]  # [T, S]

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    if S > 1:
        log_p = float(np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]))
    else:
        log_p = float(alpha[T - 1, 0])
    return ext, alpha, beta, log_p


def _result(log_y: np.ndarray, z: Sequence[int]) -> CtcResult:
    T, K = log_y.shape
    blank = blank_index(K)
    z = [int(s) for s in z]
    if any(s < 0 or s >= blank for s in z):
        raise UsageError("labeling symbols must be non-blank class indices")
    with np.errstate(divide="ignore", invalid="ignore"):
        ext, alpha, beta, log_p = _lattice(log_y, z)
    if required_frames(z) > T or log_p == -np.inf:
        return CtcResult(alpha, beta, log_p, math.inf, np.zeros((T, K)), False)
    occupancy = np.zeros((T, K))
    gamma = np.exp(alpha + beta - log_p)
    np.add.at(occupancy, (slice(None), ext), gamma)
    grad = np.exp(log_y) - occupancy
    return CtcResult(alpha, beta, log_p, -log_p, grad, True)


def ctc_forward_backward(y, z: Sequence[int]) -> CtcResult:
    """Lattices, ``-log p(z|x)`` and its gradient w.r.t. the pre-softmax activations.

    An infeasible target (too few frames) gives ``loss = inf``, a zero
    gradient and ``feasible = False`` instead of raising.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] == 0:
        raise UsageError("y must be a non-empty [T, K] array")
    with np.errstate(divide="ignore"):
        log_y = np.log(y)
    return _result(log_y, z)


def ctc_from_activations(u, z: Sequence[int]) -> CtcResult:
    """Same as :func:`ctc_forward_backward` but starting from activations ``u``."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] == 0:
        raise UsageError("u must be a non-empty [T, K] array")
    return _result(log_softmax(u), z)
