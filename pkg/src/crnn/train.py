"""Backpropagation through time, SGD with momentum and gradient checking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ctc import ctc_from_activations, required_frames
from .decode import best_path_decode
from .errors import UsageError
from .metrics import label_error_rate, sequence_accuracy
from .numerics import Rng
from .recurrent import StackParams, init_stack, stack_backward, stack_forward

log = logging.getLogger(__name__)

GradientSet = dict[str, np.ndarray]

# Central differences at eps=1e-5 carry ~1e-10 of float64 round-off, so
# gradients below this magnitude are compared on an absolute scale.
GRADCHECK_FLOOR = 1e-6


def zeros_like_tensors(tensors: dict[str, np.ndarray]) -> GradientSet:
    return {k: np.zeros_like(v) for k, v in tensors.items()}


def bptt_gradients(features, target: Sequence[int], params: StackParams) -> tuple[float, GradientSet]:
    """CTC loss of one sequence and the gradient of every stack tensor.

    Weight gradients are sums over timesteps.  An infeasible target returns
    ``(inf, zeros)``.
    """
    u, _, cache = stack_forward(features, params)
    res = ctc_from_activations(u, target)
    if not res.feasible:
        log.warning("infeasible target %s for %d frames", tuple(target), u.shape[0])
        return math.inf, zeros_like_tensors(params.tensors())
    return res.loss, stack_backward(res.grad, cache, params)


def sequence_loss(features, target: Sequence[int], params: StackParams) -> float:
    u, _, _ = stack_forward(features, params)
    return ctc_from_activations(u, target).loss


def global_norm(grads: GradientSet) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_global_norm(grads: GradientSet, max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_momentum_update(tensors, grads, velocity, lr: float, momentum: float) -> None:
    """Classical momentum, in place: ``v = mu*v - lr*g``; ``w += v``."""
    for name, w in tensors.items():
        v = velocity[name]
        v *= momentum
        v -= lr * grads[name]
        w += v


@dataclass
class OptimizerState:
    velocity: GradientSet
    learning_rate: float
    momentum: float

    @classmethod
    def for_params(cls, tensors, learning_rate: float, momentum: float) -> "OptimizerState":
        if learning_rate < 0 or not 0 <= momentum < 1:
            raise UsageError("need learning_rate >= 0 and 0 <= momentum < 1")
        return cls(zeros_like_tensors(tensors), learning_rate, momentum)

    def step(self, tensors, grads) -> None:
        sgd_momentum_update(tensors, grads, self.velocity, self.learning_rate, self.momentum)


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int

    def __str__(self) -> str:
        return (
            f"max_rel_error\t{self.max_rel_error:.3e}\n"
            f"worst_param\t{self.worst_param}{list(self.worst_index)}\n"
            f"analytic\t{self.analytic:.12e}\n"
            f"numeric\t{self.numeric:.12e}\n"
            f"checked\t{self.checked}\n"
        )


def relative_error(a: float, n: float, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    loss_fn: Callable[[], float],
    tensors: dict[str, np.ndarray],
    analytic: GradientSet,
    eps: float = 1e-5,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``loss_fn``.

    ``loss_fn`` must read the arrays in ``tensors``, which are perturbed in
    place one entry at a time and restored afterwards.
    """
    if not eps > 0:
        raise UsageError("finite-difference step must be positive")
    worst = GradCheckReport(-1.0, "", (), 0.0, 0.0, 0)
    checked = 0
    for name, w in tensors.items():
        g = analytic[name]
        if g.shape != w.shape:
            raise UsageError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + eps
            lp = loss_fn()
            w[idx] = orig - eps
            lm = loss_fn()
            w[idx] = orig
            num = (lp - lm) / (2 * eps)
            err = relative_error(float(g[idx]), num, floor)
            checked += 1
            if err > worst.max_rel_error:
                worst = GradCheckReport(err, name, idx, float(g[idx]), num, 0)
    worst.checked = checked
    return worst


@dataclass
class GradCheckInstance:
    features: np.ndarray
    target: tuple[int, ...]
    params: StackParams


def gradcheck_instance(
    seed: int, T: int = 5, D: int = 4, hidden=(3, 2), K: int = 3, init_range: float = 0.5
) -> GradCheckInstance:
    """Small random CRNN stack plus a feasible target, for finite-difference checks.

    Weights are drawn wider than the training initialisation so that every
    gate and peephole carries a non-trivial gradient.
    """
    rng = Rng.for_stream(seed, 0x67726164)
    params = init_stack(rng, D, list(hidden), K)
    for v in params.tensors().values():
        v[...] = rng.uniform(-init_range, init_range, v.shape)
    features = rng.uniform(-1.0, 1.0, (T, D))
    while True:
        U = rng.integers(1, 4)
        target = tuple(int(s) for s in rng.integers(0, K - 1, U))
        if required_frames(target) <= T:
            return GradCheckInstance(features, target, params)


def check_stack_gradients(inst: GradCheckInstance, eps: float = 1e-5, floor: float = GRADCHECK_FLOOR) -> GradCheckReport:
    _, grads = bptt_gradients(inst.features, inst.target, inst.params)
    return grad_check(
        lambda: sequence_loss(inst.features, inst.target, inst.params),
        inst.params.tensors(),
        grads,
        eps,
        floor,
    )


# --------------------------------------------------------------------------
# training loop


def predict(features, params: StackParams) -> tuple[int, ...]:
    _, y, _ = stack_forward(features, params)
    return best_path_decode(y)


@dataclass
class Evaluation:
    mean_ctc_loss: float
    label_error: float
    seq_acc: float
    pairs: list = field(default_factory=list)


def evaluate(samples, params: StackParams) -> Evaluation:
    """Best-path decode every sample; CTC loss averages feasible samples only."""
    losses, pairs = [], []
    for s in samples:
        u, y, _ = stack_forward(s.features, params)
        res = ctc_from_activations(u, s.target)
        if res.feasible:
            losses.append(res.loss)
        pairs.append((best_path_decode(y), tuple(s.target)))
    mean_loss = float(np.mean(losses)) if losses else math.inf
    try:
        ler = label_error_rate(pairs)
    except UsageError:
        ler = math.nan
    return Evaluation(mean_loss, ler, sequence_accuracy(pairs), pairs)


@dataclass
class CrnnTrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 1
    clip: float = 5.0
    val_fraction: float = 0.1
    seed: int = 0
    # stop once training sequence accuracy reaches this value (checked per epoch)
    stop_at_train_acc: float | None = None
    # stop after this many epochs without a new best validation label error
    patience: int | None = None


@dataclass
class EpochRecord:
    epoch: int
    mean_ctc_loss: float
    val_label_error: float
    val_seq_acc: float
    val_ctc_loss: float
    train_seq_acc: float | None = None

    def log_line(self) -> str:
        return f"{self.epoch}\t{self.mean_ctc_loss:.6f}\t{self.val_label_error:.6f}\t{self.val_seq_acc:.6f}"


@dataclass
class CrnnTrainResult:
    params: StackParams
    best_by_ctc: StackParams
    best_by_label: StackParams
    best_ctc_epoch: int
    best_label_epoch: int
    history: list[EpochRecord]

    def log_text(self) -> str:
        return "".join(r.log_line() + "\n" for r in self.history)


def split_validation(samples, fraction: float, seed: int):
    """Seeded split into ``(train, validation)``; small sets validate on themselves."""
    samples = list(samples)
    n_val = int(round(fraction * len(samples)))
    if n_val == 0 or n_val == len(samples):
        return samples, samples
    order = Rng.for_stream(seed, 0x76616C).permutation(len(samples))
    val = [samples[i] for i in sorted(order[:n_val])]
    train = [samples[i] for i in sorted(order[n_val:])]
    return train, val


def train_crnn(
    samples,
    params: StackParams,
    config: CrnnTrainConfig | None = None,
    val_samples=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> CrnnTrainResult:
    """Train ``params`` (a copy is made) with per-sequence SGD and momentum.

    After every epoch the validation set is decoded; the checkpoints with the
    lowest validation CTC loss and the lowest validation label error are both
    retained.
    """
    config = config or CrnnTrainConfig()
    samples = list(samples)
    if not samples:
        raise UsageError("train_crnn needs at least one sample")
    if val_samples is None:
        train_set, val_set = split_validation(samples, config.val_fraction, config.seed)
    else:
        train_set, val_set = samples, list(val_samples)
        if not val_set:
            val_set = train_set

    params = params.copy()
    tensors = params.tensors()
    opt = OptimizerState.for_params(tensors, config.lr, config.momentum)
    rng = Rng.for_stream(config.seed, 0x747261696E)

    start = evaluate(val_set, params)
    best_ctc, best_ctc_loss, best_ctc_epoch = params.copy(), start.mean_ctc_loss, 0
    best_lab, best_lab_err, best_lab_epoch = params.copy(), start.label_error, 0
    history: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for b0 in range(0, len(order), config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            acc = None
            for j in batch:
                s = train_set[j]
                loss, grads = bptt_gradients(s.features, s.target, params)
                if not math.isfinite(loss):
                    continue
                losses.append(loss)
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
            if acc is None:
                continue
            if len(batch) > 1:
                for g in acc.values():
                    g /= len(batch)
            clip_global_norm(acc, config.clip)
            opt.step(tensors, acc)

        ev = evaluate(val_set, params)
        train_acc = None
        if config.stop_at_train_acc is not None:
            train_acc = evaluate(train_set, params).seq_acc
        rec = EpochRecord(
            epoch,
            float(np.mean(losses)) if losses else math.inf,
            ev.label_error,
            ev.seq_acc,
            ev.mean_ctc_loss,
            train_acc,
        )
        history.append(rec)
        log.info("crnn %s", rec.log_line())
        if on_epoch is not None:
            on_epoch(rec)
        if ev.mean_ctc_loss < best_ctc_loss:
            best_ctc, best_ctc_loss, best_ctc_epoch = params.copy(), ev.mean_ctc_loss, epoch
        if ev.label_error < best_lab_err:
            best_lab, best_lab_err, best_lab_epoch = params.copy(), ev.label_error, epoch
        if train_acc is not None and train_acc >= config.stop_at_train_acc:
            break
        if config.patience is not None and epoch - best_lab_epoch >= config.patience:
            break
    return CrnnTrainResult(params, best_ctc, best_lab, best_ctc_epoch, best_lab_epoch, history)
