"""Convolutional frame-feature extractor.

Three conv(3x3, same padding) + ReLU + 2x2 max-pool stages followed by two
fully connected layers.  With the default widths 32, 32, 64, 128, 10 a
1x32x20 frame shrinks 32x20 -> 16x10 -> 8x5 -> 4x2 (the last pool drops the
odd column), giving 512 inputs to the 128-unit layer whose ReLU output is the
frame feature.  The 10-unit layer is only used while training on glyph crops.

All forward/backward routines work on batches shaped ``[N, C, H, W]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import UsageError
from .numerics import Rng, log_softmax, softmax

log = logging.getLogger(__name__)

FRAME_HEIGHT = 32
FRAME_WIDTH = 20
FEATURE_DIM = 128
NUM_CLASSES = 10


@dataclass
class CnnParams:
    conv_W: list[np.ndarray]
    conv_b: list[np.ndarray]
    fc1_W: np.ndarray
    fc1_b: np.ndarray
    fc2_W: np.ndarray
    fc2_b: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views of every parameter, in a fixed order."""
        out = {}
        for k, (W, b) in enumerate(zip(self.conv_W, self.conv_b)):
            out[f"cnn.conv{k}.W"] = W
            out[f"cnn.conv{k}.b"] = b
        out["cnn.fc1.W"] = self.fc1_W
        out["cnn.fc1.b"] = self.fc1_b
        out["cnn.fc2.W"] = self.fc2_W
        out["cnn.fc2.b"] = self.fc2_b
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "CnnParams":
        n = 0
        while f"cnn.conv{n}.W" in tensors:
            n += 1
        if n == 0:
            raise UsageError("no CNN tensors present")
        return cls(
            conv_W=[np.ascontiguousarray(tensors[f"cnn.conv{k}.W"]) for k in range(n)],
            conv_b=[np.ascontiguousarray(tensors[f"cnn.conv{k}.b"]) for k in range(n)],
            fc1_W=np.ascontiguousarray(tensors["cnn.fc1.W"]),
            fc1_b=np.ascontiguousarray(tensors["cnn.fc1.b"]),
            fc2_W=np.ascontiguousarray(tensors["cnn.fc2.W"]),
            fc2_b=np.ascontiguousarray(tensors["cnn.fc2.b"]),
        )

    def copy(self) -> "CnnParams":
        return CnnParams.from_tensors({k: v.copy() for k, v in self.tensors().items()})

    @property
    def feature_dim(self) -> int:
        return self.fc1_W.shape[0]


def pooled_shape(h: int, w: int, stages: int) -> tuple[int, int]:
    for _ in range(stages):
        h, w = h // 2, w // 2
    return h, w


def init_cnn(
    rng: Rng,
    in_channels: int = 1,
    channels: tuple[int, ...] = (32, 32, 64),
    hidden: int = FEATURE_DIM,
    classes: int = NUM_CLASSES,
    input_hw: tuple[int, int] = (FRAME_HEIGHT, FRAME_WIDTH),
) -> CnnParams:
    """He-uniform weights, zero biases."""
    conv_W, conv_b = [], []
    c_in = in_channels
    for c_out in channels:
        bound = np.sqrt(6.0 / (c_in * 9))
        conv_W.append(rng.uniform(-bound, bound, (c_out, c_in, 3, 3)))
        conv_b.append(np.zeros(c_out))
        c_in = c_out
    h, w = pooled_shape(*input_hw, len(channels))
    if h == 0 or w == 0:
        raise UsageError(f"input {input_hw} too small for {len(channels)} pooling stages")
    flat = c_in * h * w
    bound = np.sqrt(6.0 / flat)
    fc1_W = rng.uniform(-bound, bound, (hidden, flat))
    bound = np.sqrt(6.0 / hidden)
    fc2_W = rng.uniform(-bound, bound, (classes, hidden))
    return CnnParams(conv_W, conv_b, fc1_W, np.zeros(hidden), fc2_W, np.zeros(classes))


# --------------------------------------------------------------------------
# layers


def _im2col(x: np.ndarray) -> np.ndarray:
    """``[N,C,H,W]`` -> ``[N*H*W, C*9]`` patches for a 3x3 same-padded conv."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # [N,C,H,W,3,3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv3x3_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    n, c, h, w = x.shape
    if W.shape[1] != c or W.shape[2:] != (3, 3):
        raise UsageError(f"kernel {W.shape} does not fit input with {c} channels")
    cols = _im2col(x)
    out = cols @ W.reshape(W.shape[0], -1).T + b
    out = out.reshape(n, h, w, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv3x3_backward(dout: np.ndarray, x_shape, cols: np.ndarray, W: np.ndarray):
    n, c, h, w = x_shape
    o = W.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dW = (d.T @ cols).reshape(W.shape)
    db = d.sum(axis=0)
    dcols = (d @ W.reshape(o, -1)).reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dW, db


def maxpool2_forward(x: np.ndarray):
    """2x2/2 max-pool; a trailing odd row or column is dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise UsageError(f"cannot pool a {h}x{w} map")
    blocks = (
        x[:, :, : 2 * h2, : 2 * w2]
        .reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    # first maximum wins, so gradients route to exactly one input per window
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(dout: np.ndarray, x_shape, idx: np.ndarray):
    n, c, h, w = x_shape
    h2, w2 = dout.shape[2:]
    dblocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, : 2 * h2, : 2 * w2] = (
        dblocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    )
    return dx


def conv_pool_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``maxpool(relu(conv(x)))`` for one ``[C,H,W]`` map or a ``[N,C,H,W]`` batch."""
    single = x.ndim == 3
    xb = x[None] if single else x
    z, _ = conv3x3_forward(np.asarray(xb, dtype=np.float64), W, b)
    out, _ = maxpool2_forward(np.maximum(z, 0.0))
    return out[0] if single else out


# --------------------------------------------------------------------------
# network


def _forward(params: CnnParams, x: np.ndarray, need_logits: bool = True):
    caches = []
    a = x
    for W, b in zip(params.conv_W, params.conv_b):
        z, cols = conv3x3_forward(a, W, b)
        r = np.maximum(z, 0.0)
        p, idx = maxpool2_forward(r)
        caches.append((a.shape, cols, z, r.shape, idx))
        a = p
    flat = a.reshape(a.shape[0], -1)
    if flat.shape[1] != params.fc1_W.shape[1]:
        raise UsageError(
            f"flattened conv output has {flat.shape[1]} values, fc1 expects {params.fc1_W.shape[1]}"
        )
    z1 = flat @ params.fc1_W.T + params.fc1_b
    feat = np.maximum(z1, 0.0)
    logits = feat @ params.fc2_W.T + params.fc2_b if need_logits else None
    return feat, logits, (caches, a.shape, flat, z1, feat)


def _as_batch(frames) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4:
        raise UsageError(f"frames must be [N,C,H,W], got shape {x.shape}")
    return x


def cnn_extract(frames, params: CnnParams, batch_size: int = 256) -> np.ndarray:
    """Feature vectors for one frame (``[H,W]`` -> ``[128]``) or many (``[N,H,W]`` -> ``[N,128]``)."""
    single = np.ndim(frames) == 2
    x = _as_batch(frames)
    chunks = [
        _forward(params, x[i:i + batch_size], need_logits=False)[0]
        for i in range(0, x.shape[0], batch_size)
    ]
    out = np.concatenate(chunks) if chunks else np.zeros((0, params.feature_dim))
    return out[0] if single else out


def cnn_logits(frames, params: CnnParams, batch_size: int = 256) -> np.ndarray:
    x = _as_batch(frames)
    chunks = [_forward(params, x[i:i + batch_size])[1] for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, params.fc2_W.shape[0]))


def cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Loss ``-log softmax(logits)[label]`` and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise UsageError(f"label {label} outside [0, {logits.shape[-1]})")
    loss = -float(log_softmax(logits)[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return loss, grad


def cnn_loss_and_grads(params: CnnParams, frames, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and gradients keyed like ``params.tensors()``."""
    x = _as_batch(frames)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if labels.shape != (n,):
        raise UsageError("one label per frame required")
    if np.any(labels < 0) or np.any(labels >= params.fc2_W.shape[0]):
        raise UsageError("label out of range")
    feat, logits, (caches, pooled_shape_, flat, z1, _) = _forward(params, x)
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads = {}
    grads["cnn.fc2.W"] = dlogits.T @ feat
    grads["cnn.fc2.b"] = dlogits.sum(axis=0)
    dz1 = (dlogits @ params.fc2_W) * (z1 > 0)
    grads["cnn.fc1.W"] = dz1.T @ flat
    grads["cnn.fc1.b"] = dz1.sum(axis=0)
    da = (dz1 @ params.fc1_W).reshape(pooled_shape_)
    for k in range(len(caches) - 1, -1, -1):
        in_shape, cols, z, r_shape, idx = caches[k]
        dr = maxpool2_backward(da, r_shape, idx)
        dz = dr * (z > 0)
        da, dW, db = conv3x3_backward(dz, in_shape, cols, params.conv_W[k])
        grads[f"cnn.conv{k}.W"] = dW
        grads[f"cnn.conv{k}.b"] = db
    ordered = {name: grads[name] for name in params.tensors()}
    return loss, ordered


# --------------------------------------------------------------------------
# training


@dataclass
class CnnTrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 32
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class CnnTrainResult:
    params: CnnParams
    best_epoch: int
    best_val_acc: float
    history: list[dict] = field(default_factory=list)


def accuracy(params: CnnParams, frames, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(cnn_logits(frames, params).argmax(axis=1) == labels))


def train_cnn(
    frames,
    labels,
    config: CnnTrainConfig | None = None,
    init: CnnParams | None = None,
) -> CnnTrainResult:
    """Minibatch SGD with classical momentum on labelled glyph crops.

    A seeded ``val_fraction`` of the crops is held out; the parameters with
    the best held-out accuracy are returned (training accuracy decides when
    the split leaves no validation crops).
    """
    config = config or CnnTrainConfig()
    x = _as_batch(frames)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise UsageError("train_cnn needs at least one crop")
    if y.shape != (x.shape[0],) or np.any(y < 0) or np.any(y >= NUM_CLASSES):
        raise UsageError("crop labels must be class indices in [0, 10)")

    rng = Rng(config.seed)
    params = init.copy() if init is not None else init_cnn(rng, in_channels=x.shape[1], input_hw=x.shape[2:])
    order = rng.permutation(x.shape[0])
    n_val = int(round(config.val_fraction * x.shape[0])) if x.shape[0] >= 10 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = (x[val_idx], y[val_idx]) if n_val else (x_tr, y_tr)

    # local import: train depends on features for the baseline, not vice versa
    from .train import sgd_momentum_update, zeros_like_tensors

    velocity = zeros_like_tensors(params.tensors())
    best = params.copy()
    best_acc = accuracy(params, x_val, y_val)
    best_epoch = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(x_tr.shape[0])
        losses = []
        for start in range(0, len(perm), config.batch_size):
            batch = perm[start:start + config.batch_size]
            loss, grads = cnn_loss_and_grads(params, x_tr[batch], y_tr[batch])
            sgd_momentum_update(params.tensors(), grads, velocity, config.lr, config.momentum)
            losses.append(loss * len(batch))
        mean_loss = float(np.sum(losses) / len(perm))
        acc = accuracy(params, x_val, y_val)
        history.append({"epoch": epoch, "loss": mean_loss, "val_acc": acc})
        log.info("cnn epoch %d loss %.4f val_acc %.4f", epoch, mean_loss, acc)
        if acc > best_acc:
            best, best_acc, best_epoch = params.copy(), acc, epoch
    return CnnTrainResult(best, best_epoch, best_acc, history)
