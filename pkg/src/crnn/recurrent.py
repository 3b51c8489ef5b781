"""Peephole LSTM, bidirectional layers and the deep recurrent stack.

Gate pre-activations for one direction are packed as ``[i, f, c, o]`` blocks
of ``H`` rows each, so ``Wx`` is ``[4H, D]``, ``Wh`` is ``[4H, H]`` and ``b`` is
``[4H]``.  Peepholes are diagonal and stored as the rows of ``peep`` (``[3, H]``,
order ``i, f, o``).  One step computes::

    i = sigmoid(Wxi x + Whi h' + pi * c' + bi)
    f = sigmoid(Wxf x + Whf h' + pf * c' + bf)
    c = f * c' + i * tanh(Wxc x + Whc h' + bc)
    o = sigmoid(Wxo x + Who h' + po * c + bo)
    h = o * tanh(c)

where primes denote the previous step.  Layer ``l > 0`` reads the
concatenation ``[h_fwd, h_bwd]`` of layer ``l - 1``; the output layer maps the
last layer's two directional states to ``K`` pre-softmax activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .numerics import Rng, sigmoid, softmax

INIT_RANGE = 0.1
FORGET_BIAS = 1.0


@dataclass
class LstmLayerParams:
    Wx: np.ndarray
    Wh: np.ndarray
    peep: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.Wh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W_x, W_h, b)`` views for gate ``'i'``, ``'f'``, ``'c'`` or ``'o'``."""
        k = "ifco".index(name)
        H = self.hidden
        sl = slice(k * H, (k + 1) * H)
        return self.Wx[sl], self.Wh[sl], self.b[sl]

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.Wx": self.Wx,
            f"{prefix}.Wh": self.Wh,
            f"{prefix}.peep": self.peep,
            f"{prefix}.b": self.b,
        }

    def check(self) -> None:
        H, D = self.hidden, self.input_dim
        if (
            self.Wx.shape != (4 * H, D)
            or self.Wh.shape != (4 * H, H)
            or self.peep.shape != (3, H)
            or self.b.shape != (4 * H,)
        ):
            raise UsageError("inconsistent LSTM parameter shapes")


@dataclass
class BiLayerParams:
    forward: LstmLayerParams
    backward: LstmLayerParams

    @property
    def hidden(self) -> int:
        return self.forward.hidden


@dataclass
class StackParams:
    layers: list[BiLayerParams]
    W_fwd: np.ndarray
    W_bwd: np.ndarray
    b_o: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.b_o.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0].forward.input_dim

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.hidden for layer in self.layers]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for l, layer in enumerate(self.layers):
            out.update(layer.forward.tensors(f"rnn.l{l}.fwd"))
            out.update(layer.backward.tensors(f"rnn.l{l}.bwd"))
        out["rnn.out.W_fwd"] = self.W_fwd
        out["rnn.out.W_bwd"] = self.W_bwd
        out["rnn.out.b"] = self.b_o
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "StackParams":
        def lstm(prefix):
            return LstmLayerParams(
                *(np.ascontiguousarray(tensors[f"{prefix}.{k}"]) for k in ("Wx", "Wh", "peep", "b"))
            )

        layers = []
        l = 0
        while f"rnn.l{l}.fwd.Wx" in tensors:
            layers.append(BiLayerParams(lstm(f"rnn.l{l}.fwd"), lstm(f"rnn.l{l}.bwd")))
            l += 1
        if not layers:
            raise UsageError("no recurrent layers present")
        params = cls(
            layers,
            np.ascontiguousarray(tensors["rnn.out.W_fwd"]),
            np.ascontiguousarray(tensors["rnn.out.W_bwd"]),
            np.ascontiguousarray(tensors["rnn.out.b"]),
        )
        params.check()
        return params

    def copy(self) -> "StackParams":
        return StackParams.from_tensors({k: v.copy() for k, v in self.tensors().items()})

    def check(self) -> None:
        d = self.input_dim
        for layer in self.layers:
            for direction in (layer.forward, layer.backward):
                direction.check()
                if direction.input_dim != d:
                    raise UsageError("layer input size does not match the previous layer's output")
            if layer.backward.hidden != layer.forward.hidden:
                raise UsageError("both directions of a layer must share the hidden size")
            d = 2 * layer.hidden
        H = self.layers[-1].hidden
        K = self.num_classes
        if self.W_fwd.shape != (K, H) or self.W_bwd.shape != (K, H):
            raise UsageError("output weights do not match the last hidden size")


def init_lstm(rng: Rng, input_dim: int, hidden: int) -> LstmLayerParams:
    H, D = hidden, input_dim
    Wx = rng.uniform(-INIT_RANGE, INIT_RANGE, (4 * H, D))
    Wh = rng.uniform(-INIT_RANGE, INIT_RANGE, (4 * H, H))
    peep = rng.uniform(-INIT_RANGE, INIT_RANGE, (3, H))
    b = np.zeros(4 * H)
    b[H:2 * H] = FORGET_BIAS
    return LstmLayerParams(Wx, Wh, peep, b)


def init_stack(rng: Rng, input_dim: int, hidden, num_classes: int) -> StackParams:
    """Uniform(-0.1, 0.1) weights; zero biases except forget gates at +1."""
    layers = []
    d = input_dim
    for H in hidden:
        fwd = init_lstm(rng, d, H)
        bwd = init_lstm(rng, d, H)
        layers.append(BiLayerParams(fwd, bwd))
        d = 2 * H
    H = hidden[-1]
    W_fwd = rng.uniform(-INIT_RANGE, INIT_RANGE, (num_classes, H))
    W_bwd = rng.uniform(-INIT_RANGE, INIT_RANGE, (num_classes, H))
    return StackParams(layers, W_fwd, W_bwd, np.zeros(num_classes))


def zero_stack(input_dim: int, hidden, num_classes: int) -> StackParams:
    params = init_stack(Rng(0), input_dim, hidden, num_classes)
    for v in params.tensors().values():
        v[...] = 0.0
    return params


# --------------------------------------------------------------------------
# single step


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "CellState":
        return cls(np.zeros(hidden), np.zeros(hidden))


def lstm_step(x_t, prev: CellState, params: LstmLayerParams):
    """Advance one step; returns the new state and a dict of gate activations."""
    x_t = np.asarray(x_t, dtype=np.float64)
    H = params.hidden
    if x_t.shape != (params.input_dim,) or prev.h.shape != (H,) or prev.c.shape != (H,):
        raise UsageError("lstm_step dimension mismatch")
    a = params.Wx @ x_t + params.Wh @ prev.h + params.b
    i = sigmoid(a[:H] + params.peep[0] * prev.c)
    f = sigmoid(a[H:2 * H] + params.peep[1] * prev.c)
    g = np.tanh(a[2 * H:3 * H])
    c = f * prev.c + i * g
    o = sigmoid(a[3 * H:] + params.peep[2] * c)
    h = o * np.tanh(c)
    return CellState(h, c), {"i": i, "f": f, "o": o, "g": g}


# --------------------------------------------------------------------------
# one direction over a sequence


def lstm_sequence_forward(X: np.ndarray, params: LstmLayerParams, reverse: bool = False):
    """Run one direction over ``X`` (``[T, D]``) from a zero state.

    With ``reverse`` the sequence is consumed from ``t = T-1`` down to 0 and
    the returned hidden states are re-aligned to input order.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise UsageError("sequence must be a non-empty [T, D] array")
    if X.shape[1] != params.input_dim:
        raise UsageError(f"input size {X.shape[1]} != layer input size {params.input_dim}")
    Xs = X[::-1] if reverse else X
    T = Xs.shape[0]
    H = params.hidden
    A = Xs @ params.Wx.T + params.b
    Wh = params.Wh
    pi, pf, po = params.peep
    gates = np.empty((T, 4 * H))
    cs = np.empty((T + 1, H))
    hs = np.empty((T + 1, H))
    cs[0] = 0.0
    hs[0] = 0.0
    for t in range(T):
        a = A[t] + Wh @ hs[t]
        c_prev = cs[t]
        i = sigmoid(a[:H] + pi * c_prev)
        f = sigmoid(a[H:2 * H] + pf * c_prev)
        g = np.tanh(a[2 * H:3 * H])
        c = f * c_prev + i * g
        o = sigmoid(a[3 * H:] + po * c)
        gates[t, :H] = i
        gates[t, H:2 * H] = f
        gates[t, 2 * H:3 * H] = g
        gates[t, 3 * H:] = o
        cs[t + 1] = c
        hs[t + 1] = o * np.tanh(c)
    out = hs[1:]
    cache = (Xs, gates, cs, hs, reverse)
    return (out[::-1] if reverse else out), cache


def lstm_sequence_backward(dH: np.ndarray, cache, params: LstmLayerParams):
    """Backpropagate ``dL/dh_t`` (input order) through one direction.

    Returns ``dL/dX`` and parameter gradients summed over all timesteps.
    """
    Xs, gates, cs, hs, reverse = cache
    dHs = dH[::-1] if reverse else dH
    T, H = dHs.shape
    pi, pf, po = params.peep
    WhT = params.Wh.T
    dA = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        g = gates[t, 2 * H:3 * H]
        o = gates[t, 3 * H:]
        c = cs[t + 1]
        c_prev = cs[t]
        dh = dHs[t] + dh_next
        tc = np.tanh(c)
        dao = dh * tc * o * (1.0 - o)
        dc = dh * o * (1.0 - tc * tc) + dao * po + dc_next
        dai = dc * g * i * (1.0 - i)
        daf = dc * c_prev * f * (1.0 - f)
        dag = dc * i * (1.0 - g * g)
        dA[t, :H] = dai
        dA[t, H:2 * H] = daf
        dA[t, 2 * H:3 * H] = dag
        dA[t, 3 * H:] = dao
        dc_next = dc * f + dai * pi + daf * pf
        dh_next = WhT @ dA[t]
    grads = {
        "Wx": dA.T @ Xs,
        "Wh": dA.T @ hs[:-1],
        "peep": np.stack(
            [
                np.sum(dA[:, :H] * cs[:-1], axis=0),
                np.sum(dA[:, H:2 * H] * cs[:-1], axis=0),
                np.sum(dA[:, 3 * H:] * cs[1:], axis=0),
            ]
        ),
        "b": dA.sum(axis=0),
    }
    dXs = dA @ params.Wx
    return (dXs[::-1] if reverse else dXs), grads


# --------------------------------------------------------------------------
# bidirectional layer and stack


def birnn_layer_forward(seq, params: BiLayerParams, return_cache: bool = False):
    """``[T, D]`` -> ``[T, 2H]`` rows ``concat(h_fwd_t, h_bwd_t)``."""
    X = np.asarray(seq, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise UsageError("birnn_layer_forward needs a non-empty [T, D] sequence")
    hf, cf = lstm_sequence_forward(X, params.forward)
    hb, cb = lstm_sequence_forward(X, params.backward, reverse=True)
    out = np.concatenate([hf, hb], axis=1)
    if return_cache:
        return out, (cf, cb)
    return out


def birnn_layer_backward(dout: np.ndarray, cache, params: BiLayerParams):
    cf, cb = cache
    H = params.hidden
    dxf, gf = lstm_sequence_backward(dout[:, :H], cf, params.forward)
    dxb, gb = lstm_sequence_backward(dout[:, H:], cb, params.backward)
    return dxf + dxb, gf, gb


@dataclass
class StackCache:
    layer_caches: list
    last: np.ndarray


def stack_forward(features, params: StackParams):
    """Return pre-softmax activations ``u`` [T, K], probabilities ``y`` and caches."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise UsageError("stack_forward needs a non-empty [T, D] feature sequence")
    caches = []
    a = X
    for layer in params.layers:
        a, cache = birnn_layer_forward(a, layer, return_cache=True)
        caches.append(cache)
    H = params.layers[-1].hidden
    u = a[:, :H] @ params.W_fwd.T + a[:, H:] @ params.W_bwd.T + params.b_o
    return u, softmax(u), StackCache(caches, a)


def stack_backward(du: np.ndarray, cache: StackCache, params: StackParams) -> dict[str, np.ndarray]:
    """Gradients of every stack tensor given ``dL/du`` (``[T, K]``)."""
    H = params.layers[-1].hidden
    a = cache.last
    grads = {
        "rnn.out.W_fwd": du.T @ a[:, :H],
        "rnn.out.W_bwd": du.T @ a[:, H:],
        "rnn.out.b": du.sum(axis=0),
    }
    # the output error reaches both directional hidden layers
    da = np.concatenate([du @ params.W_fwd, du @ params.W_bwd], axis=1)
    for l in range(len(params.layers) - 1, -1, -1):
        da, gf, gb = birnn_layer_backward(da, cache.layer_caches[l], params.layers[l])
        for k, v in gf.items():
            grads[f"rnn.l{l}.fwd.{k}"] = v
        for k, v in gb.items():
            grads[f"rnn.l{l}.bwd.{k}"] = v
    return {name: grads[name] for name in params.tensors()}
