"""Independent reference implementations used only by the tests.

Each one is written from the defining formula, scalar by scalar, and shares
no code with the package under test.
"""

import math
from functools import lru_cache

M64 = (1 << 64) - 1


class PyXoshiro:
    """Pure-Python splitmix64-seeded xoshiro256**."""

    def __init__(self, seed):
        x = seed & M64
        self.s = []
        for _ in range(4):
            x = (x + 0x9E3779B97F4A7C15) & M64
            z = x
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
            self.s.append(z ^ (z >> 31))

    @staticmethod
    def _rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & M64

    def next(self):
        s = self.s
        result = (self._rotl((s[1] * 5) & M64, 7) * 9) & M64
        t = (s[1] << 17) & M64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_step_scalar(x, h, c, Wx, Wh, peep, b):
    """Peephole LSTM step from the gate equations, one unit at a time.

    ``Wx``/``Wh``/``b`` are nested lists in gate order i, f, c, o;
    ``peep`` rows are i, f, o.
    """
    H = len(h)
    D = len(x)

    def pre(gate, j):
        row = gate * H + j
        return (
            sum(Wx[row][d] * x[d] for d in range(D))
            + sum(Wh[row][k] * h[k] for k in range(H))
            + b[row]
        )

    i = [sig(pre(0, j) + peep[0][j] * c[j]) for j in range(H)]
    f = [sig(pre(1, j) + peep[1][j] * c[j]) for j in range(H)]
    g = [math.tanh(pre(2, j)) for j in range(H)]
    c_new = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
    o = [sig(pre(3, j) + peep[2][j] * c_new[j]) for j in range(H)]
    h_new = [o[j] * math.tanh(c_new[j]) for j in range(H)]
    return h_new, c_new


def lstm_direction_scalar(xs, p):
    H = p.Wh.shape[1]
    h, c = [0.0] * H, [0.0] * H
    out = []
    args = (p.Wx.tolist(), p.Wh.tolist(), p.peep.tolist(), p.b.tolist())
    for x in xs:
        h, c = lstm_step_scalar(list(x), h, c, *args)
        out.append(h)
    return out


def stack_probs_scalar(features, params):
    """Bidirectional stack + output layer + softmax, with plain Python lists."""
    seq = [list(map(float, row)) for row in features]
    for layer in params.layers:
        fwd = lstm_direction_scalar(seq, layer.forward)
        bwd = lstm_direction_scalar(seq[::-1], layer.backward)[::-1]
        seq = [f + b for f, b in zip(fwd, bwd)]
    H = params.layers[-1].hidden
    Wf, Wb, bo = params.W_fwd.tolist(), params.W_bwd.tolist(), params.b_o.tolist()
    probs = []
    for row in seq:
        u = [
            sum(Wf[k][j] * row[j] for j in range(H)) + sum(Wb[k][j] * row[H + j] for j in range(H)) + bo[k]
            for k in range(len(bo))
        ]
        m = max(u)
        e = [math.exp(v - m) for v in u]
        z = sum(e)
        probs.append([v / z for v in e])
    return probs


def edit_distance_recursive(p, q):
    """Levenshtein distance straight from its recursive definition."""
    p, q = tuple(p), tuple(q)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (p[i - 1] != q[j - 1]))

    return d(len(p), len(q))


def numeric_grad(f, x, eps):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place)."""
    import numpy as np

    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g
