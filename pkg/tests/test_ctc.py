import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crnn.ctc import (
    augment,
    collapse,
    ctc_forward_backward,
    ctc_from_activations,
    label_prob_bruteforce,
    path_prob,
    required_frames,
)
from crnn.errors import UsageError
from crnn.numerics import Rng, logsumexp, softmax

from oracles import numeric_grad

B = 10  # blank for the digit alphabet


def random_instance(rng, T_max=6, K_max=3, U_max=3):
    T = rng.integers(1, T_max + 1)
    K = rng.integers(2, K_max + 1)
    y = softmax(rng.uniform(-3, 3, (T, K)))
    U = rng.integers(0, U_max + 1)
    z = tuple(int(s) for s in rng.integers(0, K - 1, U)) if U else ()
    return y, z


def test_collapse_printed_example():
    assert collapse([B, 3, 3, B, B, 3, 2, 2], B) == (3, 3, 2)


def test_collapse_rules():
    assert collapse([B] * 7, B) == ()
    assert collapse([1, B, 1], B) == (1, 1)
    assert collapse([1, 1, 1], B) == (1,)
    assert collapse([], B) == ()


@given(st.lists(st.integers(0, 3), max_size=12))
def test_collapse_idempotent_no_blank(path):
    out = collapse(path, 3)
    assert 3 not in out
    # a labeling written back as its blank-separated path collapses to itself
    assert collapse(augment(out, 3), 3) == out
    if all(a != b for a, b in zip(out, out[1:])):
        assert collapse(out, 3) == out


def test_path_prob():
    y = np.full((2, 2), 0.5)
    assert path_prob(y, [0, 1]) == pytest.approx(math.log(0.25), abs=1e-15)
    y1 = np.array([[0.2, 0.3, 0.5]])
    assert path_prob(y1, [1]) == pytest.approx(math.log(0.3), abs=1e-15)
    assert path_prob(np.array([[1.0, 0.0]]), [1]) == -math.inf
    with pytest.raises(UsageError):
        path_prob(y, [0])


def test_bruteforce_examples():
    y = np.full((2, 2), 0.5)
    assert label_prob_bruteforce(y, (0,)) == pytest.approx(math.log(0.75), abs=1e-15)
    assert label_prob_bruteforce(y, (0, 0, 0)) == -math.inf
    y = softmax(Rng(1).uniform(-1, 1, (4, 3)))
    assert label_prob_bruteforce(y, ()) == pytest.approx(np.log(y[:, 2]).sum(), abs=1e-14)
    with pytest.raises(UsageError):
        label_prob_bruteforce(np.full((20, 3), 1 / 3), (0,))


def test_forward_backward_matches_bruteforce():
    rng = Rng(2024)
    checked = 0
    for _ in range(300):
        y, z = random_instance(rng)
        ref = label_prob_bruteforce(y, z)
        res = ctc_forward_backward(y, z)
        if ref == -math.inf:
            assert not res.feasible and res.loss == math.inf
            continue
        assert res.log_p == pytest.approx(ref, abs=1e-10)
        checked += 1
    assert checked >= 200


def test_single_frame():
    y = np.array([[0.1, 0.6, 0.3]])
    assert ctc_forward_backward(y, (1,)).log_p == pytest.approx(math.log(0.6), abs=1e-15)


def test_lattice_consistency():
    rng = Rng(7)
    for _ in range(100):
        y, z = random_instance(rng, T_max=8)
        res = ctc_forward_backward(y, z)
        if not res.feasible:
            continue
        T, S = res.alpha.shape
        tail = [res.alpha[T - 1, S - 1]] + ([res.alpha[T - 1, S - 2]] if S > 1 else [])
        assert logsumexp(tail) == pytest.approx(res.log_p, abs=1e-9)
        for t in range(T):
            assert logsumexp(res.alpha[t] + res.beta[t]) == pytest.approx(res.log_p, abs=1e-6)
        np.testing.assert_allclose(res.grad.sum(axis=1), 0.0, atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    rng = Rng(seed)
    u = rng.uniform(-2, 2, (4, 3))
    while True:
        z = tuple(int(s) for s in rng.integers(0, 2, rng.integers(1, 3)))
        if required_frames(z) <= 4:
            break
    res = ctc_from_activations(u, z)
    num = numeric_grad(lambda: ctc_from_activations(u, z).loss, u, 1e-6)
    rel = np.abs(res.grad - num) / np.maximum(np.maximum(np.abs(res.grad), np.abs(num)), 1e-6)
    assert rel.max() < 1e-5
    np.testing.assert_allclose(ctc_forward_backward(softmax(u), z).grad, res.grad, atol=1e-12)


def test_infeasible_target_flags():
    y = softmax(Rng(3).uniform(-1, 1, (2, 3)))
    res = ctc_forward_backward(y, (1, 1))
    assert not res.feasible
    assert res.loss == math.inf
    assert not res.grad.any()


def test_required_frames():
    assert required_frames(()) == 0
    assert required_frames((1, 1, 2)) == 4
    assert required_frames((1, 2, 1)) == 3


def test_blank_column_keeps_empty_labeling_probability():
    rng = Rng(4)
    y = softmax(rng.uniform(-1, 1, (3, 4)))
    extra = np.vstack([y, [[0, 0, 0, 1.0]]])
    assert ctc_forward_backward(extra, ()).log_p == pytest.approx(ctc_forward_backward(y, ()).log_p, abs=1e-14)


def test_rejects_blank_in_target():
    with pytest.raises(UsageError):
        ctc_forward_backward(np.full((3, 3), 1 / 3), (2,))
