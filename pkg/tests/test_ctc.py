import itertools
import math
import time

import numpy as np
import pytest

from adaroute import ctc, numeric
from adaroute.numeric import Tensor


def _random_log_posterior(rng, t_len, k):
    z = rng.normal(size=(t_len, k)) * 2.0
    z -= np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return z


def brute_force_loss(logp, target):
    """Sum path probabilities by exhaustive enumeration."""
    t_len, k = logp.shape
    target = tuple(target)
    total = -np.inf
    for path in itertools.product(range(k), repeat=t_len):
        if ctc.collapse(path) == target:
            total = np.logaddexp(total, sum(logp[t, s] for t, s in enumerate(path)))
    return -total


def test_collapse_examples():
    assert ctc.collapse([0, 1, 1, 0, 1]) == (1, 1)
    assert ctc.collapse([1, 1, 2, 2]) == (1, 2)
    assert ctc.collapse([0, 0, 0]) == ()
    assert ctc.collapse([2, 0, 2]) == (2, 2)
    assert ctc.collapse([]) == ()


def test_extend_with_blanks():
    assert ctc.extend_with_blanks([1, 2]) == [0, 1, 0, 2, 0]


def test_min_frames():
    assert ctc.min_frames([1]) == 1
    assert ctc.min_frames([1, 2]) == 2
    assert ctc.min_frames([1, 1]) == 3
    assert ctc.min_frames([1, 1, 1, 2]) == 6


def test_vocabulary_roundtrip():
    v = ctc.Vocabulary(("A", "B"))
    assert v.size == 3
    assert v.index("B") == 2
    assert v.gloss(2) == "B"
    with pytest.raises(ValueError):
        v.gloss(ctc.BLANK)


def test_hand_worked_uniform_example():
    """T'=2, uniform over {blank, a, b}: paths collapsing to (a,) are
    (a,blank), (blank,a), (a,a) -> probability 3/9."""
    logp = np.full((2, 3), math.log(1.0 / 3.0))
    loss = ctc.ctc_loss(Tensor(logp), [1])
    assert loss.data.item() == pytest.approx(-math.log(3.0 / 9.0), abs=1e-12)


def test_loss_matches_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        t_len = int(rng.integers(1, 6))
        k = int(rng.integers(2, 4))
        u = int(rng.integers(1, 4))
        target = tuple(int(x) for x in rng.integers(1, k, size=u))
        if t_len < ctc.min_frames(target):
            continue
        logp = _random_log_posterior(rng, t_len, k)
        got = ctc.ctc_loss(Tensor(logp), target).data.item()
        want = brute_force_loss(logp, target)
        assert got == pytest.approx(want, abs=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    logp0 = rng.normal(size=(6, 4))

    def f(t):
        return ctc.ctc_loss(numeric.log_softmax(t, axis=-1), [1, 2, 1])

    assert numeric.grad_check(f, logp0) < 1e-6


def test_relabel_equivariance():
    """Swapping two non-blank classes in both posterior and target is a no-op."""
    rng = np.random.default_rng(3)
    logp = _random_log_posterior(rng, 7, 4)
    a = ctc.ctc_loss(Tensor(logp), [1, 2]).data.item()
    swapped = logp[:, [0, 2, 1, 3]]
    b = ctc.ctc_loss(Tensor(swapped), [2, 1]).data.item()
    assert a == pytest.approx(b, abs=1e-12)


def test_loss_is_nonnegative():
    rng = np.random.default_rng(8)
    for _ in range(20):
        logp = _random_log_posterior(rng, 5, 3)
        assert ctc.ctc_loss(Tensor(logp), [1, 2]).data.item() >= 0.0


def test_infeasible_alignment_raises():
    logp = np.full((2, 3), math.log(1 / 3))
    with pytest.raises(ctc.InfeasibleAlignmentError):
        ctc.ctc_loss(Tensor(logp), [1, 1])
    with pytest.raises(ctc.InfeasibleAlignmentError):
        ctc.ctc_loss(Tensor(logp), [1, 2, 1])


def test_invalid_targets_rejected():
    logp = np.full((3, 3), math.log(1 / 3))
    with pytest.raises(ValueError):
        ctc.ctc_loss(Tensor(logp), [])
    with pytest.raises(ValueError):
        ctc.ctc_loss(Tensor(logp), [0])
    with pytest.raises(ValueError):
        ctc.ctc_loss(Tensor(logp), [3])


def test_greedy_decode():
    logp = np.log(np.array([
        [0.7, 0.2, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.8, 0.1],
        [0.8, 0.1, 0.1],
        [0.1, 0.1, 0.8],
    ]))
    assert ctc.greedy_decode(logp) == (1, 2)
    # decoding an already-collapsed delta posterior is idempotent
    one_hot = np.full((2, 3), -30.0)
    one_hot[0, 1] = one_hot[1, 2] = 0.0
    assert ctc.greedy_decode(one_hot) == (1, 2)


def test_check_posterior():
    good = _random_log_posterior(np.random.default_rng(0), 4, 3)
    ctc.check_posterior(good)
    with pytest.raises(numeric.ContractError):
        ctc.check_posterior(good + 0.1)


def test_perfect_posterior_has_near_zero_loss():
    sharp = np.full((4, 3), -200.0)
    for t, s in enumerate([1, 0, 2, 0]):
        sharp[t] = -200.0
        sharp[t, s] = 0.0
    loss = ctc.ctc_loss(Tensor(sharp), [1, 2]).data.item()
    assert loss < 1e-6


def test_sequence_score_matches_loss():
    rng = np.random.default_rng(11)
    for _ in range(20):
        lp = _random_log_posterior(rng, 6, 4)
        target = [int(rng.integers(1, 4)) for _ in range(int(rng.integers(1, 3)))]
        loss = ctc.ctc_loss(Tensor(lp), target).data.item()
        assert ctc.sequence_score(lp, target) == pytest.approx(-loss, abs=1e-12)


def test_sequence_score_edge_cases():
    rng = np.random.default_rng(12)
    lp = _random_log_posterior(rng, 3, 3)
    # empty sequence scores the all-blank path
    assert ctc.sequence_score(lp, []) == pytest.approx(float(lp[:, 0].sum()))
    # target needing more frames than available is impossible
    assert ctc.sequence_score(lp, [1, 1, 1]) == float("-inf")
