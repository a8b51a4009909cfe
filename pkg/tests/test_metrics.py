import itertools
import json
from functools import lru_cache

import numpy as np
import pytest

from adaroute import metrics, synthdata, training


# ---------------------------------------------------------------------------
# word error rate


def oracle_distance(hyp, ref):
    """Independent edit-distance oracle: memoized recursion."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            d(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]),
            d(i - 1, j) + 1,
            d(i, j - 1) + 1,
        )

    return d(len(ref), len(hyp))


def test_wer_hand_examples():
    assert metrics.wer((1, 2, 3), (1, 2, 3)).errors == 0
    r = metrics.wer((1, 9, 3), (1, 2, 3))
    assert (r.sub, r.ins, r.dels) == (1, 0, 0)
    r = metrics.wer((1, 3), (1, 2, 3))
    assert (r.sub, r.ins, r.dels) == (0, 0, 1)
    r = metrics.wer((1, 2, 2, 3), (1, 2, 3))
    assert (r.sub, r.ins, r.dels) == (0, 1, 0)
    assert metrics.wer((), (1, 2)).wer == 1.0
    # errors can exceed the reference length
    assert metrics.wer((4, 5, 6, 7), (1,)).errors == 4


def test_wer_empty_reference_rejected():
    with pytest.raises(ValueError):
        metrics.wer((1,), ())


def test_wer_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(300):
        ref = tuple(rng.integers(1, 4, size=rng.integers(1, 6)))
        hyp = tuple(rng.integers(1, 4, size=rng.integers(0, 6)))
        r = metrics.wer(hyp, ref)
        assert r.errors == oracle_distance(hyp, ref)
        assert r.sub + r.ins + r.dels == r.errors
        assert r.ref_len == len(ref)


def test_wer_triangle_and_symmetry_of_errors():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = tuple(rng.integers(1, 4, size=rng.integers(1, 5)))
        b = tuple(rng.integers(1, 4, size=rng.integers(1, 5)))
        c = tuple(rng.integers(1, 4, size=rng.integers(1, 5)))
        ab, bc, ac = (metrics.wer(x, y).errors for x, y in ((a, b), (b, c), (a, c)))
        assert ac <= ab + bc
        assert metrics.wer(a, b).errors == metrics.wer(b, a).errors


# ---------------------------------------------------------------------------
# selection policies


def test_gaussian_weights_shape():
    w = metrics._gaussian_weights(7)
    assert w.sum() == pytest.approx(1.0)
    assert w[3] == w.max()
    assert np.allclose(w, w[::-1])


def test_choose_modes():
    rng = np.random.default_rng(0)
    z = np.array([0.1, 5.0, -2.0])
    assert metrics._choose("adaptive", z, 3, rng, None) == 1
    assert metrics._choose("fixed", z, 3, rng, 2) == 2
    with pytest.raises(ValueError):
        metrics._choose("fixed", z, 3, rng, 7)
    with pytest.raises(ValueError):
        metrics._choose("bogus", z, 3, rng, None)
    draws = [metrics._choose("random", z, 3, rng, None) for _ in range(3000)]
    freqs = np.bincount(draws, minlength=3) / len(draws)
    assert np.allclose(freqs, 1 / 3, atol=0.03)


# ---------------------------------------------------------------------------
# evaluation reports (on a small untrained model: structure, not quality)


@pytest.fixture(scope="module")
def tiny_setup():
    from adaroute import config as config_mod

    cfg = config_mod.validate({
        "M": 2, "resolutions": [8, 16], "eta_max": 16, "t_ref": 32,
        "feature_dim": 6, "global_hidden": 4, "local_hidden": 8,
        "global_head_conv": 4, "global_head_rnn": 4,
        "local_head_conv": 6, "local_head_rnn": 6, "policy_hidden": 4,
        "n_easy_glosses": 2, "n_hard_groups": 1,
        "n_train": 6, "n_dev": 4, "n_test": 8,
    })
    state = training.new_state(cfg)
    samples = synthdata.generate(config_mod.generator_config(cfg))["test"]
    return cfg, state, samples


def test_forward_candidate_flops_ordering(tiny_setup):
    _, state, samples = tiny_setup
    s = samples[0]
    n = len(state.cset)
    totals = []
    for k in range(n):
        post, flops = metrics.forward_candidate(state.bundle, state.cset, s, k)
        assert np.allclose(np.exp(post).sum(axis=1), 1.0, atol=1e-9)
        assert flops["extractor"] <= flops["total"]
        totals.append(flops["total"])
    # candidates are cost-sorted; absolute per-sample MACs follow the same order
    assert all(a <= b for a, b in zip(totals, totals[1:]))


def test_reuse_global_changes_posterior(tiny_setup):
    _, state, samples = tiny_setup
    s = samples[0]
    full_k = int(np.argmax(state.cset.cost_table))
    with_g, _ = metrics.forward_candidate(
        state.bundle, state.cset, s, full_k, fuse="interp_log_mean", reuse_global=True
    )
    without, _ = metrics.forward_candidate(
        state.bundle, state.cset, s, full_k, fuse="interp_log_mean", reuse_global=False
    )
    assert not np.allclose(with_g, without)


def test_evaluate_report_invariants(tiny_setup):
    _, state, samples = tiny_setup
    rep = metrics.evaluate(state, samples, mode="adaptive")
    n = len(state.cset)
    assert rep.n_samples == len(samples)
    assert sum(rep.selection_ratios) == pytest.approx(1.0)
    assert len(rep.selection_ratios) == len(rep.conditional_wer) == n
    assert rep.expected_cost == pytest.approx(
        float(np.array(rep.selection_ratios) @ state.cset.cost_table)
    )
    assert rep.sub + rep.ins + rep.dels == round(rep.wer * rep.ref_len)
    assert rep.vs_full["win"] + rep.vs_full["tie"] + rep.vs_full["loss"] == len(samples)
    assert set(rep.wer_by_difficulty) <= {"easy", "hard"}
    # every unused candidate reports no conditional WER
    for ratio, cw in zip(rep.selection_ratios, rep.conditional_wer):
        assert (cw is None) == (ratio == 0.0)
    json.loads(rep.to_json())  # serializable
    assert "candidate" in rep.summary()


def test_evaluate_adaptive_is_deterministic(tiny_setup):
    _, state, samples = tiny_setup
    a = metrics.evaluate(state, samples, mode="adaptive", seed=0)
    b = metrics.evaluate(state, samples, mode="adaptive", seed=99)
    assert a.deterministic_payload() == b.deterministic_payload()
    assert "throughput" not in a.deterministic_payload()


def test_evaluate_random_ratios_near_uniform(tiny_setup):
    from adaroute import config as config_mod

    cfg, state, _ = tiny_setup
    gcfg = config_mod.generator_config(cfg)
    # a bigger pool so the uniform ratios concentrate
    big = [synthdata.make_sample(gcfg, synthdata._glyphs(gcfg), i) for i in range(600)]
    rep = metrics.evaluate(state, big, mode="random", seed=1, compare_full=False)
    n = len(state.cset)
    assert np.allclose(rep.selection_ratios, 1 / n, atol=0.05)


def test_evaluate_fixed_mode(tiny_setup):
    _, state, samples = tiny_setup
    rep = metrics.evaluate(state, samples, mode="fixed", fixed_k=0)
    assert rep.mode == "fixed:0"
    assert rep.selection_ratios[0] == 1.0
    with pytest.raises(ValueError):
        metrics.evaluate(state, samples, mode="fixed", fixed_k=None)


def test_evaluate_gaussian_notes(tiny_setup):
    _, state, samples = tiny_setup
    rep = metrics.evaluate(state, samples, mode="gaussian", seed=2)
    assert "gaussian_baseline" in rep.notes


def test_evaluate_thread_count_invariance(tiny_setup, monkeypatch):
    _, state, samples = tiny_setup
    monkeypatch.setenv("ADAROUTE_THREADS", "1")
    a = metrics.evaluate(state, samples, mode="random", seed=3)
    monkeypatch.setenv("ADAROUTE_THREADS", "4")
    b = metrics.evaluate(state, samples, mode="random", seed=3)
    assert a.deterministic_payload() == b.deterministic_payload()


def test_candidate_matrix_shape(tiny_setup):
    _, state, samples = tiny_setup
    out = metrics.candidate_matrix(state, samples[:4])
    n = len(state.cset)
    assert len(out["grid"]) == n and all(len(row) == n for row in out["grid"])
    assert sum(out["row_counts"]) == 4
    for row, count in zip(out["grid"], out["row_counts"]):
        if count == 0:
            assert all(cell is None for cell in row)
        else:
            assert all(cell is not None for cell in row)
