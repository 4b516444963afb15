import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from burrnas.archspace import encode, enumerate_all, is_valid
from burrnas.childeval import SurrogateEvaluator, surrogate_reward
from burrnas.controller import (
    BaselineState,
    SearchConfig,
    SearchLog,
    init_controller,
    logprob_gradient,
    reinforce_update,
    run_search,
    sample_architecture,
    score_actions,
    update_baseline,
)
from burrnas.errors import NonFiniteGradient, SearchError


def test_init_deterministic_and_sized():
    a, b = init_controller(7, 32, seed=3), init_controller(7, 32, seed=3)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.params["V_a"].shape[0] == 10 and a.params["V_b"].shape[0] == 10
    assert all(np.abs(v).max() <= 0.1 for v in a.params.values())
    assert not a.hidden.any()
    with pytest.raises(ValueError):
        init_controller(7, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31))
def test_samples_are_valid(T, seed):
    state = init_controller(T, 8, seed)
    for _ in range(5):
        trace = sample_architecture(state)
        assert is_valid(trace.arch) and len(trace.arch) == T
        assert len(trace.logprobs) == 3 * T
        assert all(lp <= 0 and math.exp(lp) > 0 for lp in trace.logprobs)


def test_sampling_deterministic_for_rng():
    state = init_controller(3, 16, 1)
    t1 = sample_architecture(state, np.random.default_rng(5))
    t2 = sample_architecture(state, np.random.default_rng(5))
    assert t1.actions == t2.actions and t1.logprobs == t2.logprobs


def test_zeroed_heads_give_uniform_block0():
    state = init_controller(1, 8, 0)
    for k in ("V_a", "c_a", "V_b", "c_b", "V_op", "c_op"):
        state.params[k][:] = 0
    rng = np.random.default_rng(0)
    n = 10_000
    counts = Counter(encode(sample_architecture(state, rng).arch) for _ in range(n))
    assert len(counts) == 12
    freqs = np.array([counts[encode(a)] for a in enumerate_all(1)])
    assert np.all(np.abs(freqs / n - 1 / 12) <= 0.02)
    assert stats.chisquare(freqs).pvalue > 1e-3


def test_gradient_matches_finite_differences():
    h = 1e-5
    for seed in range(5):
        state = init_controller(1, 4, seed)
        state.params = {k: v * 10 for k, v in state.params.items()}  # leave the near-linear regime
        actions = sample_architecture(state, np.random.default_rng(seed)).actions
        _, grads = logprob_gradient(state, actions)
        for name, g in grads.items():
            param = state.params[name]
            num = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                old = param[idx]
                param[idx] = old + h
                up = score_actions(state, actions)
                param[idx] = old - h
                down = score_actions(state, actions)
                param[idx] = old
                num[idx] = (up - down) / (2 * h)
            scale = max(np.abs(num).max(), np.abs(g).max(), 1e-8)
            assert np.abs(num - g).max() / scale < 1e-4, name


def test_zero_advantage_is_noop():
    state = init_controller(2, 8, 0)
    trace = sample_architecture(state)
    new = reinforce_update(state, trace, 0.5, BaselineState(0.5, initialized=True), lr=0.1)
    assert all(np.array_equal(new.params[k], state.params[k]) for k in state.params)


def test_positive_advantage_raises_logprob():
    state = init_controller(3, 16, 2)
    trace = sample_architecture(state)
    before = score_actions(state, trace.actions)
    new = reinforce_update(state, trace, 0.9, BaselineState(0.3, initialized=True), lr=0.1)
    assert score_actions(new, trace.actions) > before
    worse = reinforce_update(state, trace, 0.1, BaselineState(0.3, initialized=True), lr=0.1)
    assert score_actions(worse, trace.actions) < before


def test_nonfinite_gradient_reports_trial():
    state = init_controller(1, 4, 0)
    trace = sample_architecture(state)
    state.params["W_x"][0, 0] = np.nan
    with pytest.raises(NonFiniteGradient) as err:
        reinforce_update(state, trace, 1.0, BaselineState(0.0, initialized=True), 0.1, trial=17)
    assert err.value.trial == 17


def test_baseline_examples():
    b = update_baseline(BaselineState(), 0.4)
    assert b.b == 0.4 and b.initialized
    assert update_baseline(BaselineState(0.0, initialized=True), 1.0).b == pytest.approx(0.2)
    b, prev = BaselineState(0.0, initialized=True), 0.0
    for _ in range(50):
        b = update_baseline(b, 0.7)
        assert prev <= b.b <= 0.7
        prev = b.b
    assert b.b == pytest.approx(0.7, abs=1e-4)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
def test_baseline_stays_within_reward_range(rewards):
    b = BaselineState()
    for r in rewards:
        b = update_baseline(b, r)
    assert min(rewards) - 1e-12 <= b.b <= max(rewards) + 1e-12


def test_search_single_trial():
    log = run_search(SearchConfig(T=2, trials=1, seed=0), SurrogateEvaluator())
    assert len(log.entries) == 1 and log.best == log.entries[0]


def test_search_reproducible_and_log_round_trip():
    cfg = SearchConfig(T=2, trials=40, seed=4)
    a, b = run_search(cfg, SurrogateEvaluator()), run_search(cfg, SurrogateEvaluator())
    assert a.entries == b.entries
    back = SearchLog.from_text(a.to_text())
    assert [e.arch for e in back.entries] == [e.arch for e in a.entries]
    assert back.rewards == pytest.approx(a.rewards, abs=1e-6)
    assert a.to_text().splitlines()[0] == "# trial, arch_encoding, reward, baseline, best_so_far"


def test_search_log_bookkeeping():
    log = run_search(SearchConfig(T=2, trials=30, seed=1, child_iters=300), SurrogateEvaluator())
    best = [e.best_so_far for e in log.entries]
    assert best == list(np.maximum.accumulate(log.rewards))
    assert log.cumulative_child_iters == 9000
    assert 1 <= log.converged_at() <= 30


def test_search_wraps_evaluator_errors():
    def broken(arch):
        raise RuntimeError("boom")

    with pytest.raises(SearchError) as err:
        run_search(SearchConfig(T=2, trials=3), broken)
    assert err.value.trial == 1


def test_search_finds_t2_optimum():
    optimum = max(surrogate_reward(a) for a in enumerate_all(2))
    for seed in range(10):
        log = run_search(SearchConfig(T=2, trials=240, seed=seed), SurrogateEvaluator())
        assert log.best.reward == pytest.approx(optimum)


def test_search_config_validation():
    for bad in (dict(trials=0), dict(lr=0.0), dict(m=2), dict(T=0)):
        with pytest.raises(ValueError):
            SearchConfig(**bad)
