import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eden.survival import (
    THRESHOLD_GRID,
    Prediction,
    chain_rule,
    chain_rule_backward,
    extract_prediction,
    recover_hazard,
    target_event_rate,
)
from eden.numkernel import grad_check


def test_chain_rule_examples():
    assert np.array_equal(chain_rule(np.zeros(3)), np.zeros(3))
    assert np.array_equal(chain_rule(np.array([0.5, 0.5, 0.5])), np.array([0.5, 0.75, 0.875]))
    w = chain_rule(np.array([0.0, 1 - 1e-12, 0.3]))
    assert w[0] == 0 and w[1] > 1 - 1e-11 and w[2] >= w[1]


@pytest.mark.parametrize("h", [[0.2, 1.0], [-0.1, 0.2], [0.5, 1 - 1e-13], [np.nan, 0.1]])
def test_chain_rule_rejects_out_of_range(h):
    with pytest.raises(ValueError):
        chain_rule(np.array(h))


def test_monotone_on_random_sequences():
    rng = np.random.default_rng(0)
    h = rng.uniform(0, 1 - 1e-12, (10_000, 12)) ** rng.uniform(0.2, 5, (10_000, 1))
    w = chain_rule(h)
    # W may round to exactly 1.0 once the survival product underflows double precision
    assert np.all(np.diff(w, axis=1) >= 0) and np.all((w >= 0) & (w <= 1))


def test_hazard_recovery_identity():
    # per-visit hazards up to 0.5 over 12 visits keep 1 - W above 2**-12
    rng = np.random.default_rng(1)
    h = rng.uniform(0, 0.5, (10_000, 12))
    assert np.abs(recover_hazard(chain_rule(h)) - h).max() <= 1e-10


def test_hazard_recovery_error_tracks_remaining_survival():
    # W is stored in linear space, so 1 - W keeps about eps / (1 - W) relative precision
    rng = np.random.default_rng(5)
    h = rng.uniform(0, 0.99, (10_000, 12))
    w = chain_rule(h)
    err = np.abs(recover_hazard(w) - h)
    surv_prev = np.concatenate([np.ones((len(h), 1)), np.cumprod(1 - h, axis=1)[:, :-1]], axis=1)
    assert np.all(err <= 8 * np.finfo(float).eps / surv_prev)


def test_chain_rule_batched_axis():
    h = np.random.default_rng(2).uniform(0, 0.9, (4, 6, 3))
    w = chain_rule(h, axis=1)
    for b in range(4):
        for s in range(3):
            np.testing.assert_array_equal(w[b, :, s], chain_rule(h[b, :, s]))


def test_chain_rule_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = rng.uniform(0.05, 0.9, (2, 5, 3))
    c = rng.normal(size=h.shape)
    g = chain_rule_backward(h, c, axis=1)
    err = grad_check(lambda p: float((c * chain_rule(p["h"], axis=1)).sum()), {"h": h}, {"h": g})
    assert err <= 1e-6


def test_extract_prediction_examples():
    p = extract_prediction(np.array([0.1, 0.2, 0.9]), [0, 30, 90], 0.5)
    assert (p.decision, p.time, p.score) == (1, 90.0, 0.9)
    p = extract_prediction(np.array([0.1, 0.2, 0.3]), [0, 30, 90], 0.5)
    assert (p.decision, p.time) == (0, None)
    with pytest.raises(ValueError):
        extract_prediction(np.array([]), [], 0.5)
    with pytest.raises(ValueError):
        extract_prediction(np.array([0.2]), [0], 1.0)
    with pytest.raises(ValueError):
        Prediction(0.9, 1, None)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 15), elements=st.floats(0, 0.999)), st.sampled_from(list(THRESHOLD_GRID)))
def test_extract_prediction_consistency(h, t):
    w = chain_rule(h)
    times = np.cumsum(np.arange(len(w)) + 1) - 1
    p = extract_prediction(w, times, t)
    assert p.score == w.max() == w[-1]
    if p.decision:
        k = list(times).index(p.time)
        assert w[k] >= t and (k == 0 or w[k - 1] < t)


def test_target_event_rate_examples():
    assert np.array_equal(target_event_rate(False, 30, [0, 10, 20, 30]), [0, 0, 0, 0])
    assert np.array_equal(target_event_rate(True, 40, [0, 10, 20, 40, 50, 60]), [0, 0, 0, 1, 1, 1])
    assert np.array_equal(target_event_rate(True, 0, [0, 10, 20]), [1, 1, 1])
    with pytest.raises(ValueError):
        target_event_rate(True, 15, [0, 10, 20])


def test_threshold_grid():
    assert list(THRESHOLD_GRID) == [round(0.05 * k, 2) for k in range(1, 20)]
