import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partialda.schedules import (ClassWeights, augment_count, estimate_class_weights, lambda_schedule,
                                 lr_schedule, read_weight_trace, rho_schedule, write_weight_trace)

unit = st.floats(0.0, 1.0)


def test_class_weight_examples():
    m = estimate_class_weights(np.array([[0.9, 0.1, 0.0], [0.7, 0.3, 0.0]])).weights
    np.testing.assert_allclose(m, [1.0, 0.25, 0.0], rtol=0, atol=1e-15)
    assert np.all(estimate_class_weights(np.full((6, 4), 0.25)).weights == 1.0)
    assert list(estimate_class_weights(np.array([[0.0, 1.0, 0.0]])).weights) == [0.0, 1.0, 0.0]


def test_uniform_initialisation_is_all_ones():
    assert np.all(ClassWeights.uniform(7).weights == 1.0)


def test_empty_target_set():
    with pytest.raises(ValueError, match="empty"):
        estimate_class_weights(np.zeros((0, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(2, 8), st.integers(0, 2**16))
def test_class_weights_row_order_invariant(n, C, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(C), size=n)
    perm = rng.permutation(n)
    a = estimate_class_weights(p).weights
    b = estimate_class_weights(p[perm]).weights
    assert np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(2, 8), st.integers(0, 2**16))
def test_class_weights_argmax_matches_total_mass(n, C, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(C), size=n)
    m = estimate_class_weights(p).weights
    assert np.argmax(m) == np.argmax(p.sum(axis=0))
    assert m.max() == 1.0 and m.min() >= 0.0


def test_lr_values():
    assert lr_schedule(0.0) == 0.01
    assert abs(lr_schedule(1.0) - 0.0016565) < 1e-6
    assert lr_schedule(1.0) == pytest.approx(0.01 * 11 ** -0.75, rel=1e-14)


def test_lambda_values():
    assert lambda_schedule(0.0) == 0.0
    assert lambda_schedule(1.0) >= 0.9999
    assert lambda_schedule(1.0) == pytest.approx(2 / (1 + math.exp(-10)) - 1, rel=1e-14)


def test_progress_out_of_range():
    for fn in (lr_schedule, lambda_schedule):
        with pytest.raises(ValueError):
            fn(-0.01)
        with pytest.raises(ValueError):
            fn(1.5)


def test_rho_values():
    assert rho_schedule(0, 2000, 0.25) == 0.25
    assert rho_schedule(2000, 2000, 0.25) == 0.0
    assert rho_schedule(1000, 2000, 0.25) == 0.125
    with pytest.raises(ValueError):
        rho_schedule(0, 0, 0.25)


def test_augmentation_staircase():
    N, Nu, B = 2000, 200, 36
    counts = [augment_count(rho_schedule(k * Nu, N, 0.25), B) for k in range(N // Nu)]
    assert counts == [9, 8, 7, 6, 5, 4, 3, 2, 1, 0]


@settings(max_examples=100, deadline=None)
@given(unit, unit)
def test_schedules_are_monotone(p, q):
    lo, hi = min(p, q), max(p, q)
    assert lr_schedule(lo) >= lr_schedule(hi)
    assert lambda_schedule(lo) <= lambda_schedule(hi)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5000), st.data())
def test_rho_nonincreasing(N, data):
    i = data.draw(st.integers(0, N))
    j = data.draw(st.integers(i, N))
    assert rho_schedule(i, N) >= rho_schedule(j, N)


def test_weight_trace_round_trip(tmp_path):
    rows = [ClassWeights(np.array([1.0, 0.5, 1 / 3]), 200), ClassWeights(np.array([0.1, 1.0, 0.0]), 400)]
    write_weight_trace(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "iteration,w_0,w_1,w_2"
    back = read_weight_trace(tmp_path / "m.csv")
    assert [r.updated_at for r in back] == [200, 400]
    assert all(np.array_equal(a.weights, b.weights) for a, b in zip(rows, back))
