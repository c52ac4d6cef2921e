import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpgnav.schedule import (NoiseSchedule, build_cosine_schedule, build_linear_schedule,
                             build_schedule, fds_prefactor, head_tail_weight_ratio,
                             solver_coefficients)


def weights_by_loop(beta):
    """Independent oracle: w_t as an explicit forward product over s > t."""
    T = len(beta) - 1
    w = []
    for t in range(T + 1):
        prod = 1.0
        for s in range(t + 1, T + 1):
            prod *= (1.0 - beta[s] / 2.0) ** 2
        w.append(prod)
    return np.array(w)


def test_single_step_schedule():
    s = build_cosine_schedule(1)
    assert 0.0 < s.alpha_bar[1] < 1.0
    assert s.w[1] == 1.0


def test_products_match_loop_oracle(schedule10):
    w = weights_by_loop(schedule10.beta)
    assert schedule10.w[10] == 1.0
    np.testing.assert_allclose(schedule10.w, w, rtol=1e-14)


def test_head_tail_ratio_hand_sum(schedule10):
    w = weights_by_loop(schedule10.beta)
    oracle = sum(w[t] for t in range(5, 11)) / sum(w[t] for t in range(1, 5))
    assert head_tail_weight_ratio(schedule10, 4) == pytest.approx(oracle, rel=1e-13)
    # frozen value for the default cosine schedule (offset 0.008)
    assert head_tail_weight_ratio(schedule10, 4) == pytest.approx(24.140273, rel=1e-6)


def test_invariants(schedule10):
    s = schedule10
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.rho[1:] > 0) & (s.rho[1:] < 1))
    assert np.all(np.diff(s.w[1:]) > 0)          # w decreases as t decreases
    assert np.all(s.beta[1:] <= 0.999)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_cosine_schedule(0)
    with pytest.raises(ValueError):
        build_cosine_schedule(5, float("nan"))
    with pytest.raises(ValueError):
        build_schedule("sigmoid", 5)


def test_prefactor_values(schedule10):
    assert fds_prefactor(schedule10, 0) == 0.0
    assert fds_prefactor(schedule10, 10) > fds_prefactor(schedule10, 1)
    with pytest.raises(ValueError):
        fds_prefactor(schedule10, 11)
    # hand-built schedule with abar_3 = 0.25
    a12 = math.sqrt(0.5)
    beta = np.array([0.0, 1 - a12, 1 - a12, 0.5])
    s = NoiseSchedule(3, beta)
    assert s.alpha_bar[3] == pytest.approx(0.25)
    assert fds_prefactor(s, 3) == pytest.approx(3.0, rel=1e-12)


def test_round_trip_dict(schedule10):
    s2 = NoiseSchedule.from_dict(schedule10.to_dict())
    np.testing.assert_array_equal(s2.alpha_bar, schedule10.alpha_bar)


@pytest.mark.parametrize("solver", ["ddpm", "ddim"])
def test_solver_coefficients_match_mean(schedule10, solver, rng):
    from fpgnav.fpg import reverse_mean
    a, eps = rng.standard_normal(6), rng.standard_normal(6)
    for t in range(1, 11):
        c, d = solver_coefficients(schedule10, t, solver)
        np.testing.assert_allclose(reverse_mean(schedule10, a, eps, t, solver), c * a - d * eps,
                                   rtol=1e-10, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 60), offset=st.floats(1e-4, 0.2), linear=st.booleans())
def test_backward_recurrence_property(T, offset, linear):
    s = build_linear_schedule(T) if linear else build_cosine_schedule(T, offset)
    for t in range(T):
        assert s.w[t] == pytest.approx(s.rho[t + 1] ** 2 * s.w[t + 1], rel=1e-14)
    pre = [fds_prefactor(s, t) for t in range(T + 1)]
    assert all(b >= a for a, b in zip(pre, pre[1:]))
