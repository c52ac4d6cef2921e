import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import small_model
from fpgnav.denoiser import ActionState, Denoiser
from fpgnav.fpg import (GuidanceGradient, guided_reverse_step, project_exact, project_ops,
                        reverse_mean)
from fpgnav.schedule import build_cosine_schedule

vec = arrays(np.float64, 6, elements=st.floats(-10, 10))


def test_exact_projection_examples():
    r = project_exact(np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(r.delta, [0.0, 1.0, 0.0])
    g = np.array([1.0, 2.0, -1.0])
    np.testing.assert_allclose(project_exact(3 * g, g).delta, 0.0, atol=1e-15)
    u = np.array([2.0, -1.0, 0.0])
    np.testing.assert_array_equal(project_exact(u, g).delta, u)


def test_exact_projection_degenerate():
    u = np.array([1.0, 2.0])
    r = project_exact(GuidanceGradient(u), np.zeros(2))
    assert r.degenerate
    np.testing.assert_array_equal(r.delta, u)


@settings(max_examples=200, deadline=None)
@given(u=vec, g=vec)
def test_exact_projection_properties(u, g):
    r = project_exact(u, g)
    assert np.linalg.norm(r.delta) <= np.linalg.norm(u) * (1 + 1e-12) + 1e-12
    if not r.degenerate:
        assert abs(g @ r.delta) <= 1e-8 * (np.linalg.norm(g) * np.linalg.norm(r.delta) + 1e-30) + 1e-300


def _explicit_head_model(W):
    m = Denoiser(2, W.shape[0], 4, W.shape[1], 2, seed=0)
    m.params["W"] = np.asarray(W, dtype=np.float64)
    m.refresh()
    return m


def test_ops_projection_hand_example():
    m = _explicit_head_model(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
    r = project_ops(np.array([1.0, 1.0, 1.0]), m, np.array([1.0, 0.0]))
    np.testing.assert_allclose(r.delta, [0.0, 1.0, 0.0], atol=1e-15)


def test_ops_degenerate_is_pullback(rng):
    m = small_model()
    u = rng.standard_normal(4)
    r = project_ops(u, m, np.zeros(m.latent_dim))
    assert r.degenerate
    W = m.params["W"]
    np.testing.assert_allclose(r.delta, W @ W.T @ u, rtol=1e-14)


def test_ops_coincides_with_exact_for_orthonormal_head(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    m = _explicit_head_model(Q)
    u = Q @ rng.standard_normal(3)
    g_h = rng.standard_normal(3)
    r_ops = project_ops(u, m, g_h)
    r_ex = project_exact(u, Q @ g_h)
    assert np.max(np.abs(r_ops.delta - r_ex.delta)) <= 1e-10


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ops_orthogonality_property(seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed=seed % 50, action_dim=5, latent=4)
    u, g_h = rng.standard_normal(5), rng.standard_normal(4)
    r = project_ops(u, m, g_h)
    Wg = m.params["W"] @ g_h
    assert abs(Wg @ r.delta) <= 1e-10 * (np.linalg.norm(Wg) * np.linalg.norm(r.delta) + 1e-30)


def test_steepest_constrained_descent(rng):
    """No direction tangent to the isosurface beats the projected gradient."""
    u, g = rng.standard_normal(6), rng.standard_normal(6)
    r = project_exact(u, g)
    best = -np.linalg.norm(r.delta)   # u . (-delta/|delta|)
    for _ in range(1000):
        d = project_exact(rng.standard_normal(6), g).delta
        d /= np.linalg.norm(d)
        assert abs(g @ d) <= 1e-8
        assert u @ d >= best - 1e-6


def test_loss_descent_first_order(rng):
    g = rng.standard_normal(6)
    A = rng.standard_normal((6, 6))
    loss = lambda a: 0.5 * a @ A.T @ A @ a + a.sum()
    grad = lambda a: A.T @ A @ a + 1.0
    a = rng.standard_normal(6)
    d = project_exact(grad(a), g).delta
    remainders = []
    for gamma in (0.04, 0.02, 0.01, 0.005):
        remainders.append(abs(loss(a - gamma * d) - loss(a) + gamma * d @ d))
    slope = np.polyfit(np.log([0.04, 0.02, 0.01, 0.005]), np.log(remainders), 1)[0]
    assert slope > 1.8


def _tg(target):
    return lambda a: (float(np.sum((a - target) ** 2)), 2 * (a - target))


def test_guided_step_modes(schedule10, rng):
    m = small_model(seed=3)
    C = rng.standard_normal(3)
    st0 = ActionState(rng.standard_normal(4), 6)
    noise = rng.standard_normal(4)
    guide = _tg(rng.standard_normal(4))
    base, _ = guided_reverse_step(m, schedule10, C, st0, noise=noise)
    zero, rec = guided_reverse_step(m, schedule10, C, st0, guide, 0.0, "fpg_ops", noise=noise)
    np.testing.assert_array_equal(base.values, zero.values)
    assert base.step == 5 and rec.projection is not None

    gam = 0.05
    raw, _ = guided_reverse_step(m, schedule10, C, st0, guide, gam, "raw", noise=noise,
                                 guidance_point="state")
    ex, _ = guided_reverse_step(m, schedule10, C, st0, guide, gam, "fpg_exact", noise=noise,
                                guidance_point="state")
    u = guide(st0.values)[1]
    g = m.fisher_normal_exact(schedule10, C, st0.values, 6)
    expected = gam * (u @ g / (g @ g)) * g
    np.testing.assert_allclose(ex.values - raw.values, expected, rtol=1e-9, atol=1e-14)


def test_raw_equals_exact_when_orthogonal(schedule10, rng):
    m = small_model(seed=4)
    C = rng.standard_normal(3)
    st0 = ActionState(rng.standard_normal(4), 3)
    g = m.fisher_normal_exact(schedule10, C, st0.values, 3)
    u = project_exact(rng.standard_normal(4), g).delta
    guide = lambda a: (0.0, u)
    noise = rng.standard_normal(4)
    raw, _ = guided_reverse_step(m, schedule10, C, st0, guide, 0.05, "raw", noise=noise)
    ex, _ = guided_reverse_step(m, schedule10, C, st0, guide, 0.05, "fpg_exact", noise=noise)
    np.testing.assert_allclose(raw.values, ex.values, rtol=1e-12, atol=1e-15)


def test_guided_step_errors(schedule10, rng):
    m = small_model()
    st0 = ActionState(np.zeros(4), 3)
    C = np.zeros(3)
    with pytest.raises(ValueError):
        guided_reverse_step(m, schedule10, C, st0, mode="bogus")
    with pytest.raises(ValueError):
        guided_reverse_step(m, schedule10, C, st0, mode="raw", noise=np.zeros(4))
    with pytest.raises(ValueError):
        guided_reverse_step(m, schedule10, C, st0, gamma=-1.0, noise=np.zeros(4))
    with pytest.raises(ValueError):
        guided_reverse_step(m, schedule10, C, st0)          # DDPM needs noise at t > 1
    last, _ = guided_reverse_step(m, schedule10, C, ActionState(np.zeros(4), 1))
    assert last.step == 0


def test_ddim_is_deterministic(schedule10, rng):
    m = small_model()
    C = rng.standard_normal(3)
    st0 = ActionState(rng.standard_normal(4), 5)
    a, _ = guided_reverse_step(m, schedule10, C, st0, solver="ddim")
    b, _ = guided_reverse_step(m, schedule10, C, st0, solver="ddim", noise=rng.standard_normal(4))
    np.testing.assert_array_equal(a.values, b.values)


def test_clipped_mean_bounds_reconstruction(schedule10, rng):
    a, eps = 30 * rng.standard_normal(4), rng.standard_normal(4)
    mu = reverse_mean(schedule10, a, eps, 1, "ddpm", clip_denoised=True)
    # at t = 1 the mean is the (clipped) clean reconstruction
    assert np.all(np.abs(mu) <= 1.0 + 1e-12)
