import numpy as np
import pytest

from conftest import small_model
from fpgnav.denoiser import (ActionState, Denoiser, central_difference_jacobian, condition_jacobian,
                             forward, timestep_embedding)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("activation", ["tanh", "silu"])
def test_forward_is_linear_head(activation, rng):
    m = small_model(activation=activation)
    C, a = rng.standard_normal(3), rng.standard_normal(4)
    eps, h = m.forward(C, a, 3)
    np.testing.assert_array_equal(eps, m.params["W"] @ h + m.params["b"])
    np.testing.assert_allclose(m.pullback_metric, m.params["W"].T @ m.params["W"], rtol=0, atol=0)


@pytest.mark.parametrize("activation", ["tanh", "silu"])
def test_jacobians_match_central_differences(activation, rng):
    m = small_model(seed=3, activation=activation)
    C, a = rng.standard_normal(3), rng.standard_normal(4)
    Jc = m.condition_jacobian(C, a, 5)
    Ja = m.state_jacobian(C, a, 5)
    assert rel_err(Jc, central_difference_jacobian(lambda c: m.forward(c, a, 5)[0], C)) < 1e-7
    assert rel_err(Ja, central_difference_jacobian(lambda x: m.forward(C, x, 5)[0], a)) < 1e-7


def test_vjps_agree_with_jacobians(rng):
    m = small_model(seed=4)
    C, a, v = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(4)
    np.testing.assert_allclose(m.vjp_condition(C, a, 2, v), m.condition_jacobian(C, a, 2).T @ v,
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(m.vjp_state(C, a, 2, v), m.state_jacobian(C, a, 2).T @ v,
                               rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("activation", ["tanh", "silu"])
def test_fisher_normals_match_differences(activation, schedule10, rng):
    m = small_model(seed=5, activation=activation)
    C, a = rng.standard_normal(3), rng.standard_normal(4)
    g = m.fisher_normal_exact(schedule10, C, a, 4)
    fd = central_difference_jacobian(lambda x: m.step_fds(schedule10, C, x, 4), a)[0]
    assert rel_err(g, fd) < 1e-7
    gh = m.fisher_normal_latent(schedule10, C, a, 4)
    fdh = central_difference_jacobian(
        lambda s: m.step_fds(schedule10, C, a, 4, latent_shift=s), np.zeros(m.latent_dim))[0]
    assert rel_err(gh, fdh) < 1e-7


def test_identity_activation_has_flat_fisher_field(schedule10, rng):
    m = small_model(activation="identity")
    C, a = rng.standard_normal(3), rng.standard_normal(4)
    assert np.linalg.norm(m.fisher_normal_exact(schedule10, C, a, 3)) < 1e-12


def test_fisher_query_consistent(schedule10, rng):
    m = small_model(seed=6)
    C, a = rng.standard_normal(3), rng.standard_normal(4)
    eps, h, J, g, gh = m.fisher_query(schedule10, C, a, 7)
    np.testing.assert_allclose(eps, m.forward(C, a, 7)[0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(J, m.condition_jacobian(C, a, 7), rtol=1e-13)
    np.testing.assert_allclose(g, m.fisher_normal_exact(schedule10, C, a, 7), rtol=1e-13)
    np.testing.assert_allclose(gh, m.fisher_normal_latent(schedule10, C, a, 7), rtol=1e-13)


def test_batch_matches_single(rng):
    m = small_model(seed=7)
    C, A = rng.standard_normal((5, 3)), rng.standard_normal((5, 4))
    t = np.array([1, 2, 3, 4, 5])
    eps, _ = m.forward_batch(C, A, t)
    for i in range(5):
        np.testing.assert_allclose(eps[i], m.forward(C[i], A[i], t[i])[0], rtol=1e-13, atol=1e-15)


def test_param_gradients_match_differences(rng):
    m = small_model(seed=8)
    C, A = rng.standard_normal((3, 3)), rng.standard_normal((3, 4))
    t = np.array([1, 5, 9])
    target = rng.standard_normal((3, 4))

    def loss(mm):
        e, _ = mm.forward_batch(C, A, t)
        return 0.5 * np.sum((e - target) ** 2)

    eps, cache = m.forward_batch(C, A, t)
    grads = m.param_gradients(cache, eps - target)
    for name in Denoiser.PARAM_NAMES:
        p = m.params[name]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        old = p[idx]
        p[idx] = old + 1e-6
        m.refresh()
        lp = loss(m)
        p[idx] = old - 1e-6
        m.refresh()
        lm = loss(m)
        p[idx] = old
        m.refresh()
        assert (lp - lm) / 2e-6 == pytest.approx(grads[name][idx], rel=1e-5, abs=1e-8)


def test_input_validation(rng):
    m = small_model()
    with pytest.raises(ValueError):
        m.forward(np.zeros(2), np.zeros(4), 1)
    with pytest.raises(ValueError):
        m.forward(np.zeros(3), np.array([0, 0, np.nan, 0]), 1)
    with pytest.raises(ValueError):
        Denoiser(3, 4, activation="relu")


def test_module_level_wrappers(rng):
    m = small_model()
    C = rng.standard_normal(3)
    st = ActionState(rng.standard_normal(4), 2)
    np.testing.assert_array_equal(forward(m, C, st)[0], m.forward(C, st.values, 2)[0])
    np.testing.assert_array_equal(condition_jacobian(m, C, st), m.condition_jacobian(C, st.values, 2))


def test_timestep_embedding_shape():
    e = timestep_embedding(np.array([1, 2]), 8)
    assert e.shape == (2, 8)
    assert np.all(np.abs(e) <= 1.0)
