import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from fpgnav.denoiser import ActionState
from fpgnav.maze import (MazeWorld, Trajectory, TsdfGuidance, WorldGenerationError, cell_center,
                         cell_width, compute_tsdf, edt_squared, encode_condition, endpoint_mask,
                         evaluate_rollout, generate_world, inflate, inpaint_endpoints, plan_astar,
                         resample_polyline, sample_tsdf, softplus, tsdf_loss)


def empty_world(G=64, start=(-0.5, -0.5), goal=(0.5, 0.5), H=32, grid=None):
    grid = np.zeros((G, G), bool) if grid is None else grid
    s, g = np.array(start), np.array(goal)
    expert = Trajectory(np.linspace(s, g, H))
    return MazeWorld(grid, s, g, expert)


@pytest.fixture(scope="module")
def worlds():
    return [generate_world(s) for s in range(8)]


def test_edt_matches_scipy(rng):
    for _ in range(5):
        mask = rng.random((37, 29)) < 0.05
        mask[0, 0] = True
        ref = ndimage.distance_transform_edt(~mask) ** 2
        np.testing.assert_allclose(edt_squared(mask), ref, rtol=0, atol=1e-9)


def test_tsdf_brute_force_single_obstacle():
    G, R = 16, 8.0
    grid = np.zeros((G, G), bool)
    grid[5, 9] = True
    tsdf = compute_tsdf(grid, R)
    for i in range(G):
        for j in range(G):
            if grid[i, j]:
                d_in = min(np.hypot(i - a, j - b) for a in range(G) for b in range(G) if not grid[a, b])
                assert tsdf[i, j] == pytest.approx(-(d_in - 0.5))
            else:
                d = min(np.hypot(i - a, j - b) for a, b in np.argwhere(grid))
                assert tsdf[i, j] == pytest.approx(min(d - 0.5, R))
    assert np.all(compute_tsdf(np.zeros((8, 8), bool), 3.0) == 3.0)


def test_tsdf_sign_consistent(worlds):
    for w in worlds:
        assert np.all(w.tsdf[w.grid] <= 0) and np.all(w.tsdf[~w.grid] > 0)


def test_empty_grid_expert_is_straight():
    w = generate_world(3, obstacle_density=0.0)
    pts = w.expert.waypoints
    d = np.diff(pts, axis=0)
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    np.testing.assert_allclose(cross, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), np.linalg.norm(d[0]), rtol=1e-9)


def test_generation_deterministic_and_valid(worlds):
    w2 = generate_world(3)
    np.testing.assert_array_equal(w2.grid, worlds[3].grid)
    np.testing.assert_array_equal(w2.expert.waypoints, worlds[3].expert.waypoints)
    for w in worlds:
        assert np.all(sample_tsdf(w, w.expert.waypoints) > 0)
        m = evaluate_rollout(w, w.expert)
        assert m.collisions == 0 and m.success
        assert np.all(np.abs(w.expert.waypoints) <= 1.0)
        np.testing.assert_array_equal(w.expert.waypoints[0], w.start)
        np.testing.assert_allclose(w.expert.waypoints[-1], w.goal, atol=1e-12)


def test_generation_failure_reports_seed():
    with pytest.raises(WorldGenerationError, match="seed=5"):
        generate_world(5, obstacle_density=0.99, max_retries=2)


def test_astar_blocked_and_optimal():
    blocked = np.zeros((5, 5), bool)
    blocked[:, 2] = True
    assert plan_astar(blocked, (0, 0), (0, 4)) is None
    path = plan_astar(np.zeros((5, 5), bool), (0, 0), (4, 4))
    assert len(path) == 5


def test_inflate_radius():
    g = np.zeros((9, 9), bool)
    g[4, 4] = True
    inf = inflate(g, 2.0)
    assert inf[4, 6] and inf[2, 4] and not inf[2, 2] and inf[3, 3]


def test_resample_uniform_spacing():
    pts = resample_polyline(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), 5)
    np.testing.assert_allclose(pts, [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]], atol=1e-12)


def test_sample_tsdf_interpolation(worlds, rng):
    w = worlds[0]
    G = w.grid_size
    for _ in range(20):
        i, j = rng.integers(0, G - 1, 2)
        c = cell_center(i, j, G)
        assert sample_tsdf(w, c) == pytest.approx(w.tsdf[i, j], abs=1e-15)
        mid = 0.5 * (c + cell_center(i, j + 1, G))
        assert sample_tsdf(w, mid) == pytest.approx(0.5 * (w.tsdf[i, j] + w.tsdf[i, j + 1]), abs=1e-15)
    # independent oracle using scipy's linear interpolation on the grid
    p = rng.uniform(-0.95, 0.95, (50, 2))
    rows = (p[:, 1] + 1) * G / 2 - 0.5
    cols = (p[:, 0] + 1) * G / 2 - 0.5
    ref = ndimage.map_coordinates(w.tsdf, [rows, cols], order=1)
    np.testing.assert_allclose(sample_tsdf(w, p), ref, rtol=0, atol=1e-12)


def test_tsdf_gradient_pushes_away(worlds, rng):
    w = worlds[1]
    p = rng.uniform(-0.95, 0.95, (1000, 2))
    s, g = sample_tsdf(w, p, return_grad=True)
    keep = (s > 0) & (np.abs(s) < 0.9 * w.truncation_radius * w.cell_width)
    q = p + 1e-6 * g
    assert np.all(sample_tsdf(w, q[keep]) >= s[keep] - 1e-12)


def test_tsdf_loss_values(worlds):
    w = empty_world()
    guide = TsdfGuidance.in_cells(64, 1.5, 0.5)
    loss, grad = tsdf_loss(w, w.expert, guide)
    assert loss < 1e-2
    assert np.allclose(grad, 0.0)
    wr = worlds[0]
    p = wr.expert.waypoints[3:4]
    g = TsdfGuidance(float(sample_tsdf(wr, p)[0]), 0.01)
    assert tsdf_loss(wr, p, g)[0] == pytest.approx(np.log(2.0), rel=1e-12)
    assert softplus(np.array([1000.0]))[0] == pytest.approx(1000.0)


def test_tsdf_loss_gradient_fd(worlds, rng):
    w = worlds[2]
    guide = TsdfGuidance.in_cells(64, 3.0, 2.0)
    a = w.expert.flat + rng.normal(0, 0.01, w.expert.flat.shape)
    _, grad = tsdf_loss(w, a, guide)
    h = 1e-7
    fd = np.array([(tsdf_loss(w, a + h * e, guide)[0] - tsdf_loss(w, a - h * e, guide)[0]) / (2 * h)
                   for e in np.eye(len(a))])
    assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


def test_tsdf_loss_descends(worlds, rng):
    w = worlds[4]
    guide = TsdfGuidance.in_cells(64, 1.5, 0.5)
    a = np.clip(w.expert.flat + rng.normal(0, 0.05, w.expert.flat.shape), -1, 1)
    l0, g = tsdf_loss(w, a, guide)
    assert tsdf_loss(w, a - 1e-7 * g, guide)[0] <= l0


def test_inpainting(worlds, rng):
    w = worlds[0]
    st0 = ActionState(rng.standard_normal(64), 5)
    once = inpaint_endpoints(st0, w)
    assert np.sum(once.values != st0.values) <= 4
    np.testing.assert_array_equal(inpaint_endpoints(once, w).values, once.values)
    np.testing.assert_array_equal(inpaint_endpoints(ActionState(w.expert.flat, 1), w).values,
                                  w.expert.flat)
    np.testing.assert_array_equal(endpoint_mask(3), [0, 0, 1, 1, 0, 0])


def test_evaluate_rollout_wall():
    grid = np.zeros((64, 64), bool)
    grid[:, 30:34] = True
    w = empty_world(grid=grid, start=(-0.5, 0.0), goal=(0.5, 0.0))
    m = evaluate_rollout(w, w.expert)
    assert m.collisions >= 1 and not m.success
    single = evaluate_rollout(w, np.array([0.5, 0.0]))
    assert single.path_length == 0.0


def test_encode_condition(worlds):
    w = empty_world()
    c = encode_condition(w)
    assert c.shape == (260,) and np.all(c[:256] == 0)
    grid = np.zeros((64, 64), bool)
    grid[10, 21] = True
    c2 = encode_condition(empty_world(grid=grid))
    diff = np.flatnonzero(c2 != c)
    assert list(diff) == [(10 // 4) * 16 + 21 // 4]
    np.testing.assert_array_equal(encode_condition(worlds[0]), encode_condition(worlds[0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(100, 10_000))
def test_expert_success_property(seed):
    w = generate_world(seed, grid_size=32, horizon=16)
    assert evaluate_rollout(w, w.expert).success
