"""Maze2D worlds on a G x G occupancy grid.

Coordinates: the workspace is [-1, 1]^2 with x along grid columns and y along
grid rows; cell (i, j) has its center at ``(-1 + (j + .5) w, -1 + (i + .5) w)``
with cell width ``w = 2 / G``. Trajectories are flattened as
``[x1, y1, x2, y2, ...]``. The TSDF stored on a world is in workspace units.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .denoiser import ActionState

_BIG = 1e12


# ----------------------------------------------------------------------------- geometry

def cell_width(grid_size: int) -> float:
    return 2.0 / grid_size


def cell_center(i, j, grid_size: int) -> np.ndarray:
    w = cell_width(grid_size)
    return np.array([-1.0 + (j + 0.5) * w, -1.0 + (i + 0.5) * w])


def point_to_index(p, grid_size: int):
    """Continuous (row, col) index of workspace points; integers are cell centers."""
    p = np.asarray(p, dtype=np.float64)
    s = grid_size / 2.0
    return (p[..., 1] + 1.0) * s - 0.5, (p[..., 0] + 1.0) * s - 0.5


# ----------------------------------------------------------------------------- distance transform

def edt_squared(mask) -> np.ndarray:
    """Exact squared Euclidean distance (in cells) from every cell to the nearest
    True cell, by a column scan followed by a row-wise lower-envelope minimum.
    Cells with no True cell anywhere get a huge value."""
    mask = np.asarray(mask, dtype=bool)
    n_rows, n_cols = mask.shape
    # pass 1: vertical distance to the nearest True cell in the same column
    f = np.where(mask, 0.0, _BIG)
    for i in range(1, n_rows):
        f[i] = np.minimum(f[i], f[i - 1] + 1.0)
    for i in range(n_rows - 2, -1, -1):
        f[i] = np.minimum(f[i], f[i + 1] + 1.0)
    f2 = np.where(f >= _BIG / 2, _BIG, f * f)
    # pass 2: d2[i, j] = min_k (j - k)^2 + f2[i, k]
    k = np.arange(n_cols)
    off = (k[:, None] - k[None, :]) ** 2.0   # (j, k)
    return np.min(f2[:, None, :] + off[None, :, :], axis=2)


def compute_tsdf(grid, truncation_radius: float) -> np.ndarray:
    """Signed distance in cell units, positive in free space, clamped to +-R.

    Free cells get (distance to the nearest occupied center) - 1/2 and occupied
    cells get -((distance to the nearest free center) - 1/2), so the bilinear
    zero crossing sits on the shared cell edge.
    """
    grid = np.asarray(grid, dtype=bool)
    R = float(truncation_radius)
    if not grid.any():
        return np.full(grid.shape, R)
    if grid.all():
        return np.full(grid.shape, -R)
    d_out = np.sqrt(edt_squared(grid))
    d_in = np.sqrt(edt_squared(~grid))
    s = np.where(grid, -(d_in - 0.5), d_out - 0.5)
    return np.clip(s, -R, R)


def inflate(grid, radius: float) -> np.ndarray:
    """Cells whose center lies within ``radius`` cells of an occupied center."""
    grid = np.asarray(grid, dtype=bool)
    if not grid.any():
        return grid.copy()
    return edt_squared(grid) <= radius * radius


# ----------------------------------------------------------------------------- planning

_MOVES = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
          (-1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)), (1, 1, math.sqrt(2))]


def plan_astar(blocked, start, goal):
    """Shortest 8-connected path (Euclidean step costs, no corner cutting).

    Returns a list of (row, col) cells from start to goal, or None.
    """
    blocked = np.asarray(blocked, dtype=bool)
    n_rows, n_cols = blocked.shape
    start, goal = tuple(start), tuple(goal)
    if blocked[start] or blocked[goal]:
        return None

    def octile(c):
        di, dj = abs(c[0] - goal[0]), abs(c[1] - goal[1])
        return (math.sqrt(2) - 1.0) * min(di, dj) + max(di, dj)

    g_cost = {start: 0.0}
    parent = {start: None}
    heap = [(octile(start), 0.0, start)]
    closed = set()
    while heap:
        _, g, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        closed.add(cur)
        ci, cj = cur
        for di, dj, cost in _MOVES:
            ni, nj = ci + di, cj + dj
            if not (0 <= ni < n_rows and 0 <= nj < n_cols) or blocked[ni, nj]:
                continue
            if di and dj and (blocked[ci + di, cj] or blocked[ci, cj + dj]):
                continue
            ng = g + cost
            nxt = (ni, nj)
            if ng < g_cost.get(nxt, math.inf):
                g_cost[nxt] = ng
                parent[nxt] = cur
                heapq.heappush(heap, (ng + octile(nxt), ng, nxt))
    return None


def _segment_free(blocked, p, q, step=0.25):
    """True if every sample (spacing <= step cells) of segment p-q lies in a free cell."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    n = max(2, int(math.ceil(np.linalg.norm(q - p) / step)) + 1)
    s = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.rint(p + s * (q - p)).astype(int)
    return not blocked[pts[:, 0], pts[:, 1]].any()


def shortcut_path(blocked, cells):
    """Greedy line-of-sight shortcutting of a cell path (string pulling)."""
    out = [cells[0]]
    i = 0
    while i < len(cells) - 1:
        j = len(cells) - 1
        while j > i + 1 and not _segment_free(blocked, cells[i], cells[j]):
            j -= 1
        out.append(cells[j])
        i = j
    return out


def resample_polyline(points, n: int) -> np.ndarray:
    """``n`` points spaced uniformly in arc length along the polyline."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 1:
        return np.repeat(pts, n, axis=0)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    target = np.linspace(0.0, cum[-1], n)
    out = np.column_stack([np.interp(target, cum, pts[:, 0]), np.interp(target, cum, pts[:, 1])])
    out[0], out[-1] = pts[0], pts[-1]
    return out


# ----------------------------------------------------------------------------- worlds

@dataclass
class Trajectory:
    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)

    @property
    def flat(self) -> np.ndarray:
        return self.waypoints.reshape(-1)

    @classmethod
    def from_flat(cls, v) -> "Trajectory":
        return cls(np.asarray(v, dtype=np.float64).reshape(-1, 2))


@dataclass
class MazeWorld:
    grid: np.ndarray
    start: np.ndarray
    goal: np.ndarray
    expert: Trajectory
    truncation_radius: float = 8.0
    seed: int | None = None
    tsdf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        self.start = np.asarray(self.start, dtype=np.float64)
        self.goal = np.asarray(self.goal, dtype=np.float64)
        if not isinstance(self.expert, Trajectory):
            self.expert = Trajectory(self.expert)
        if self.tsdf is None:
            self.tsdf = compute_tsdf(self.grid, self.truncation_radius) * self.cell_width

    @property
    def grid_size(self) -> int:
        return self.grid.shape[0]

    @property
    def horizon(self) -> int:
        return len(self.expert.waypoints)

    @property
    def cell_width(self) -> float:
        return cell_width(self.grid_size)


class WorldGenerationError(RuntimeError):
    pass


def _random_obstacles(rng, grid_size, density):
    grid = np.zeros((grid_size, grid_size), dtype=bool)
    if density <= 0:
        return grid
    target = density * grid_size * grid_size
    lo, hi = max(2, grid_size // 20), max(3, grid_size // 5)
    while grid.sum() < target:
        if rng.random() < 0.75:
            h, w = rng.integers(lo, hi + 1, size=2)
        else:
            h = w = 2
        i = rng.integers(0, grid_size - h + 1)
        j = rng.integers(0, grid_size - w + 1)
        grid[i:i + h, j:j + w] = True
    return grid


def generate_world(seed: int, grid_size: int = 64, obstacle_density: float = 0.2,
                   inflation_radius: float = 2.0, horizon: int = 32,
                   truncation_radius: float = 8.0, min_separation: float = 1.0,
                   max_retries: int = 100) -> MazeWorld:
    """Random obstacle field with a reachable start/goal pair and an expert path.

    The expert is planned on the inflated grid, shortcut by line of sight,
    resampled by arc length to ``horizon`` waypoints, and accepted only if the
    resampled polyline is collision-free with positive clearance at every
    waypoint. Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        grid = _random_obstacles(rng, grid_size, obstacle_density)
        blocked = inflate(grid, inflation_radius)
        free = np.argwhere(~blocked)
        if len(free) < 2:
            continue
        a, b = free[rng.choice(len(free), size=2, replace=False)]
        start, goal = cell_center(*a, grid_size), cell_center(*b, grid_size)
        if np.linalg.norm(goal - start) < min_separation:
            continue
        cells = plan_astar(blocked, a, b)
        if cells is None:
            continue
        cells = shortcut_path(blocked, cells)
        pts = np.array([cell_center(i, j, grid_size) for i, j in cells])
        expert = Trajectory(resample_polyline(pts, horizon))
        world = MazeWorld(grid, start, goal, expert, truncation_radius, seed)
        clear = sample_tsdf(world, expert.waypoints)
        if np.all(clear > 0) and evaluate_rollout(world, expert).success:
            return world
    raise WorldGenerationError(f"no valid world after {max_retries} attempts (seed={seed})")


# ----------------------------------------------------------------------------- TSDF queries

def sample_tsdf(world: MazeWorld, p, return_grad: bool = False):
    """Bilinear interpolation of the TSDF at workspace points (clamped to the grid).

    With ``return_grad`` also returns d s / d p (zero along clamped axes).
    """
    field_ = world.tsdf
    G = field_.shape[0]
    p = np.asarray(p, dtype=np.float64)
    ri, ci = point_to_index(p, G)
    rc, cc = np.clip(ri, 0.0, G - 1.0), np.clip(ci, 0.0, G - 1.0)
    i0 = np.minimum(np.floor(rc).astype(int), G - 2)
    j0 = np.minimum(np.floor(cc).astype(int), G - 2)
    fr, fc = rc - i0, cc - j0
    v00, v01 = field_[i0, j0], field_[i0, j0 + 1]
    v10, v11 = field_[i0 + 1, j0], field_[i0 + 1, j0 + 1]
    top = v00 + fc * (v01 - v00)
    bot = v10 + fc * (v11 - v10)
    val = top + fr * (bot - top)
    if not return_grad:
        return val
    scale = G / 2.0
    d_dr = (bot - top) * ((ri >= 0.0) & (ri <= G - 1.0))
    d_dc = ((1 - fr) * (v01 - v00) + fr * (v11 - v10)) * ((ci >= 0.0) & (ci <= G - 1.0))
    grad = np.stack([d_dc * scale, d_dr * scale], axis=-1)
    return val, grad


@dataclass
class TsdfGuidance:
    """Softplus clearance barrier; ``mu`` and ``tau`` in workspace units."""

    mu: float
    tau: float
    barrier: str = "softplus"

    def __post_init__(self):
        if self.mu <= 0 or self.tau <= 0:
            raise ValueError("mu and tau must be positive")
        if self.barrier != "softplus":
            raise ValueError(f"unknown barrier {self.barrier!r}")

    @classmethod
    def in_cells(cls, grid_size: int = 64, mu_cells: float = 1.5, tau_cells: float = 0.5):
        w = cell_width(grid_size)
        return cls(mu_cells * w, tau_cells * w)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def tsdf_loss(world: MazeWorld, traj, guidance: TsdfGuidance):
    """Sum over waypoints of softplus((mu - s(p_i)) / tau) and its flat gradient."""
    pts = traj.waypoints if isinstance(traj, Trajectory) else np.asarray(traj, float).reshape(-1, 2)
    s, ds = sample_tsdf(world, pts, return_grad=True)
    z = (guidance.mu - s) / guidance.tau
    loss = float(np.sum(softplus(z)))
    grad = -(sigmoid(z) / guidance.tau)[:, None] * ds
    return loss, grad.reshape(-1)


def make_guidance(world: MazeWorld, guidance: TsdfGuidance):
    """Closure ``a -> (loss, grad)`` over flat action vectors."""
    return lambda a: tsdf_loss(world, a, guidance)


# ----------------------------------------------------------------------------- inpainting

def endpoint_mask(horizon: int) -> np.ndarray:
    """1.0 on free coordinates, 0.0 on the first and last waypoint."""
    m = np.ones(2 * horizon)
    m[:2] = 0.0
    m[-2:] = 0.0
    return m


def inpaint_endpoints(state: ActionState, world: MazeWorld) -> ActionState:
    v = np.array(state.values, dtype=np.float64)
    if v.size < 4:
        raise ValueError("inpainting needs at least two waypoints")
    v[:2] = world.start
    v[-2:] = world.goal
    return ActionState(v, state.step)


# ----------------------------------------------------------------------------- metrics

@dataclass
class RolloutMetrics:
    collisions: int
    path_length: float
    success: bool
    min_clearance: float

    def to_dict(self) -> dict:
        return {"collisions": int(self.collisions), "path_length": float(self.path_length),
                "success": bool(self.success), "min_clearance": float(self.min_clearance)}


def evaluate_rollout(world: MazeWorld, traj, goal_tolerance_cells: float = 2.0) -> RolloutMetrics:
    """Collision episodes along the densely sampled polyline, length, and success.

    A collision episode is a maximal run of samples with negative clearance;
    samples are spaced at most half a cell apart.
    """
    pts = traj.waypoints if isinstance(traj, Trajectory) else np.asarray(traj, float).reshape(-1, 2)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    path_length = float(seg.sum())
    step = 0.5 * world.cell_width
    dense = [pts[:1]]
    for p, q, L in zip(pts[:-1], pts[1:], seg):
        n = max(1, int(math.ceil(L / step)))
        s = np.arange(1, n + 1)[:, None] / n
        dense.append(p + s * (q - p))
    dense = np.concatenate(dense)
    clear = sample_tsdf(world, dense)
    hit = clear < 0
    collisions = int(hit[0]) + int(np.sum(hit[1:] & ~hit[:-1]))
    reached = np.linalg.norm(pts[-1] - world.goal) <= goal_tolerance_cells * world.cell_width
    return RolloutMetrics(collisions, path_length, bool(reached and collisions == 0),
                          float(clear.min()))


# ----------------------------------------------------------------------------- conditioning

def pooled_occupancy(grid, pooled_size: int = 16) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    G = grid.shape[0]
    if G % pooled_size:
        raise ValueError("grid size must be a multiple of the pooled size")
    k = G // pooled_size
    return grid.reshape(pooled_size, k, pooled_size, k).mean(axis=(1, 3))


def encode_condition(world: MazeWorld, pooled_size: int = 16) -> np.ndarray:
    """Flattened block-averaged occupancy followed by start and goal."""
    return np.concatenate([pooled_occupancy(world.grid, pooled_size).reshape(-1),
                           world.start, world.goal])


def condition_dim(pooled_size: int = 16) -> int:
    return pooled_size * pooled_size + 4
