"""End-to-end guided sampling with blending, benchmarking and bound reports."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .blending import CandidateSet, blend, score_candidates
from .denoiser import ActionState, Denoiser
from .fds import TfdsAccumulator, tfds
from .fpg import GUIDANCE_POINTS, MODES, SOLVERS, guided_reverse_step
from .maze import (MazeWorld, TsdfGuidance, encode_condition, endpoint_mask, evaluate_rollout,
                   inpaint_endpoints, make_guidance)
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

RESULTS_FORMAT = "fpgnav-benchmark"
RESULTS_VERSION = 1
OUTPUT_DIR_ENV = "FPGNAV_OUTPUT_DIR"


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "runs")


@dataclass
class RunConfig:
    mode: str = "fpg_ops"
    gamma: float = 0.05
    gamma_schedule: str = "constant"
    total_steps: int = 10
    tail_length: int = 4
    candidates: int = 4
    blend_eta: float = 5.0
    cluster_eps: float = 0.5
    cluster_min_pts: int = 2
    blend_within_top_cluster: bool = False
    tfds_weighting: str = "raw"
    tsdf_mu_cells: float = 1.5
    tsdf_tau_cells: float = 0.5
    use_tg: bool = True
    guidance_point: str = "mean"
    solver: str = "ddpm"
    clip_denoised: bool = True
    goal_tolerance_cells: float = 2.0
    seed: int = 0
    world_count: int = 200
    repeats: int = 1
    bootstrap_resamples: int = 2000
    output_dir: str = field(default_factory=default_output_dir)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.guidance_point not in GUIDANCE_POINTS:
            raise ValueError(f"unknown guidance point {self.guidance_point!r}")
        if self.gamma_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown gamma schedule {self.gamma_schedule!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.candidates < 1 or self.total_steps < 1:
            raise ValueError("candidates and total_steps must be positive")
        if not (0 <= self.tail_length <= self.total_steps):
            raise ValueError("tail_length must lie in 0..total_steps")
        if self.blend_eta <= 0 or self.cluster_eps <= 0:
            raise ValueError("blend temperature and cluster radius must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update(kw)
        return RunConfig(**d)

    def gamma_at(self, t: int) -> float:
        if self.gamma_schedule == "linear":
            return self.gamma * t / self.total_steps
        return self.gamma


@dataclass
class Algorithm1Result:
    blended: np.ndarray
    candidates: CandidateSet
    trace: list
    states: list
    aborted: list


def run_algorithm1(model: Denoiser, schedule: NoiseSchedule, world: MazeWorld, config: RunConfig,
                   seed=0, blend_candidates: bool = True) -> Algorithm1Result:
    """Sample K inpainted candidates with guided reverse steps, then blend.

    Candidate ``k`` draws all of its randomness from ``default_rng([*seed, k])``
    so results do not depend on how candidates are scheduled. With
    ``blend_candidates=False`` only candidate 0 is sampled and returned as is.
    """
    if schedule.T != config.total_steps:
        raise ValueError(f"config expects T={config.total_steps}, schedule has T={schedule.T}")
    seed_vec = list(np.atleast_1d(seed).astype(int))
    cond = encode_condition(world)
    D = model.action_dim
    tg = make_guidance(world, TsdfGuidance.in_cells(world.grid_size, config.tsdf_mu_cells,
                                                    config.tsdf_tau_cells)) if config.use_tg else None
    mode = config.mode if tg is not None else "none"
    mask = endpoint_mask(D // 2)
    K = config.candidates if blend_candidates else 1

    finals, scores, trace, states, aborted = [], [], [], [], []
    for k in range(K):
        rng = np.random.default_rng(seed_vec + [k])
        st = inpaint_endpoints(ActionState(rng.standard_normal(D), schedule.T), world)
        acc = TfdsAccumulator(config.tail_length, config.tfds_weighting, schedule)
        visited = []
        try:
            for t in range(schedule.T, 0, -1):
                visited.append(ActionState(st.values.copy(), st.step))
                noise = rng.standard_normal(D)
                nxt, rec = guided_reverse_step(
                    model, schedule, cond, st, tg, config.gamma_at(t), mode, config.solver,
                    config.clip_denoised, noise, mask, need_fds=t <= config.tail_length,
                    guidance_point=config.guidance_point)
                inc = acc.add(t, rec.cond_grad_sq) if rec.cond_grad_sq is not None else None
                st = inpaint_endpoints(nxt, world)
                entry = {"candidate": k, "t": t, "loss": rec.loss,
                         "cond_grad_sq": rec.cond_grad_sq,
                         "tfds_increment": inc if t <= config.tail_length else None}
                if rec.projection is not None:
                    p = rec.projection
                    entry["projection"] = {"parallel_norm": p.parallel_norm,
                                           "orthogonality_residual": p.orthogonality_residual,
                                           "degenerate": p.degenerate}
                trace.append(entry)
        except (FloatingPointError, ValueError) as exc:
            trace.append({"candidate": k, "t": st.step, "aborted": str(exc)})
            aborted.append(k)
            continue
        finals.append(np.clip(st.values, -1.0, 1.0))
        scores.append(acc.value)
        states.append(visited)
    if not finals:
        raise FloatingPointError("every candidate aborted")

    cands = CandidateSet(np.stack(finals), np.array(scores))
    score_candidates(cands, config.cluster_eps, config.cluster_min_pts, config.blend_eta)
    if blend_candidates:
        out = blend(cands, config.blend_within_top_cluster)
    else:
        out = cands.actions[0].copy()
    return Algorithm1Result(out, cands, trace, states, aborted)


# --------------------------------------------------------------------- benchmark

def method_table(fpg_mode: str = "fpg_ops") -> dict:
    """The four compared variants: sampler mode, TSDF guidance, blending."""
    return {
        "baseline": {"mode": "none", "use_tg": False, "blend": False},
        "baseline+TG": {"mode": "raw", "use_tg": True, "blend": False},
        "FPG": {"mode": fpg_mode, "use_tg": False, "blend": True},
        "FPG+TG": {"mode": fpg_mode, "use_tg": True, "blend": True},
    }


def rollout_seed(base: int, world_index: int, repeat: int) -> list:
    return [int(base), int(world_index), int(repeat)]


def paired_bootstrap(a, b, resamples: int = 2000, seed: int = 0, level: float = 0.95) -> dict:
    """Percentile bootstrap of mean(a - b) over paired observations."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    diff = a - b
    n = len(diff)
    if n == 0:
        return {"mean_diff": None, "ci_low": None, "ci_high": None, "significant_less": False}
    rng = np.random.default_rng(seed)
    means = diff[rng.integers(0, n, size=(resamples, n))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return {"mean_diff": float(diff.mean()), "ci_low": float(lo), "ci_high": float(hi),
            "significant_less": bool(hi < 0.0)}


def bootstrap_mean_ci(x, resamples: int = 2000, seed: int = 0, level: float = 0.95):
    x = np.asarray(x, float)
    if len(x) == 0:
        return None, None
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, len(x), size=(resamples, len(x)))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


def summarize(rollouts: list, resamples: int, seed: int) -> dict:
    coll = np.array([r["collisions"] for r in rollouts], dtype=float)
    succ = np.array([r["success"] for r in rollouts], dtype=float)
    lengths = np.array([r["path_length"] for r in rollouts if r["success"]], dtype=float)
    lo, hi = bootstrap_mean_ci(coll, resamples, seed)
    return {
        "n": len(rollouts),
        "mean_collisions": float(coll.mean()) if len(coll) else None,
        "collisions_ci": [lo, hi],
        "success_rate": float(succ.mean()) if len(succ) else None,
        "mean_path_length": float(lengths.mean()) if len(lengths) else None,
        "path_length_std": float(lengths.std()) if len(lengths) else None,
    }


def run_benchmark(config: RunConfig, model: Denoiser, schedule: NoiseSchedule, worlds: list,
                  methods: dict | None = None) -> dict:
    """Evaluate every method on every (world, repeat) with shared seeds.

    Returns the versioned results document (see ``save_results``).
    """
    methods = methods or method_table(config.mode if config.mode.startswith("fpg") else "fpg_ops")
    worlds = worlds[: config.world_count]
    if not worlds:
        log.warning("benchmark called with zero worlds")
    per_method = {}
    for name, method in methods.items():
        cfg = config.replace(mode=method["mode"], use_tg=method["use_tg"])
        rows = []
        for wi, world in enumerate(worlds):
            for rep in range(config.repeats):
                res = run_algorithm1(model, schedule, world, cfg, rollout_seed(config.seed, wi, rep),
                                     blend_candidates=method["blend"])
                m = evaluate_rollout(world, res.blended, config.goal_tolerance_cells)
                row = m.to_dict()
                row.update({"world": wi, "repeat": rep, "tfds": res.candidates.tfds_scores.tolist()})
                rows.append(row)
        per_method[name] = rows
    summary = {name: summarize(rows, config.bootstrap_resamples, config.seed)
               for name, rows in per_method.items()}
    comparisons = {}
    pairs = [("baseline+TG", "baseline"), ("FPG+TG", "baseline+TG"), ("FPG", "baseline")]
    for a, b in pairs:
        if a in per_method and b in per_method:
            comparisons[f"{a} vs {b}"] = paired_bootstrap(
                [r["collisions"] for r in per_method[a]], [r["collisions"] for r in per_method[b]],
                config.bootstrap_resamples, config.seed)
    return {
        "format": RESULTS_FORMAT,
        "version": RESULTS_VERSION,
        "config": config.to_dict(),
        "methods": {n: dict(s) for n, s in methods.items()},
        "summary": summary,
        "comparisons": comparisons,
        "rollouts": per_method,
        "warnings": [] if worlds else ["no worlds evaluated"],
    }


def save_results(path, results: dict) -> None:
    with open(path, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------- bound check

def bound_check(model: Denoiser, schedule: NoiseSchedule, worlds: list, config: RunConfig) -> list:
    """TFDS truncation report for candidate 0 of each world's rollout."""
    reports = []
    for wi, world in enumerate(worlds[: config.world_count]):
        res = run_algorithm1(model, schedule, world, config, rollout_seed(config.seed, wi, 0),
                             blend_candidates=False)
        rep = tfds(model, schedule, encode_condition(world), res.states[0], max(config.tail_length, 1))
        d = rep.to_dict()
        d["world"] = wi
        reports.append(d)
    return reports


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else x
