"""Chain-level and truncated Fisher denoising sensitivity.

Rollout states are passed in the order the sampler visits them, from
``t = T`` down to ``t = 1``. A step's condition Jacobian reaches the final
action through the state Jacobians of every step executed after it, so the
propagation operator of step ``t`` is ``S_1 S_2 ... S_{t-1}`` (identity for
``t = 1``). Two operator families are offered:

* ``"normalized"``: ``S_s = d eps / d a_s`` and ``J(C, t)`` the reconstructed
  action's condition Jacobian, dropping the solver scalars;
* ``"full"``: the exact derivative of the unclipped mean update
  ``G_s = c_s a - d_s eps``, i.e. ``S_s = c_s I - d_s d eps / d a_s`` and
  ``J(C, t) = -d_t d eps / d C``. This is what brute-force differentiation of
  the unrolled sampler reproduces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .denoiser import ActionState, Denoiser
from .schedule import NoiseSchedule, fds_prefactor, solver_coefficients

VARIANTS = ("normalized", "full")


@dataclass
class ChainTrace:
    steps: list
    per_step_jacobians: list
    per_step_state_jacobians: list
    schedule_ref: NoiseSchedule


def _check_states(schedule, states):
    if not states:
        raise ValueError("empty trajectory of states")
    steps = [s.step for s in states]
    if any(a <= b for a, b in zip(steps, steps[1:])):
        raise ValueError("states must be ordered by decreasing step")
    for t in steps:
        schedule.check_step(t)
    return steps


def _step_scalars(schedule, t, variant, solver):
    if variant == "normalized":
        ab = schedule.alpha_bar[t]
        return None, -math.sqrt((1.0 - ab) / ab)
    if variant == "full":
        c, d = solver_coefficients(schedule, t, solver)
        return c, -d
    raise ValueError(f"unknown variant {variant!r}")


def chain_trace(model: Denoiser, schedule: NoiseSchedule, cond, states, variant="normalized",
                solver="ddpm") -> ChainTrace:
    """Per-step condition Jacobians ``J(C, t)`` and propagation factors ``S_t``."""
    steps = _check_states(schedule, states)
    Js, Ss = [], []
    for st in states:
        c, scale = _step_scalars(schedule, st.step, variant, solver)
        Js.append(scale * model.condition_jacobian(cond, st.values, st.step))
        Ja = model.state_jacobian(cond, st.values, st.step)
        Ss.append(Ja if c is None else c * np.eye(len(Ja)) + scale * Ja)
    return ChainTrace(steps, Js, Ss, schedule)


def chain_jacobian(model: Denoiser, schedule: NoiseSchedule, cond, states, variant="normalized",
                   solver="ddpm") -> np.ndarray:
    """Total condition-to-final-action Jacobian accumulated along the rollout."""
    tr = chain_trace(model, schedule, cond, states, variant, solver)
    total = np.zeros_like(tr.per_step_jacobians[0])
    for J, S in zip(tr.per_step_jacobians, tr.per_step_state_jacobians):
        # later steps act on everything accumulated so far
        total = S @ total + J
    return total


def hutchinson_frobenius(vjp, out_dim: int, probes: int, rng: np.random.Generator) -> float:
    """Mean of ||J^T v||^2 over standard-normal probes ``v`` (unbiased for ||J||_F^2)."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    acc = 0.0
    for _ in range(probes):
        r = vjp(rng.standard_normal(out_dim))
        acc += float(r @ r)
    return acc / probes


def chain_vjp(model: Denoiser, schedule: NoiseSchedule, cond, states, v, variant="normalized",
              solver="ddpm") -> np.ndarray:
    """``J(C)^T v`` through the rollout using only vector-Jacobian products."""
    _check_states(schedule, states)
    out = 0.0
    for st in reversed(states):          # t = 1 first: its propagation operator is the identity
        c, scale = _step_scalars(schedule, st.step, variant, solver)
        out = out + scale * model.vjp_condition(cond, st.values, st.step, v)
        back = model.vjp_state(cond, st.values, st.step, v)
        v = back if c is None else c * v + scale * back
    return out


def hutchinson_cfds(model: Denoiser, schedule: NoiseSchedule, cond, states, probes: int,
                    rng: np.random.Generator, variant="normalized", solver="ddpm") -> float:
    d = len(states[0].values)
    return hutchinson_frobenius(
        lambda v: chain_vjp(model, schedule, cond, states, v, variant, solver), d, probes, rng)


@dataclass
class FdsReport:
    step_scores: dict
    tail_length: int
    additive_surrogate: float
    tail_surrogate: float
    eta: float
    kappa: Optional[float]
    eta_bound: Optional[float]
    weight_ratio: float
    streaming_tfds: float
    flags: list = field(default_factory=list)

    @property
    def bound_holds(self) -> Optional[bool]:
        return None if self.eta_bound is None else bool(self.eta <= self.eta_bound)

    def to_dict(self) -> dict:
        return {
            "step_scores": {str(t): float(v) for t, v in sorted(self.step_scores.items())},
            "tail_length": self.tail_length,
            "additive_surrogate": self.additive_surrogate,
            "tail_surrogate": self.tail_surrogate,
            "eta": self.eta,
            "kappa": self.kappa,
            "eta_bound": self.eta_bound,
            "bound_holds": self.bound_holds,
            "weight_ratio": self.weight_ratio,
            "streaming_tfds": self.streaming_tfds,
            "flags": list(self.flags),
        }


def report_from_scores(schedule: NoiseSchedule, step_scores: dict, tail_length: int,
                       streaming_tfds: float = float("nan")) -> FdsReport:
    """Weighted additive surrogate, its tail, the realised error and its bound.

    ``step_scores`` maps every step 1..T to its step sensitivity ||J(C, t)||_F^2.
    """
    T, M = schedule.T, int(tail_length)
    if not (1 <= M <= T):
        raise ValueError(f"tail length {M} outside 1..{T}")
    if sorted(step_scores) != list(range(1, T + 1)):
        raise ValueError("need a score for every step 1..T")
    w = schedule.w
    s = np.array([step_scores[t] for t in range(1, T + 1)], dtype=np.float64)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValueError("step scores must be finite and nonnegative")
    weighted = w[1:] * s
    additive = float(weighted.sum())
    tail = float(weighted[:M].sum())
    head = float(weighted[M:].sum())
    eta = head / additive if additive > 0 else 0.0
    flags = []
    ratio = float(w[M + 1:].sum() / w[1:M + 1].sum())
    if M == T:
        kappa, bound = 0.0, 0.0
    else:
        gmin = float(s[:M].min())
        if gmin <= 0.0:
            kappa, bound = None, None
            flags.append("kappa_undefined_zero_tail")
        else:
            kappa = float(s[M:].max()) / gmin
            bound = kappa * ratio
    return FdsReport(dict(step_scores), M, additive, tail, eta, kappa, bound, ratio,
                     float(streaming_tfds), flags)


def tfds(model: Denoiser, schedule: NoiseSchedule, cond, states, tail_length: int) -> FdsReport:
    """Truncation report for a full rollout (one state per step T..1)."""
    steps = _check_states(schedule, states)
    if steps != list(range(schedule.T, 0, -1)):
        raise ValueError("tfds needs the complete rollout T..1")
    scores, stream = {}, TfdsAccumulator(tail_length)
    for st in states:
        J = model.condition_jacobian(cond, st.values, st.step)
        sq = float(np.sum(J * J))
        scores[st.step] = fds_prefactor(schedule, st.step) * sq
        stream.add(st.step, sq)
    return report_from_scores(schedule, scores, tail_length, stream.value)


class TfdsAccumulator:
    """Running TFDS: sum of raw ||d eps / d C||_F^2 over steps t <= M.

    ``weighting="fds"`` multiplies each term by (1 - abar_t) / abar_t instead.
    """

    def __init__(self, tail_length: int, weighting: str = "raw", schedule: NoiseSchedule | None = None):
        if tail_length < 0:
            raise ValueError("tail length must be nonnegative")
        if weighting not in ("raw", "fds"):
            raise ValueError(f"unknown weighting {weighting!r}")
        if weighting == "fds" and schedule is None:
            raise ValueError("fds weighting needs the schedule")
        self.tail_length = int(tail_length)
        self.weighting = weighting
        self.schedule = schedule
        self.value = 0.0
        self.increments = {}

    def add(self, t: int, cond_grad_sq: float) -> float:
        """Accumulate one step; returns the increment (0 outside the tail)."""
        if t > self.tail_length:
            return 0.0
        inc = float(cond_grad_sq)
        if self.weighting == "fds":
            inc *= fds_prefactor(self.schedule, t)
        self.value += inc
        self.increments[int(t)] = inc
        return inc

    def update(self, model: Denoiser, cond, state: ActionState) -> float:
        if state.step > self.tail_length:
            return 0.0
        J = model.condition_jacobian(cond, state.values, state.step)
        return self.add(state.step, float(np.sum(J * J)))


def tfds_streaming(model: Denoiser, schedule: NoiseSchedule, cond, state_stream,
                   tail_length: int) -> float:
    acc = TfdsAccumulator(tail_length)
    for st in state_stream:
        schedule.check_step(st.step)
        acc.update(model, cond, st)
    return acc.value
