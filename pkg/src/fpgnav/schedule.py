"""Discrete diffusion noise schedules.

Step indexing runs t = 1..T with t = T the pure-noise end and t = 1 the last
denoising step. Arrays are stored with a leading entry for t = 0 so that
``alpha_bar[0] == 1`` and ``beta[t]`` reads naturally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable schedule with derived contraction factors and propagation weights.

    All arrays have length ``total_steps + 1``; index 0 is the clean end
    (``beta[0] = 0``, ``alpha_bar[0] = 1``, ``rho[0] = 1``).
    """

    total_steps: int
    beta: np.ndarray
    kind: str = "cosine"
    offset: float = 0.008

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (self.total_steps + 1,):
            raise ValueError("beta must have length total_steps + 1")
        if not (np.all(beta[1:] > 0) and np.all(beta[1:] < 1)):
            raise ValueError("beta_t must lie in (0, 1)")
        beta = beta.copy()
        beta[0] = 0.0
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        rho = 1.0 - 0.5 * beta
        # w_t = prod_{s=t+1..T} rho_s^2, built backwards from w_T = 1
        w = np.ones(self.total_steps + 1)
        for t in range(self.total_steps - 1, -1, -1):
            w[t] = w[t + 1] * rho[t + 1] ** 2
        for name, arr in (("alpha", alpha), ("alpha_bar", alpha_bar), ("rho", rho), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.total_steps

    def check_step(self, t: int) -> int:
        if not (1 <= int(t) <= self.total_steps):
            raise ValueError(f"step {t} outside 1..{self.total_steps}")
        return int(t)

    def posterior_variance(self, t: int) -> float:
        """DDPM posterior variance beta_t (1 - abar_{t-1}) / (1 - abar_t)."""
        t = self.check_step(t)
        return float(self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "total_steps": self.total_steps,
            "offset": self.offset,
            "beta": [float(b) for b in self.beta[1:]],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        beta = np.concatenate([[0.0], np.asarray(d["beta"], dtype=np.float64)])
        return cls(int(d["total_steps"]), beta, kind=d.get("kind", "cosine"),
                   offset=float(d.get("offset", 0.008)))


def build_cosine_schedule(total_steps: int, offset: float = 0.008) -> NoiseSchedule:
    """Squared-cosine alpha_bar schedule with betas clipped to (0, 0.999]."""
    if int(total_steps) != total_steps or total_steps < 1:
        raise ValueError("total_steps must be a positive integer")
    if not math.isfinite(offset) or offset <= 0:
        raise ValueError("offset must be finite and positive")
    total_steps = int(total_steps)

    def f(t):
        return np.cos((t / total_steps + offset) / (1 + offset) * np.pi / 2) ** 2

    ts = np.arange(total_steps + 1, dtype=np.float64)
    abar = f(ts) / f(0.0)
    beta = np.zeros(total_steps + 1)
    beta[1:] = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, BETA_MAX)
    return NoiseSchedule(total_steps, beta, kind="cosine", offset=float(offset))


def build_linear_schedule(total_steps: int, beta_start: float = 1e-4,
                          beta_end: float = 0.2) -> NoiseSchedule:
    """Linearly spaced betas (ablation alternative to the cosine default)."""
    if int(total_steps) != total_steps or total_steps < 1:
        raise ValueError("total_steps must be a positive integer")
    if not (0 < beta_start < 1 and 0 < beta_end < 1):
        raise ValueError("betas must lie in (0, 1)")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, int(total_steps))])
    return NoiseSchedule(int(total_steps), beta, kind="linear", offset=0.0)


def build_schedule(kind: str, total_steps: int, **kwargs) -> NoiseSchedule:
    if kind == "cosine":
        return build_cosine_schedule(total_steps, kwargs.get("offset", 0.008))
    if kind == "linear":
        return build_linear_schedule(total_steps, kwargs.get("beta_start", 1e-4),
                                     kwargs.get("beta_end", 0.2))
    raise ValueError(f"unknown schedule kind {kind!r}")


def fds_prefactor(schedule: NoiseSchedule, t: int) -> float:
    """Noise-to-signal ratio (1 - abar_t) / abar_t scaling the step sensitivity."""
    if int(t) == 0:
        return 0.0
    t = schedule.check_step(t)
    ab = schedule.alpha_bar[t]
    return float((1.0 - ab) / ab)


def head_tail_weight_ratio(schedule: NoiseSchedule, tail_length: int) -> float:
    """(sum_{t>M} w_t) / (sum_{t<=M} w_t), the schedule factor of the truncation bound."""
    M = int(tail_length)
    if not (1 <= M <= schedule.T):
        raise ValueError("tail_length must lie in 1..T")
    w = schedule.w
    return float(w[M + 1:].sum() / w[1:M + 1].sum())


def solver_coefficients(schedule: NoiseSchedule, t: int, solver: str = "ddpm"):
    """Scalars (c_t, d_t) such that the unclipped mean update is c_t a - d_t eps."""
    t = schedule.check_step(t)
    ab, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    if solver == "ddpm":
        k0 = math.sqrt(ab_prev) * schedule.beta[t] / (1.0 - ab)
        k1 = math.sqrt(schedule.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab)
        c = k0 / math.sqrt(ab) + k1
        d = k0 * math.sqrt(1.0 - ab) / math.sqrt(ab)
    elif solver == "ddim":
        c = math.sqrt(ab_prev / ab)
        d = math.sqrt(ab_prev) * math.sqrt(1.0 - ab) / math.sqrt(ab) - math.sqrt(1.0 - ab_prev)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return c, d
