"""Fisher-preserving projections and the guided reverse-diffusion step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .denoiser import ActionState, Denoiser
from .schedule import NoiseSchedule
from .training import reconstruct_a0

MODES = ("none", "raw", "fpg_exact", "fpg_ops")
SOLVERS = ("ddpm", "ddim")
GUIDANCE_POINTS = ("state", "mean", "x0")
DEGENERATE_TOL = 1e-12

# A guidance objective maps the flat action vector to (loss, gradient).
Guidance = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class GuidanceGradient:
    u: np.ndarray
    source_tag: str = "unnamed"

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if not np.all(np.isfinite(self.u)):
            raise ValueError("non-finite guidance gradient")


@dataclass
class ProjectionResult:
    delta: np.ndarray
    parallel_norm: float
    orthogonality_residual: float
    degenerate: bool = False


def project_exact(u, g) -> ProjectionResult:
    """Remove the component of ``u`` along the Fisher normal ``g``.

    A second Gram-Schmidt pass keeps ``g . delta`` at rounding level even when
    ``u`` is nearly parallel to ``g``.
    """
    u = u.u if isinstance(u, GuidanceGradient) else np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite Fisher normal")
    gg = float(g @ g)
    if math.sqrt(gg) <= DEGENERATE_TOL:
        return ProjectionResult(u.copy(), 0.0, abs(float(g @ u)), degenerate=True)
    coef = float(u @ g) / gg
    delta = u - coef * g
    fix = float(delta @ g) / gg
    delta = delta - fix * g
    coef += fix
    return ProjectionResult(delta, abs(coef) * math.sqrt(gg), abs(float(g @ delta)))


def project_ops(u, model: Denoiser, g_h) -> ProjectionResult:
    """Pullback-metric projection in the head's latent coordinates.

    The residual reported is ``|g_h^T M_h u_h_perp|``; it equals
    ``|(W g_h)^T delta|`` because ``M_h = W^T W``.
    """
    u = u.u if isinstance(u, GuidanceGradient) else np.asarray(u, dtype=np.float64)
    g_h = np.asarray(g_h, dtype=np.float64)
    if not np.all(np.isfinite(g_h)):
        raise ValueError("non-finite latent Fisher normal")
    W = model.params["W"]
    M = model.pullback_metric
    u_h = W.T @ u
    Mg = M @ g_h
    denom = float(g_h @ Mg)
    if denom <= DEGENERATE_TOL:
        return ProjectionResult(W @ u_h, 0.0, abs(float(Mg @ u_h)), degenerate=True)
    coef = float(Mg @ u_h) / denom
    u_perp = u_h - coef * g_h
    fix = float(Mg @ u_perp) / denom
    u_perp = u_perp - fix * g_h
    coef += fix
    return ProjectionResult(W @ u_perp, abs(coef) * math.sqrt(denom), abs(float(Mg @ u_perp)))


def reverse_mean(schedule: NoiseSchedule, a, eps, t: int, solver: str = "ddpm",
                 clip_denoised: bool = False):
    """Unguided reverse mean from the predicted noise.

    Written through the reconstructed clean action so that clipping it to the
    workspace is optional; without clipping this is exactly ``c_t a - d_t eps``.
    """
    t = schedule.check_step(t)
    ab, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    x0 = reconstruct_a0(schedule, a, eps, t)
    if clip_denoised:
        x0 = np.clip(x0, -1.0, 1.0)
    if solver == "ddpm":
        k0 = math.sqrt(ab_prev) * schedule.beta[t] / (1.0 - ab)
        k1 = math.sqrt(schedule.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab)
        return k0 * x0 + k1 * a
    if solver == "ddim":
        eps_eff = (a - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab) if clip_denoised else eps
        return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_eff
    raise ValueError(f"unknown solver {solver!r}")


@dataclass
class StepRecord:
    """Diagnostics of one reverse step, as consumed by traces and TFDS replay."""

    t: int
    cond_grad_sq: Optional[float] = None
    loss: Optional[float] = None
    projection: Optional[ProjectionResult] = None
    extras: dict = field(default_factory=dict)


def guided_reverse_step(model: Denoiser, schedule: NoiseSchedule, cond, state: ActionState,
                        guidance: Optional[Guidance] = None, gamma: float = 0.05,
                        mode: str = "none", solver: str = "ddpm", clip_denoised: bool = False,
                        noise=None, grad_mask=None, need_fds: bool = False,
                        guidance_point: str = "mean"):
    """One reverse step ``a_{t-1} = mu_t - gamma * delta_t (+ posterior noise)``.

    ``noise`` is the standard-normal draw for the DDPM posterior; it is only
    used for DDPM steps with t > 1, so callers can draw it unconditionally and
    keep RNG streams aligned across modes. ``grad_mask`` zeroes guidance on
    coordinates that are overwritten afterwards (inpainted endpoints).
    ``guidance_point`` selects where the task loss is evaluated: the incoming
    noisy state, the denoised mean ``mu_t`` (correction after the denoising
    update, the default) or the reconstructed clean action. The Fisher normal
    is always taken at the incoming state. Returns ``(next_state, StepRecord)``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if guidance_point not in GUIDANCE_POINTS:
        raise ValueError(f"unknown guidance point {guidance_point!r}")
    if mode != "none" and guidance is None:
        raise ValueError(f"mode {mode!r} requires a guidance objective")
    t = schedule.check_step(state.step)
    a = state.values
    rec = StepRecord(t)

    if mode.startswith("fpg") or need_fds:
        eps, _, J, g_exact, g_lat = model.fisher_query(schedule, cond, a, t)
        rec.cond_grad_sq = float(np.sum(J * J))
    else:
        eps, _ = model.forward(cond, a, t)
    mu = reverse_mean(schedule, a, eps, t, solver, clip_denoised)

    nxt = mu
    if mode != "none":
        if guidance_point == "state":
            at = a
        elif guidance_point == "mean":
            at = mu
        else:
            at = reconstruct_a0(schedule, a, eps, t)
        loss, u = guidance(at)
        u = np.asarray(u, dtype=np.float64)
        if grad_mask is not None:
            u = u * grad_mask
        rec.loss = float(loss)
        if mode == "raw":
            proj = ProjectionResult(u, 0.0, 0.0)
        elif mode == "fpg_exact":
            proj = project_exact(u, g_exact)
        else:
            proj = project_ops(u, model, g_lat)
        rec.projection = proj
        nxt = mu - gamma * proj.delta

    if solver == "ddpm" and t > 1:
        if noise is None:
            raise ValueError("DDPM steps with t > 1 need a noise draw")
        nxt = nxt + math.sqrt(schedule.posterior_variance(t)) * np.asarray(noise)
    if not np.all(np.isfinite(nxt)):
        raise FloatingPointError(f"non-finite state after step {t}")
    return ActionState(nxt, t - 1), rec
