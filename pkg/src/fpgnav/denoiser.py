"""Conditional noise-prediction MLP with a strictly linear head.

The trunk maps ``x = [C, a_t, emb(t)]`` through two smooth layers

    z1 = A1 x + b1,  s1 = act(z1)
    z2 = A2 s1 + b2, h  = act(z2)

and the head is ``eps = W h + b`` with no nonlinearity after ``h``. Because
the architecture is fixed and shallow, every derivative the sampler needs
(condition/state Jacobians, their vector products, and the gradient of the
squared condition-Jacobian norm with respect to the state) has a closed form
that is evaluated exactly rather than through a generic autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import NoiseSchedule, fds_prefactor

ACTIVATIONS = ("tanh", "silu", "identity")


def _act(kind, z):
    """Return act(z), act'(z), act''(z)."""
    if kind == "tanh":
        s = np.tanh(z)
        d1 = 1.0 - s * s
        return s, d1, -2.0 * s * d1
    if kind == "silu":
        sg = 1.0 / (1.0 + np.exp(-z))
        s = z * sg
        d1 = sg + z * sg * (1.0 - sg)
        d2 = sg * (1.0 - sg) * (2.0 + z * (1.0 - 2.0 * sg))
        return s, d1, d2
    if kind == "identity":
        return z.copy(), np.ones_like(z), np.zeros_like(z)
    raise ValueError(f"unknown activation {kind!r}")


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the integer step ``t`` (sin half, cos half)."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(100.0) * np.arange(half) / max(half, 1))
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


@dataclass
class ActionState:
    """Flattened waypoint vector ``values`` (length 2H) at diffusion step ``step``."""

    values: np.ndarray
    step: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.step = int(self.step)


@dataclass
class _Trace:
    z1: np.ndarray
    s1: np.ndarray
    d1: np.ndarray
    dd1: np.ndarray
    z2: np.ndarray
    h: np.ndarray
    d2: np.ndarray
    dd2: np.ndarray


@dataclass
class Denoiser:
    cond_dim: int
    action_dim: int
    hidden_dim: int = 128
    latent_dim: int = 64
    temb_dim: int = 16
    activation: str = "tanh"
    params: dict = field(default_factory=dict)
    seed: int | None = None

    PARAM_NAMES = ("A1", "b1", "A2", "b2", "W", "b")

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.params:
            self.params = init_params(self.shapes(), np.random.default_rng(self.seed))
        for name, shape in self.shapes().items():
            p = np.asarray(self.params[name], dtype=np.float64)
            if p.shape != shape:
                raise ValueError(f"parameter {name} has shape {p.shape}, expected {shape}")
            self.params[name] = p
        self.refresh()

    @property
    def input_dim(self) -> int:
        return self.cond_dim + self.action_dim + self.temb_dim

    def shapes(self) -> dict:
        return {
            "A1": (self.hidden_dim, self.input_dim),
            "b1": (self.hidden_dim,),
            "A2": (self.latent_dim, self.hidden_dim),
            "b2": (self.latent_dim,),
            "W": (self.action_dim, self.latent_dim),
            "b": (self.action_dim,),
        }

    def refresh(self):
        """Recompute cached views after the parameters change."""
        A1 = self.params["A1"]
        self._A1c = A1[:, : self.cond_dim]
        self._A1a = A1[:, self.cond_dim: self.cond_dim + self.action_dim]
        self._A1e = A1[:, self.cond_dim + self.action_dim:]
        W = self.params["W"]
        self.pullback_metric = W.T @ W

    def copy(self) -> "Denoiser":
        return Denoiser(self.cond_dim, self.action_dim, self.hidden_dim, self.latent_dim,
                        self.temb_dim, self.activation,
                        {k: v.copy() for k, v in self.params.items()}, self.seed)

    # ------------------------------------------------------------------ evaluation

    def _check(self, cond, a):
        cond = np.asarray(cond, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if cond.shape != (self.cond_dim,):
            raise ValueError(f"condition has shape {cond.shape}, expected ({self.cond_dim},)")
        if a.shape != (self.action_dim,):
            raise ValueError(f"action state has shape {a.shape}, expected ({self.action_dim},)")
        if not (np.all(np.isfinite(cond)) and np.all(np.isfinite(a))):
            raise ValueError("non-finite denoiser input")
        return cond, a

    def _trace(self, cond, a, t, latent_shift=None) -> _Trace:
        p = self.params
        z1 = self._A1c @ cond + self._A1a @ a + self._A1e @ timestep_embedding(t, self.temb_dim) + p["b1"]
        s1, d1, dd1 = _act(self.activation, z1)
        z2 = p["A2"] @ s1 + p["b2"]
        if latent_shift is not None:
            z2 = z2 + latent_shift
        h, d2, dd2 = _act(self.activation, z2)
        return _Trace(z1, s1, d1, dd1, z2, h, d2, dd2)

    def head(self, h):
        return self.params["W"] @ h + self.params["b"]

    def forward(self, cond, a, t):
        """Return ``(eps, latent)`` with ``eps == W @ latent + b``."""
        cond, a = self._check(cond, a)
        tr = self._trace(cond, a, t)
        return self.head(tr.h), tr.h

    def condition_jacobian(self, cond, a, t, _tr=None):
        cond, a = self._check(cond, a)
        tr = _tr or self._trace(cond, a, t)
        P = (self.params["W"] * tr.d2) @ self.params["A2"]
        J = (P * tr.d1) @ self._A1c
        if not np.all(np.isfinite(J)):
            raise FloatingPointError("non-finite condition Jacobian")
        return J

    def state_jacobian(self, cond, a, t):
        cond, a = self._check(cond, a)
        tr = self._trace(cond, a, t)
        P = (self.params["W"] * tr.d2) @ self.params["A2"]
        J = (P * tr.d1) @ self._A1a
        if not np.all(np.isfinite(J)):
            raise FloatingPointError("non-finite state Jacobian")
        return J

    def _vjp_trunk(self, tr, v):
        """Backpropagate an output cotangent ``v`` to the first-layer pre-activation."""
        g2 = tr.d2 * (self.params["W"].T @ v)
        return tr.d1 * (self.params["A2"].T @ g2)

    def vjp_condition(self, cond, a, t, v):
        """``(d eps / d C)^T v`` without forming the Jacobian."""
        cond, a = self._check(cond, a)
        return self._A1c.T @ self._vjp_trunk(self._trace(cond, a, t), v)

    def vjp_state(self, cond, a, t, v):
        cond, a = self._check(cond, a)
        return self._A1a.T @ self._vjp_trunk(self._trace(cond, a, t), v)

    # ------------------------------------------------------------------ Fisher quantities

    def _fds_parts(self, cond, a, t):
        """Shared intermediates: trace, Jacobian, and the gradients of ||J||_F^2
        with respect to the latent and first-layer pre-activations."""
        tr = self._trace(cond, a, t)
        W, A2 = self.params["W"], self.params["A2"]
        Wd = W * tr.d2
        P = Wd @ A2                               # D_a x H1
        J = (P * tr.d1) @ self._A1c               # D_a x D_c
        Q = (A2 * tr.d1) @ self._A1c              # D_h x D_c
        dF_dd2 = 2.0 * np.einsum("jk,jk->j", W.T @ J, Q)
        dF_dd1 = 2.0 * np.einsum("lk,lk->l", P.T @ J, self._A1c)
        r2 = tr.dd2 * dF_dd2                      # dF/dz2 holding the first layer fixed
        r1 = tr.dd1 * dF_dd1 + tr.d1 * (A2.T @ r2)
        return tr, J, r1, r2

    def step_fds(self, schedule: NoiseSchedule, cond, a, t, latent_shift=None) -> float:
        cond, a = self._check(cond, a)
        tr = self._trace(cond, a, t, latent_shift)
        J = self.condition_jacobian(cond, a, t, _tr=tr)
        return fds_prefactor(schedule, t) * float(np.sum(J * J))

    def fisher_normal_exact(self, schedule: NoiseSchedule, cond, a, t):
        """Exact gradient of the step sensitivity with respect to the action state."""
        cond, a = self._check(cond, a)
        _, _, r1, _ = self._fds_parts(cond, a, t)
        g = fds_prefactor(schedule, t) * (self._A1a.T @ r1)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite Fisher normal")
        return g

    def fisher_normal_latent(self, schedule: NoiseSchedule, cond, a, t):
        """Gradient of the step sensitivity with respect to a shift injected at the
        latent pre-activation (first layer held fixed)."""
        cond, a = self._check(cond, a)
        _, _, _, r2 = self._fds_parts(cond, a, t)
        g = fds_prefactor(schedule, t) * r2
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite latent Fisher normal")
        return g

    def fisher_query(self, schedule: NoiseSchedule, cond, a, t):
        """One pass returning (eps, latent, condition Jacobian, g_exact, g_latent)."""
        cond, a = self._check(cond, a)
        tr, J, r1, r2 = self._fds_parts(cond, a, t)
        pref = fds_prefactor(schedule, t)
        eps = self.head(tr.h)
        return eps, tr.h, J, pref * (self._A1a.T @ r1), pref * r2

    # ------------------------------------------------------------------ batched training path

    def forward_batch(self, cond, a, t):
        """Batched forward for training; returns eps (N x D_a) and a cache."""
        p = self.params
        X = np.concatenate([cond, a, timestep_embedding(t, self.temb_dim)], axis=1)
        z1 = X @ p["A1"].T + p["b1"]
        s1, d1, _ = _act(self.activation, z1)
        z2 = s1 @ p["A2"].T + p["b2"]
        h, d2, _ = _act(self.activation, z2)
        eps = h @ p["W"].T + p["b"]
        return eps, (X, s1, d1, h, d2)

    def param_gradients(self, cache, d_eps) -> dict:
        X, s1, d1, h, d2 = cache
        p = self.params
        g_h = d_eps @ p["W"]
        g_z2 = g_h * d2
        g_z1 = (g_z2 @ p["A2"]) * d1
        return {
            "W": d_eps.T @ h,
            "b": d_eps.sum(axis=0),
            "A2": g_z2.T @ s1,
            "b2": g_z2.sum(axis=0),
            "A1": g_z1.T @ X,
            "b1": g_z1.sum(axis=0),
        }


def init_params(shapes: dict, rng: np.random.Generator) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases of each layer."""
    fan_in = {"A1": shapes["A1"][1], "A2": shapes["A2"][1], "W": shapes["W"][1]}
    fan_in.update({"b1": fan_in["A1"], "b2": fan_in["A2"], "b": fan_in["W"]})
    out = {}
    for name in Denoiser.PARAM_NAMES:
        bound = 1.0 / np.sqrt(fan_in[name])
        out[name] = rng.uniform(-bound, bound, size=shapes[name])
    return out


# ---------------------------------------------------------------------- module-level API

def forward(model: Denoiser, cond, state: ActionState):
    return model.forward(cond, state.values, state.step)


def condition_jacobian(model: Denoiser, cond, state: ActionState):
    return model.condition_jacobian(cond, state.values, state.step)


def state_jacobian(model: Denoiser, cond, state: ActionState):
    return model.state_jacobian(cond, state.values, state.step)


def step_fds(model: Denoiser, schedule: NoiseSchedule, cond, state: ActionState) -> float:
    return model.step_fds(schedule, cond, state.values, state.step)


def fisher_normal_exact(model: Denoiser, schedule: NoiseSchedule, cond, state: ActionState):
    return model.fisher_normal_exact(schedule, cond, state.values, state.step)


def fisher_normal_latent(model: Denoiser, schedule: NoiseSchedule, cond, state: ActionState):
    return model.fisher_normal_latent(schedule, cond, state.values, state.step)


def central_difference_jacobian(f, x, step=1e-5):
    """Central-difference Jacobian of ``f`` at ``x`` (rows index outputs)."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=np.float64))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        J[:, i] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2.0 * step)
    return J
