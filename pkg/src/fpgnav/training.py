"""Noise-prediction training of the denoiser on expert maze trajectories."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import Denoiser
from .schedule import NoiseSchedule, build_schedule

log = logging.getLogger(__name__)


def reconstruct_a0(schedule: NoiseSchedule, a_t, eps, t: int):
    """Clean action implied by ``a_t`` and the noise ``eps`` at step ``t``."""
    t = int(t)
    if t == 0:
        return np.asarray(a_t, dtype=np.float64).copy()
    ab = schedule.alpha_bar[schedule.check_step(t)]
    return (np.asarray(a_t) - math.sqrt(1.0 - ab) * np.asarray(eps)) / math.sqrt(ab)


def q_sample(schedule: NoiseSchedule, a0, eps, t):
    """Forward noising ``sqrt(abar_t) a0 + sqrt(1 - abar_t) eps`` (``t`` may be an array)."""
    ab = schedule.alpha_bar[np.asarray(t)]
    ab = ab[..., None] if np.ndim(ab) else ab
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-4
    min_lr_fraction: float = 0.0
    seed: int = 0
    schedule_kind: str = "cosine"
    total_steps: int = 10
    schedule_offset: float = 0.008
    hidden_dim: int = 128
    latent_dim: int = 64
    temb_dim: int = 16
    activation: str = "tanh"
    pooled_size: int = 16
    heldout_fraction: float = 0.05
    dataset_path: str = ""
    checkpoint_path: str = ""
    metrics_path: str = ""
    log_every: int = 50
    max_steps: int | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "total_steps", "hidden_dim", "latent_dim"):
            if getattr(self, name) < 0 or (name != "epochs" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.heldout_fraction < 1.0):
            raise ValueError("heldout_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def schedule(self) -> NoiseSchedule:
        return build_schedule(self.schedule_kind, self.total_steps, offset=self.schedule_offset)


class Adam:
    def __init__(self, params: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def cosine_lr(step: int, total: int, base: float, min_fraction: float = 0.0) -> float:
    if total <= 1:
        return base
    frac = 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))
    return base * (min_fraction + (1.0 - min_fraction) * frac)


@dataclass
class TrainResult:
    model: Denoiser
    schedule: NoiseSchedule
    history: list = field(default_factory=list)
    heldout_initial: float = float("nan")
    heldout_final: float = float("nan")


def _masked_mse(pred, target, mask):
    diff = (pred - target) * mask
    return float(np.sum(diff * diff) / (mask.sum() * len(pred)))


def make_training_arrays(worlds, pooled_size: int = 16):
    from .maze import encode_condition
    cond = np.stack([encode_condition(w, pooled_size) for w in worlds])
    a0 = np.stack([w.expert.flat for w in worlds])
    return cond, a0


def heldout_loss(model: Denoiser, schedule: NoiseSchedule, cond, a0, seed: int = 12345) -> float:
    """Masked noise-prediction MSE on a fixed (t, eps) draw per sample."""
    from .maze import endpoint_mask
    rng = np.random.default_rng(seed)
    n, d = a0.shape
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal((n, d))
    mask = endpoint_mask(d // 2)
    a_t = q_sample(schedule, a0, eps, t)
    a_t[:, :2], a_t[:, -2:] = a0[:, :2], a0[:, -2:]
    pred, _ = model.forward_batch(cond, a_t, t)
    return _masked_mse(pred, eps, mask)


def train_arrays(config: TrainConfig, cond, a0, model: Denoiser | None = None) -> TrainResult:
    """Train on in-memory (condition, expert) arrays. Deterministic in ``config.seed``."""
    from .maze import endpoint_mask
    schedule = config.schedule()
    rng = np.random.default_rng(config.seed)
    n, d = a0.shape
    if model is None:
        model = Denoiser(cond.shape[1], d, config.hidden_dim, config.latent_dim, config.temb_dim,
                         config.activation, seed=config.seed)
    n_hold = int(round(config.heldout_fraction * n)) if n > 1 else 0
    perm = rng.permutation(n)
    hold, tr = perm[:n_hold], perm[n_hold:]
    eval_c, eval_a = (cond[hold], a0[hold]) if n_hold else (cond[tr], a0[tr])
    result = TrainResult(model, schedule)
    result.heldout_initial = heldout_loss(model, schedule, eval_c, eval_a)

    mask = endpoint_mask(d // 2)
    bs = min(config.batch_size, len(tr))
    steps_per_epoch = max(1, len(tr) // bs)
    total = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    opt = Adam(model.params, config.learning_rate)
    step = 0
    while step < total:
        order = tr[rng.permutation(len(tr))]
        for b in range(steps_per_epoch):
            if step >= total:
                break
            idx = order[b * bs:(b + 1) * bs]
            c, x0 = cond[idx], a0[idx]
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps = rng.standard_normal(x0.shape)
            a_t = q_sample(schedule, x0, eps, t)
            a_t[:, :2], a_t[:, -2:] = x0[:, :2], x0[:, -2:]
            pred, cache = model.forward_batch(c, a_t, t)
            loss = _masked_mse(pred, eps, mask)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at step {step}")
            d_eps = 2.0 * (pred - eps) * mask / (mask.sum() * len(idx))
            grads = model.param_gradients(cache, d_eps)
            lr = cosine_lr(step, total, config.learning_rate, config.min_lr_fraction)
            opt.step(model.params, grads, lr)
            model.refresh()
            result.history.append((step, step // steps_per_epoch, loss, lr))
            if config.log_every and step % config.log_every == 0:
                log.info("step %d loss %.5f lr %.2e", step, loss, lr)
            step += 1
    result.heldout_final = heldout_loss(model, schedule, eval_c, eval_a)
    return result


def write_metrics_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "epoch", "loss", "lr"])
        for step, epoch, loss, lr in history:
            wr.writerow([step, epoch, repr(float(loss)), repr(float(lr))])


def train(config: TrainConfig) -> TrainResult:
    """Load the dataset, train, and write the checkpoint and metrics log if paths are set."""
    from .checkpoint import save_checkpoint
    from .dataset import load_dataset
    worlds = load_dataset(config.dataset_path)
    cond, a0 = make_training_arrays(worlds, config.pooled_size)
    result = train_arrays(config, cond, a0)
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, result.model, result.schedule, config.to_dict(),
                        {"heldout_initial": result.heldout_initial,
                         "heldout_final": result.heldout_final})
    if config.metrics_path:
        write_metrics_csv(config.metrics_path, result.history)
    return result
