# Where the condition sensitivity of a rollout comes from.
#
# For one rollout we compute the per-step sensitivity, the weighted additive
# total, the share lost by keeping only the last M steps, and the bound on
# that share. Then the total chain Jacobian is estimated with random probes.
import numpy as np

from fpgnav.denoiser import ActionState, Denoiser
from fpgnav.fds import chain_jacobian, hutchinson_cfds, tfds
from fpgnav.fpg import guided_reverse_step
from fpgnav.schedule import build_cosine_schedule, head_tail_weight_ratio

sch = build_cosine_schedule(10)
print("schedule weights w_t, t=1..10:", np.round(sch.w[1:], 4))
for M in (1, 2, 4, 6):
    print(f"  head/tail weight ratio for M={M}: {head_tail_weight_ratio(sch, M):.4f}")

rng = np.random.default_rng(5)
model = Denoiser(cond_dim=4, action_dim=8, hidden_dim=24, latent_dim=8, temb_dim=8, seed=2)
C = rng.standard_normal(4)
state, states = ActionState(rng.standard_normal(8), sch.T), []
for t in range(sch.T, 0, -1):
    states.append(state)
    state, _ = guided_reverse_step(model, sch, C, state, clip_denoised=True,
                                   noise=rng.standard_normal(8))

rep = tfds(model, sch, C, states, tail_length=4)
for t, s in sorted(rep.step_scores.items(), reverse=True):
    print(f"  t={t:2d} step sensitivity {s:9.4f}")
# The (1 - abar)/abar prefactor is huge at t=T, so the head dominates the
# weighted total here and the bound is far from tight.
print(f"truncation error {rep.eta:.4f}  bound {rep.eta_bound:.4f}  kappa {rep.kappa:.3f}")
print(f"streaming TFDS over the last 4 steps: {rep.streaming_tfds:.4f}")

J = chain_jacobian(model, sch, C, states, "full")
for probes in (10, 100, 1000):
    est = hutchinson_cfds(model, sch, C, states, probes, np.random.default_rng(probes), "full")
    print(f"  {probes:5d} probes: {est:.5f}   (exact {np.sum(J * J):.5f})")
