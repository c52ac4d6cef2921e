# What the two projections do to a guidance gradient.
#
# The exact projection removes the part of u along the Fisher normal g, so a
# small step along the result leaves the step sensitivity unchanged to first
# order. The head-space projection works in latent coordinates of the final
# linear layer and maps back through it.
import numpy as np

from fpgnav.denoiser import Denoiser
from fpgnav.fpg import project_exact, project_ops
from fpgnav.schedule import build_cosine_schedule

rng = np.random.default_rng(0)
sch = build_cosine_schedule(10)
model = Denoiser(cond_dim=3, action_dim=6, hidden_dim=16, latent_dim=4, temb_dim=4, seed=1)
C, a, t = rng.standard_normal(3), rng.standard_normal(6), 3

g = model.fisher_normal_exact(sch, C, a, t)
u = rng.standard_normal(6)
exact = project_exact(u, g)
print("cos(u, g)        ", u @ g / np.linalg.norm(u) / np.linalg.norm(g))
print("cos(delta, g)    ", exact.delta @ g / np.linalg.norm(exact.delta) / np.linalg.norm(g))
print("removed component", exact.parallel_norm)

g_h = model.fisher_normal_latent(sch, C, a, t)
ops = project_ops(u, model, g_h)
print("latent residual  ", ops.orthogonality_residual)
# The head-space step lives in the column span of W and is roughly W W^T u,
# so its length scales with the head's singular values.
W = model.params["W"]
print("singular values of W", np.round(np.linalg.svd(W, compute_uv=False), 3))
print("|u| =", round(float(np.linalg.norm(u)), 3), " |delta_ops| =", round(float(np.linalg.norm(ops.delta)), 3))

# Drift check: the change in step sensitivity shrinks like gamma for the raw
# direction and like gamma^2 for the projected one.
base = model.step_fds(sch, C, a, t)
print("\n gamma     |dI| raw      |dI| projected")
for gamma in (0.04, 0.02, 0.01, 0.005):
    raw = abs(model.step_fds(sch, C, a - gamma * u, t) - base)
    proj = abs(model.step_fds(sch, C, a - gamma * exact.delta, t) - base)
    print(f" {gamma:<8} {raw:.3e}     {proj:.3e}")
