# Small end-to-end run: make some worlds, fit a tiny denoiser, sample one of
# them with and without guidance, and draw the result.
#
#   python3 demos/quickstart.py            (takes about a minute)
import os

import numpy as np

from fpgnav.dataset import generate_dataset
from fpgnav.harness import RunConfig, run_algorithm1
from fpgnav.maze import evaluate_rollout
from fpgnav.render import world_svg
from fpgnav.training import TrainConfig, make_training_arrays, train_arrays

out_dir = os.environ.get("FPGNAV_OUTPUT_DIR", "runs")
os.makedirs(out_dir, exist_ok=True)

# Worlds are fully determined by (seed, index), so this list never changes.
worlds = generate_dataset(seed=3, count=300)
cond, a0 = make_training_arrays(worlds)
print("conditions", cond.shape, "expert trajectories", a0.shape)

# A deliberately small model; the real benchmark uses hidden_dim=512 and 10k worlds.
result = train_arrays(TrainConfig(epochs=30, learning_rate=1e-3, hidden_dim=128, log_every=0), cond, a0)
print(f"held-out loss {result.heldout_initial:.3f} -> {result.heldout_final:.3f}")

# Expect many collisions: 300 worlds and 30 epochs is far too little data for
# this model to learn clean routes. The point here is the plumbing.
test_world = generate_dataset(seed=77, count=1)[0]
for label, cfg in [("unguided", RunConfig(mode="none", use_tg=False)),
                   ("guided", RunConfig(mode="fpg_ops", gamma=1e-3))]:
    res = run_algorithm1(result.model, result.schedule, test_world, cfg, seed=[0, 0, 0])
    m = evaluate_rollout(test_world, res.blended)
    print(f"{label:9s} collisions={m.collisions} success={m.success} "
          f"TFDS per candidate={np.round(res.candidates.tfds_scores, 2)}")
    path = os.path.join(out_dir, f"quickstart_{label}.svg")
    with open(path, "w") as fh:
        fh.write(world_svg(test_world, res.candidates.actions, res.blended, title=label))
    print("  wrote", path)
