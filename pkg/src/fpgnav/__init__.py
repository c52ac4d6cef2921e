"""Fisher-sensitivity guided diffusion sampling for 2D trajectory planning.

The package is organised bottom-up: ``schedule`` and ``denoiser`` give the
diffusion model and its exact derivatives, ``fds`` measures how strongly the
output reacts to the condition, ``fpg`` projects guidance so that this
sensitivity is preserved, ``blending`` fuses candidates, ``maze`` provides the
benchmark world, and ``harness`` wires everything together.
"""

from .blending import CandidateSet, blend, cluster_candidates, dbscan, score_candidates
from .denoiser import ActionState, Denoiser
from .fds import FdsReport, TfdsAccumulator, chain_jacobian, hutchinson_cfds, report_from_scores, tfds
from .fpg import ProjectionResult, guided_reverse_step, project_exact, project_ops
from .harness import RunConfig, run_algorithm1, run_benchmark
from .maze import MazeWorld, Trajectory, evaluate_rollout, generate_world
from .schedule import NoiseSchedule, build_cosine_schedule, build_linear_schedule, fds_prefactor

__version__ = "0.1.0"

__all__ = [
    "ActionState", "CandidateSet", "Denoiser", "FdsReport", "MazeWorld", "NoiseSchedule",
    "ProjectionResult", "RunConfig", "TfdsAccumulator", "Trajectory", "blend",
    "build_cosine_schedule", "build_linear_schedule", "chain_jacobian", "cluster_candidates",
    "dbscan", "evaluate_rollout", "fds_prefactor", "generate_world", "guided_reverse_step",
    "hutchinson_cfds", "project_exact", "project_ops", "report_from_scores", "run_algorithm1",
    "run_benchmark", "score_candidates", "tfds",
]
