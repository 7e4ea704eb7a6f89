"""Desk-scale constrained-RL lab.

A 2D navigation world with safety constraints, policy-gradient learners
that respect a cost budget, a library of cost functions including an
evolvable network cost, and a batch experiment harness.
"""

from .costs import CostFn, CostInputs, intrinsic_architecture, total_cost
from .evolve import EvolutionConfig, run_evolution
from .learners import TrainConfig, train
from .nets import Architecture, GaussianPolicy, MlpParams
from .world import World, WorldConfig

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "CostFn",
    "CostInputs",
    "EvolutionConfig",
    "GaussianPolicy",
    "MlpParams",
    "TrainConfig",
    "World",
    "WorldConfig",
    "__version__",
    "intrinsic_architecture",
    "run_evolution",
    "total_cost",
    "train",
]
