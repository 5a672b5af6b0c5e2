"""Minimize Lipschitz functions of per-group losses through a linear optimizer."""

from .core import (
    ContractViolation,
    CountingCache,
    LinearOptimizer,
    LossAssessor,
    Mixture,
    as_loss_vector,
    caratheodory_reduce,
    mixture_loss,
)
from .groupopt import (
    NoGridPointAccepted,
    Schedule,
    compute_schedule,
    group_opt,
    project_toward,
    solve_group_opt,
)
from .convex import constrained_min, frank_wolfe_min, solve_constrained, solve_frank_wolfe
from .learning import (
    classy_regression,
    flip_labels,
    group_fair_classify,
    group_fair_regress,
    signed_weight,
)

__version__ = "0.1.0"

__all__ = [
    "ContractViolation", "CountingCache", "LinearOptimizer", "LossAssessor", "Mixture",
    "as_loss_vector", "caratheodory_reduce", "mixture_loss",
    "NoGridPointAccepted", "Schedule", "compute_schedule", "group_opt", "project_toward",
    "solve_group_opt",
    "constrained_min", "frank_wolfe_min", "solve_constrained", "solve_frank_wolfe",
    "classy_regression", "flip_labels", "group_fair_classify", "group_fair_regress",
    "signed_weight",
]
