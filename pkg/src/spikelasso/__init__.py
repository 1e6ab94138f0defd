"""Windowed active-set Lasso for convolutional spike sorting."""

__version__ = "0.1.0"

from .operator import (  # noqa: E402
    ActivationSet,
    MultiSignal,
    ShapeBank,
    correlate,
    forward,
    gram_entry,
    gram_matrix,
    lambda_max,
    lipschitz_bound,
)
from .subproblem import LassoConfig, QuadraticSubproblem, SolveReport, fista_full, fista_sub, soft_threshold  # noqa: E402
from .active_set import (  # noqa: E402
    SolverSettings,
    group_active_set,
    naive_active_set,
    solve,
    windowed_active_set,
)
