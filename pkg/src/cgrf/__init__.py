"""Gaussian random fields that satisfy linear boundary constraints exactly."""

__version__ = "0.1.0"

from .constrained import (  # noqa: E402
    ConstrainedField,
    ConstraintSet,
    GaussianField,
    WeightSpec,
    constrained_cov,
    constrained_mean,
    make_constraint,
    recipe_weights,
    transform_sample,
    verify_conditions,
)
from .estimator import CGRFRegressor  # noqa: E402

__all__ = [
    "CGRFRegressor", "ConstrainedField", "ConstraintSet", "GaussianField", "WeightSpec", "__version__",
    "constrained_cov", "constrained_mean", "make_constraint", "recipe_weights", "transform_sample",
    "verify_conditions",
]
