"""Auxiliary-class learning toolkit.

Classifiers get an extra "others" class that absorbs inputs belonging to none
of the known classes. Training uses a weighted categorical cross-entropy so
the (much larger) auxiliary class does not swamp the known ones.
"""

from auxlearn.errors import ConfigError, DomainError, ParseError, RoutingError
from auxlearn.loss import (
    ClassWeights,
    LossConfig,
    cce_grad,
    cce_loss,
    compute_class_weights,
    softmax,
    wcce_grad,
    wcce_loss,
)

__version__ = "0.1.0"

__all__ = [
    "ClassWeights",
    "ConfigError",
    "DomainError",
    "LossConfig",
    "ParseError",
    "RoutingError",
    "cce_grad",
    "cce_loss",
    "compute_class_weights",
    "softmax",
    "wcce_grad",
    "wcce_loss",
]
