"""Scaled gradient descent for low-rank matrix and tensor estimation."""

from .linalg import (
    MatrixFactors,
    SingularGramError,
    SvdResult,
    TuckerFactors,
    breve_factors,
    hosvd,
    matricize,
    multilinear_product,
    tensorize,
)
from .models import ConvergenceTrace, CorruptionSpec, GroundTruthSpec
from .operators import GaussianSensingOp, ObservationMask

__version__ = "0.1.0"
