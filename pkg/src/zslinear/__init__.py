"""Zero-shot recognition with sparse gated compositions of linear maps.

A composite predictor sums k of K base linear networks per sample, chosen
by variance-ranked blocks of a tied linear encoder, and is trained so that
per-class mapped submatrices become mutually orthogonal. Set
``ZSLINEAR_NO_NUMBA=1`` to run the pure-numpy kernel paths.
"""

from .data import Dataset, SemanticSpace, SynthConfig, generate_synthetic
from .errors import (
    DataFormatError,
    NumericalError,
    ValidationError,
)
from .eval import evaluate_full, evaluate_gzsl, evaluate_zsl, harmonic_mean
from .geometry import geometry_objective, verify_global_minimum
from .indicators import IndicatorEncoder, compute_indicators, train_encoder
from .model import CompositeModel, OpCounter, init_model, predict_class
from .solver import SolverConfig, solve_dual, train_joint

__version__ = "0.1.0"

__all__ = [
    "CompositeModel",
    "DataFormatError",
    "Dataset",
    "IndicatorEncoder",
    "NumericalError",
    "OpCounter",
    "SemanticSpace",
    "SolverConfig",
    "SynthConfig",
    "ValidationError",
    "compute_indicators",
    "evaluate_full",
    "evaluate_gzsl",
    "evaluate_zsl",
    "generate_synthetic",
    "geometry_objective",
    "harmonic_mean",
    "init_model",
    "predict_class",
    "solve_dual",
    "train_encoder",
    "train_joint",
    "verify_global_minimum",
    "__version__",
]
