"""Multi-view attention consistency via directed Gromov-Wasserstein.

The package splits into a numeric core (tensors, sinkhorn, gw), two model
components (attention, renderer), scene synthesis, and the end-to-end
pipeline with its report and figure emitters.
"""

from .errors import (ConfigurationError, FormatError, NumericalError,
                     ValidationError)
from .gw import (CouplingMatrix, DiscrepancyResult, DistanceMatrix,
                 IntraVectorMatrix, SolverConfig, cosine_loss,
                 cost_contraction, dgw_consistency, dgw_consistency_loss,
                 entropy, intra_distance_matrix, intra_vector_matrix,
                 objective_value, solve_dgw, solve_gw, squared_loss)
from .sinkhorn import (SinkhornResult, marginal_residual,
                       project_to_marginals, sinkhorn)
from .tensors import (AttentionVolume, GridCoordinates, ProbabilityVector,
                      Tensor, TensorStats, flatten_index, normalize_attention,
                      tensor_stats, unflatten_index)
from .tensor_io import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "AttentionVolume", "ConfigurationError", "CouplingMatrix",
    "DiscrepancyResult", "DistanceMatrix", "FormatError", "GridCoordinates",
    "IntraVectorMatrix", "NumericalError", "ProbabilityVector",
    "SinkhornResult", "SolverConfig", "Tensor", "TensorStats",
    "ValidationError", "cosine_loss", "cost_contraction", "dgw_consistency",
    "dgw_consistency_loss", "entropy", "flatten_index",
    "intra_distance_matrix", "intra_vector_matrix", "marginal_residual",
    "normalize_attention", "objective_value", "project_to_marginals",
    "read_tensor", "sinkhorn", "solve_dgw", "solve_gw", "squared_loss",
    "tensor_stats", "unflatten_index", "write_tensor",
]
