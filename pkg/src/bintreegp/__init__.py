"""Gaussian process regression with the binary tree kernel.

The kernel between two bit-encoded points is a weighted count of their
shared leading bits. Kernel matrices are stored as sums of sparse rank-one
matrices over nested prefix partitions, giving O((n + m) q log(n + m))
fitting and prediction with exact (up to floating point) linear algebra.
"""

from .encoding import (
    EncodingConfig,
    build_partitions,
    default_precision,
    encode,
    fit_encoding,
    uniqueness_stats,
)
from .estimators import (
    BinaryTreeGPEnsembleRegressor,
    BinaryTreeGPRegressor,
    BitStringEncoder,
)
from .gp import (
    EnsembleModel,
    PredictiveOutput,
    TrainedModel,
    ensemble_predict,
    gaussian_nll,
    marginal_nll,
    nll_grad_w,
    predict,
    train,
    train_ensemble,
)
from .kernel import (
    KernelParams,
    assemble_joint,
    assemble_kernel,
    grad_w_to_phi,
    kernel_value,
    params_from_phi,
    phi_from_order_and_weights,
)
from .model_io import load_model, save_model
from .sros import (
    IndefiniteOperatorError,
    InverseResult,
    NotNestedError,
    invert,
    invert_shared_u,
    lin_transform,
    refines,
    to_dense,
    to_dense_symmetric,
    trace_part,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryTreeGPEnsembleRegressor",
    "BinaryTreeGPRegressor",
    "BitStringEncoder",
    "EncodingConfig",
    "EnsembleModel",
    "IndefiniteOperatorError",
    "InverseResult",
    "KernelParams",
    "NotNestedError",
    "PredictiveOutput",
    "TrainedModel",
    "assemble_joint",
    "assemble_kernel",
    "build_partitions",
    "default_precision",
    "encode",
    "ensemble_predict",
    "fit_encoding",
    "gaussian_nll",
    "grad_w_to_phi",
    "invert",
    "invert_shared_u",
    "kernel_value",
    "lin_transform",
    "load_model",
    "marginal_nll",
    "nll_grad_w",
    "params_from_phi",
    "phi_from_order_and_weights",
    "predict",
    "refines",
    "save_model",
    "to_dense",
    "to_dense_symmetric",
    "trace_part",
    "train",
    "train_ensemble",
    "uniqueness_stats",
]
