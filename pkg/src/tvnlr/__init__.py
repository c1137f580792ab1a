"""Compressive-sensing image recovery with total variation plus a
nonlocal-means regularizer."""

from .image_io import Image, crop, load_image, psnr, save_image
from .regularizers import (DifferenceField, NlmParams, NonlocalWeights,
                           apply_D, apply_Dt, apply_W, compute_weights,
                           nonlocal_residual)
from .sensing import (MeasurementOperator, Measurements, adjoint,
                      build_operator, forward, read_measurements, sense,
                      write_measurements)
from .solver import (RecoveryResult, SolverParams, SolverState,
                     augmented_lagrangian_value, default_nlm, optimal_step,
                     recover, recover_image, shrink, u_gradient, u_step,
                     update_multipliers, x_step)

__version__ = "0.1.0"

__all__ = [
    "Image", "crop", "load_image", "psnr", "save_image",
    "DifferenceField", "NlmParams", "NonlocalWeights", "apply_D", "apply_Dt",
    "apply_W", "compute_weights", "nonlocal_residual",
    "MeasurementOperator", "Measurements", "adjoint", "build_operator",
    "forward", "read_measurements", "sense", "write_measurements",
    "RecoveryResult", "SolverParams", "SolverState",
    "augmented_lagrangian_value", "default_nlm", "optimal_step", "recover",
    "recover_image", "shrink", "u_gradient", "u_step", "update_multipliers",
    "x_step",
]
