"""Temporal flow matching: sequence-to-image prediction by transporting context frames to the next one."""

from ._tfm import (
    config_hash,
    default_config,
    default_dynamics_spec,
    evaluate,
    fm_loss,
    generate,
    generate_cohort,
    integrate,
    interpolate,
    last_context_image,
    mse,
    nrmse,
    paradox_report,
    paradox_table,
    psnr,
    sparsity_fill,
    ssim,
    train,
    true_velocity,
)

__all__ = [
    "config_hash",
    "default_config",
    "default_dynamics_spec",
    "evaluate",
    "fm_loss",
    "generate",
    "generate_cohort",
    "integrate",
    "interpolate",
    "last_context_image",
    "mse",
    "nrmse",
    "paradox_report",
    "paradox_table",
    "psnr",
    "sparsity_fill",
    "ssim",
    "train",
    "true_velocity",
]
