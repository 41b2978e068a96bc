"""Competition-of-experts blind denoising (Python bindings)."""

from ._core import (
    Model,
    add_awgn,
    derive_seed,
    effective_complexity,
    expert_forward_passes,
    expert_param_count,
    gate_param_count,
    jpeg_degrade,
    load_pgm,
    make_eval_grid,
    psnr,
    quant_table,
    save_pgm,
    ssim,
    synth_image,
    train,
    verify,
)

__all__ = [
    "Model",
    "add_awgn",
    "derive_seed",
    "effective_complexity",
    "expert_forward_passes",
    "expert_param_count",
    "gate_param_count",
    "jpeg_degrade",
    "load_pgm",
    "make_eval_grid",
    "psnr",
    "quant_table",
    "save_pgm",
    "ssim",
    "synth_image",
    "train",
    "verify",
]
