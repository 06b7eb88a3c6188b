from ._quantdemoire import (
    Model,
    QuantDemoireError,
    effective_weight_bits,
    fake_quantize,
    frequency_extract,
    gen_pair,
    psnr,
    run_cli,
    smoothing_factors,
    split_weights,
    ssim,
)

__all__ = [
    "Model",
    "QuantDemoireError",
    "effective_weight_bits",
    "fake_quantize",
    "frequency_extract",
    "gen_pair",
    "psnr",
    "run_cli",
    "smoothing_factors",
    "split_weights",
    "ssim",
]
