"""U-Net with Swin Filtering Blocks for cardiac segmentation (C++ core)."""

from ._sfbnet import (
    ConfigError,
    DataError,
    NumericalError,
    Predictor,
    ShapeError,
    bench,
    count_flops,
    count_parameters,
    dice_score,
    evaluate,
    gradcheck,
    largest_component_filter,
    load_config,
    load_split,
    phantom,
    preset,
    train,
    write_phantoms,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "Predictor",
    "ShapeError",
    "bench",
    "count_flops",
    "count_parameters",
    "dice_score",
    "evaluate",
    "gradcheck",
    "largest_component_filter",
    "load_config",
    "load_split",
    "phantom",
    "preset",
    "train",
    "write_phantoms",
]
