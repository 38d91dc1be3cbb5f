"""Python access to the matter native core.

Arrays are float32 numpy arrays in band-first layout: images are
``[bands, height, width]`` and patch batches ``[n, bands, h, w]``.
Configuration is passed as the same ``key = value`` text the CLI reads,
optionally with a dict of dotted overrides.
"""

from ._matter import (
    Checkpoint,
    ConfigError,
    DataError,
    NumericalError,
    ShapeError,
    default_config,
    f1_score,
    load_checkpoint,
    nce_loss,
    normalize_config,
    otsu,
    pretrain,
    prf1,
    read_raster,
    refine,
    set_threads,
    synth,
    tern_kernel,
    word_map_purity,
    write_raster,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "DataError",
    "NumericalError",
    "ShapeError",
    "default_config",
    "f1_score",
    "load_checkpoint",
    "nce_loss",
    "normalize_config",
    "otsu",
    "pretrain",
    "prf1",
    "read_raster",
    "refine",
    "set_threads",
    "synth",
    "tern_kernel",
    "word_map_purity",
    "write_raster",
]
