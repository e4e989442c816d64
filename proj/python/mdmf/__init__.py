from ._core import (
    Trainer,
    ablate,
    default_config,
    otam,
    preset_grid,
    prompt_distribution,
    sample_frame_indices,
    synth,
)

__all__ = [
    "Trainer",
    "ablate",
    "default_config",
    "otam",
    "preset_grid",
    "prompt_distribution",
    "sample_frame_indices",
    "synth",
]
