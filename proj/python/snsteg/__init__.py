"""Python bindings for the snsteg steganalysis library."""

from ._snsteg import (
    ConfigError,
    Network,
    ShapeError,
    bn_forward,
    detection_error,
    embed_pm1,
    experiment_defaults,
    experiment_names,
    gradcheck,
    lr_schedule,
    run_experiment,
    sn_forward,
    sn_update_stats,
    synth_cover,
)

__all__ = [
    "ConfigError",
    "Network",
    "ShapeError",
    "bn_forward",
    "detection_error",
    "embed_pm1",
    "experiment_defaults",
    "experiment_names",
    "gradcheck",
    "lr_schedule",
    "run_experiment",
    "sn_forward",
    "sn_update_stats",
    "synth_cover",
]
