"""Event-based shape from polarization with spiking UNets."""

from esfp._core import (
    Scene,
    SpikingUnet,
    angular_metrics,
    build_cvgr,
    build_cvgri,
    build_voxel_grid,
    cosine_loss,
    diffuse_dolp,
    energy_from_counts,
    load_checkpoint,
    normal_from_angles,
    normalize_prediction,
    polarized_intensity,
    profile,
    read_pevt,
    simulate,
    train,
    __version__,
)

__all__ = [
    "Scene",
    "SpikingUnet",
    "angular_metrics",
    "build_cvgr",
    "build_cvgri",
    "build_voxel_grid",
    "cosine_loss",
    "diffuse_dolp",
    "energy_from_counts",
    "load_checkpoint",
    "normal_from_angles",
    "normalize_prediction",
    "polarized_intensity",
    "profile",
    "read_pevt",
    "simulate",
    "train",
    "__version__",
]
