"""Camera-LiDAR fusion segmentation pipeline (C++ core)."""

from ._pmf import (  # noqa: F401
    IGNORE,
    ConfigError,
    DataError,
    ShapeError,
    __version__,
    confidence_map,
    cosine_lr,
    entropy_map,
    focal_loss,
    gradcheck,
    importance_map,
    kl_map,
    lovasz_softmax,
    miou,
    project_perspective,
    project_spherical,
    synth_dataset,
    synth_scene,
    train_synthetic,
)
