"""Metaball particle characterization and generation.

Models are ``(n, 4)`` float arrays of ``[k, x, y, z]`` rows; voxel grids are
:class:`VoxelGrid` objects whose ``occupancy`` is indexed ``[i, j, k]``.
"""

from ._core import (
    Generator,
    MbfError,
    VoxelGrid,
    blob_dataset,
    distance_transform,
    evaluate,
    fit,
    fixture,
    grid_metrics,
    interpolate,
    latent_add,
    load_grid,
    load_models,
    mesh,
    perturb,
    save_grid,
    save_model,
    shape_metrics,
    train,
    voxelize,
)

__all__ = [
    "Generator",
    "MbfError",
    "VoxelGrid",
    "blob_dataset",
    "distance_transform",
    "evaluate",
    "fit",
    "fixture",
    "grid_metrics",
    "interpolate",
    "latent_add",
    "load_grid",
    "load_models",
    "mesh",
    "perturb",
    "save_grid",
    "save_model",
    "shape_metrics",
    "train",
    "voxelize",
]
