"""Geometry-grounded novel-view synthesis at desk scale.

Pipeline: procedural meshes are rasterized into G-buffers; pairs of views
yield ground-truth appearance flow, visibility and background masks; a
flow+visibility network warps and composites the input view; a completion
network fills the disoccluded holes, trained with adversarial, feature
matching, perceptual, L1 and TV terms on a small numpy autodiff engine.
"""

__version__ = "0.1.0"

from . import autodiff, dataset, flowmaps, geometry, metrics, models, rasterize
from . import tensorio, training

__all__ = [
    "autodiff", "dataset", "flowmaps", "geometry", "metrics", "models",
    "rasterize", "tensorio", "training", "__version__",
]
