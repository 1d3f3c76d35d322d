"""Differentiable brushstroke rendering and gradient-based image fitting."""

from brushfit.geometry import Brushstroke, StrokeSet
from brushfit.losses import ControlPath, LossRefs, LossSpec
from brushfit.optim import FitConfig, FitJob, fit_image
from brushfit.renderer import RenderParams, render, render_dense

__version__ = "0.1.0"

__all__ = [
    "Brushstroke", "StrokeSet", "ControlPath", "LossRefs", "LossSpec",
    "FitConfig", "FitJob", "fit_image", "RenderParams", "render",
    "render_dense", "__version__",
]
