"""Guided diffusion sampling on Gaussian mixtures with closed-form functionals."""

from .gmm import MixtureModel, symmetric_1d, equidistant_2d, aligned_three
from .dynamics import Schedule, NoiseTape, Trajectory, CoupledRun

__version__ = "0.1.0"

__all__ = [
    "MixtureModel",
    "symmetric_1d",
    "equidistant_2d",
    "aligned_three",
    "Schedule",
    "NoiseTape",
    "Trajectory",
    "CoupledRun",
]
