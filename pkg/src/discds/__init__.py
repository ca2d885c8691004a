"""Conditional diffusion sampling toolkit with diversity- and
separability-aware guidance, verified on analytic Gaussian-mixture worlds,
plus the long-tail synthetic-augmentation training pipeline built on it."""

__version__ = "0.1.0"

from .guidance import AnnealConfig, GuidancePolicy
from .sampler import SamplerConfig, sample
from .schedule import NoiseSchedule, make_schedule
from .world import Condition, GaussianMixtureWorld, build_longtail, load_preset

__all__ = [
    "AnnealConfig",
    "Condition",
    "GaussianMixtureWorld",
    "GuidancePolicy",
    "NoiseSchedule",
    "SamplerConfig",
    "build_longtail",
    "load_preset",
    "make_schedule",
    "sample",
    "__version__",
]
