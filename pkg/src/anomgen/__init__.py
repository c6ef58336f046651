"""Few-shot anomaly synthesis and localization on a toy diffusion model."""

__version__ = "0.1.0"
