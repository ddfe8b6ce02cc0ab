"""Schrödinger-bridge speech-enhancement sampling toolkit.

Closed-form noise schedules, bridge marginals and samplers, diffusion and
flow-matching baselines, the spectral/phase/adversarial loss suite,
spectrogram rank analysis, and a linear-Gaussian toy world whose exact
posterior stands in for a trained denoiser.
"""

from sbse.schedules import ScheduleParams, ScheduleValues, evaluate

__all__ = ["ScheduleParams", "ScheduleValues", "evaluate"]
__version__ = "0.1.0"
