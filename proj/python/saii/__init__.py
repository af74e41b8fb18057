"""Seismic impedance inversion with a conditional latent diffusion model."""

from ._core import (
    CheckpointMismatch,
    DimensionError,
    DomainError,
    Error,
    ParameterError,
    ValidationError,
    __version__,
    add_noise,
    alpha_bar,
    ddim_timesteps,
    default_config,
    evaluate,
    experiment_names,
    haar,
    invert,
    lowpass,
    misfit,
    pcc,
    psnr,
    random_layered_model,
    reflectivity,
    resample_moments,
    resolve_config,
    ricker,
    rre,
    run_experiment,
    ssim,
    synthesize,
    tv_invert,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
