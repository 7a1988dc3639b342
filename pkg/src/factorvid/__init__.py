"""Factorized text-to-video diffusion engine, exercised at desk scale.

Numerical machinery for two-stage (image, then video) latent diffusion:
noise schedules with zero-terminal rescaling, prediction-kind algebra,
deterministic DDIM sampling, masked frame conditioning and frame
interpolation packing, dual-conditioning guidance composition,
block-matching motion curation, and justified-vote evaluation
analytics. Heavy learned components (autoencoder, text encoders, the
production denoiser) are abstracted behind small contracts so every
numeric path can be verified against closed-form oracles.
"""

from .conditioning import (
    ConditioningPack,
    PackKind,
    denoiser_input,
    interleave_for_interpolation,
    interleave_indices,
    make_empty_conditioning,
    make_image_conditioning,
    make_past_frames_conditioning,
    noise_augment,
    stitch_interpolated_halves,
)
from .curation import (
    CurationSummary,
    FrameSequence,
    IncompleteEntryError,
    ManifestEntry,
    hq_filter,
    motion_score,
    run_curation,
)
from .denoiser import (
    CondHandle,
    DenoiserRequest,
    GaussianOracleDenoiser,
    ToyFactorizedNet,
    ToyNetDenoiser,
    gaussian_oracle_denoise,
    toy_forward,
    toy_train_step,
)
from .guidance import GuidanceSpec, GuidanceStrategy, compose_guided, default_image_spec, default_video_spec
from .juice_eval import (
    AgreementClass,
    VoteRecord,
    classify_agreement,
    fleiss_kappa,
    majority_winner,
    reason_distribution,
    simulate_kappa_curve,
)
from .latent import LatentVideo, load_latent, save_latent
from .sampler import (
    SamplerConfig,
    TimestepSelection,
    ddim_sample,
    ddim_sample_batch,
    extend_video,
    generate_factorized,
)
from .schedule import (
    NoiseSchedule,
    PredictionKind,
    ScheduleError,
    ZeroSignalError,
    build_quad_schedule,
    convert_prediction,
    rescale_zero_terminal_snr,
    snr,
)

__version__ = "0.1.0"

__all__ = [
    "AgreementClass",
    "CondHandle",
    "ConditioningPack",
    "CurationSummary",
    "DenoiserRequest",
    "FrameSequence",
    "GaussianOracleDenoiser",
    "GuidanceSpec",
    "GuidanceStrategy",
    "IncompleteEntryError",
    "LatentVideo",
    "ManifestEntry",
    "NoiseSchedule",
    "PackKind",
    "PredictionKind",
    "SamplerConfig",
    "ScheduleError",
    "TimestepSelection",
    "ToyFactorizedNet",
    "ToyNetDenoiser",
    "VoteRecord",
    "ZeroSignalError",
    "build_quad_schedule",
    "classify_agreement",
    "compose_guided",
    "convert_prediction",
    "ddim_sample",
    "ddim_sample_batch",
    "default_image_spec",
    "default_video_spec",
    "denoiser_input",
    "extend_video",
    "fleiss_kappa",
    "gaussian_oracle_denoise",
    "generate_factorized",
    "hq_filter",
    "interleave_for_interpolation",
    "interleave_indices",
    "load_latent",
    "majority_winner",
    "make_empty_conditioning",
    "make_image_conditioning",
    "make_past_frames_conditioning",
    "motion_score",
    "noise_augment",
    "rescale_zero_terminal_snr",
    "reason_distribution",
    "run_curation",
    "save_latent",
    "simulate_kappa_curve",
    "snr",
    "stitch_interpolated_halves",
    "toy_forward",
    "toy_train_step",
]
