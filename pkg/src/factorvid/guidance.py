"""Classifier-free guidance composition for dual image/text conditioning.

Four denoiser branches can enter the combination, keyed by which
conditioning signals were active: unconditioned, image-only, text-only,
and full (image + text). Each strategy is an affine combination of
three branches:

    IMAGE_FIRST: u + wi*(i - u) + wp*(f - i)
    TEXT_FIRST:  u + wp*(t - u) + wi*(f - t)
    ADDITIVE:    u + wi*(i - u) + wp*(t - u)
    RESIDUAL:    f + (wi-1)*(f - t) + (wp-1)*(f - i)

written with u/i/t/f for the four branches and (wi, wp) for the image
and text weights. IMAGE_FIRST and TEXT_FIRST return the full branch at
weights (1, 1) and the unconditioned branch at (0, 0); the sums are
evaluated in collected-coefficient form so those identities hold
bit-exactly, and branches whose collected coefficient is exactly zero
are not required (the sampler skips evaluating them).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .latent import LatentVideo

DEFAULT_VIDEO_IMAGE_WEIGHT = 2.0
DEFAULT_VIDEO_TEXT_WEIGHT = 7.5
DEFAULT_IMAGE_TEXT_WEIGHT = 7.5


class GuidanceStrategy(enum.Enum):
    IMAGE_FIRST = "image_first"
    TEXT_FIRST = "text_first"
    ADDITIVE = "additive"
    RESIDUAL = "residual"


@dataclass(frozen=True)
class GuidanceSpec:
    """Image/text guidance weights plus the composition strategy."""

    w_image: float
    w_text: float
    strategy: GuidanceStrategy

    def __post_init__(self):
        for name, w in (("w_image", self.w_image), ("w_text", self.w_text)):
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {w}")

    def to_json_dict(self) -> dict:
        return {"w_image": self.w_image, "w_text": self.w_text, "strategy": self.strategy.value}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GuidanceSpec":
        return cls(
            w_image=float(doc["w_image"]),
            w_text=float(doc["w_text"]),
            strategy=GuidanceStrategy(doc["strategy"]),
        )


def default_video_spec() -> GuidanceSpec:
    """Default dual-conditioning weights for video sampling."""
    return GuidanceSpec(DEFAULT_VIDEO_IMAGE_WEIGHT, DEFAULT_VIDEO_TEXT_WEIGHT, GuidanceStrategy.IMAGE_FIRST)


def default_image_spec() -> GuidanceSpec:
    """Single-conditioning analogue used for the text-to-image stage.

    TEXT_FIRST with w_image = 0 reduces to u + w*(t - u): plain
    single-signal guidance at weight 7.5 with no image branch.
    """
    return GuidanceSpec(0.0, DEFAULT_IMAGE_TEXT_WEIGHT, GuidanceStrategy.TEXT_FIRST)


def branch_coefficients(spec: GuidanceSpec) -> dict[str, float]:
    """Collected affine coefficient of each branch under the strategy."""
    wi, wp = spec.w_image, spec.w_text
    if spec.strategy is GuidanceStrategy.IMAGE_FIRST:
        return {"uncond": 1.0 - wi, "image": wi - wp, "text": 0.0, "full": wp}
    if spec.strategy is GuidanceStrategy.TEXT_FIRST:
        return {"uncond": 1.0 - wp, "image": 0.0, "text": wp - wi, "full": wi}
    if spec.strategy is GuidanceStrategy.ADDITIVE:
        return {"uncond": 1.0 - wi - wp, "image": wi, "text": wp, "full": 0.0}
    # RESIDUAL: f*(wi + wp - 1) - (wi-1)*t - (wp-1)*i
    return {"uncond": 0.0, "image": 1.0 - wp, "text": 1.0 - wi, "full": wi + wp - 1.0}


def compose_guided(
    spec: GuidanceSpec,
    x_uncond: LatentVideo | None,
    x_image: LatentVideo | None,
    x_text_only: LatentVideo | None,
    x_full: LatentVideo | None,
) -> LatentVideo:
    """Combine denoiser branches into the guided prediction.

    Branches whose collected coefficient is zero may be passed as None;
    a branch the strategy needs with nonzero weight must be present.
    """
    coefs = branch_coefficients(spec)
    branches = {"uncond": x_uncond, "image": x_image, "text": x_text_only, "full": x_full}
    shape = None
    for name, latent in branches.items():
        if latent is None:
            if coefs[name] != 0.0:
                raise ValueError(f"strategy {spec.strategy.value} needs the {name} branch")
            continue
        if shape is None:
            shape = latent.shape
        elif latent.shape != shape:
            raise ValueError(f"branch {name} shape {latent.shape} != {shape}")
    if shape is None:
        raise ValueError("no guidance branches provided")
    out = np.zeros(shape, dtype=np.float64)
    for name, latent in branches.items():
        coef = coefs[name]
        if coef != 0.0:
            out += coef * latent.data
    return LatentVideo(out)
