"""Denoiser contract, analytic Gaussian oracle, and a tiny trainable net.

Two denoisers back the sampler:

* :class:`GaussianOracleDenoiser` assumes clean data is coordinatewise
  Gaussian N(mu, sigma2) and returns the exact posterior mean

      E[x0 | x_t] = (mu * n^2 + s * sigma2 * x_t) / (s^2 * sigma2 + n^2)

  expressed in any prediction parameterization. It is closed-form, so
  samplers built on it can be checked against the known data law.

* :class:`ToyFactorizedNet` mirrors the factorized spatial/temporal
  layout at desk scale: a frozen per-frame channel-affine map, then a
  depthwise 1D temporal convolution over the frame axis, then a
  temporal self-attention block whose final projection is learned.
  The temporal layers initialize to exact identities (center-tap
  convolution kernels, zeroed attention projection), so a fresh net
  computes the per-frame spatial map and nothing else. Training updates
  only the non-spatial parameters, with hand-written backpropagation.

Every temporal operation acts independently per spatial position, so
outputs for one (h, w) column never depend on another.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .conditioning import ConditioningPack, denoiser_input, make_image_conditioning
from .latent import LatentVideo
from .schedule import NoiseSchedule, PredictionKind, ZeroSignalError


class TrainingDivergenceError(ArithmeticError):
    """Raised when a training step produces a non-finite loss."""


class CondHandle(enum.Enum):
    """Opaque conditioning token standing in for text/image embeddings."""

    ABSENT = 0
    IMAGE_ONLY = 1
    TEXT_ONLY = 2
    FULL = 3


@dataclass(frozen=True)
class DenoiserRequest:
    x_t: LatentVideo
    pack: ConditioningPack
    t: int
    cond_handle: CondHandle

    def __post_init__(self):
        if self.pack.shape != self.x_t.shape:
            raise ValueError(f"pack shape {self.pack.shape} != latent shape {self.x_t.shape}")


def _pair_to_kind(
    x: np.ndarray, x0: np.ndarray, s: float, n: float, kind: PredictionKind, t: int
) -> np.ndarray:
    if kind is PredictionKind.X0:
        return x0
    if n == 0.0:
        raise ZeroSignalError(f"cannot express noise at t={t}: n[t] = 0")
    eps = (x - s * x0) / n
    if kind is PredictionKind.EPS:
        return eps
    return s * eps - n * x0


def gaussian_oracle_denoise(
    req: DenoiserRequest,
    mu: float | np.ndarray,
    sigma2: float | np.ndarray,
    sched: NoiseSchedule,
    out_kind: PredictionKind = PredictionKind.X0,
) -> LatentVideo:
    """Exact posterior-mean denoiser for N(mu, sigma2) data."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    s = sched.signal(req.t)
    n = sched.noise(req.t)
    x = req.x_t.data
    if n == 0.0:
        x0_hat = x / s  # no noise was added, so x_t pins x0 regardless of the prior
    else:
        x0_hat = (mu * n * n + s * sigma2 * x) / (s * s * sigma2 + n * n)
    return LatentVideo(np.broadcast_to(_pair_to_kind(x, x0_hat, s, n, out_kind, req.t), x.shape))


class GaussianOracleDenoiser:
    """Callable denoiser wrapping :func:`gaussian_oracle_denoise`."""

    def __init__(self, mu: float | np.ndarray, sigma2: float | np.ndarray, sched: NoiseSchedule):
        self.mu = mu
        self.sigma2 = sigma2
        self.sched = sched

    def __call__(self, req: DenoiserRequest, out_kind: PredictionKind) -> LatentVideo:
        return gaussian_oracle_denoise(req, self.mu, self.sigma2, self.sched, out_kind)


TEMPORAL_PARAM_NAMES = ("temporal_conv", "attn_proj", "attn_bias", "handle_bias")
_PARAM_ORDER = ("spatial_w", "spatial_b") + TEMPORAL_PARAM_NAMES


@dataclass(frozen=True)
class ToyFactorizedNet:
    """Frozen spatial map + trainable temporal conv/attention, v-space output."""

    spatial_w: np.ndarray      # (C, 2C+1) per-frame channel mix, frozen
    spatial_b: np.ndarray      # (C,) frozen
    temporal_conv: np.ndarray  # (C, K) depthwise kernel over frames
    attn_proj: np.ndarray      # (C, C) final projection of the attention block
    attn_bias: np.ndarray      # (C,)
    handle_bias: np.ndarray    # (len(CondHandle), C) additive conditioning bias
    spatial_frozen: bool = True
    step_count: int = 0

    def __post_init__(self):
        c, cin = self.spatial_w.shape
        if cin != 2 * c + 1:
            raise ValueError(f"spatial map must take 2C+1={2 * c + 1} channels, got {cin}")
        if self.temporal_conv.shape[0] != c or self.temporal_conv.shape[1] % 2 != 1:
            raise ValueError("temporal kernel must be (C, odd_width)")
        if self.attn_proj.shape != (c, c) or self.attn_bias.shape != (c,):
            raise ValueError("attention projection must be (C, C) with a (C,) bias")
        if self.handle_bias.shape != (len(CondHandle), c):
            raise ValueError(f"handle bias must be ({len(CondHandle)}, C)")

    @property
    def channels(self) -> int:
        return self.spatial_w.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.temporal_conv.shape[1]

    @classmethod
    def initialize(
        cls, channels: int, seed: int, kernel_size: int = 3, spatial_scale: float = 1.0
    ) -> "ToyFactorizedNet":
        """Random frozen spatial map; temporal layers start as identities."""
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        rng = np.random.default_rng(seed)
        cin = 2 * channels + 1
        spatial_w = rng.standard_normal((channels, cin)) * (spatial_scale / math.sqrt(cin))
        spatial_b = rng.standard_normal(channels) * 0.1 * spatial_scale
        conv = np.zeros((channels, kernel_size))
        conv[:, kernel_size // 2] = 1.0  # center tap: exact pass-through
        return cls(
            spatial_w=spatial_w,
            spatial_b=spatial_b,
            temporal_conv=conv,
            attn_proj=np.zeros((channels, channels)),
            attn_bias=np.zeros(channels),
            handle_bias=np.zeros((len(CondHandle), channels)),
        )


def toy_spatial_output(net: ToyFactorizedNet, req: DenoiserRequest) -> LatentVideo:
    """The frozen per-frame map alone, without temporal layers."""
    u = denoiser_input(req.x_t, req.pack).data
    z = np.einsum("ci,tihw->tchw", net.spatial_w, u) + net.spatial_b[:, None, None]
    return LatentVideo(z)


def _forward_trace(net: ToyFactorizedNet, req: DenoiserRequest) -> dict:
    """Run the net, keeping intermediates needed by the backward pass."""
    u = denoiser_input(req.x_t, req.pack).data
    c = net.channels
    k = net.temporal_conv
    pad = net.kernel_size // 2
    z = (
        np.einsum("ci,tihw->tchw", net.spatial_w, u)
        + net.spatial_b[:, None, None]
        + net.handle_bias[req.cond_handle.value][:, None, None]
    )
    t_frames = z.shape[0]
    zp = np.zeros((t_frames + 2 * pad,) + z.shape[1:])
    zp[pad : pad + t_frames] = z
    a = np.zeros_like(z)
    for j in range(net.kernel_size):
        a += k[:, j][:, None, None] * zp[j : j + t_frames]
    scale = 1.0 / math.sqrt(c)
    scores = np.einsum("tchw,uchw->tuhw", a, a) * scale
    scores -= scores.max(axis=1, keepdims=True)  # stabilized softmax over u
    attn = np.exp(scores)
    attn /= attn.sum(axis=1, keepdims=True)
    att = np.einsum("tuhw,uchw->tchw", attn, a)
    proj = np.einsum("tdhw,dc->tchw", att, net.attn_proj) + net.attn_bias[:, None, None]
    return {"zp": zp, "a": a, "attn": attn, "att": att, "y": a + proj, "scale": scale, "pad": pad}


def toy_forward(net: ToyFactorizedNet, req: DenoiserRequest) -> LatentVideo:
    """Spatial map per frame, then temporal conv and temporal attention."""
    return LatentVideo(_forward_trace(net, req)["y"])


def _backward_trace(net: ToyFactorizedNet, req: DenoiserRequest, trace: dict, g: np.ndarray) -> dict:
    """Hand-derived gradients of the temporal parameters given dL/dy."""
    a, attn, att, zp = trace["a"], trace["attn"], trace["att"], trace["zp"]
    scale, pad = trace["scale"], trace["pad"]
    t_frames = a.shape[0]

    d_attn_bias = g.sum(axis=(0, 2, 3))
    d_attn_proj = np.einsum("tdhw,tchw->dc", att, g)
    g_att = np.einsum("tchw,dc->tdhw", g, net.attn_proj)

    da = g.copy()
    da += np.einsum("tuhw,tchw->uchw", attn, g_att)
    d_attn = np.einsum("tchw,uchw->tuhw", g_att, a)
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
    da += (
        np.einsum("tuhw,uchw->tchw", d_scores, a)
        + np.einsum("tuhw,tchw->uchw", d_scores, a)
    ) * scale

    d_conv = np.zeros_like(net.temporal_conv)
    dzp = np.zeros_like(zp)
    for j in range(net.kernel_size):
        d_conv[:, j] = np.einsum("tchw,tchw->c", da, zp[j : j + t_frames])
        dzp[j : j + t_frames] += net.temporal_conv[:, j][:, None, None] * da
    dz = dzp[pad : pad + t_frames]

    d_handle = np.zeros_like(net.handle_bias)
    d_handle[req.cond_handle.value] = dz.sum(axis=(0, 2, 3))
    return {"temporal_conv": d_conv, "attn_proj": d_attn_proj, "attn_bias": d_attn_bias, "handle_bias": d_handle}


def toy_loss_and_grads(
    net: ToyFactorizedNet,
    batch: list[LatentVideo],
    sched: NoiseSchedule,
    rng_seed: int,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared v-prediction loss on a noised batch, plus its gradients.

    For each clip: draw a uniform timestep and unit noise, corrupt to
    x_t = s*x0 + n*eps, condition on the clean first frame, and regress
    the net output against the target v = s*eps - n*x0. Deterministic
    given the seed, so finite differences of the loss are well posed.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    rng = np.random.default_rng(rng_seed)
    grads = {name: np.zeros_like(getattr(net, name)) for name in TEMPORAL_PARAM_NAMES}
    total = 0.0
    denom = len(batch) * batch[0].data.size
    # overflow from diverged parameters surfaces as a non-finite loss,
    # which toy_train_step raises on; don't warn along the way
    with np.errstate(over="ignore", invalid="ignore"):
        for clip in batch:
            t = int(rng.integers(1, sched.num_steps + 1))
            eps = rng.standard_normal(clip.shape)
            s, n = sched.signal(t), sched.noise(t)
            x_t = s * clip.data + n * eps
            target = s * eps - n * clip.data
            first = LatentVideo(clip.data[:1])
            pack = make_image_conditioning(first, clip.frames)
            req = DenoiserRequest(LatentVideo(x_t), pack, t, CondHandle.FULL)
            trace = _forward_trace(net, req)
            diff = trace["y"] - target
            total += float((diff * diff).sum())
            sample_grads = _backward_trace(net, req, trace, 2.0 * diff / denom)
            for name in TEMPORAL_PARAM_NAMES:
                grads[name] += sample_grads[name]
    return total / denom, grads


def toy_train_step(
    net: ToyFactorizedNet,
    batch: list[LatentVideo],
    sched: NoiseSchedule,
    rng_seed: int,
    lr: float,
) -> tuple[ToyFactorizedNet, float]:
    """One gradient-descent update of the temporal parameters."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    loss, grads = toy_loss_and_grads(net, batch, sched, rng_seed)
    if not math.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss {loss}")
    updates = {name: getattr(net, name) - lr * grads[name] for name in TEMPORAL_PARAM_NAMES}
    return replace(net, step_count=net.step_count + 1, **updates), loss


class ToyNetDenoiser:
    """Sampler-facing adapter: net emits v, converted to the asked kind."""

    def __init__(self, net: ToyFactorizedNet, sched: NoiseSchedule):
        self.net = net
        self.sched = sched

    def __call__(self, req: DenoiserRequest, out_kind: PredictionKind) -> LatentVideo:
        v = toy_forward(self.net, req)
        if out_kind is PredictionKind.V:
            return v
        s = self.sched.signal(req.t)
        n = self.sched.noise(req.t)
        x = req.x_t.data
        if out_kind is PredictionKind.X0:
            return LatentVideo(s * x - n * v.data)
        return LatentVideo(n * x + s * v.data)


def save_checkpoint(net: ToyFactorizedNet, path: str | os.PathLike) -> None:
    """JSON header line + little-endian float32 parameter blob."""
    header = {
        "channels": net.channels,
        "kernel_size": net.kernel_size,
        "spatial_frozen": net.spatial_frozen,
        "step_count": net.step_count,
        "param_order": list(_PARAM_ORDER),
        "shapes": {name: list(getattr(net, name).shape) for name in _PARAM_ORDER},
    }
    blob = b"".join(getattr(net, name).astype("<f4").tobytes() for name in _PARAM_ORDER)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path: str | os.PathLike) -> ToyFactorizedNet:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:newline].decode("utf-8"))
    params = {}
    offset = newline + 1
    for name in header["param_order"]:
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape))
        chunk = raw[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise ValueError(f"{path}: truncated parameter blob at {name}")
        params[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        offset += 4 * count
    return ToyFactorizedNet(
        spatial_frozen=bool(header["spatial_frozen"]),
        step_count=int(header["step_count"]),
        **params,
    )
