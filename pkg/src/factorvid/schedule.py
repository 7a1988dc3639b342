"""Diffusion noise schedules and prediction-parameterization algebra.

Conventions (variance preserving): a schedule assigns each timestep
t = 1..N a signal coefficient s[t] and noise coefficient n[t] with
s^2 + n^2 = 1, defining the forward corruption

    x_t = s[t] * x0 + n[t] * eps,      eps ~ N(0, I).

s is strictly decreasing and n strictly increasing in t, so
SNR(t) = s[t]^2 / n[t]^2 decays toward the terminal step. A schedule
built from a beta ramp has s[t] = sqrt(prod_{u<=t} (1 - beta_u)).

Zero-terminal rescaling shifts and scales s so that s[N] = 0 exactly
while keeping s[1] fixed, making the final training step carry pure
noise, which matches sampling that starts from a pure Gaussian.

Model outputs come in three parameterizations, interconvertible given
(s, n) and the noised input:

    v   = s * eps - n * x0
    x0  = s * x_t - n * v          eps = n * x_t + s * v
    x0  = (x_t - n * eps) / s      eps = (x_t - s * x0) / n

v stays well defined at s = 0, which is why zero-terminal sampling
uses it; eps-prediction divides by s and is a hard error there.

Coefficients are stored as float64 regardless of latent precision so
cumulative products stay stable over long schedules. Timesteps are
1-based throughout this package.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .latent import LatentVideo

COEF_UNITY_TOL = 1e-12


class ScheduleError(ValueError):
    """Raised for invalid schedule construction or queries."""


class ZeroSignalError(ScheduleError):
    """Raised when a conversion would divide by a zero signal coefficient."""


class PredictionKind(enum.Enum):
    """Which quantity a denoiser output represents."""

    EPS = "eps"
    X0 = "x0"
    V = "v"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep signal/noise coefficients, immutable once built."""

    num_steps: int
    signal_coef: np.ndarray  # s[t] at index t-1
    noise_coef: np.ndarray   # n[t] at index t-1
    zero_terminal: bool
    schedule_kind: str
    beta_start: float
    beta_end: float

    def __post_init__(self):
        s = np.ascontiguousarray(self.signal_coef, dtype=np.float64)
        n = np.ascontiguousarray(self.noise_coef, dtype=np.float64)
        if self.num_steps < 2:
            raise ScheduleError(f"schedule needs at least 2 steps, got {self.num_steps}")
        if s.shape != (self.num_steps,) or n.shape != (self.num_steps,):
            raise ScheduleError("coefficient arrays must have one entry per timestep")
        if np.any(s < 0) or np.any(s > 1) or np.any(n < 0) or np.any(n > 1):
            raise ScheduleError("coefficients must lie in [0, 1]")
        if np.any(np.diff(s) >= 0):
            raise ScheduleError("signal coefficients must be strictly decreasing")
        if np.any(np.diff(n) <= 0):
            raise ScheduleError("noise coefficients must be strictly increasing")
        if np.max(np.abs(s**2 + n**2 - 1.0)) > COEF_UNITY_TOL:
            raise ScheduleError("schedule is not variance preserving (s^2 + n^2 != 1)")
        if self.zero_terminal:
            if s[-1] != 0.0 or n[-1] != 1.0:
                raise ScheduleError("zero-terminal schedule must end at s = 0, n = 1 exactly")
        elif s[-1] <= 0.0:
            raise ScheduleError("non-rescaled schedule must keep positive terminal signal")
        s.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "signal_coef", s)
        object.__setattr__(self, "noise_coef", n)

    def _check_t(self, t: int) -> int:
        if not 1 <= t <= self.num_steps:
            raise ScheduleError(f"timestep {t} outside [1, {self.num_steps}]")
        return t

    def signal(self, t: int) -> float:
        """s[t] for a 1-based timestep."""
        return float(self.signal_coef[self._check_t(t) - 1])

    def noise(self, t: int) -> float:
        """n[t] for a 1-based timestep."""
        return float(self.noise_coef[self._check_t(t) - 1])


def build_quad_schedule(num_steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build the quadratic beta-ramp schedule.

    Per-step betas follow beta_t = (sqrt(beta_start) +
    (t-1)/(N-1) * (sqrt(beta_end) - sqrt(beta_start)))^2, i.e. linear in
    sqrt(beta), then s[t] = sqrt(prod(1 - beta_u)) and n = sqrt(1 - s^2).
    """
    if num_steps < 2:
        raise ScheduleError(f"num_steps must be >= 2, got {num_steps}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ScheduleError(
            f"betas must satisfy 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    sqrt_betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), num_steps, dtype=np.float64)
    betas = sqrt_betas**2
    signal = np.sqrt(np.cumprod(1.0 - betas))
    noise = np.sqrt(1.0 - signal**2)
    return NoiseSchedule(
        num_steps=num_steps,
        signal_coef=signal,
        noise_coef=noise,
        zero_terminal=False,
        schedule_kind="quad",
        beta_start=beta_start,
        beta_end=beta_end,
    )


def rescale_zero_terminal_snr(sched: NoiseSchedule) -> NoiseSchedule:
    """Shift-and-scale the signal coefficients so s[N] = 0 exactly.

    s'[t] = (s[t] - s[N]) * s[1] / (s[1] - s[N]); the first step is a
    fixed point and the terminal step lands on zero bit-exactly.
    """
    if sched.zero_terminal:
        raise ScheduleError("schedule is already zero-terminal; refusing to rescale twice")
    s = sched.signal_coef
    s_first, s_last = s[0], s[-1]
    if s_first <= s_last:
        raise ScheduleError("degenerate schedule: s[1] must exceed s[N] to rescale")
    rescaled = (s - s_last) * (s_first / (s_first - s_last))
    noise = np.sqrt(1.0 - rescaled**2)
    return NoiseSchedule(
        num_steps=sched.num_steps,
        signal_coef=rescaled,
        noise_coef=noise,
        zero_terminal=True,
        schedule_kind=sched.schedule_kind,
        beta_start=sched.beta_start,
        beta_end=sched.beta_end,
    )


def snr(sched: NoiseSchedule, t: int) -> float:
    """Signal-to-noise ratio s[t]^2 / n[t]^2; inf when n[t] = 0."""
    s = sched.signal(t)
    n = sched.noise(t)
    if s == 0.0:
        return 0.0
    if n == 0.0:
        return math.inf
    return (s * s) / (n * n)


def convert_prediction(
    sched: NoiseSchedule,
    t: int,
    x_t: LatentVideo,
    pred: LatentVideo,
    from_kind: PredictionKind,
) -> tuple[LatentVideo, LatentVideo]:
    """Convert a model output into the (x0_hat, eps_hat) pair.

    The reconstruction identity s * x0_hat + n * eps_hat = x_t holds for
    every kind. EPS requires s[t] > 0 and X0 requires n[t] > 0.
    """
    if x_t.shape != pred.shape:
        raise ValueError(f"x_t shape {x_t.shape} != prediction shape {pred.shape}")
    s = sched.signal(t)
    n = sched.noise(t)
    x = x_t.data
    p = pred.data
    if from_kind is PredictionKind.V:
        x0 = s * x - n * p
        eps = n * x + s * p
    elif from_kind is PredictionKind.EPS:
        if s == 0.0:
            raise ZeroSignalError(
                f"eps-prediction is undefined at t={t}: signal coefficient is zero "
                "(zero-terminal step); use v-prediction"
            )
        x0 = (x - n * p) / s
        eps = p
    elif from_kind is PredictionKind.X0:
        if n == 0.0:
            raise ZeroSignalError(f"x0-prediction cannot recover noise at t={t}: n[t] = 0")
        x0 = p
        eps = (x - s * p) / n
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown prediction kind {from_kind!r}")
    return LatentVideo(x0), LatentVideo(eps)


def prediction_from_pair(
    sched: NoiseSchedule, t: int, x0: np.ndarray, eps: np.ndarray, kind: PredictionKind
) -> np.ndarray:
    """Express a (x0, eps) pair in the requested parameterization."""
    if kind is PredictionKind.X0:
        return x0
    if kind is PredictionKind.EPS:
        return eps
    s = sched.signal(t)
    n = sched.noise(t)
    return s * eps - n * x0


def save_schedule(sched: NoiseSchedule, path: str | os.PathLike) -> None:
    """Serialize a schedule to its JSON document."""
    doc = {
        "num_steps": sched.num_steps,
        "beta_start": sched.beta_start,
        "beta_end": sched.beta_end,
        "schedule_kind": sched.schedule_kind,
        "zero_terminal": sched.zero_terminal,
        "signal_coef": sched.signal_coef.tolist(),
        "noise_coef": sched.noise_coef.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_schedule(path: str | os.PathLike) -> NoiseSchedule:
    """Load a schedule from its JSON document."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return NoiseSchedule(
        num_steps=int(doc["num_steps"]),
        signal_coef=np.asarray(doc["signal_coef"], dtype=np.float64),
        noise_coef=np.asarray(doc["noise_coef"], dtype=np.float64),
        zero_terminal=bool(doc["zero_terminal"]),
        schedule_kind=str(doc["schedule_kind"]),
        beta_start=float(doc["beta_start"]),
        beta_end=float(doc["beta_end"]),
    )
