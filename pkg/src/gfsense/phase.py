"""Phase calibration: temporal unwrapping and per-packet linear detrending.

Raw CSI phase is wrapped to (-pi, pi] and corrupted by per-packet hardware
offsets that are approximately linear across subcarriers. The pipeline here
first unwraps each subcarrier's trajectory along time, then, packet by packet,
fits and removes a slope/offset line over the subcarrier index. The residual
is what feeds the classifier. The four model input layouts built from these
stages live here too.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .csi import (
    AmplitudeMatrix,
    ComplexCsi,
    LabeledSample,
    PhaseMatrix,
    PhaseState,
    amplitude_of,
    raw_phase_of,
)
from .errors import PhaseStateError, ShapeError

_TWO_PI = 2.0 * np.pi


def unwrap_temporal(phase: PhaseMatrix) -> PhaseMatrix:
    """Remove artificial +-2pi jumps along time, per subcarrier.

    Whenever a consecutive-time difference is strictly larger than pi in
    magnitude, a cumulative multiple of 2pi is applied so every output
    difference lands in [-pi, pi]. The first packet is left untouched and the
    output differs from the input by exact integer multiples of 2pi.
    """
    if phase.state is not PhaseState.RAW:
        raise PhaseStateError(
            f"temporal unwrap expects raw phase, got state '{phase.state.value}'"
        )
    v = phase.values
    jumps = np.round(np.diff(v, axis=1) / _TWO_PI)  # whole turns per step
    turns = np.cumsum(jumps, axis=1)
    out = v.copy()
    out[:, 1:] -= _TWO_PI * turns
    return PhaseMatrix(out, PhaseState.UNWRAPPED)


@dataclass(frozen=True)
class TrendParams:
    """Per-packet linear trend: slope (radians per subcarrier index) and offset."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if a.ndim != 1 or a.shape != b.shape:
            raise ShapeError(
                f"alpha/beta must be matching 1-D arrays, got {a.shape} vs {b.shape}"
            )
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ShapeError("trend parameters must be finite")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)


def fit_linear_trend(phase_col: np.ndarray) -> tuple[float, float]:
    """Closed-form least-squares line over subcarrier index k = 1..S.

    Solves the 2x2 normal equations analytically; O(S), no iterative solver.
    Returns (slope, offset).
    """
    col = np.asarray(phase_col, dtype=np.float64)
    if col.ndim != 1:
        raise ShapeError(f"phase column must be 1-D, got shape {col.shape}")
    s = col.shape[0]
    if s < 2:
        raise ShapeError(f"linear trend is underdetermined with S={s} subcarriers")
    k = np.arange(1.0, s + 1.0)
    sum_k = s * (s + 1) / 2.0
    sum_kk = s * (s + 1) * (2 * s + 1) / 6.0
    det = s * sum_kk - sum_k * sum_k
    sum_p = float(col.sum())
    sum_kp = float(k @ col)
    alpha = (s * sum_kp - sum_k * sum_p) / det
    beta = (sum_kk * sum_p - sum_k * sum_kp) / det
    return alpha, beta


def sanitize(phase: PhaseMatrix) -> tuple[PhaseMatrix, TrendParams]:
    """Remove the fitted per-packet line; returns (residual, fitted trends).

    Operates on temporally unwrapped phase only: detrending a still-wrapped
    trajectory would fit the wrap jumps instead of the hardware offsets.
    """
    if phase.state is not PhaseState.UNWRAPPED:
        raise PhaseStateError(
            f"sanitize expects unwrapped phase, got state '{phase.state.value}'"
        )
    v = phase.values
    s, t = v.shape
    k = np.arange(1.0, s + 1.0)
    sum_k = s * (s + 1) / 2.0
    sum_kk = s * (s + 1) * (2 * s + 1) / 6.0
    det = s * sum_kk - sum_k * sum_k

    cols = np.ascontiguousarray(v.T)  # packet-major for the per-packet loop
    alphas = np.empty(t)
    betas = np.empty(t)
    out = np.empty_like(cols)
    for i in range(t):
        col = cols[i]
        sum_p = col.sum()
        sum_kp = k @ col
        a = (s * sum_kp - sum_k * sum_p) / det
        b = (sum_kk * sum_p - sum_k * sum_kp) / det
        alphas[i] = a
        betas[i] = b
        out[i] = col - a * k - b
    return PhaseMatrix(out.T.copy(), PhaseState.SANITIZED), TrendParams(alphas, betas)


class InputConfig(enum.Enum):
    """The four model input layouts (and their per-receiver channel count)."""

    PHASE_ONLY_UNWRAPPED = "phase"
    AMPLITUDE_ONLY = "amp"
    AMP_PLUS_UNWRAPPED = "amp-unw"
    AMP_PLUS_SANITIZED = "amp-san"

    @property
    def channels_per_receiver(self) -> int:
        return 2 if self in (InputConfig.AMP_PLUS_UNWRAPPED,
                             InputConfig.AMP_PLUS_SANITIZED) else 1

    @property
    def uses_amplitude(self) -> bool:
        return self is not InputConfig.PHASE_ONLY_UNWRAPPED

    @property
    def uses_phase(self) -> bool:
        return self is not InputConfig.AMPLITUDE_ONLY

    @classmethod
    def from_name(cls, name: str) -> "InputConfig":
        for cfg in cls:
            if cfg.value == name:
                return cfg
        raise ValueError(
            f"unknown input config '{name}', expected one of "
            f"{[c.value for c in cls]}"
        )


@dataclass(frozen=True)
class ModelInput:
    """Real model tensor, modality x subcarrier x time.

    M = n_channels * channels_per_receiver; within each receiver channel the
    amplitude plane precedes the phase plane.
    """

    tensor: np.ndarray
    config: InputConfig

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float64)
        if t.ndim != 3:
            raise ShapeError(f"model input must be 3-D (M,S,T), got {t.shape}")
        mult = self.config.channels_per_receiver
        if t.shape[0] % mult != 0:
            raise ShapeError(
                f"modality count {t.shape[0]} is not a multiple of the "
                f"config's channel multiplier {mult}"
            )
        object.__setattr__(self, "tensor", t)

    @property
    def n_receivers(self) -> int:
        return self.tensor.shape[0] // self.config.channels_per_receiver


def build_model_input(
    amp: AmplitudeMatrix, raw_phase: PhaseMatrix, config: InputConfig
) -> ModelInput:
    """Assemble one receiver channel's model planes for the given config."""
    if amp.values.shape != raw_phase.values.shape:
        raise ShapeError(
            f"amplitude shape {amp.values.shape} != phase shape "
            f"{raw_phase.values.shape}"
        )
    if raw_phase.state is not PhaseState.RAW:
        raise PhaseStateError(
            f"input builder expects raw phase, got state '{raw_phase.state.value}'"
        )
    planes = []
    if config.uses_amplitude:
        planes.append(amp.values)
    if config.uses_phase:
        unwrapped = unwrap_temporal(raw_phase)
        if config is InputConfig.AMP_PLUS_SANITIZED:
            planes.append(sanitize(unwrapped)[0].values)
        else:
            planes.append(unwrapped.values)
    return ModelInput(np.stack(planes, axis=0), config)


def build_sample_input(sample: LabeledSample, config: InputConfig) -> ModelInput:
    """Preprocess every receiver channel independently and stack the planes."""
    planes = []
    for chan in sample.channels:
        per_channel = _channel_planes(chan, config)
        planes.extend(per_channel)
    return ModelInput(np.stack(planes, axis=0), config)


def _channel_planes(chan: ComplexCsi, config: InputConfig) -> list[np.ndarray]:
    """Only the planes the config needs get computed (benchmark-honest)."""
    planes = []
    if config.uses_amplitude:
        planes.append(amplitude_of(chan).values)
    if config.uses_phase:
        unwrapped = unwrap_temporal(raw_phase_of(chan))
        if config is InputConfig.AMP_PLUS_SANITIZED:
            planes.append(sanitize(unwrapped)[0].values)
        else:
            planes.append(unwrapped.values)
    return planes
