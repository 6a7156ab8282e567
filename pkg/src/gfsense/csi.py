"""CSI containers, amplitude/phase decomposition, and the CSIB sample file.

A CSI sample is a complex S x T matrix per receiver channel: S subcarriers,
T packets (time). Amplitude is the entrywise magnitude; phase is the
four-quadrant angle in (-pi, pi]. The CSIB v1 binary format stores labeled,
velocity-tagged batches of such samples bit-exactly (float32, little-endian).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptFileError,
    FormatError,
    RejectedInputError,
    ShapeError,
    UnsupportedVersionError,
)

CSIB_MAGIC = b"CSIB"
CSIB_VERSION = 1
# magic(4) + version(1) + S,T,n_channels,n_samples (4 x u32)
_HEADER = struct.Struct("<4sBIIII")


class Velocity(enum.IntEnum):
    """Execution-speed tag carried by every sample."""

    V1 = 0
    V2 = 1
    V3 = 2


class PhaseState(enum.Enum):
    """Calibration stage of a phase matrix; transitions only move forward."""

    RAW = "raw"
    UNWRAPPED = "unwrapped"
    SANITIZED = "sanitized"


def _first_bad_index(values: np.ndarray):
    bad = ~np.isfinite(values)
    if bad.any():
        k, t = np.argwhere(bad)[0]
        return int(k), int(t)
    return None


@dataclass(frozen=True)
class ComplexCsi:
    """Complex channel matrix over S subcarriers (rows) and T packets (cols).

    At least 2 subcarriers are required (the per-packet linear fit downstream
    is underdetermined otherwise) and all entries must be finite.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2:
            raise ShapeError(f"CSI matrix must be 2-D, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ShapeError(f"need at least 2 subcarriers, got {v.shape[0]}")
        if v.shape[1] < 1:
            raise ShapeError("need at least 1 packet")
        bad = _first_bad_index(v.real) or _first_bad_index(v.imag)
        if bad is not None:
            raise RejectedInputError(
                f"non-finite CSI entry at subcarrier k={bad[0]}, packet t={bad[1]}"
            )
        object.__setattr__(self, "values", v)

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    @property
    def n_subcarriers(self) -> int:
        return self.values.shape[0]

    @property
    def n_packets(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AmplitudeMatrix:
    """Entrywise CSI magnitude; nonnegative and finite."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"amplitude matrix must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise RejectedInputError("amplitude matrix contains non-finite entries")
        if (v < 0).any():
            raise RejectedInputError("amplitude matrix contains negative entries")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class PhaseMatrix:
    """CSI phase in radians, tagged with its calibration state.

    Raw phase must lie in (-pi, pi]; unwrapped/sanitized phase is unbounded.
    """

    values: np.ndarray
    state: PhaseState = PhaseState.RAW

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"phase matrix must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise RejectedInputError("phase matrix contains non-finite entries")
        if self.state is PhaseState.RAW and ((v <= -np.pi).any() or (v > np.pi).any()):
            raise RejectedInputError("raw phase entries must lie in (-pi, pi]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class LabeledSample:
    """One labeled, velocity-tagged capture: one ComplexCsi per receiver channel."""

    channels: tuple
    label: int
    velocity: Velocity

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise ShapeError("a sample needs at least one receiver channel")
        shape = chans[0].values.shape
        for c in chans[1:]:
            if c.values.shape != shape:
                raise ShapeError(
                    f"channel shape mismatch: {c.values.shape} vs {shape}"
                )
        if not 0 <= int(self.label) <= 255:
            raise RejectedInputError(f"label {self.label} does not fit in a byte")
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "velocity", Velocity(self.velocity))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def shape(self):
        return self.channels[0].values.shape


def amplitude_of(csi: ComplexCsi) -> AmplitudeMatrix:
    """Entrywise magnitude only (cheaper than a full decomposition)."""
    return AmplitudeMatrix(np.hypot(csi.real, csi.imag))


def raw_phase_of(csi: ComplexCsi) -> PhaseMatrix:
    """Entrywise four-quadrant angle in (-pi, pi]; zero entries get phase 0."""
    phase = np.arctan2(csi.imag, csi.real)
    # arctan2(-0.0, x<0) lands on -pi; fold it onto the closed end of the range
    np.copyto(phase, np.pi, where=(phase == -np.pi))
    np.copyto(phase, 0.0, where=(csi.real == 0.0) & (csi.imag == 0.0))
    return PhaseMatrix(phase, PhaseState.RAW)


def decompose(csi: ComplexCsi) -> tuple[AmplitudeMatrix, PhaseMatrix]:
    """Split complex CSI into (amplitude, raw phase)."""
    return amplitude_of(csi), raw_phase_of(csi)


def recompose(amp: AmplitudeMatrix, phase: PhaseMatrix) -> ComplexCsi:
    """Inverse of decompose: a*cos(phi) + j*a*sin(phi)."""
    if amp.values.shape != phase.values.shape:
        raise ShapeError(
            f"amplitude shape {amp.values.shape} != phase shape {phase.values.shape}"
        )
    v = amp.values * np.cos(phase.values) + 1j * amp.values * np.sin(phase.values)
    return ComplexCsi(v)


def _batch_shape(samples: Sequence[LabeledSample]):
    first = samples[0]
    s, t = first.shape
    n_ch = first.n_channels
    for i, smp in enumerate(samples):
        if smp.shape != (s, t) or smp.n_channels != n_ch:
            raise ShapeError(
                f"sample {i} has shape {smp.shape} x{smp.n_channels}ch, "
                f"expected {(s, t)} x{n_ch}ch"
            )
    return s, t, n_ch


def write_csib(
    samples: Sequence[LabeledSample],
    path,
    shape: tuple[int, int, int] | None = None,
) -> int:
    """Write a CSIB v1 file; returns the byte count.

    All samples must share (S, T, n_channels). For an empty batch the shape
    must be supplied explicitly. Values are stored as little-endian float32,
    subcarrier-major, (real, imag) interleaved; identical input produces a
    byte-identical file.
    """
    samples = list(samples)
    if samples:
        s, t, n_ch = _batch_shape(samples)
    elif shape is not None:
        s, t, n_ch = shape
    else:
        raise ShapeError("empty batch needs an explicit (S, T, n_channels) shape")

    chunks = [_HEADER.pack(CSIB_MAGIC, CSIB_VERSION, s, t, n_ch, len(samples))]
    for smp in samples:
        chunks.append(struct.pack("<BB", smp.label, int(smp.velocity)))
        for chan in smp.channels:
            inter = np.empty((s, t, 2), dtype="<f4")
            inter[:, :, 0] = chan.real
            inter[:, :, 1] = chan.imag
            chunks.append(inter.tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def read_csib(path) -> list[LabeledSample]:
    """Read a CSIB v1 file written by write_csib."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CorruptFileError(
            f"{path}: file too short for a CSIB header "
            f"(expected >= {_HEADER.size} bytes, got {len(blob)})"
        )
    magic, version, s, t, n_ch, n_samples = _HEADER.unpack_from(blob)
    if magic != CSIB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CSIB_MAGIC!r}")
    if version != CSIB_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported CSIB version {version}, expected {CSIB_VERSION}"
        )
    per_sample = 2 + n_ch * s * t * 8
    expected = _HEADER.size + n_samples * per_sample
    if len(blob) != expected:
        raise CorruptFileError(
            f"{path}: payload length mismatch, expected {expected} bytes, "
            f"got {len(blob)}"
        )

    samples = []
    off = _HEADER.size
    for _ in range(n_samples):
        label, vel = struct.unpack_from("<BB", blob, off)
        off += 2
        if vel not in (0, 1, 2):
            raise CorruptFileError(f"{path}: velocity byte {vel} out of range")
        chans = []
        for _ in range(n_ch):
            flat = np.frombuffer(blob, dtype="<f4", count=s * t * 2, offset=off)
            off += s * t * 8
            inter = flat.reshape(s, t, 2).astype(np.float64)
            chans.append(ComplexCsi(inter[:, :, 0] + 1j * inter[:, :, 1]))
        samples.append(LabeledSample(tuple(chans), label, Velocity(vel)))
    return samples
