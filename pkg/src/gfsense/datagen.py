"""Seeded synthetic CSI for eight robotic-arm activities at three speeds.

Each class is a closed-form 3-D end-effector trajectory (arc, elbow bend,
rectangle, silence, three straight lines along distinct axes, triangle), all
starting from a common home position. Velocity scales trajectory time, so a
held-out speed is a genuine time warp of the training speeds. The channel
model turns a trajectory into CSI:

  amplitude : per-subcarrier base profile modulated by two subcarrier-
              selective fading patterns driven by the arm's x/y position.
              The z axis is invisible to amplitude by construction, so some
              class pairs can only be separated through phase.
  phase     : a path-length term linear in subcarrier index plus two
              curvature patterns orthogonal to every per-packet line. The
              per-packet detrending step therefore removes hardware
              impairments exactly while the curvature signal passes through.
  impairment: per-packet slope/offset drawn as bounded smooth processes and
              added to the phase before wrapping to (-pi, pi].

The slope process starts at zero and the offset stays inside +-0.9 pi, which
keeps the first packet wrap-free and consecutive packets within pi of each
other, so temporal unwrapping can anchor and track exactly. Generation is
bit-reproducible: every draw comes from SplitMix64 streams derived from
(seed XOR sample index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csi import ComplexCsi, LabeledSample, Velocity, read_csib
from .errors import ConfigError, DataError
from .rng import SplitMix64

ACTIVITY_NAMES = (
    "Arc", "Elbow", "Rectangle", "Silence", "SLFW", "SLRL", "SLUD", "Triangle",
)

# channel-model geometry (workspace units)
_REFLECTOR = np.array([0.8, -0.6, 0.5])
_CHANNEL_SHIFT = np.array([-0.15, 0.25, 0.1])  # per extra receiver
_U_AMP1 = np.array([1.0, 0.35, 0.0])  # z movement is amplitude-invisible
_U_AMP2 = np.array([0.0, 1.0, 0.0])
_U_CURV1 = np.array([0.15, 0.3, 1.0])
_U_CURV2 = np.array([0.9, -0.5, 0.4])
_RHO1, _RHO2 = 1.2, 0.9  # curvature strengths (radians)
_AMP_MOD1, _AMP_MOD2 = 0.30, 0.20


@dataclass(frozen=True)
class SynthConfig:
    subcarriers: int = 64
    packets: int = 128
    n_channels: int = 1
    classes: int = 8
    samples_per_cell: int = 40  # per (class, velocity)
    velocity_factors: tuple = (0.5, 1.0, 2.0)
    noise_std: float = 0.05
    alpha_range: float = 0.2  # impairment slope bound, rad per subcarrier
    beta_range: float = 0.9 * np.pi  # impairment offset bound, rad
    seed: int = 0

    def __post_init__(self):
        if self.subcarriers < 2 or self.packets < 1 or self.n_channels < 1:
            raise ConfigError(
                f"bad dimensions: S={self.subcarriers} T={self.packets} "
                f"channels={self.n_channels}"
            )
        if not 2 <= self.classes <= len(ACTIVITY_NAMES):
            raise ConfigError(
                f"classes must be 2..{len(ACTIVITY_NAMES)}, got {self.classes}"
            )
        if self.samples_per_cell < 1:
            raise ConfigError("samples_per_cell must be >= 1")
        if len(self.velocity_factors) != 3 or not (
            0 < self.velocity_factors[0]
            < self.velocity_factors[1]
            < self.velocity_factors[2]
        ):
            raise ConfigError(
                f"velocity factors must be three increasing positives, got "
                f"{self.velocity_factors}"
            )
        if self.noise_std < 0 or self.alpha_range < 0:
            raise ConfigError("noise_std and alpha_range must be >= 0")
        if not 0 <= self.beta_range <= np.pi:
            raise ConfigError(
                f"beta_range must lie in [0, pi], got {self.beta_range}"
            )

    @property
    def total_samples(self) -> int:
        return self.classes * 3 * self.samples_per_cell


@dataclass(frozen=True)
class SampleTruth:
    """Generator-side ground truth kept for oracle tests."""

    theta: np.ndarray  # clean true phase, (n_channels, S, T)
    amplitude: np.ndarray  # clean amplitude, (n_channels, S, T)
    alpha: np.ndarray  # impairment slopes, (n_channels, T)
    beta: np.ndarray  # impairment offsets, (n_channels, T)


# ---------------------------------------------------------------------------
# trajectory templates


def _polyline(waypoints, closed):
    """Constant-speed walk along a polyline; returns f(u in [0,1]) -> (N,3)."""
    pts = np.asarray(waypoints, dtype=np.float64)
    if closed:
        pts = np.vstack([pts, pts[0]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]

    def walk(u):
        s = np.clip(u, 0.0, 1.0) * total
        j = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        frac = (s - cum[j]) / seg[j]
        return pts[j] + frac[:, None] * (pts[j + 1] - pts[j])

    return walk


def _retrace(u):
    """Triangle wave 0 -> 1 -> 0 over one period (out-and-back paths)."""
    u = np.mod(u, 1.0)
    return np.where(u < 0.5, 2.0 * u, 2.0 * (1.0 - u))


_ELBOW = _polyline([(0, 0, 0), (0.7, 0, 0), (0.7, 0.7, 0)], closed=False)
_RECT = _polyline([(0, 0, 0), (0.8, 0, 0), (0.8, 0.6, 0), (0, 0.6, 0)], closed=True)
_TRIANGLE = _polyline([(0, 0, 0), (0.8, 0, 0), (0.4, 0.7, 0)], closed=True)
_SLFW = _polyline([(0, 0, 0), (0.9, 0, 0)], closed=False)
_SLRL = _polyline([(0, 0, 0), (0, 0.9, 0)], closed=False)
_SLUD = _polyline([(0, 0, 0), (0, 0, 0.9)], closed=False)


def trajectory(class_idx: int, tau) -> np.ndarray:
    """End-effector position for each scaled time in tau; (len(tau), 3)."""
    tau = np.asarray(tau, dtype=np.float64)
    u = np.mod(tau, 1.0)
    if class_idx == 0:  # arc: circle through the home position
        ang = 2.0 * np.pi * u
        return 0.5 * np.stack(
            [np.sin(ang), 1.0 - np.cos(ang), np.zeros_like(ang)], axis=1
        )
    if class_idx == 1:
        return _ELBOW(_retrace(tau))
    if class_idx == 2:
        return _RECT(u)
    if class_idx == 3:  # silence
        return np.zeros((tau.shape[0], 3))
    if class_idx == 4:
        return _SLFW(_retrace(tau))
    if class_idx == 5:
        return _SLRL(_retrace(tau))
    if class_idx == 6:
        return _SLUD(_retrace(tau))
    if class_idx == 7:
        return _TRIANGLE(u)
    raise ConfigError(f"no trajectory template for class {class_idx}")


# ---------------------------------------------------------------------------
# subcarrier profiles


def _subcarrier_profiles(s: int):
    k = np.arange(1.0, s + 1.0)
    base = 1.0 + 0.4 * np.sin(2.0 * np.pi * k / s + 0.8)
    fade1 = np.sin(2.0 * np.pi * 1.5 * k / s + 0.7)
    fade2 = np.cos(2.0 * np.pi * 2.5 * k / s)
    kc = k - k.mean()
    q1 = kc**2 - np.mean(kc**2)
    q1 /= np.max(np.abs(q1))
    q2 = kc**3 - (np.dot(kc**3, kc) / np.dot(kc, kc)) * kc
    q2 /= np.max(np.abs(q2))
    return k, base, fade1, fade2, q1, q2


def _smooth_profile(rng: SplitMix64, t_len: int, pin_zero: bool) -> np.ndarray:
    """Bounded smooth random process on [0, T): |s| <= 1, low frequency.

    With pin_zero the process starts exactly at 0 (pure sine mix), so the
    first packet carries no slope impairment and unwrapping anchors cleanly.
    """
    f = np.array([
        0.5 + 0.5 * rng.uniform(),
        1.0 + 0.5 * rng.uniform(),
        1.5 + 0.5 * rng.uniform(),
    ])
    c = np.array([rng.uniform(low=0.2, high=1.0) for _ in range(3)])
    c /= c.sum()
    ph = np.zeros(3) if pin_zero else rng.uniform(size=3, low=0, high=2 * np.pi)
    t = np.arange(t_len) / max(t_len, 1)
    return (c[:, None] * np.sin(2 * np.pi * f[:, None] * t[None, :] + ph[:, None])).sum(axis=0)


# ---------------------------------------------------------------------------
# generation


def _wrap_phase(x):
    """Map radians onto (-pi, pi]."""
    return np.pi - np.mod(np.pi - x, 2.0 * np.pi)


def _make_sample(cfg: SynthConfig, class_idx: int, vel: Velocity, index: int):
    rng = SplitMix64(cfg.seed ^ index)
    s, t_len = cfg.subcarriers, cfg.packets
    k, base, fade1, fade2, q1, q2 = _subcarrier_profiles(s)
    factor = cfg.velocity_factors[int(vel)]
    tau = factor * np.arange(t_len) / t_len
    pts = trajectory(class_idx, tau)

    chans, thetas, amps, alphas, betas = [], [], [], [], []
    for ch in range(cfg.n_channels):
        reflector = _REFLECTOR + ch * _CHANNEL_SHIFT
        dist = np.linalg.norm(pts - reflector, axis=1) - np.linalg.norm(reflector)
        g1 = pts @ _U_AMP1
        g2 = pts @ _U_AMP2
        c1 = _RHO1 * (pts @ _U_CURV1)
        c2 = _RHO2 * (pts @ _U_CURV2)

        amp_clean = base[:, None] * (
            1.0 + _AMP_MOD1 * fade1[:, None] * g1 + _AMP_MOD2 * fade2[:, None] * g2
        )
        theta_clean = (
            2.0 * np.pi * (k[:, None] / s) * dist
            + q1[:, None] * c1
            + q2[:, None] * c2
        )
        alpha = cfg.alpha_range * _smooth_profile(rng, t_len, pin_zero=True)
        beta = cfg.beta_range * _smooth_profile(rng, t_len, pin_zero=False)
        amp_obs = amp_clean + rng.normal(size=(s, t_len), std=cfg.noise_std)
        amp_obs = np.maximum(amp_obs, 1e-3)
        theta_obs = (
            theta_clean
            + rng.normal(size=(s, t_len), std=cfg.noise_std)
            + k[:, None] * alpha
            + beta
        )
        # float32 storage grid so CSIB round-trips are bit-exact
        re = (amp_obs * np.cos(theta_obs)).astype(np.float32).astype(np.float64)
        im = (amp_obs * np.sin(theta_obs)).astype(np.float32).astype(np.float64)
        chans.append(ComplexCsi(re + 1j * im))
        thetas.append(theta_clean)
        amps.append(amp_clean)
        alphas.append(alpha)
        betas.append(beta)

    sample = LabeledSample(tuple(chans), class_idx, vel)
    truth = SampleTruth(
        np.stack(thetas), np.stack(amps), np.stack(alphas), np.stack(betas)
    )
    return sample, truth


def generate_with_truth(cfg: SynthConfig):
    """All samples in deterministic (class, velocity, repeat) order, plus truth."""
    samples, truths = [], []
    index = 0
    for class_idx in range(cfg.classes):
        for vel in (Velocity.V1, Velocity.V2, Velocity.V3):
            for _ in range(cfg.samples_per_cell):
                sample, truth = _make_sample(cfg, class_idx, vel, index)
                samples.append(sample)
                truths.append(truth)
                index += 1
    return samples, truths


def generate(cfg: SynthConfig) -> list[LabeledSample]:
    return generate_with_truth(cfg)[0]


# ---------------------------------------------------------------------------
# LOVO splitting


@dataclass(frozen=True)
class LovoSplit:
    """Train/test partition holding one velocity out, in input order."""

    held_out: Velocity
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        train = np.asarray(self.train_idx, dtype=np.int64)
        test = np.asarray(self.test_idx, dtype=np.int64)
        if np.intersect1d(train, test).size:
            raise DataError("train and test indices overlap")
        object.__setattr__(self, "train_idx", train)
        object.__setattr__(self, "test_idx", test)


def lovo_split(samples, held_out: Velocity) -> LovoSplit:
    """Deterministic split: test = the held-out velocity, train = the rest."""
    held_out = Velocity(held_out)
    present = {s.velocity for s in samples}
    missing = {v for v in Velocity} - present
    if missing:
        raise DataError(
            f"dataset is missing velocities: {sorted(v.name for v in missing)}"
        )
    idx = np.arange(len(samples))
    is_test = np.array([s.velocity == held_out for s in samples])
    return LovoSplit(held_out, idx[~is_test], idx[is_test])


# ---------------------------------------------------------------------------
# external dataset ingestion


def parse_schema(path) -> dict:
    """Read a key=value descriptor: classes, velocities, optional names."""
    schema = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"bad schema line: {line!r}")
            key, value = line.split("=", 1)
            schema[key.strip()] = value.strip()
    out = {
        "classes": int(schema.get("classes", 0)),
        "velocities": int(schema.get("velocities", 0)),
    }
    if "names" in schema:
        out["names"] = tuple(n.strip() for n in schema["names"].split(","))
    return out


def format_schema(classes: int, velocities: int, names=None) -> str:
    lines = [f"classes={classes}", f"velocities={velocities}"]
    if names:
        lines.append("names=" + ",".join(names))
    return "\n".join(lines) + "\n"


def ingest_external(path, schema) -> list[LabeledSample]:
    """Read a CSIB file and validate labels/velocities against a descriptor.

    `schema` is either a parsed dict or a path to a key=value file.
    """
    if not isinstance(schema, dict):
        schema = parse_schema(schema)
    classes = int(schema["classes"])
    velocities = int(schema.get("velocities", 3))
    names = schema.get("names")
    if names is not None and len(names) != classes:
        raise DataError(
            f"descriptor lists {len(names)} names for {classes} classes"
        )
    if velocities != 3:
        raise DataError(
            f"descriptor declares {velocities} velocities; this toolkit "
            f"models exactly 3"
        )
    samples = read_csib(path)
    for i, sample in enumerate(samples):
        if sample.label >= classes:
            raise DataError(
                f"sample {i}: label {sample.label} out of range for "
                f"{classes} classes"
            )
        if int(sample.velocity) >= velocities:
            raise DataError(
                f"sample {i}: velocity {int(sample.velocity)} out of range"
            )
    return samples
