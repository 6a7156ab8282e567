"""Wi-Fi CSI sensing toolkit.

Phase calibration (temporal unwrapping + per-packet linear detrending), a
two-stream gated-fusion BiLSTM classifier with a from-scratch training stack,
a seeded synthetic robotic-activity CSI generator, and a leave-one-velocity-out
evaluation harness with a preprocessing micro-benchmark.
"""

from .csi import (
    AmplitudeMatrix,
    ComplexCsi,
    LabeledSample,
    PhaseMatrix,
    PhaseState,
    Velocity,
    decompose,
    read_csib,
    recompose,
    write_csib,
)
from .phase import (
    InputConfig,
    ModelInput,
    TrendParams,
    build_model_input,
    build_sample_input,
    fit_linear_trend,
    sanitize,
    unwrap_temporal,
)
from .rng import SplitMix64

__version__ = "0.1.0"
