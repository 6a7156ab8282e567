"""Two-stream gated-fusion BiLSTM classifier and its single-stream baseline.

The fusion model normalizes amplitude and phase per time step, encodes each
stream with its own BiLSTM, projects both to width h, blends them per time
step with a learned sigmoid gate, and finishes with a two-layer BiLSTM stack,
temporal mean pooling, and a two-layer head. The baseline flattens all input
planes into one feature vector per time step and runs a three-layer BiLSTM
into the same head; it is the no-fusion comparison anchor.

Training is mini-batch AdamW with early stopping on validation accuracy.
Everything random (init, shuffling, dropout, stream masking) comes from
SplitMix64 streams, so trajectories are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, ModeError, ShapeError, TrainingDivergenceError
from .nn import autodiff as ad
from .nn.autodiff import GradTape, Var, backward
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import AdamW
from .phase import InputConfig, ModelInput
from .rng import SplitMix64

_LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# parameters


def _init_lstm_tensors(out, prefix, d, h, rng, dtype):
    bound = 1.0 / np.sqrt(h)
    out[f"{prefix}.wx"] = rng.uniform(size=(4 * h, d), low=-bound, high=bound).astype(dtype)
    out[f"{prefix}.wh"] = rng.uniform(size=(4 * h, h), low=-bound, high=bound).astype(dtype)
    b = np.zeros(4 * h, dtype=dtype)
    b[h : 2 * h] = 1.0  # forget-gate bias
    out[f"{prefix}.b"] = b


def _init_linear(out, prefix, n_out, n_in, h, rng, dtype):
    bound = 1.0 / np.sqrt(h)
    out[f"{prefix}.w"] = rng.uniform(size=(n_out, n_in), low=-bound, high=bound).astype(dtype)
    out[f"{prefix}.b"] = np.zeros(n_out, dtype=dtype)


@dataclass
class GfBilstmParams:
    """All learnable tensors of the gated-fusion model, by name."""

    hidden: int
    classes: int
    stream_features: int  # subcarriers x receiver channels, per stream
    tensors: dict = field(repr=False)
    receivers: int = 1  # stream LN normalizes each receiver block separately

    def clone(self) -> "GfBilstmParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return self.tensors["gate.w"].dtype


@dataclass
class BaselineParams:
    """Single-stream BiLSTM classifier tensors."""

    hidden: int
    classes: int
    features: int  # subcarriers x all input planes
    tensors: dict = field(repr=False)
    planes: int = 1  # LN normalizes each input plane separately

    def clone(self) -> "BaselineParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return self.tensors["head.w1"].dtype


def init_gf_params(
    stream_features: int,
    hidden: int = 128,
    classes: int = 8,
    seed: int = 0,
    dtype=np.float64,
    receivers: int = 1,
) -> GfBilstmParams:
    if hidden < 1 or classes < 2 or stream_features < 1:
        raise ConfigError(
            f"bad model dims: hidden={hidden} classes={classes} "
            f"features={stream_features}"
        )
    rng = SplitMix64(seed)
    h, f = hidden, stream_features
    t: dict[str, np.ndarray] = {}
    for stream in ("amp", "phase"):
        t[f"ln_{stream}.gamma"] = np.ones(f, dtype=dtype)
        t[f"ln_{stream}.beta"] = np.zeros(f, dtype=dtype)
    for stream in ("amp", "phase"):
        _init_lstm_tensors(t, f"stream_{stream}.f", f, h, rng, dtype)
        _init_lstm_tensors(t, f"stream_{stream}.r", f, h, rng, dtype)
    _init_linear(t, "proj_amp", h, 2 * h, h, rng, dtype)
    _init_linear(t, "proj_phase", h, 2 * h, h, rng, dtype)
    _init_linear(t, "gate", h, 2 * h, h, rng, dtype)
    _init_lstm_tensors(t, "post1.f", h, h, rng, dtype)
    _init_lstm_tensors(t, "post1.r", h, h, rng, dtype)
    _init_lstm_tensors(t, "post2.f", 2 * h, h, rng, dtype)
    _init_lstm_tensors(t, "post2.r", 2 * h, h, rng, dtype)
    _init_linear(t, "head.w1_", 2 * h, 2 * h, h, rng, dtype)
    _init_linear(t, "head.w2_", classes, 2 * h, h, rng, dtype)
    # flatten the head names to the documented layout
    t["head.w1"], t["head.b1"] = t.pop("head.w1_.w"), t.pop("head.w1_.b")
    t["head.w2"], t["head.b2"] = t.pop("head.w2_.w"), t.pop("head.w2_.b")
    return GfBilstmParams(hidden, classes, stream_features, t, receivers)


def init_baseline_params(
    features: int,
    hidden: int = 128,
    classes: int = 8,
    seed: int = 0,
    dtype=np.float64,
    planes: int = 1,
) -> BaselineParams:
    if hidden < 1 or classes < 2 or features < 1:
        raise ConfigError(
            f"bad model dims: hidden={hidden} classes={classes} features={features}"
        )
    rng = SplitMix64(seed)
    h = hidden
    t: dict[str, np.ndarray] = {}
    t["ln.gamma"] = np.ones(features, dtype=dtype)
    t["ln.beta"] = np.zeros(features, dtype=dtype)
    _init_lstm_tensors(t, "l1.f", features, h, rng, dtype)
    _init_lstm_tensors(t, "l1.r", features, h, rng, dtype)
    for layer in ("l2", "l3"):
        _init_lstm_tensors(t, f"{layer}.f", 2 * h, h, rng, dtype)
        _init_lstm_tensors(t, f"{layer}.r", 2 * h, h, rng, dtype)
    _init_linear(t, "head.w1_", 2 * h, 2 * h, h, rng, dtype)
    _init_linear(t, "head.w2_", classes, 2 * h, h, rng, dtype)
    t["head.w1"], t["head.b1"] = t.pop("head.w1_.w"), t.pop("head.w1_.b")
    t["head.w2"], t["head.b2"] = t.pop("head.w2_.w"), t.pop("head.w2_.b")
    return BaselineParams(hidden, classes, features, t, planes)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class SequenceDataset:
    """Prepared model tensors: one (N, T, F) array per stream plus labels."""

    inputs: tuple
    labels: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    def take(self, idx) -> "SequenceDataset":
        return SequenceDataset(
            tuple(a[idx] for a in self.inputs), self.labels[idx]
        )


def _time_major(planes: np.ndarray) -> np.ndarray:
    """(P, S, T) planes -> (T, P*S) features."""
    p, s, t = planes.shape
    return np.ascontiguousarray(planes.reshape(p * s, t).T)


def gf_streams(mi: ModelInput) -> tuple[np.ndarray, np.ndarray]:
    """Split a two-plane-per-receiver input into (amp, phase) (T, F) arrays."""
    if mi.config.channels_per_receiver != 2:
        raise ConfigError(
            f"the fusion model needs both amplitude and phase planes; input "
            f"config '{mi.config.value}' provides only one"
        )
    return _time_major(mi.tensor[0::2]), _time_major(mi.tensor[1::2])


def flat_features(mi: ModelInput) -> np.ndarray:
    """All planes flattened per time step, (T, M*S)."""
    return _time_major(mi.tensor)


def gf_dataset(model_inputs, labels) -> SequenceDataset:
    pairs = [gf_streams(mi) for mi in model_inputs]
    return SequenceDataset(
        (np.stack([a for a, _ in pairs]), np.stack([p for _, p in pairs])),
        np.asarray(labels, dtype=np.int64),
    )


def baseline_dataset(model_inputs, labels) -> SequenceDataset:
    return SequenceDataset(
        (np.stack([flat_features(mi) for mi in model_inputs]),),
        np.asarray(labels, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# modality dropout


def _modality_decisions(n: int, p: float, rng: SplitMix64):
    """Per-sample choice: None, 'amp', or 'phase'; at most one stream masked."""
    record = []
    for _ in range(n):
        if rng.uniform() < p:
            record.append("amp" if rng.uniform() < 0.5 else "phase")
        else:
            record.append(None)
    return record


def apply_modality_dropout(amp, phase, p, rng, train_mode=True):
    """Zero one whole stream per sample with probability p (training only).

    Masks are constant across time and features; the two streams are never
    masked together. Returns (amp, phase, record) where record[i] is None,
    'amp', or 'phase'.
    """
    if not train_mode:
        raise ModeError("modality dropout is a training-only operation")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"modality dropout probability {p} outside [0, 1]")
    amp = np.asarray(amp)
    phase = np.asarray(phase)
    single = amp.ndim == 2
    if single:
        amp, phase = amp[None], phase[None]
    if amp.shape != phase.shape:
        raise ShapeError(f"stream shapes differ: {amp.shape} vs {phase.shape}")
    record = _modality_decisions(amp.shape[0], p, rng)
    amp = amp.copy()
    phase = phase.copy()
    for i, choice in enumerate(record):
        if choice == "amp":
            amp[i] = 0.0
        elif choice == "phase":
            phase[i] = 0.0
    if single:
        return amp[0], phase[0], record[0]
    return amp, phase, record


# ---------------------------------------------------------------------------
# forward graphs


def _wrap(tensors, tape):
    if tape is None:
        return {k: Var(v) for k, v in tensors.items()}
    return {k: tape.watch(v, k) for k, v in tensors.items()}


def _as_input(arr, tape, dtype):
    arr = np.asarray(arr, dtype=dtype)
    return Var(arr) if tape is None else tape.const(arr)


def _dropout(x, p, rng, tape):
    if p <= 0.0:
        return x
    keep = (rng.uniform(size=x.value.shape) >= p).astype(x.value.dtype)
    return ad.scale(x, keep / (1.0 - p))


def _lstm_args(pv, prefix):
    return (pv[f"{prefix}.wx"], pv[f"{prefix}.wh"], pv[f"{prefix}.b"])


def _gf_logits(
    params: GfBilstmParams,
    amp,
    phase,
    tape=None,
    train_mode=False,
    rng=None,
    dropout=0.0,
    modality_dropout=0.0,
    collect=None,
):
    """Batched fusion forward; amp/phase are (B, T, F). Returns logits Var."""
    if amp.shape != phase.shape:
        raise ShapeError(f"stream shapes differ: {amp.shape} vs {phase.shape}")
    if amp.shape[-1] != params.stream_features:
        raise ShapeError(
            f"stream feature width {amp.shape[-1]} != model width "
            f"{params.stream_features}"
        )
    if train_mode and rng is None:
        raise ModeError("training-mode forward needs an rng for dropout")
    pv = _wrap(params.tensors, tape)
    xa = _as_input(amp, tape, params.dtype)
    xp = _as_input(phase, tape, params.dtype)

    xa = ad.layer_norm(xa, pv["ln_amp.gamma"], pv["ln_amp.beta"], _LN_EPS,
                       groups=params.receivers)
    xp = ad.layer_norm(xp, pv["ln_phase.gamma"], pv["ln_phase.beta"], _LN_EPS,
                       groups=params.receivers)

    if train_mode and modality_dropout > 0.0:
        record = _modality_decisions(amp.shape[0], modality_dropout, rng)
        dt = params.dtype
        amp_keep = np.array([0.0 if r == "amp" else 1.0 for r in record], dtype=dt)
        ph_keep = np.array([0.0 if r == "phase" else 1.0 for r in record], dtype=dt)
        xa = ad.scale(xa, amp_keep[:, None, None])
        xp = ad.scale(xp, ph_keep[:, None, None])

    enc_a = ad.bilstm(xa, _lstm_args(pv, "stream_amp.f"), _lstm_args(pv, "stream_amp.r"))
    enc_p = ad.bilstm(xp, _lstm_args(pv, "stream_phase.f"), _lstm_args(pv, "stream_phase.r"))
    if train_mode:
        enc_a = _dropout(enc_a, dropout, rng, tape)
        enc_p = _dropout(enc_p, dropout, rng, tape)

    ua = ad.relu(ad.affine(enc_a, pv["proj_amp.w"], pv["proj_amp.b"]))
    up = ad.relu(ad.affine(enc_p, pv["proj_phase.w"], pv["proj_phase.b"]))

    gate = ad.sigmoid(ad.affine(ad.concat_last(ua, up), pv["gate.w"], pv["gate.b"]))
    ones = Var(np.ones_like(gate.value)) if tape is None else tape.const(
        np.ones_like(gate.value)
    )
    fused = ad.add(ad.mul(gate, ua), ad.mul(ad.sub(ones, gate), up))

    if collect is not None:
        collect["u_amp"] = ua.value
        collect["u_phase"] = up.value
        collect["gate"] = gate.value
        collect["fused"] = fused.value

    deep = ad.bilstm(fused, _lstm_args(pv, "post1.f"), _lstm_args(pv, "post1.r"))
    if train_mode:
        deep = _dropout(deep, dropout, rng, tape)
    deep = ad.bilstm(deep, _lstm_args(pv, "post2.f"), _lstm_args(pv, "post2.r"))

    pooled = ad.mean_over_time(deep)
    q = ad.relu(ad.affine(pooled, pv["head.w1"], pv["head.b1"]))
    if train_mode:
        q = _dropout(q, dropout, rng, tape)
    return ad.affine(q, pv["head.w2"], pv["head.b2"])


def _baseline_logits(
    params: BaselineParams,
    x,
    tape=None,
    train_mode=False,
    rng=None,
    dropout=0.0,
):
    """Batched single-stream forward; x is (B, T, F)."""
    if x.shape[-1] != params.features:
        raise ShapeError(
            f"feature width {x.shape[-1]} != model width {params.features}"
        )
    if train_mode and rng is None:
        raise ModeError("training-mode forward needs an rng for dropout")
    pv = _wrap(params.tensors, tape)
    h = _as_input(x, tape, params.dtype)
    h = ad.layer_norm(h, pv["ln.gamma"], pv["ln.beta"], _LN_EPS,
                      groups=params.planes)
    for layer in ("l1", "l2", "l3"):
        h = ad.bilstm(h, _lstm_args(pv, f"{layer}.f"), _lstm_args(pv, f"{layer}.r"))
        if train_mode and layer != "l3":
            h = _dropout(h, dropout, rng, tape)
    pooled = ad.mean_over_time(h)
    q = ad.relu(ad.affine(pooled, pv["head.w1"], pv["head.b1"]))
    if train_mode:
        q = _dropout(q, dropout, rng, tape)
    return ad.affine(q, pv["head.w2"], pv["head.b2"])


def batch_logits(params, inputs, tape=None, **kwargs) -> Var:
    """Dispatch on the parameter kind; inputs is the SequenceDataset tuple."""
    if isinstance(params, GfBilstmParams):
        return _gf_logits(params, inputs[0], inputs[1], tape=tape, **kwargs)
    if isinstance(params, BaselineParams):
        return _baseline_logits(params, inputs[0], tape=tape, **kwargs)
    raise ConfigError(f"unknown parameter object {type(params).__name__}")


def forward(params: GfBilstmParams, amp_seq, phase_seq, train_mode=False,
            rng=None, dropout=0.2, modality_dropout=0.05,
            collect=None) -> np.ndarray:
    """Fusion forward for one sample; sequences are (T, F). Returns logits (C,)."""
    amp = np.asarray(amp_seq, dtype=np.float64)
    phase = np.asarray(phase_seq, dtype=np.float64)
    if amp.ndim != 2 or phase.ndim != 2:
        raise ShapeError("stream sequences must be (T, features)")
    if amp.shape[0] != phase.shape[0]:
        raise ShapeError(
            f"stream lengths differ: {amp.shape[0]} vs {phase.shape[0]}"
        )
    if amp.shape[0] < 1:
        raise DataError("empty input sequence")
    logits = _gf_logits(
        params, amp[None], phase[None], tape=None, train_mode=train_mode,
        rng=rng, dropout=dropout if train_mode else 0.0,
        modality_dropout=modality_dropout if train_mode else 0.0,
        collect=collect,
    )
    return logits.value[0]


def baseline_bilstm_forward(params: BaselineParams, mi: ModelInput) -> np.ndarray:
    """Baseline forward on any of the four input configurations."""
    return _baseline_logits(params, flat_features(mi)[None]).value[0]


def _softmax(z):
    zs = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(zs)
    return ez / ez.sum(axis=-1, keepdims=True)


def predict(params, mi: ModelInput):
    """(class index, probabilities) for one input; ties go to the lowest index."""
    if isinstance(params, GfBilstmParams):
        amp, phase = gf_streams(mi)
        logits = forward(params, amp, phase)
    else:
        logits = baseline_bilstm_forward(params, mi)
    p = _softmax(logits)
    return int(np.argmax(p)), p


def predict_dataset(params, data: SequenceDataset, chunk: int = 64) -> np.ndarray:
    """Argmax predictions for a prepared dataset, evaluated in chunks."""
    preds = []
    for start in range(0, len(data), chunk):
        idx = slice(start, start + chunk)
        logits = batch_logits(params, tuple(a[idx] for a in data.inputs))
        preds.append(np.argmax(logits.value, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(params, data: SequenceDataset, chunk: int = 64):
    """(accuracy in [0, 1], confusion[true, pred]) on a prepared dataset."""
    preds = predict_dataset(params, data, chunk)
    c = params.classes
    confusion = np.zeros((c, c), dtype=np.int64)
    for y, yhat in zip(data.labels, preds):
        confusion[int(y), int(yhat)] += 1
    acc = float(np.trace(confusion)) / max(len(data), 1)
    return acc, confusion


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 2e-5
    dropout: float = 0.2
    modality_dropout: float = 0.05
    batch_size: int = 8
    max_epochs: int = 150
    patience: int | None = 15
    seed: int = 0

    def __post_init__(self):
        for name in ("dropout", "modality_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name}={p} must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_acc: float


def history_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,train_loss,val_acc"]
    for row in history:
        lines.append(f"{row.epoch},{row.train_loss:.6f},{row.val_acc:.6f}")
    return "\n".join(lines) + "\n"


def train(params, train_set: SequenceDataset, val_set: SequenceDataset,
          cfg: TrainConfig):
    """Mini-batch AdamW with early stopping on validation accuracy.

    Returns (params at the best validation epoch, per-epoch history). The
    caller's params object is left untouched.
    """
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if len(val_set) == 0:
        raise DataError("validation set is empty")
    history: list[EpochStats] = []
    if cfg.max_epochs == 0:
        return params.clone(), history

    work = params.clone()
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = SplitMix64(cfg.seed).spawn(0xBA7C)
    n = len(train_set)
    is_gf = isinstance(work, GfBilstmParams)

    best = work.clone()
    best_acc = -1.0
    epochs_since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch = train_set.take(idx)
            tape = GradTape()
            kwargs = dict(train_mode=True, rng=rng, dropout=cfg.dropout)
            if is_gf:
                kwargs["modality_dropout"] = cfg.modality_dropout
            logits = batch_logits(work, batch.inputs, tape=tape, **kwargs)
            loss, _ = ad.softmax_cross_entropy_mean(logits, batch.labels)
            if not np.isfinite(loss.value):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch}, step {step}"
                )
            grads = backward(tape, loss)
            opt.step(work.tensors, grads)
            loss_sum += float(loss.value) * len(idx)
        val_acc, _ = evaluate(work, val_set)
        history.append(EpochStats(epoch, loss_sum / n, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best = work.clone()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if cfg.patience is not None and epochs_since_best >= cfg.patience:
                break
    return best, history


# ---------------------------------------------------------------------------
# persistence

_KIND_CODES = {"baseline": 0.0, "gf": 1.0}


def save_model(path, params, extra: dict | None = None) -> int:
    """Checkpoint the parameters plus shape metadata (and optional extras)."""
    tensors = dict(params.tensors)
    if isinstance(params, GfBilstmParams):
        tensors["meta.kind"] = np.array([_KIND_CODES["gf"]])
        tensors["meta.features"] = np.array([float(params.stream_features)])
        tensors["meta.groups"] = np.array([float(params.receivers)])
    else:
        tensors["meta.kind"] = np.array([_KIND_CODES["baseline"]])
        tensors["meta.features"] = np.array([float(params.features)])
        tensors["meta.groups"] = np.array([float(params.planes)])
    tensors["meta.hidden"] = np.array([float(params.hidden)])
    tensors["meta.classes"] = np.array([float(params.classes)])
    for key, value in (extra or {}).items():
        tensors[f"meta.{key}"] = np.array([float(value)])
    return save_checkpoint(path, tensors)


def load_model(path):
    """Inverse of save_model; returns (params, extra-metadata dict)."""
    tensors = load_checkpoint(path)
    meta = {}
    weights = {}
    for key, value in tensors.items():
        if key.startswith("meta."):
            meta[key[5:]] = float(value[0])
        else:
            weights[key] = value
    kind = meta.pop("kind")
    hidden = int(meta.pop("hidden"))
    classes = int(meta.pop("classes"))
    features = int(meta.pop("features"))
    groups = int(meta.pop("groups", 1))
    if kind == _KIND_CODES["gf"]:
        params = GfBilstmParams(hidden, classes, features, weights, groups)
    else:
        params = BaselineParams(hidden, classes, features, weights, groups)
    return params, meta
