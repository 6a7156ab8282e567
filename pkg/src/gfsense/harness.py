"""LOVO experiment driver, preprocessing micro-benchmark, and figure export.

The grid runs every (held-out velocity, input configuration) cell for the
baseline BiLSTM and the two-channel cells for the fusion model, averages
accuracies over a seed list, and renders a markdown table (plus a CSV twin).
Single-channel fusion cells are rendered as "-": that model requires both
planes. The benchmark times the five preprocessing pipelines alone, I/O and
model excluded, warm start, mean +- sd over repeated runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .csi import LabeledSample, Velocity, amplitude_of, raw_phase_of
from .datagen import lovo_split
from .errors import ConfigError, DataError
from .model import (
    BaselineParams,
    GfBilstmParams,
    SequenceDataset,
    TrainConfig,
    baseline_dataset,
    evaluate,
    gf_dataset,
    init_baseline_params,
    init_gf_params,
    train,
)
from .phase import InputConfig, build_sample_input, sanitize, unwrap_temporal
from .rng import SplitMix64

MODEL_KINDS = ("baseline", "gf")
_CONFIG_ORDER = (
    InputConfig.PHASE_ONLY_UNWRAPPED,
    InputConfig.AMPLITUDE_ONLY,
    InputConfig.AMP_PLUS_UNWRAPPED,
    InputConfig.AMP_PLUS_SANITIZED,
)
# paper-style block order: hold out V3 first, then V2, then V1
_HOLDOUT_ORDER = (Velocity.V3, Velocity.V2, Velocity.V1)


# ---------------------------------------------------------------------------
# data preparation


def prepare_dataset(samples, config: InputConfig, model_kind: str) -> SequenceDataset:
    """Preprocess every sample for one (config, model) pair."""
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind '{model_kind}'")
    if model_kind == "gf" and config.channels_per_receiver != 2:
        raise ConfigError(
            f"the fusion model needs a two-channel input configuration; "
            f"'{config.value}' is single-channel"
        )
    inputs = [build_sample_input(s, config) for s in samples]
    labels = [s.label for s in samples]
    if model_kind == "gf":
        return gf_dataset(inputs, labels)
    return baseline_dataset(inputs, labels)


def carve_validation(labels: np.ndarray, seed: int, fraction: float = 0.1):
    """Stratified validation indices: ~fraction per class, never a whole class."""
    labels = np.asarray(labels)
    rng = SplitMix64(seed).spawn(0x5EED)
    val = []
    for cls in np.unique(labels):
        idx = list(np.flatnonzero(labels == cls))
        if len(idx) < 2:
            continue
        rng.shuffle(idx)
        n_val = min(max(1, round(fraction * len(idx))), len(idx) - 1)
        val.extend(idx[:n_val])
    val = np.array(sorted(val), dtype=np.int64)
    train_mask = np.ones(len(labels), dtype=bool)
    train_mask[val] = False
    return np.flatnonzero(train_mask), val


@dataclass(frozen=True)
class CellResult:
    """One trained-and-evaluated grid cell."""

    held_out: Velocity
    config: InputConfig
    model_kind: str
    accuracy: float  # percent
    confusion: np.ndarray  # (C, C), rows = true class
    seed: int

    def __post_init__(self):
        total = self.confusion.sum()
        trace = np.trace(self.confusion)
        if total > 0 and abs(self.accuracy - 100.0 * trace / total) > 1e-9:
            raise DataError("accuracy does not match the confusion matrix")


def _init_params(model_kind, features, hidden, classes, seed, dtype, groups):
    if model_kind == "gf":
        return init_gf_params(features, hidden, classes, seed, dtype,
                              receivers=groups)
    return init_baseline_params(features, hidden, classes, seed, dtype,
                                planes=groups)


def run_lovo(
    samples,
    model_kind: str,
    config: InputConfig,
    cfg: TrainConfig,
    held_out: Velocity,
    hidden: int = 128,
    classes: int | None = None,
    dtype=np.float64,
    prepared: SequenceDataset | None = None,
) -> CellResult:
    """Train one cell on the two kept velocities, test on the held-out one.

    `prepared` may carry the preprocessed full dataset to share across cells.
    """
    data = prepared if prepared is not None else prepare_dataset(
        samples, config, model_kind
    )
    if classes is None:
        classes = int(data.labels.max()) + 1
    split = lovo_split(samples, held_out)
    if split.train_idx.size == 0 or split.test_idx.size == 0:
        raise DataError("empty train or test split")
    train_pool = data.take(split.train_idx)
    tr_idx, val_idx = carve_validation(train_pool.labels, cfg.seed)
    n_receivers = samples[0].n_channels
    groups = (
        n_receivers if model_kind == "gf"
        else n_receivers * config.channels_per_receiver
    )
    params = _init_params(
        model_kind, data.inputs[0].shape[-1], hidden, classes,
        cfg.seed ^ 0x9A17, dtype, groups,
    )
    best, _history = train(
        params, train_pool.take(tr_idx), train_pool.take(val_idx), cfg
    )
    acc, confusion = evaluate(best, data.take(split.test_idx))
    return CellResult(
        Velocity(held_out), config, model_kind, 100.0 * acc, confusion, cfg.seed
    )


@dataclass(frozen=True)
class ExperimentResult:
    """Seed-averaged accuracy grid plus per-cell mean confusion matrices."""

    accuracy: dict  # (velocity, config, model_kind) -> percent
    confusion: dict  # same keys -> (C, C) float array
    seeds: tuple
    classes: int

    def cell(self, held_out: Velocity, config: InputConfig, model_kind: str):
        return self.accuracy[(Velocity(held_out), config, model_kind)]


def grid_cells(model_kind: str):
    """The populated (config) columns for a model row."""
    if model_kind == "gf":
        return tuple(c for c in _CONFIG_ORDER if c.channels_per_receiver == 2)
    return _CONFIG_ORDER


def run_full_grid(
    samples,
    cfg: TrainConfig,
    seeds=(1, 2, 3),
    hidden: int = 128,
    classes: int | None = None,
    dtype=np.float64,
    progress=None,
) -> ExperimentResult:
    """All holdouts x configs for the baseline, two-channel ones for fusion."""
    if classes is None:
        classes = max(s.label for s in samples) + 1
    accuracy: dict = {}
    confusion: dict = {}
    for config in _CONFIG_ORDER:
        for model_kind in MODEL_KINDS:
            if model_kind == "gf" and config.channels_per_receiver != 2:
                continue
            prepared = prepare_dataset(samples, config, model_kind)
            for held_out in _HOLDOUT_ORDER:
                accs, mats = [], []
                for seed in seeds:
                    cell = run_lovo(
                        samples, model_kind, config,
                        replace(cfg, seed=seed), held_out,
                        hidden=hidden, classes=classes, dtype=dtype,
                        prepared=prepared,
                    )
                    accs.append(cell.accuracy)
                    mats.append(cell.confusion)
                    if progress is not None:
                        progress(model_kind, config, held_out, seed, cell.accuracy)
                key = (held_out, config, model_kind)
                accuracy[key] = float(np.mean(accs))
                confusion[key] = np.mean(np.stack(mats), axis=0)
    return ExperimentResult(accuracy, confusion, tuple(seeds), classes)


_KEPT = {
    Velocity.V3: "V1&V2",
    Velocity.V2: "V1&V3",
    Velocity.V1: "V2&V3",
}
_MODEL_LABELS = {"baseline": "BiLSTM", "gf": "GF-BiLSTM"}


def render_markdown(result: ExperimentResult) -> str:
    """Accuracy table in the train/test block layout, '-' for absent cells."""
    lines = [
        "# Leave-one-velocity-out accuracy (%)",
        "",
        f"Seeds averaged: {', '.join(str(s) for s in result.seeds)}. Columns "
        "(1)-(4): phase-only unwrapped, amplitude-only, amp+unwrapped phase, "
        "amp+sanitized phase.",
        "",
        "| Train | Test | Model | 1 | 2 | 3 | 4 |",
        "|-------|------|-------|---|---|---|---|",
    ]
    for held_out in _HOLDOUT_ORDER:
        for model_kind in MODEL_KINDS:
            cells = []
            for config in _CONFIG_ORDER:
                key = (held_out, config, model_kind)
                cells.append(
                    f"{result.accuracy[key]:.2f}" if key in result.accuracy else "-"
                )
            lines.append(
                f"| {_KEPT[held_out]} | {held_out.name} | "
                f"{_MODEL_LABELS[model_kind]} | " + " | ".join(cells) + " |"
            )
    return "\n".join(lines) + "\n"


def render_csv(result: ExperimentResult) -> str:
    lines = ["held_out,model,config,accuracy"]
    for held_out in _HOLDOUT_ORDER:
        for model_kind in MODEL_KINDS:
            for config in _CONFIG_ORDER:
                key = (held_out, config, model_kind)
                if key in result.accuracy:
                    lines.append(
                        f"{held_out.name},{_MODEL_LABELS[model_kind]},"
                        f"{config.value},{result.accuracy[key]:.4f}"
                    )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# preprocessing benchmark


def _pipe_amp(sample: LabeledSample):
    for chan in sample.channels:
        amplitude_of(chan)


def _pipe_phase_unw(sample):
    for chan in sample.channels:
        unwrap_temporal(raw_phase_of(chan))


def _pipe_amp_unw(sample):
    for chan in sample.channels:
        amplitude_of(chan)
        unwrap_temporal(raw_phase_of(chan))


def _pipe_phase_san(sample):
    for chan in sample.channels:
        sanitize(unwrap_temporal(raw_phase_of(chan)))


def _pipe_amp_san(sample):
    for chan in sample.channels:
        amplitude_of(chan)
        sanitize(unwrap_temporal(raw_phase_of(chan)))


BENCH_METHODS = {
    "amp-only": _pipe_amp,
    "phase-unw": _pipe_phase_unw,
    "amp-unw": _pipe_amp_unw,
    "phase-san": _pipe_phase_san,
    "amp-san": _pipe_amp_san,
}


@dataclass(frozen=True)
class BenchRow:
    method: str
    mean_ms: float
    std_ms: float
    ratio: float  # vs amp-only


@dataclass(frozen=True)
class BenchResult:
    rows: tuple
    iters: int

    def row(self, method: str) -> BenchRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def time_pipeline(fn, samples, iters: int) -> tuple[float, float]:
    """Warm once, then time `iters` full passes; per-sample ms (mean, sd)."""
    fn_all = lambda: [fn(s) for s in samples]  # noqa: E731
    fn_all()
    per_run = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn_all()
        per_run.append((time.perf_counter() - t0) * 1e3 / len(samples))
    arr = np.asarray(per_run)
    return float(arr.mean()), float(arr.std())


def bench_preprocessing(samples, iters: int = 5) -> BenchResult:
    """Per-sample preprocessing cost of all five pipelines, data pre-loaded."""
    if not samples:
        raise DataError("benchmark needs a non-empty dataset")
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    stats = {
        name: time_pipeline(fn, samples, iters)
        for name, fn in BENCH_METHODS.items()
    }
    amp_mean = stats["amp-only"][0]
    rows = tuple(
        BenchRow(name, mean, std, mean / amp_mean)
        for name, (mean, std) in stats.items()
    )
    return BenchResult(rows, iters)


def bench_csv(result: BenchResult) -> str:
    lines = ["method,mean_ms_per_sample,std_ms,ratio_vs_amp_only"]
    for r in result.rows:
        lines.append(f"{r.method},{r.mean_ms:.6f},{r.std_ms:.6f},{r.ratio:.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# figure data export

_STAGES = ("amplitude", "raw", "unwrapped", "sanitized")
_KINDS = ("heatmap", "overlay")


def _stage_matrix(sample: LabeledSample, stage: str) -> np.ndarray:
    chan = sample.channels[0]
    if stage == "amplitude":
        return amplitude_of(chan).values
    raw = raw_phase_of(chan)
    if stage == "raw":
        return raw.values
    unwrapped = unwrap_temporal(raw)
    if stage == "unwrapped":
        return unwrapped.values
    return sanitize(unwrapped)[0].values


def export_figure_data(sample: LabeledSample, kind: str, stage: str, path,
                       snapshots: int = 8):
    """Write plot-ready CSV grids for one sample (first receiver channel).

    heatmap: S rows x T columns of the requested stage. overlay: one row per
    time snapshot (default 8, evenly spaced) across subcarriers.
    """
    if stage not in _STAGES:
        raise ConfigError(f"stage must be one of {_STAGES}, got '{stage}'")
    if kind not in _KINDS:
        raise ConfigError(f"kind must be one of {_KINDS}, got '{kind}'")
    grid = _stage_matrix(sample, stage)
    if kind == "overlay":
        t_len = grid.shape[1]
        n = min(snapshots, t_len)
        times = [round(i * (t_len - 1) / max(n - 1, 1)) for i in range(n)]
        grid = grid[:, times].T  # rows = snapshots across subcarriers
    np.savetxt(path, grid, delimiter=",", fmt="%.9g")
    return path
