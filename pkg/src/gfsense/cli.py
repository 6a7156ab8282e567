"""Command-line interface.

Subcommands: gen, preprocess, train, eval, grid, bench, fig. Exit codes:
0 success, 2 usage/configuration error, 3 data or file-format error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import datagen
from .csi import ComplexCsi, LabeledSample, Velocity, read_csib, write_csib
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    GfSenseError,
    ModeError,
    PhaseStateError,
    RejectedInputError,
    ShapeError,
    TrainingDivergenceError,
)
from .harness import (
    bench_csv,
    bench_preprocessing,
    carve_validation,
    export_figure_data,
    prepare_dataset,
    render_csv,
    render_markdown,
    run_full_grid,
)
from .model import (
    TrainConfig,
    evaluate,
    history_csv,
    load_model,
    save_model,
    train,
)
from .phase import InputConfig, build_sample_input
from .datagen import lovo_split

_VELOCITIES = {"v1": Velocity.V1, "v2": Velocity.V2, "v3": Velocity.V3}
_CONFIG_NAMES = [c.value for c in InputConfig]


def _add_train_opts(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=32,
                   help="hidden width per direction (default 32)")
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--weight-decay", type=float, default=2e-5)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--modality-dropout", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--float64", action="store_true",
                   help="train in 64-bit instead of 32-bit")


def _train_config(args, seed=None) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        weight_decay=args.weight_decay,
        dropout=args.dropout,
        modality_dropout=args.modality_dropout,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed if seed is None else seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfsense",
        description="CSI phase calibration, gated-fusion BiLSTM classifier, "
        "and LOVO evaluation tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic CSIB dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-cell", type=int, default=40)
    p.add_argument("--subcarriers", type=int, default=64)
    p.add_argument("--packets", type=int, default=128)
    p.add_argument("--channels", type=int, default=1)

    p = sub.add_parser("preprocess", help="write preprocessed planes as CSIB")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--config", choices=_CONFIG_NAMES, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model on a LOVO split")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--holdout", choices=sorted(_VELOCITIES), required=True)
    p.add_argument("--config", choices=_CONFIG_NAMES, required=True)
    p.add_argument("--model", choices=["baseline", "gf"], required=True)
    p.add_argument("--ckpt", required=True)
    _add_train_opts(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a held-out velocity")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--holdout", choices=sorted(_VELOCITIES), required=True)
    p.add_argument("--out", help="write accuracy+confusion CSV here (default stdout)")

    p = sub.add_parser("grid", help="run the full LOVO grid and render tables")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seed list")
    p.add_argument("--out", required=True, help="markdown output path")
    _add_train_opts(p)

    p = sub.add_parser("bench", help="time the preprocessing pipelines")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = sub.add_parser("fig", help="export figure data grids as CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--kind", choices=["heatmap", "overlay"], required=True)
    p.add_argument(
        "--stage", choices=["amplitude", "raw", "unwrapped", "sanitized"],
        required=True,
    )
    p.add_argument("--out", required=True)
    return parser


def _cmd_gen(args) -> int:
    cfg = datagen.SynthConfig(
        subcarriers=args.subcarriers,
        packets=args.packets,
        n_channels=args.channels,
        samples_per_cell=args.samples_per_cell,
        seed=args.seed,
    )
    samples = datagen.generate(cfg)
    n = write_csib(samples, args.out)
    with open(str(args.out) + ".schema", "w", encoding="utf-8") as fh:
        fh.write(datagen.format_schema(
            cfg.classes, 3, datagen.ACTIVITY_NAMES[: cfg.classes]
        ))
    print(f"wrote {len(samples)} samples ({n} bytes) to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    samples = read_csib(args.inp)
    if not samples:
        raise DataError(f"{args.inp}: no samples to preprocess")
    config = InputConfig.from_name(args.config)
    out_samples = []
    for s in samples:
        planes = build_sample_input(s, config).tensor
        chans = tuple(ComplexCsi(p.astype(np.float32).astype(np.float64) + 0j)
                      for p in planes)
        out_samples.append(LabeledSample(chans, s.label, s.velocity))
    n = write_csib(out_samples, args.out)
    print(f"wrote {len(out_samples)} preprocessed samples ({n} bytes) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    samples = read_csib(args.inp)
    config = InputConfig.from_name(args.config)
    held_out = _VELOCITIES[args.holdout]
    cfg = _train_config(args)
    dtype = np.float64 if args.float64 else np.float32
    data = prepare_dataset(samples, config, args.model)
    classes = int(data.labels.max()) + 1
    split = lovo_split(samples, held_out)
    pool = data.take(split.train_idx)
    tr_idx, val_idx = carve_validation(pool.labels, cfg.seed)

    from .harness import _init_params

    n_receivers = samples[0].n_channels
    groups = (n_receivers if args.model == "gf"
              else n_receivers * config.channels_per_receiver)
    params = _init_params(
        args.model, data.inputs[0].shape[-1], args.hidden, classes,
        cfg.seed ^ 0x9A17, dtype, groups,
    )
    best, history = train(params, pool.take(tr_idx), pool.take(val_idx), cfg)
    save_model(args.ckpt, best, extra={
        "config": list(InputConfig).index(config),
        "n_receivers": n_receivers,
    })
    hist_path = str(args.ckpt) + ".history.csv"
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write(history_csv(history))
    best_val = max((h.val_acc for h in history), default=0.0)
    print(
        f"trained {args.model}/{config.value} holding out "
        f"{held_out.name}: best val acc {100 * best_val:.2f}% "
        f"({len(history)} epochs); checkpoint {args.ckpt}, history {hist_path}"
    )
    return 0


def _cmd_eval(args) -> int:
    samples = read_csib(args.inp)
    params, extra = load_model(args.ckpt)
    config = list(InputConfig)[int(extra.get("config", 3))]
    from .model import BaselineParams

    model_kind = "baseline" if isinstance(params, BaselineParams) else "gf"
    held_out = _VELOCITIES[args.holdout]
    data = prepare_dataset(samples, config, model_kind)
    split = lovo_split(samples, held_out)
    acc, confusion = evaluate(params, data.take(split.test_idx))
    lines = [f"accuracy,{100 * acc:.4f}"]
    lines.append("confusion," + ",".join(f"pred{j}" for j in range(params.classes)))
    for i, row in enumerate(confusion):
        lines.append(f"true{i}," + ",".join(str(int(v)) for v in row))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_grid(args) -> int:
    samples = read_csib(args.inp)
    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if not seeds:
        raise ConfigError("--seeds must list at least one seed")
    cfg = _train_config(args)
    dtype = np.float64 if args.float64 else np.float32

    def progress(model_kind, config, held_out, seed, acc):
        print(
            f"[grid] {model_kind:>8}/{config.value:<9} hold {held_out.name} "
            f"seed {seed}: {acc:.2f}%",
            flush=True,
        )

    result = run_full_grid(
        samples, cfg, seeds=seeds, hidden=args.hidden, dtype=dtype,
        progress=progress,
    )
    md = render_markdown(result)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(md)
    csv_path = str(args.out)
    csv_path = (csv_path[:-3] if csv_path.endswith(".md") else csv_path) + ".csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(render_csv(result))
    print(f"wrote {args.out} and {csv_path}")
    return 0


def _cmd_bench(args) -> int:
    samples = read_csib(args.inp)
    result = bench_preprocessing(samples, iters=args.iters)
    text = bench_csv(result)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_fig(args) -> int:
    samples = read_csib(args.inp)
    if not 0 <= args.sample < len(samples):
        raise DataError(
            f"sample index {args.sample} out of range for {len(samples)} samples"
        )
    export_figure_data(samples[args.sample], args.kind, args.stage, args.out)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "grid": _cmd_grid,
    "bench": _cmd_bench,
    "fig": _cmd_fig,
}

_USAGE_ERRORS = (ConfigError, ModeError)
_DATA_ERRORS = (
    DataError,
    FormatError,
    ShapeError,
    RejectedInputError,
    PhaseStateError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (_DATA_ERRORS, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except GfSenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
