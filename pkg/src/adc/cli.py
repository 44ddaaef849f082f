"""Command-line entry point: ``adc <subcommand> [flags]``.

Settings resolve as flags > ``--config`` file > built-in defaults. The seed
falls back to the ``ADC_SEED`` environment variable, then 0.

Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from adc import coincidence, experiment
from adc._io import atomic_write_text
from adc.dendrite_model import TreeConfigError, evaluate_tree, tree_from_json
from adc.nn import TrainConfig, evaluate, history_csv, init_params, random_cases, save_checkpoint, train
from adc.signal_core import (
    DatasetSpec,
    PulseSpec,
    Signal,
    gen_dataset,
    gen_sine_pulse,
    read_dataset,
    read_manifest,
    write_dataset,
    write_manifest,
)

log = logging.getLogger("adc")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


_UNSET = object()


class UsageError(ValueError):
    """Invalid flags or configuration (exit code 2)."""


def _env_seed() -> int:
    raw = os.environ.get("ADC_SEED")
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw, 0)
    except ValueError:
        raise UsageError(f"ADC_SEED must be an integer, got {raw!r}") from None
    if seed < 0:
        raise UsageError("ADC_SEED must be non-negative")
    return seed


def _load_config(args) -> dict:
    if not args.config:
        return {}
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
    if args.command == "simulate":
        return {"_text": text}
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{args.config}: top level must be a JSON object")
    return doc


def _seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in cfg:
        return int(cfg["seed"])
    return _env_seed()


def _csv_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _snr(text: str):
    if text.lower() == "none":
        return None
    return float(text)


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _out_dir(args, default: str = ".") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- dataset ---------------------------------------------------------------


def _dataset_spec(args, cfg: dict, seed: int) -> DatasetSpec:
    doc = cfg.get("dataset", cfg)
    doc = {k: v for k, v in doc.items() if k in {f.name for f in dataclasses.fields(DatasetSpec)}}
    try:
        spec = DatasetSpec.from_dict(doc) if doc else DatasetSpec()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid dataset config: {exc}") from None
    pulse, noise = spec.pulse, spec.noise
    over = {}
    for flag, name in (
        ("classes", "classes_ms"),
        ("train_count", "train_count"),
        ("test_count", "test_count"),
        ("window_ms", "window_ms"),
        ("sample_rate", "sample_rate_hz"),
        ("delayed_channel", "delayed_channel"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            over[name] = v
    if getattr(args, "freq_hz", None) is not None:
        pulse = dataclasses.replace(pulse, freq_hz=args.freq_hz)
    if getattr(args, "width_ms", None) is not None:
        pulse = dataclasses.replace(pulse, width_ms=args.width_ms)
    if getattr(args, "snr_db", _UNSET) is not _UNSET:
        noise = dataclasses.replace(noise, snr_db=args.snr_db)
    if getattr(args, "jitter_ms", None) is not None:
        noise = dataclasses.replace(noise, jitter_std_ms=args.jitter_ms)
    if args.seed is not None or "seed" not in doc:
        over["seed"] = seed
    spec = dataclasses.replace(spec, pulse=pulse, noise=noise, **over)
    spec.validate()
    return spec


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--classes", type=_csv_floats, help="class delays in ms (default 0,5,10)")
    g.add_argument("--train-count", type=_nonneg_int)
    g.add_argument("--test-count", type=_nonneg_int)
    g.add_argument("--window-ms", type=float)
    g.add_argument("--sample-rate", type=float, help="Hz (default 8000)")
    g.add_argument("--freq-hz", type=float, help="pulse frequency (default 440)")
    g.add_argument("--width-ms", type=float, help="pulse width (default 10)")
    g.add_argument("--snr-db", type=_snr, default=_UNSET, help="white-noise SNR in dB, or 'none'")
    g.add_argument("--jitter-ms", type=float, help="per-ear onset jitter std (default 0.5)")
    g.add_argument("--delayed-channel", choices=("left", "right"))


def _load_or_generate(args, cfg: dict, seed: int):
    """Dataset from ``--dataset DIR`` (gen-dataset output) or generated."""
    if getattr(args, "dataset", None):
        d = Path(args.dataset)
        spec = read_manifest(d / "manifest.json")
        return read_dataset(d / "train.adcd"), read_dataset(d / "test.adcd"), spec
    spec = _dataset_spec(args, cfg, seed)
    train_set, test_set = gen_dataset(spec)
    return train_set, test_set, spec


def cmd_gen_dataset(args, cfg: dict) -> int:
    spec = _dataset_spec(args, cfg, _seed(args, cfg))
    train_set, test_set = gen_dataset(spec)
    out = _out_dir(args)
    write_dataset(out / "train.adcd", train_set)
    write_dataset(out / "test.adcd", test_set)
    write_manifest(out / "manifest.json", spec, files=["train.adcd", "test.adcd"])
    for name, split in (("train", train_set), ("test", test_set)):
        counts = np.bincount([ex.label for ex in split], minlength=len(spec.classes_ms))
        per = ", ".join(f"{c:g} ms: {n}" for c, n in zip(spec.classes_ms, counts))
        print(f"{name}: {len(split)} examples ({per})")
    print(f"wrote {out / 'train.adcd'}, {out / 'test.adcd'}, {out / 'manifest.json'}")
    return EXIT_OK


# --- simulate --------------------------------------------------------------


def _read_signal_csv(path: str, fs: float) -> Signal:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=1)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if data.ndim != 1:
        raise UsageError(f"{path}: expected a single column of samples")
    return Signal(data, fs)


def cmd_simulate(args, cfg: dict) -> int:
    if args.tree:
        text = Path(args.tree).read_text(encoding="utf-8")
    elif "_text" in cfg:
        text = cfg["_text"]
    else:
        raise UsageError("simulate needs a tree config (--tree or --config)")
    tree = tree_from_json(text)
    fs = args.sample_rate
    n = int(round(args.window_ms * fs / 1000.0))
    inputs: dict[str, Signal] = {}
    for item in args.pulse or []:
        name, _, onset = item.partition("=")
        try:
            spec = PulseSpec(freq_hz=args.freq_hz, width_ms=args.width_ms, onset_ms=float(onset or 0.0))
        except ValueError:
            raise UsageError(f"--pulse expects NAME=ONSET_MS, got {item!r}") from None
        inputs[name] = gen_sine_pulse(spec, args.window_ms, fs)
    for item in args.input or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--input expects NAME=PATH, got {item!r}")
        inputs[name] = _read_signal_csv(path, fs)
    lengths = {len(s) for s in inputs.values()}
    if len(lengths) > 1:
        raise UsageError(f"input signals differ in length: {sorted(lengths)}")
    n = lengths.pop() if lengths else n
    for name in sorted(tree.inputs - set(inputs)):
        inputs[name] = Signal(np.zeros(n), fs)
    result = evaluate_tree(tree, inputs)
    buf = io.StringIO()
    buf.write("t_ms,soma_mv\n")
    for t, v in zip(1000.0 * result.waveform.times(), result.waveform.samples):
        buf.write(f"{float(t)!r},{float(v)!r}\n")
    out = Path(args.out or "soma.csv")
    atomic_write_text(out, buf.getvalue())
    print(f"fired: {'true' if result.fired else 'false'}, peak: {result.peak_mv:.6g}")
    return EXIT_OK


# --- decode-itd ------------------------------------------------------------


def _bank(args, cfg: dict):
    doc = cfg.get("bank", cfg)
    max_delay = args.max_delay_ms if args.max_delay_ms is not None else float(doc.get("max_delay_ms", 10.0))
    branches = args.branches if args.branches is not None else int(doc.get("branch_count", 21))
    envelope = False if args.raw else bool(doc.get("envelope", True))
    return coincidence.build_bank(max_delay, branches, envelope=envelope)


def cmd_decode_itd(args, cfg: dict) -> int:
    bank = _bank(args, cfg)
    if args.stereo_csv:
        left, right = coincidence.read_stereo_csv(args.stereo_csv, args.sample_rate)
        est = coincidence.decode_itd(bank, left, right)
        estimates, labels = [est], [None]
        print(f"best branch: {est.best_branch}, itd: {est.itd_ms:.4g} ms (positive = left leads)")
    else:
        seed = _seed(args, cfg)
        if args.dataset:
            examples = read_dataset(Path(args.dataset) / f"{args.split}.adcd")
            spec = read_manifest(Path(args.dataset) / "manifest.json")
        else:
            train_set, test_set, spec = _load_or_generate(args, cfg, seed)
            examples = test_set if args.split == "test" else train_set
        report = coincidence.decode_direction_sweep(bank, examples, spec.classes_ms, spec.delayed_channel)
        estimates, labels = report.estimates, list(report.labels)
        print(f"accuracy: {report.accuracy:.4f} over {len(examples)} examples")
        for c, acc in zip(spec.classes_ms, report.per_class_accuracy):
            print(f"  class {c:g} ms: {acc:.4f}")
        print("confusion (rows true, cols decoded):")
        for row in report.confusion:
            print("  " + " ".join(f"{v:5d}" for v in row))
    out = Path(args.out or "itd_estimates.csv")
    atomic_write_text(out, coincidence.estimates_csv(estimates, labels))
    return EXIT_OK


# --- gradcheck -------------------------------------------------------------


def cmd_gradcheck(args, cfg: dict) -> int:
    cases = random_cases(args.cases, _seed(args, cfg))
    worst = 0.0
    for c in cases:
        worst = max(worst, c.max_rel_error)
        log.info("I=%d H=%d T=%d B=%d max rel err %.3e", c.input_size, c.hidden_size, c.steps, c.batch, c.max_rel_error)
    ok = worst <= GRADCHECK_TOLERANCE
    print(f"{len(cases)} configs, max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


# --- train -----------------------------------------------------------------


def _train_config(args, cfg: dict, seed: int) -> TrainConfig:
    doc = dict(cfg.get("train", {}))
    try:
        tc = TrainConfig(**doc)
    except TypeError as exc:
        raise UsageError(f"invalid train config: {exc}") from None
    over = {"seed": seed}
    for flag, name in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("train_scope", "train_scope"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            over[name] = v
    tc = dataclasses.replace(tc, **over)
    tc.validate()
    return tc


def cmd_train(args, cfg: dict) -> int:
    seed = _seed(args, cfg)
    arch = args.arch or cfg.get("arch", "plain")
    hidden = args.hidden if args.hidden is not None else int(cfg.get("hidden", 4))
    if arch not in experiment.ARCHITECTURES:
        raise UsageError(f"unknown architecture {arch!r}")
    if hidden < 1:
        raise UsageError("hidden size must be >= 1")
    tc = _train_config(args, cfg, seed)
    train_set, test_set, _ = _load_or_generate(args, cfg, seed)
    Xtr, ytr = experiment.to_arrays(train_set, arch)
    Xte, yte = experiment.to_arrays(test_set, arch)
    model = init_params(Xtr.shape[2], hidden, seed)
    model, history = train(model, Xtr, ytr, tc)
    acc = evaluate(model, Xte, yte)
    out = Path(args.out or "model.adcm")
    save_checkpoint(out, model)
    atomic_write_text(out.with_suffix(".history.csv"), history_csv(history))
    print(f"{arch} H={hidden}: test accuracy {acc:.4f}; checkpoint {out}")
    return EXIT_OK


# --- sweep / export --------------------------------------------------------


def _sweep_config(args, cfg: dict) -> experiment.SweepConfig:
    try:
        sc = experiment.SweepConfig.from_dict(cfg) if cfg else experiment.SweepConfig()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid sweep config: {exc}") from None
    over = {}
    if args.hidden is not None:
        over["hidden_sizes"] = args.hidden
    if args.trials is not None:
        over["trials_per_size"] = args.trials
    if args.arch is not None:
        over["architectures"] = tuple(a.strip() for a in args.arch.split(","))
    if args.seed is not None or "base_seed" not in cfg:
        over["base_seed"] = _seed(args, cfg)
    if args.epochs is not None:
        over["train"] = dataclasses.replace(sc.train, epochs=args.epochs)
    over["dataset"] = _dataset_spec(args, {"dataset": sc.dataset.to_dict()}, sc.dataset.seed)
    sc = dataclasses.replace(sc, **over)
    sc.validate()
    return sc


def _report_exports(result, out: Path) -> None:
    paths = experiment.export_results(result, out)
    print(experiment.format_summary(result))
    print("wrote " + ", ".join(str(p) for p in paths.values()))


def cmd_sweep(args, cfg: dict) -> int:
    sc = _sweep_config(args, cfg)
    out = _out_dir(args, "sweep_out")
    total = len(experiment.sweep_coordinates(sc))
    done = []

    def progress(rec):
        done.append(rec)
        log.info("[%d/%d] %s H=%d trial %d: %.4f", len(done), total, rec.arch, rec.hidden, rec.trial, rec.accuracy)

    result = experiment.run_sweep(sc, threads=args.threads, progress=progress)
    atomic_write_text(out / "sweep_config.json", json.dumps(sc.to_dict(), indent=2, sort_keys=True) + "\n")
    _report_exports(result, out)
    return EXIT_OK


def cmd_export(args, cfg: dict) -> int:
    result = experiment.read_records_csv(args.records)
    _report_exports(result, _out_dir(args))
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=_nonneg_int, default=d, help="RNG seed (default: $ADC_SEED, else 0)")
    g.add_argument("--config", default=d, help="JSON config file; flags override its fields")
    g.add_argument("--out", default=d, help="output file or directory")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1, help="worker processes (sweep)")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="adc",
        description="Dendrite delay-line simulation, ITD decoding and BiLSTM experiments.",
        parents=[_global_flags(suppress=False)],
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("gen-dataset", parents=[common], help="generate train/test pulse datasets")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("simulate", parents=[common], help="evaluate a dendrite tree on input signals")
    p.add_argument("--tree", help="tree config JSON (or pass it as --config)")
    p.add_argument("--pulse", action="append", metavar="NAME=ONSET_MS", help="drive an input with a sine pulse")
    p.add_argument("--input", action="append", metavar="NAME=PATH", help="drive an input from a one-column CSV")
    p.add_argument("--sample-rate", type=float, default=8000.0)
    p.add_argument("--window-ms", type=float, default=40.0)
    p.add_argument("--freq-hz", type=float, default=440.0)
    p.add_argument("--width-ms", type=float, default=10.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decode-itd", parents=[common], help="decode interaural time differences with a delay bank")
    p.add_argument("--dataset", help="directory written by gen-dataset")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--stereo-csv", help="decode one left,right CSV instead of a dataset")
    p.add_argument("--max-delay-ms", type=float)
    p.add_argument("--branches", type=int)
    p.add_argument("--raw", action="store_true", help="coincide raw waveforms instead of envelopes")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_decode_itd, sample_rate=8000.0)

    p = sub.add_parser("gradcheck", parents=[common], help="compare BPTT gradients with finite differences")
    p.add_argument("--cases", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", parents=[common], help="train one BiLSTM classifier")
    p.add_argument("--arch", choices=experiment.ARCHITECTURES)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=_nonneg_int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--train-scope", choices=("all", "dense_only"))
    p.add_argument("--dataset", help="directory written by gen-dataset")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="plain vs dendritic accuracy across hidden sizes")
    p.add_argument("--hidden", type=_csv_ints, help="hidden sizes, e.g. 1,2,3,4,6,8")
    p.add_argument("--trials", type=int)
    p.add_argument("--arch", help="comma-separated subset of plain,dendritic")
    p.add_argument("--epochs", type=_nonneg_int)
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", parents=[common], help="rebuild summary CSV and chart from a records CSV")
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            parser.error("--threads must be >= 1")
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 after --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (UsageError, TreeConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except experiment.TrialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # domain validation (invalid specs, trees, configs)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
