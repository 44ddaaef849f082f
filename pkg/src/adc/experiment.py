"""Plain vs dendrite-augmented BiLSTM comparison across hidden sizes.

A sweep trains a fresh model for every (architecture, hidden size, trial)
coordinate and records its test accuracy. Each coordinate gets its own
seed, hashed from the base seed and the coordinate itself, so results do
not depend on execution order, worker count, or which other coordinates
are part of the sweep.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from adc._io import atomic_write_text
from adc.nn import TrainConfig, evaluate, init_params, train
from adc.rng import derive_seed
from adc.signal_core import DatasetSpec, LabeledExample, gen_dataset, shift
from adc.svg import line_chart

log = logging.getLogger(__name__)

ARCHITECTURES = ("plain", "dendritic")
INPUT_CHANNELS = {"plain": 2, "dendritic": 3}

# Delays of the two dendrites fed by the second (right) ear.
DENDRITE_DELAYS_MS = (0.0, 10.0)


class TrialError(RuntimeError):
    def __init__(self, arch: str, hidden: int, trial: int, cause: BaseException):
        self.arch, self.hidden, self.trial = arch, hidden, trial
        super().__init__(f"trial failed at arch={arch} hidden={hidden} trial={trial}: {cause!r}")


def make_dendrite_inputs(example: LabeledExample) -> np.ndarray:
    """(T, 3): the untouched reference ear, then the other ear through a
    0 ms and a 10 ms delay-line dendrite."""
    cols = [example.left.samples]
    cols += [shift(example.right, d).samples for d in DENDRITE_DELAYS_MS]
    return np.stack(cols, axis=1)


def make_plain_inputs(example: LabeledExample) -> np.ndarray:
    return example.stacked()


def to_arrays(examples: Sequence[LabeledExample], arch: str) -> tuple[np.ndarray, np.ndarray]:
    if arch not in INPUT_CHANNELS:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    build = make_dendrite_inputs if arch == "dendritic" else make_plain_inputs
    X = np.stack([build(ex) for ex in examples])
    y = np.array([ex.label for ex in examples], dtype=np.int64)
    return X, y


@dataclass(frozen=True)
class SweepConfig:
    hidden_sizes: tuple[int, ...] = tuple(range(1, 11))
    trials_per_size: int = 40
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    base_seed: int = 0
    architectures: tuple[str, ...] = ARCHITECTURES
    regenerate_dataset: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "architectures", tuple(self.architectures))

    def validate(self) -> None:
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden sizes must be >= 1")
        if self.trials_per_size < 1:
            raise ValueError("trials_per_size must be >= 1")
        bad = [a for a in self.architectures if a not in INPUT_CHANNELS]
        if bad or not self.architectures:
            raise ValueError(f"unknown architectures {bad}; expected a subset of {ARCHITECTURES}")
        self.train.validate()
        self.dataset.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown sweep config fields: {sorted(unknown)}")
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        if "dataset" in d:
            d["dataset"] = DatasetSpec.from_dict(d["dataset"])
        return cls(**d)


@dataclass(frozen=True)
class TrialRecord:
    arch: str
    hidden: int
    trial: int
    seed: int
    accuracy: float


@dataclass(frozen=True)
class SummaryRow:
    arch: str
    hidden: int
    mean: float
    std: float
    n: int


@dataclass
class SweepResult:
    records: list[TrialRecord]

    def __post_init__(self):
        self.records = sorted(
            self.records,
            key=lambda r: (ARCHITECTURES.index(r.arch) if r.arch in ARCHITECTURES else 99, r.arch, r.hidden, r.trial),
        )

    def summary(self) -> list[SummaryRow]:
        groups: dict[tuple[str, int], list[float]] = {}
        for r in self.records:
            groups.setdefault((r.arch, r.hidden), []).append(r.accuracy)
        rows = []
        for (arch, h), accs in groups.items():
            a = np.array(accs)
            std = float(a.std(ddof=1)) if len(a) > 1 else 0.0
            rows.append(SummaryRow(arch, h, float(a.mean()), std, len(a)))
        return rows

    def means(self) -> dict[str, dict[int, float]]:
        out: dict[str, dict[int, float]] = {}
        for row in self.summary():
            out.setdefault(row.arch, {})[row.hidden] = row.mean
        return out


def trial_seed(base_seed: int, arch: str, hidden: int, trial: int) -> int:
    return derive_seed(base_seed, "trial", arch, hidden, trial)


def run_trial(
    arch: str,
    hidden: int,
    dataset: tuple[Sequence[LabeledExample], Sequence[LabeledExample]],
    seed: int,
    train_config: TrainConfig | None = None,
) -> float:
    """Train a fresh model on the train split and return test accuracy."""
    train_config = train_config or TrainConfig()
    train_set, test_set = dataset
    Xtr, ytr = to_arrays(train_set, arch)
    Xte, yte = to_arrays(test_set, arch)
    return _fit_and_score(arch, hidden, Xtr, ytr, Xte, yte, seed, train_config)


def _fit_and_score(arch, hidden, Xtr, ytr, Xte, yte, seed, train_config) -> float:
    model = init_params(INPUT_CHANNELS[arch], hidden, derive_seed(seed, "init"))
    cfg = dataclasses.replace(train_config, seed=derive_seed(seed, "train"))
    model, _ = train(model, Xtr, ytr, cfg)
    return evaluate(model, Xte, yte)


# Per-process cache of array-form datasets, keyed by (dataset spec, arch).
_ARRAYS: dict = {}


def _arrays_for(spec: DatasetSpec, arch: str):
    key = (json.dumps(spec.to_dict(), sort_keys=True), arch)
    if key not in _ARRAYS:
        if len(_ARRAYS) > 8:
            _ARRAYS.clear()
        train_set, test_set = gen_dataset(spec)
        _ARRAYS[key] = to_arrays(train_set, arch) + to_arrays(test_set, arch)
    return _ARRAYS[key]


def _job(args) -> TrialRecord:
    arch, hidden, trial, config = args
    seed = trial_seed(config.base_seed, arch, hidden, trial)
    spec = config.dataset
    if config.regenerate_dataset:
        spec = dataclasses.replace(spec, seed=derive_seed(seed, "dataset"))
    try:
        Xtr, ytr, Xte, yte = _arrays_for(spec, arch)
        acc = _fit_and_score(arch, hidden, Xtr, ytr, Xte, yte, seed, config.train)
    except Exception as exc:
        raise TrialError(arch, hidden, trial, exc) from exc
    return TrialRecord(arch, hidden, trial, seed, acc)


def sweep_coordinates(config: SweepConfig) -> list[tuple[str, int, int]]:
    return [
        (arch, h, t)
        for arch in config.architectures
        for h in config.hidden_sizes
        for t in range(config.trials_per_size)
    ]


def run_sweep(config: SweepConfig, threads: int = 1, progress=None) -> SweepResult:
    """Run every (architecture, hidden size, trial) job.

    ``threads > 1`` fans jobs out to worker processes; the records are
    identical either way. ``progress`` is called with each finished record.
    """
    config.validate()
    jobs = [(a, h, t, config) for a, h, t in sweep_coordinates(config)]
    # longest jobs first keeps workers evenly loaded
    jobs.sort(key=lambda j: -j[1])
    records = []
    if threads <= 1:
        for job in jobs:
            rec = _job(job)
            records.append(rec)
            if progress:
                progress(rec)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rec in pool.map(_job, jobs, chunksize=1):
                records.append(rec)
                if progress:
                    progress(rec)
    return SweepResult(records)


# --- export ----------------------------------------------------------------


def records_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arch", "hidden", "trial", "seed", "accuracy"])
    for r in result.records:
        w.writerow([r.arch, r.hidden, r.trial, r.seed, repr(float(r.accuracy))])
    return buf.getvalue()


def summary_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arch", "hidden", "mean", "std", "n"])
    for s in result.summary():
        w.writerow([s.arch, s.hidden, repr(float(s.mean)), repr(float(s.std)), s.n])
    return buf.getvalue()


def read_records_csv(path: str | Path) -> SweepResult:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return SweepResult(
        [TrialRecord(r["arch"], int(r["hidden"]), int(r["trial"]), int(r["seed"]), float(r["accuracy"])) for r in rows]
    )


def accuracy_chart(result: SweepResult) -> str:
    summary = result.summary()
    series = []
    for arch in dict.fromkeys(s.arch for s in summary):
        pts = sorted((s.hidden, s.mean, s.std) for s in summary if s.arch == arch)
        series.append((arch, pts))
    return line_chart(
        series,
        title="Test accuracy vs BiLSTM hidden size",
        x_label="hidden nodes",
        y_label="mean test accuracy",
        y_range=(0.0, 1.0),
    )


def export_results(result: SweepResult, out_dir: str | Path, prefix: str = "sweep") -> dict[str, Path]:
    """Write records CSV, summary CSV and an SVG chart into ``out_dir``."""
    if not result.records:
        raise ValueError("nothing to export: sweep has no records")
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise OSError(f"output directory does not exist: {out_dir}")
    paths = {
        "records": out_dir / f"{prefix}_records.csv",
        "summary": out_dir / f"{prefix}_summary.csv",
        "chart": out_dir / f"{prefix}_chart.svg",
    }
    try:
        atomic_write_text(paths["records"], records_csv(result))
        atomic_write_text(paths["summary"], summary_csv(result))
        atomic_write_text(paths["chart"], accuracy_chart(result))
    except OSError as exc:
        raise OSError(f"cannot write results to {out_dir}: {exc}") from exc
    return paths


def check_size_ordering(result: SweepResult, step_tol: float = 0.02, lead_tol: float = 0.05) -> dict[str, bool]:
    """Ordinal properties expected of the accuracy-vs-size curves.

    - monotone: each architecture's mean is non-decreasing in hidden size,
      allowing a drop of at most ``step_tol`` between consecutive sizes;
    - dendritic_ahead: dendritic mean >= plain mean at every size <= 4;
    - one_node_gain: dendritic(H) >= plain(H+1) - ``lead_tol`` for H in 1..3
      wherever plain(H+1) was measured.
    """
    means = result.means()
    plain, dend = means.get("plain", {}), means.get("dendritic", {})
    monotone = True
    for curve in (plain, dend):
        hs = sorted(curve)
        for a, b in zip(hs, hs[1:]):
            if curve[b] < curve[a] - step_tol - 1e-12:
                monotone = False
    ahead = all(dend[h] >= plain[h] for h in plain if h <= 4 and h in dend)
    gain = all(dend[h] >= plain[h + 1] - lead_tol - 1e-12 for h in (1, 2, 3) if h in dend and h + 1 in plain)
    return {"monotone": monotone, "dendritic_ahead": ahead, "one_node_gain": gain}


def format_summary(result: SweepResult) -> str:
    lines = []
    for s in result.summary():
        lines.append(f"{s.arch:>9}  H={s.hidden:<2}  mean={s.mean:.4f}  std={s.std:.4f}  n={s.n}")
    return "\n".join(lines)

