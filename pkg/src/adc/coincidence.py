"""Jeffress-style delay-line bank that decodes interaural time differences.

Branch k of a bank delays the left ear by delta_k and the right ear by
max_delay - delta_k, so it sees coincident input exactly when the left ear
leads by ``2*delta_k - max_delay`` ms. Each branch is a two-input
:class:`~adc.dendrite_model.DendriteTree`; the branch whose soma peaks
highest names the decoded ITD.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from adc.dendrite_model import (
    Branch,
    Delay,
    DendriteTree,
    IntegrationMode,
    Junction,
    LowPass,
    Segment,
    Soma,
    Supralinear,
    evaluate_tree,
)
from adc.signal_core import LabeledExample, Signal, SignalError, check_compatible


class BankError(ValueError):
    pass


# Each ear first passes through a rectifying junction (a near-zero
# threshold with a large boost) and a low-pass, which turns the 440 Hz
# carrier into its envelope. Coincidence is then detected on envelopes, so
# the bank is not fooled by carrier cycles that line up at the wrong delay.
ENVELOPE_BOOST = 10.0
ENVELOPE_CUTOFF_HZ = 100.0
# A unit pulse rectified and smoothed settles at ENVELOPE_BOOST / pi; the
# coincidence threshold sits at 60% of two overlapping envelopes.
COINCIDENCE_THRESHOLD = 0.6 * 2.0 * ENVELOPE_BOOST / math.pi
DEFAULT_INTEGRATION = Supralinear(threshold_mv=COINCIDENCE_THRESHOLD, boost=4.0)
DEFAULT_TRUNK_CUTOFF_HZ = 30.0


@dataclass(frozen=True)
class DelayBank:
    max_delay_ms: float
    branch_count: int
    integration: IntegrationMode
    trunk: tuple[Segment, ...] = ()
    trees: tuple[DendriteTree, ...] = field(default=(), repr=False, compare=False)

    @property
    def spacing_ms(self) -> float:
        return self.max_delay_ms / (self.branch_count - 1)

    def deltas(self) -> np.ndarray:
        return np.arange(self.branch_count) * self.spacing_ms

    def delay_pairs(self) -> list[tuple[float, float]]:
        return [(float(d), float(self.max_delay_ms - d)) for d in self.deltas()]

    def branch_itd_ms(self) -> np.ndarray:
        """ITD (positive = left leads) each branch is tuned to."""
        return 2.0 * self.deltas() - self.max_delay_ms


def envelope_junction(branch: int) -> Junction:
    return Junction(Supralinear(1e-3, ENVELOPE_BOOST), (branch,), (LowPass(ENVELOPE_CUTOFF_HZ),))


def build_bank(
    max_delay_ms: float = 10.0,
    branch_count: int = 21,
    mode: IntegrationMode = DEFAULT_INTEGRATION,
    trunk_cutoff_hz: float | None = DEFAULT_TRUNK_CUTOFF_HZ,
    envelope: bool = True,
) -> DelayBank:
    """Build an evenly spaced bank of complementary delay pairs.

    ``envelope=False`` feeds the delayed ears straight into the coincidence
    junction, and ``trunk_cutoff_hz=None`` drops the trunk low-pass; with
    both, a branch score is the raw peak of ``mode`` applied to the sum.
    """
    if branch_count < 3:
        raise BankError(f"branch_count must be >= 3, got {branch_count}")
    if not max_delay_ms > 0:
        raise BankError(f"max_delay_ms must be > 0, got {max_delay_ms}")
    trunk = () if trunk_cutoff_hz is None else (LowPass(trunk_cutoff_hz),)
    children = (envelope_junction(0), envelope_junction(1)) if envelope else (0, 1)
    spacing = max_delay_ms / (branch_count - 1)
    trees = []
    for k in range(branch_count):
        d_left = k * spacing
        d_right = max_delay_ms - d_left
        trees.append(
            DendriteTree(
                (Branch("left", (Delay(d_left),), 0), Branch("right", (Delay(d_right),), 1)),
                Junction(mode, children, trunk),
                Soma(float("inf")),
            )
        )
    return DelayBank(max_delay_ms, branch_count, mode, trunk, tuple(trees))


@dataclass(frozen=True)
class ItdEstimate:
    scores: np.ndarray
    best_branch: int
    itd_ms: float


def branch_scores(bank: DelayBank, left: Signal, right: Signal) -> np.ndarray:
    try:
        check_compatible(left, right)
    except SignalError as exc:
        raise BankError(str(exc)) from None
    inputs = {"left": left, "right": right}
    return np.array([evaluate_tree(tree, inputs).peak_mv for tree in bank.trees])


def decode_itd(bank: DelayBank, left: Signal, right: Signal) -> ItdEstimate:
    """Score every branch by soma peak; the first maximal branch wins."""
    scores = branch_scores(bank, left, right)
    best = int(np.argmax(scores))
    return ItdEstimate(scores, best, float(2.0 * bank.deltas()[best] - bank.max_delay_ms))


def class_itds(classes_ms: Sequence[float], delayed_channel: str = "left") -> np.ndarray:
    """Expected ITD of each dataset class: a delayed left ear means the right leads."""
    sign = -1.0 if delayed_channel == "left" else 1.0
    return sign * np.asarray(classes_ms, dtype=np.float64)


@dataclass
class DirectionReport:
    confusion: np.ndarray  # rows: true class, columns: decoded class
    estimates: list[ItdEstimate]
    predicted: np.ndarray
    labels: np.ndarray

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def per_class_accuracy(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.confusion) / rows, np.nan)


def decode_direction_sweep(
    bank: DelayBank,
    dataset: Sequence[LabeledExample],
    classes_ms: Sequence[float] = (0.0, 5.0, 10.0),
    delayed_channel: str = "left",
) -> DirectionReport:
    """Decode every example and snap its ITD to the nearest class.

    Ties between equally near classes go to the lower class index.
    """
    targets = class_itds(classes_ms, delayed_channel)
    if np.any(np.abs(targets) > bank.max_delay_ms):
        raise BankError(f"class delays {list(classes_ms)} exceed the bank's +/-{bank.max_delay_ms} ms range")
    n = len(targets)
    confusion = np.zeros((n, n), dtype=np.int64)
    estimates, predicted, labels = [], [], []
    for ex in dataset:
        if not 0 <= ex.label < n:
            raise BankError(f"label {ex.label} outside {n} classes")
        est = decode_itd(bank, ex.left, ex.right)
        pred = int(np.argmin(np.abs(targets - est.itd_ms)))
        confusion[ex.label, pred] += 1
        estimates.append(est)
        predicted.append(pred)
        labels.append(ex.label)
    return DirectionReport(confusion, estimates, np.array(predicted), np.array(labels))


def read_stereo_csv(path: str | Path, sample_rate_hz: float) -> tuple[Signal, Signal]:
    """Read a time-major two-column CSV with header ``left,right``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["left", "right"]:
        raise BankError(f"{path}: expected header 'left,right'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=np.float64).reshape(-1, 2)
    except ValueError as exc:
        raise BankError(f"{path}: {exc}") from None
    return Signal(data[:, 0], sample_rate_hz), Signal(data[:, 1], sample_rate_hz)


def estimates_csv(estimates: Sequence[ItdEstimate], labels: Sequence[int | None]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["example", "best_branch", "itd_ms", "label"])
    for i, (est, lab) in enumerate(zip(estimates, labels)):
        w.writerow([i, est.best_branch, repr(float(est.itd_ms)), "" if lab is None else lab])
    return buf.getvalue()
