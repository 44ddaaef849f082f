"""Sampled signals, pulse and noise generation, and the two-ear pulse dataset.

Signals are immutable float64 waveforms tagged with a sample rate. The
dataset generator renders two copies of a gated sine pulse, delays one of
them by a class-dependent amount, jitters both onsets and adds white noise.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from adc._io import atomic_write
from adc.rng import Stream


class SignalError(ValueError):
    """Raised for invalid signals, specs, or incompatible operands."""


@dataclass(frozen=True, eq=False)
class Signal:
    """A uniformly sampled real waveform.

    Attributes:
        samples: 1-D float64 array; stored read-only.
        sample_rate_hz: Samples per second, strictly positive.
    """

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise SignalError(f"samples must be 1-D, got shape {arr.shape}")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise SignalError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(arr)):
            raise SignalError("samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dt_ms(self) -> float:
        return 1000.0 / self.sample_rate_hz

    @property
    def duration_ms(self) -> float:
        return len(self) * self.dt_ms

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2)) if len(self) else 0.0

    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate_hz

    def peak(self) -> float:
        return float(self.samples.max()) if len(self) else 0.0

    def with_samples(self, samples) -> "Signal":
        return Signal(samples, self.sample_rate_hz)

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(
            self.samples, other.samples
        )

    __hash__ = None


def zeros(n: int, sample_rate_hz: float) -> Signal:
    return Signal(np.zeros(n), sample_rate_hz)


def check_compatible(*signals: Signal) -> None:
    """Require equal sample rates and lengths."""
    if not signals:
        return
    rate, n = signals[0].sample_rate_hz, len(signals[0])
    for s in signals[1:]:
        if s.sample_rate_hz != rate:
            raise SignalError(f"sample rate mismatch: {rate} vs {s.sample_rate_hz}")
        if len(s) != n:
            raise SignalError(f"length mismatch: {n} vs {len(s)}")


@dataclass(frozen=True)
class PulseSpec:
    freq_hz: float = 440.0
    width_ms: float = 10.0
    amplitude: float = 1.0
    onset_ms: float = 0.0

    def validate(self) -> None:
        if not self.freq_hz > 0:
            raise SignalError(f"pulse freq_hz must be > 0, got {self.freq_hz}")
        if not self.width_ms > 0:
            raise SignalError(f"pulse width_ms must be > 0, got {self.width_ms}")
        if not self.onset_ms >= 0:
            raise SignalError(f"pulse onset_ms must be >= 0, got {self.onset_ms}")


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float | None = 20.0
    jitter_std_ms: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if not self.jitter_std_ms >= 0:
            raise SignalError(f"jitter_std_ms must be >= 0, got {self.jitter_std_ms}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise SignalError(f"snr_db must be finite or None, got {self.snr_db}")


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of the two-ear delay classification dataset.

    ``delayed_channel`` selects which ear carries the class delay; the other
    keeps the base onset.
    """

    classes_ms: tuple[float, ...] = (0.0, 5.0, 10.0)
    train_count: int = 800
    test_count: int = 800
    window_ms: float = 40.0
    sample_rate_hz: float = 8000.0
    pulse: PulseSpec = field(default_factory=PulseSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    delayed_channel: str = "left"

    def __post_init__(self):
        object.__setattr__(self, "classes_ms", tuple(float(c) for c in self.classes_ms))

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate_hz / 1000.0))

    @property
    def jitter_bound_ms(self) -> float:
        return 3.0 * self.noise.jitter_std_ms

    def validate(self) -> None:
        if self.train_count <= 0:
            raise SignalError(f"train_count must be > 0, got {self.train_count}")
        if self.test_count <= 0:
            raise SignalError(f"test_count must be > 0, got {self.test_count}")
        if not self.sample_rate_hz > 0:
            raise SignalError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if not self.classes_ms:
            raise SignalError("classes_ms must not be empty")
        if len(set(self.classes_ms)) != len(self.classes_ms):
            raise SignalError(f"classes_ms must be distinct, got {list(self.classes_ms)}")
        if min(self.classes_ms) < 0:
            raise SignalError("class delays must be >= 0")
        if len(self.classes_ms) > 256:
            raise SignalError("at most 256 classes fit the dataset file format")
        if self.delayed_channel not in ("left", "right"):
            raise SignalError(f"delayed_channel must be 'left' or 'right', got {self.delayed_channel!r}")
        self.pulse.validate()
        self.noise.validate()
        need = max(self.classes_ms) + self.pulse.width_ms + 2 * self.jitter_bound_ms
        if need > self.window_ms:
            raise SignalError(
                f"max(classes_ms) + pulse width + 2*3*jitter_std = {need} ms exceeds window_ms = {self.window_ms}"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        pulse = PulseSpec(**d.pop("pulse", {}))
        noise = NoiseSpec(**d.pop("noise", {}))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise SignalError(f"unknown DatasetSpec fields: {sorted(unknown)}")
        return cls(pulse=pulse, noise=noise, **d)


@dataclass(frozen=True, eq=False)
class LabeledExample:
    left: Signal
    right: Signal
    label: int

    def __post_init__(self):
        check_compatible(self.left, self.right)
        if self.label < 0:
            raise SignalError(f"label must be >= 0, got {self.label}")

    def stacked(self) -> np.ndarray:
        """(T, 2) array with columns (left, right)."""
        return np.stack([self.left.samples, self.right.samples], axis=1)


def gen_sine_pulse(spec: PulseSpec, window_ms: float, sample_rate_hz: float) -> Signal:
    """Render a gated sine pulse starting at ``spec.onset_ms``.

    Sample n holds ``amplitude * sin(2*pi*freq*(t_n - onset))`` while
    ``onset <= t_n < onset + width`` and zero elsewhere.
    """
    spec.validate()
    if spec.onset_ms + spec.width_ms > window_ms + 1e-9:
        raise SignalError(
            f"pulse [{spec.onset_ms}, {spec.onset_ms + spec.width_ms}) ms exceeds the {window_ms} ms window"
        )
    n = int(round(window_ms * sample_rate_hz / 1000.0))
    t = np.arange(n) / sample_rate_hz
    onset = spec.onset_ms / 1000.0
    gate = (t >= onset) & (t < onset + spec.width_ms / 1000.0)
    x = np.where(gate, spec.amplitude * np.sin(2 * np.pi * spec.freq_hz * (t - onset)), 0.0)
    return Signal(x, sample_rate_hz)


def fractional_shift(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """Delay a sample array by a non-negative, possibly fractional, amount.

    Integer delays are exact; fractional delays interpolate linearly between
    neighbours, with zeros before the start of the input.
    """
    n = x.shape[0]
    out = np.zeros(n)
    k = int(math.floor(delay_samples))
    frac = delay_samples - k
    if k >= n:
        return out
    if frac == 0.0:
        out[k:] = x[: n - k]
        return out
    # y[m] = (1-frac)*x[m-k] + frac*x[m-k-1]
    out[k:] += (1.0 - frac) * x[: n - k]
    if k + 1 < n:
        out[k + 1 :] += frac * x[: n - k - 1]
    return out


def shift(signal: Signal, delay_ms: float) -> Signal:
    """Delay a signal by ``delay_ms``, keeping its length."""
    if not delay_ms >= 0:
        raise SignalError(f"delay must be >= 0, got {delay_ms}")
    d = delay_ms * signal.sample_rate_hz / 1000.0
    rounded = round(d)
    if abs(d - rounded) < 1e-9:
        d = float(rounded)
    return signal.with_samples(fractional_shift(signal.samples, d))


def add_white_noise(signal: Signal, snr_db: float | None, rng: Stream) -> Signal:
    """Add zero-mean Gaussian noise at the requested signal-to-noise ratio.

    Signal power is the mean square over the whole signal. ``snr_db=None``
    returns the input unchanged without consuming randomness.
    """
    if snr_db is None:
        return signal
    power = signal.power
    if power == 0.0:
        raise SignalError("cannot set an SNR on a zero-power signal")
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    return signal.with_samples(signal.samples + rng.normal(0.0, sigma, size=len(signal)))


def balanced_labels(count: int, n_classes: int) -> np.ndarray:
    return np.arange(count) % n_classes


def _gen_split(spec: DatasetSpec, count: int, rng: Stream) -> list[LabeledExample]:
    pulse = spec.pulse
    jb = spec.jitter_bound_ms
    lo = jb
    hi = spec.window_ms - max(spec.classes_ms) - pulse.width_ms - jb
    labels = balanced_labels(count, len(spec.classes_ms))[rng.substream("order").permutation(count)]
    onsets = rng.substream("onset").uniform(lo, hi, size=count)
    if spec.noise.jitter_std_ms > 0:
        jitter = rng.substream("jitter").normal(0.0, spec.noise.jitter_std_ms, size=2 * count)
        jitter = np.clip(jitter, -jb, jb).reshape(count, 2)
    else:
        jitter = np.zeros((count, 2))
    noise_rng = rng.substream("noise", spec.noise.seed)
    out = []
    for i in range(count):
        label = int(labels[i])
        delay = spec.classes_ms[label]
        delayed = onsets[i] + delay
        plain = onsets[i]
        left_on, right_on = (delayed, plain) if spec.delayed_channel == "left" else (plain, delayed)
        left = gen_sine_pulse(
            dataclasses.replace(pulse, onset_ms=max(0.0, left_on + jitter[i, 0])),
            spec.window_ms,
            spec.sample_rate_hz,
        )
        right = gen_sine_pulse(
            dataclasses.replace(pulse, onset_ms=max(0.0, right_on + jitter[i, 1])),
            spec.window_ms,
            spec.sample_rate_hz,
        )
        left = add_white_noise(left, spec.noise.snr_db, noise_rng)
        right = add_white_noise(right, spec.noise.snr_db, noise_rng)
        out.append(LabeledExample(left, right, label))
    return out


def gen_dataset(spec: DatasetSpec) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Generate (train, test) splits; deterministic in ``spec.seed``."""
    spec.validate()
    root = Stream(spec.seed)
    train = _gen_split(spec, spec.train_count, root.substream("train"))
    test = _gen_split(spec, spec.test_count, root.substream("test"))
    return train, test


# --- ADCD binary dataset format -------------------------------------------

DATASET_MAGIC = b"ADCD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHdIHI")


def encode_dataset(examples: Sequence[LabeledExample]) -> bytes:
    if not examples:
        raise SignalError("cannot encode an empty dataset")
    rate = examples[0].left.sample_rate_hz
    n = len(examples[0].left)
    parts = [_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, rate, len(examples), 2, n)]
    for ex in examples:
        if ex.left.sample_rate_hz != rate or len(ex.left) != n:
            raise SignalError("all examples must share sample rate and length")
        if ex.label > 255:
            raise SignalError(f"label {ex.label} does not fit in u8")
        parts.append(struct.pack("<B", ex.label))
        parts.append(np.concatenate([ex.left.samples, ex.right.samples]).astype("<f4").tobytes())
    return b"".join(parts)


def decode_dataset(data: bytes) -> list[LabeledExample]:
    if len(data) < _HEADER.size:
        raise SignalError("truncated dataset header")
    magic, version, rate, count, channels, n = _HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise SignalError(f"bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise SignalError(f"unsupported dataset version {version}")
    if channels != 2:
        raise SignalError(f"expected 2 channels, got {channels}")
    rec = 1 + 4 * channels * n
    if len(data) != _HEADER.size + count * rec:
        raise SignalError("dataset size does not match header")
    out = []
    off = _HEADER.size
    for _ in range(count):
        label = data[off]
        x = np.frombuffer(data, dtype="<f4", count=2 * n, offset=off + 1).astype(np.float64)
        out.append(LabeledExample(Signal(x[:n], rate), Signal(x[n:], rate), int(label)))
        off += rec
    return out


def write_dataset(path: str | Path, examples: Sequence[LabeledExample]) -> None:
    atomic_write(path, encode_dataset(examples))


def read_dataset(path: str | Path) -> list[LabeledExample]:
    return decode_dataset(Path(path).read_bytes())


def write_manifest(path: str | Path, spec: DatasetSpec, **extra) -> None:
    doc = {"spec": spec.to_dict(), **extra}
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def read_manifest(path: str | Path) -> DatasetSpec:
    doc = json.loads(Path(path).read_text())
    return DatasetSpec.from_dict(doc["spec"])
