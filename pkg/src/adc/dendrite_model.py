"""Dendritic segment primitives and dendrite-tree evaluation.

A tree is a set of branches, each an ordered chain of segments reading one
input channel. Branches meet at integration junctions (linear, saturating
or threshold-boosted) and the root junction drives a thresholded soma.
Junctions may carry their own trunk segments, applied to their combined
output before it is passed upward.

Units: time in ms, frequencies in Hz, amplitudes in mV-like arbitrary units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numba
import numpy as np

from adc.signal_core import Signal, check_compatible, shift

# Trunk and outer-branch amplification factors.
TRUNK_GAIN = 24.0
OUTER_BRANCH_GAIN = 1.7

# Default saturation scale: S*tanh(5/S) stays within 1% of 5 for S >= 28.9.
DEFAULT_SAT_SCALE_MV = 30.0


class DendriteError(ValueError):
    pass


# --- segments -------------------------------------------------------------


@dataclass(frozen=True)
class Delay:
    delay_ms: float

    def validate(self):
        if not self.delay_ms >= 0:
            raise DendriteError(f"delay_ms must be >= 0, got {self.delay_ms}")


@dataclass(frozen=True)
class LowPass:
    cutoff_hz: float

    def validate(self):
        if not self.cutoff_hz > 0:
            raise DendriteError(f"cutoff_hz must be > 0, got {self.cutoff_hz}")


@dataclass(frozen=True)
class AdaptiveLowPass:
    """Low-pass whose cutoff falls as recent activity rises.

    Activity is an exponential average of |x| with time constant
    ``adapt_tau_ms``; cutoff = f_max / (1 + rate_gain * activity), clamped
    to [f_min, f_max].
    """

    f_max_hz: float = 2000.0
    f_min_hz: float = 100.0
    rate_gain: float = 10.0
    adapt_tau_ms: float = 100.0

    def validate(self):
        if not (self.f_max_hz > self.f_min_hz > 0):
            raise DendriteError(f"need f_max_hz > f_min_hz > 0, got {self.f_max_hz}, {self.f_min_hz}")
        if not self.rate_gain >= 0:
            raise DendriteError(f"rate_gain must be >= 0, got {self.rate_gain}")
        if not self.adapt_tau_ms > 0:
            raise DendriteError(f"adapt_tau_ms must be > 0, got {self.adapt_tau_ms}")


@dataclass(frozen=True)
class Gain:
    factor: float

    def validate(self):
        if not self.factor > 0:
            raise DendriteError(f"gain factor must be > 0, got {self.factor}")


@dataclass(frozen=True)
class ModulatedDelay:
    """Delay shortened by a control signal: d = base / (1 + kappa * control)."""

    base_delay_ms: float
    kappa: float
    control_source: str

    def validate(self):
        if not self.base_delay_ms >= 0:
            raise DendriteError(f"base_delay_ms must be >= 0, got {self.base_delay_ms}")
        if not math.isfinite(self.kappa):
            raise DendriteError("kappa must be finite")


Segment = Union[Delay, LowPass, AdaptiveLowPass, Gain, ModulatedDelay]


# --- integration modes ----------------------------------------------------


@dataclass(frozen=True)
class Linear:
    def apply(self, s: np.ndarray) -> np.ndarray:
        return s

    def validate(self):
        pass


@dataclass(frozen=True)
class Sublinear:
    sat_scale_mv: float = DEFAULT_SAT_SCALE_MV

    def apply(self, s: np.ndarray) -> np.ndarray:
        S = self.sat_scale_mv
        y = S * np.tanh(s / S)
        # |S tanh(s/S)| <= |s| exactly; rounding can overshoot by an ulp near 0
        return np.where(np.abs(y) > np.abs(s), s, y)

    def validate(self):
        if not self.sat_scale_mv > 0:
            raise DendriteError(f"sat_scale_mv must be > 0, got {self.sat_scale_mv}")


@dataclass(frozen=True)
class Supralinear:
    threshold_mv: float = 1.0
    boost: float = 1.0

    def apply(self, s: np.ndarray) -> np.ndarray:
        return s + self.boost * np.maximum(0.0, s - self.threshold_mv)

    def validate(self):
        if not self.threshold_mv > 0:
            raise DendriteError(f"threshold_mv must be > 0, got {self.threshold_mv}")
        if not self.boost >= 0:
            raise DendriteError(f"boost must be >= 0, got {self.boost}")


IntegrationMode = Union[Linear, Sublinear, Supralinear]


# --- segment operations ---------------------------------------------------


def lowpass_alpha(cutoff_hz, sample_rate_hz: float):
    return 1.0 - np.exp(-2.0 * np.pi * np.asarray(cutoff_hz) / sample_rate_hz)


def lowpass_response(freq_hz, cutoff_hz: float, sample_rate_hz: float):
    """|H(f)| of the one-pole recurrence used by :func:`apply_lowpass`."""
    a = lowpass_alpha(cutoff_hz, sample_rate_hz)
    w = 2.0 * np.pi * np.asarray(freq_hz, dtype=np.float64) / sample_rate_hz
    return a / np.sqrt(1.0 - 2.0 * (1.0 - a) * np.cos(w) + (1.0 - a) ** 2)


def _check_cutoff(cutoff_hz: float, sample_rate_hz: float) -> None:
    if not (0 < cutoff_hz < sample_rate_hz / 2):
        raise DendriteError(f"cutoff {cutoff_hz} Hz must lie in (0, {sample_rate_hz / 2}) Hz")


@numba.njit(cache=True)
def _one_pole_kernel(x, alpha, y0):
    y = np.empty_like(x)
    prev = y0
    for n in range(x.shape[0]):
        prev = prev + alpha[n] * (x[n] - prev)
        y[n] = prev
    return y


@numba.njit(cache=True)
def _activity_kernel(x, k, a0):
    act = np.empty_like(x)
    a = a0
    for n in range(x.shape[0]):
        a = a + k * (abs(x[n]) - a)
        act[n] = a
    return act


def _one_pole(x: np.ndarray, alpha, y0: float = 0.0) -> np.ndarray:
    alpha = np.ascontiguousarray(np.broadcast_to(np.asarray(alpha, dtype=np.float64), x.shape))
    return _one_pole_kernel(np.ascontiguousarray(x), alpha, float(y0))


def apply_lowpass(signal: Signal, cutoff_hz: float) -> Signal:
    """One-pole low-pass y[n] = y[n-1] + a*(x[n] - y[n-1]), a = 1 - exp(-2*pi*fc/fs)."""
    _check_cutoff(cutoff_hz, signal.sample_rate_hz)
    a = float(lowpass_alpha(cutoff_hz, signal.sample_rate_hz))
    return signal.with_samples(_one_pole(signal.samples, a))


@dataclass(frozen=True)
class AdaptiveState:
    """Threaded state of an adaptive low-pass: activity average and filter output."""

    activity: float = 0.0
    output: float = 0.0


def apply_adaptive_lowpass(
    signal: Signal,
    params: AdaptiveLowPass,
    state_in: AdaptiveState | float = 0.0,
) -> tuple[Signal, AdaptiveState]:
    """Filter with an activity-dependent cutoff; returns (output, state_out).

    ``state_in`` may be a bare float, read as the initial activity.
    """
    params.validate()
    if not isinstance(state_in, AdaptiveState):
        state_in = AdaptiveState(activity=float(state_in))
    fs = signal.sample_rate_hz
    if params.f_max_hz >= fs / 2:
        raise DendriteError(f"f_max_hz {params.f_max_hz} must be below Nyquist {fs / 2}")
    x = signal.samples
    k = signal.dt_ms / params.adapt_tau_ms
    act = _activity_kernel(np.ascontiguousarray(x), k, float(state_in.activity))
    a = float(act[-1]) if len(act) else state_in.activity
    fc = np.clip(params.f_max_hz / (1.0 + params.rate_gain * act), params.f_min_hz, params.f_max_hz)
    y = _one_pole(x, lowpass_alpha(fc, fs), state_in.output)
    out_state = AdaptiveState(a, float(y[-1]) if len(y) else state_in.output)
    return signal.with_samples(y), out_state


def adaptive_cutoff(params: AdaptiveLowPass, activity: float) -> float:
    return float(np.clip(params.f_max_hz / (1.0 + params.rate_gain * activity), params.f_min_hz, params.f_max_hz))


def apply_gain(signal: Signal, factor: float) -> Signal:
    if not factor > 0:
        raise DendriteError(f"gain factor must be > 0, got {factor}")
    return signal.with_samples(signal.samples * factor)


def apply_modulated_delay(signal: Signal, params: ModulatedDelay, control: Signal) -> Signal:
    """Per-sample delay d[n] = clamp(base / (1 + kappa*c[n]), 0, 10*base), read
    back from the input by linear interpolation (zero before the start)."""
    params.validate()
    check_compatible(signal, control)
    base = params.base_delay_ms
    denom = 1.0 + params.kappa * control.samples
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(denom > 0, base / denom, 10.0 * base)
    d = np.clip(d, 0.0, 10.0 * base)
    fs = signal.sample_rate_hz
    n = np.arange(len(signal))
    pos = n - d * fs / 1000.0
    # snap positions within rounding noise of an integer so fixed delays stay exact
    near = np.round(pos)
    pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
    x = signal.samples
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    out = np.zeros(len(signal))
    for offset, w in ((0, 1.0 - frac), (1, frac)):
        idx = lo + offset
        ok = (idx >= 0) & (idx < len(signal)) & (w != 0.0)
        out[ok] += w[ok] * x[idx[ok]]
    return signal.with_samples(out)


def integrate(mode: IntegrationMode, inputs: Sequence[Signal]) -> Signal:
    """Sum the inputs pointwise and pass the sum through ``mode``."""
    if not inputs:
        raise DendriteError("integrate needs at least one input")
    check_compatible(*inputs)
    s = np.sum([x.samples for x in inputs], axis=0)
    return inputs[0].with_samples(mode.apply(s))


# --- trees ----------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    input: str
    segments: tuple[Segment, ...] = ()
    compartment: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))


@dataclass(frozen=True)
class Junction:
    """Integration node. ``children`` holds branch indices or nested junctions."""

    mode: IntegrationMode = field(default_factory=Linear)
    children: tuple[Union[int, "Junction"], ...] = ()
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "segments", tuple(self.segments))


@dataclass(frozen=True)
class Soma:
    threshold_mv: float = 1.0


@dataclass(frozen=True)
class DendriteTree:
    branches: tuple[Branch, ...]
    root: Junction
    soma: Soma = field(default_factory=Soma)
    coupling: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        self.validate()

    @property
    def inputs(self) -> set[str]:
        names = {b.input for b in self.branches}
        for b in self.branches:
            names.update(s.control_source for s in b.segments if isinstance(s, ModulatedDelay))
        return names

    def validate(self) -> None:
        if not self.branches:
            raise DendriteError("tree has no branches")
        if not (0.0 <= self.coupling <= 1.0):
            raise DendriteError(f"coupling must be in [0, 1], got {self.coupling}")
        if not self.soma.threshold_mv > 0:
            raise DendriteError(f"soma threshold must be > 0, got {self.soma.threshold_mv}")
        for b in self.branches:
            for s in b.segments:
                s.validate()
        seen: list[int] = []
        _walk(self.root, len(self.branches), seen, set())
        missing = set(range(len(self.branches))) - set(seen)
        if missing:
            raise DendriteError(f"branches {sorted(missing)} are not reachable from the root junction")


def _walk(node: Junction, n_branches: int, seen: list, stack: set) -> None:
    if id(node) in stack:
        raise DendriteError("junction graph contains a cycle")
    if not node.children:
        raise DendriteError("junction has no children")
    node.mode.validate()
    for s in node.segments:
        s.validate()
    stack.add(id(node))
    for child in node.children:
        if isinstance(child, Junction):
            _walk(child, n_branches, seen, stack)
        else:
            if not (0 <= child < n_branches):
                raise DendriteError(f"junction references unknown branch {child}")
            if child in seen:
                raise DendriteError(f"branch {child} is attached to more than one junction")
            seen.append(child)
    stack.discard(id(node))


@dataclass(frozen=True, eq=False)
class SomaOutput:
    waveform: Signal
    peak_mv: float
    fired: bool
    states: dict = field(default_factory=dict)


def _apply_segments(x: Signal, segments, inputs, state: AdaptiveState | None):
    for seg in segments:
        if isinstance(seg, Delay):
            x = shift(x, seg.delay_ms)
        elif isinstance(seg, LowPass):
            x = apply_lowpass(x, seg.cutoff_hz)
        elif isinstance(seg, AdaptiveLowPass):
            x, state = apply_adaptive_lowpass(x, seg, state or AdaptiveState())
        elif isinstance(seg, Gain):
            x = apply_gain(x, seg.factor)
        elif isinstance(seg, ModulatedDelay):
            if seg.control_source not in inputs:
                raise DendriteError(f"missing control input {seg.control_source!r}")
            x = apply_modulated_delay(x, seg, inputs[seg.control_source])
        else:
            raise DendriteError(f"unknown segment {seg!r}")
    return x, state


def evaluate_tree(
    tree: DendriteTree,
    inputs: Mapping[str, Signal],
    states: Mapping[int, AdaptiveState] | None = None,
) -> SomaOutput:
    """Run every branch, integrate bottom-up, and threshold at the soma.

    Branches sharing a compartment id share one adaptive state, threaded
    through them in declaration order. Afterwards each compartment state is
    pulled toward the mean over compartments by ``tree.coupling``; with
    coupling 0 compartments never see each other's activity. The resulting
    states are returned in ``SomaOutput.states`` for streaming use.
    """
    for name in tree.inputs:
        if name not in inputs:
            raise DendriteError(f"missing input channel {name!r}")
    check_compatible(*inputs.values())
    comp_states: dict[int, AdaptiveState] = dict(states or {})
    outputs: list[Signal] = []
    for b in tree.branches:
        y, st = _apply_segments(inputs[b.input], b.segments, inputs, comp_states.get(b.compartment))
        if st is not None:
            comp_states[b.compartment] = st
        outputs.append(y)
    comp_states = _couple(comp_states, tree.coupling)

    def visit(node: Junction) -> Signal:
        parts = [visit(c) if isinstance(c, Junction) else outputs[c] for c in node.children]
        y = integrate(node.mode, parts)
        y, _ = _apply_segments(y, node.segments, inputs, None)
        return y

    wave = visit(tree.root)
    peak = wave.peak()
    return SomaOutput(wave, peak, bool(peak > tree.soma.threshold_mv), comp_states)


def _couple(states: dict[int, AdaptiveState], k: float) -> dict[int, AdaptiveState]:
    if k == 0.0 or len(states) < 2:
        return states
    mean_a = float(np.mean([s.activity for s in states.values()]))
    return {c: replace(s, activity=(1.0 - k) * s.activity + k * mean_a) for c, s in states.items()}


# --- frequency-division multiplexing --------------------------------------


@dataclass(frozen=True, eq=False)
class MuxedSignal(Signal):
    """Multiplexed waveform that remembers the modulation depth used."""

    depth: float = 1.0


def _check_carriers(carriers_hz: Sequence[float], sample_rate_hz: float, bandwidth_hz: float) -> None:
    nyq = sample_rate_hz / 2
    cs = list(carriers_hz)
    if len(set(cs)) != len(cs):
        raise DendriteError(f"carriers collide: {cs}")
    for f in cs:
        if not (bandwidth_hz < f and f + bandwidth_hz < nyq):
            raise DendriteError(f"carrier {f} Hz +/- {bandwidth_hz} Hz must lie within (0, {nyq}) Hz")
    srt = sorted(cs)
    for a, b in zip(srt, srt[1:]):
        if b - a <= 2 * bandwidth_hz:
            raise DendriteError(f"carriers {a} and {b} Hz are closer than twice the {bandwidth_hz} Hz bandwidth")


def fdm_mux(inputs: Sequence[Signal], carriers_hz: Sequence[float], depth: float | None = None) -> MuxedSignal:
    """Amplitude-modulate each input on its carrier and sum.

    The shared modulation depth defaults to 0.9 / max|x| so that every
    envelope 1 + depth*x stays positive.
    """
    if len(inputs) != len(carriers_hz) or not inputs:
        raise DendriteError("need one carrier per input and at least one input")
    check_compatible(*inputs)
    fs = inputs[0].sample_rate_hz
    _check_carriers(carriers_hz, fs, 0.0)
    if depth is None:
        peak = max(float(np.max(np.abs(x.samples))) if len(x) else 0.0 for x in inputs)
        depth = 0.9 / peak if peak > 0 else 1.0
    t = inputs[0].times()
    y = np.zeros(len(t))
    for x, f in zip(inputs, carriers_hz):
        y += (1.0 + depth * x.samples) * np.cos(2 * np.pi * f * t)
    return MuxedSignal(y, fs, depth=float(depth))


def fir_lowpass(x: np.ndarray, cutoff_hz: float, sample_rate_hz: float, taps: int = 201) -> np.ndarray:
    """Zero-phase windowed-sinc (Blackman) low-pass with unity DC gain."""
    m = np.arange(taps) - (taps - 1) / 2
    h = 2 * cutoff_hz / sample_rate_hz * np.sinc(2 * cutoff_hz / sample_rate_hz * m) * np.blackman(taps)
    h /= h.sum()
    return np.convolve(x, h, mode="same")


def fdm_demux(
    muxed: Signal,
    carriers_hz: Sequence[float],
    bandwidth_hz: float,
    depth: float | None = None,
) -> list[Signal]:
    """Coherently demodulate every carrier back to its baseband channel.

    The unmodulated carrier terms are subtracted before mixing, which
    removes the DC each one would leave after demodulation.
    """
    fs = muxed.sample_rate_hz
    _check_carriers(carriers_hz, fs, bandwidth_hz)
    if depth is None:
        depth = getattr(muxed, "depth", None)
        if depth is None:
            raise DendriteError("modulation depth unknown; pass depth=")
    t = muxed.times()
    carriers = [np.cos(2 * np.pi * f * t) for f in carriers_hz]
    residual = muxed.samples - np.sum(carriers, axis=0)
    out = []
    for c in carriers:
        base = fir_lowpass(residual * c, bandwidth_hz, fs)
        out.append(Signal(2.0 * base / depth, fs))
    return out


# --- JSON tree configuration ----------------------------------------------


class TreeConfigError(DendriteError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}" + (f", column {column}" if column else "") if line else "config"
        super().__init__(f"{where}: {message}")


class _Located(dict):
    line: int = 0
    column: int = 0


def _located_loads(text: str):
    """json.loads that tags every object with its source line and column."""
    from json import decoder, scanner

    class Decoder(json.JSONDecoder):
        def __init__(self):
            super().__init__()

            def parse_object(s_and_end, *args, **kwargs):
                s, end = s_and_end
                obj, new_end = decoder.JSONObject(s_and_end, *args, **kwargs)
                loc = _Located(obj)
                loc.line = s.count("\n", 0, end) + 1
                loc.column = end - s.rfind("\n", 0, end)
                return loc, new_end

            self.parse_object = parse_object
            self.scan_once = scanner.py_make_scanner(self)

    try:
        return Decoder().decode(text)
    except json.JSONDecodeError as exc:
        raise TreeConfigError(exc.msg, exc.lineno, exc.colno) from None


def _fail(obj, msg):
    raise TreeConfigError(msg, getattr(obj, "line", None), getattr(obj, "column", None))


def _num(obj, key, default=None, required=True):
    if key not in obj:
        if required and default is None:
            _fail(obj, f"missing field {key!r}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(obj, f"field {key!r} must be a number, got {v!r}")
    return float(v)


def _only(obj, allowed, what):
    extra = set(obj) - set(allowed)
    if extra:
        _fail(obj, f"unknown fields {sorted(extra)} in {what}")


_SEGMENT_FIELDS = {
    "delay": ("delay_ms",),
    "lowpass": ("cutoff_hz",),
    "adaptive_lowpass": ("f_max_hz", "f_min_hz", "rate_gain", "adapt_tau_ms"),
    "gain": ("factor",),
    "modulated_delay": ("base_delay_ms", "kappa", "control_source"),
}


def _segment(obj) -> Segment:
    if not isinstance(obj, dict):
        raise TreeConfigError(f"segment must be an object, got {obj!r}")
    kind = obj.get("kind")
    if kind not in _SEGMENT_FIELDS:
        _fail(obj, f"unknown segment kind {kind!r}; expected one of {sorted(_SEGMENT_FIELDS)}")
    _only(obj, ("kind",) + _SEGMENT_FIELDS[kind], f"{kind} segment")
    try:
        if kind == "delay":
            seg = Delay(_num(obj, "delay_ms"))
        elif kind == "lowpass":
            seg = LowPass(_num(obj, "cutoff_hz"))
        elif kind == "adaptive_lowpass":
            d = AdaptiveLowPass()
            seg = AdaptiveLowPass(
                _num(obj, "f_max_hz", d.f_max_hz),
                _num(obj, "f_min_hz", d.f_min_hz),
                _num(obj, "rate_gain", d.rate_gain),
                _num(obj, "adapt_tau_ms", d.adapt_tau_ms),
            )
        elif kind == "gain":
            seg = Gain(_num(obj, "factor"))
        else:
            src = obj.get("control_source")
            if not isinstance(src, str):
                _fail(obj, "modulated_delay needs a string 'control_source'")
            seg = ModulatedDelay(_num(obj, "base_delay_ms"), _num(obj, "kappa"), src)
        seg.validate()
    except DendriteError as exc:
        if isinstance(exc, TreeConfigError):
            raise
        _fail(obj, str(exc))
    return seg


def _mode(obj) -> IntegrationMode:
    name = obj.get("mode", "linear")
    try:
        if name == "linear":
            return Linear()
        if name == "sublinear":
            m = Sublinear(_num(obj, "sat_scale_mv", DEFAULT_SAT_SCALE_MV))
        elif name == "supralinear":
            m = Supralinear(_num(obj, "threshold_mv"), _num(obj, "boost"))
        else:
            _fail(obj, f"unknown integration mode {name!r}")
        m.validate()
        return m
    except DendriteError as exc:
        if isinstance(exc, TreeConfigError):
            raise
        _fail(obj, str(exc))


def _junction(obj, n_branches: int) -> Junction:
    if not isinstance(obj, dict):
        raise TreeConfigError(f"junction must be an object, got {obj!r}")
    _only(obj, ("mode", "children", "segments", "sat_scale_mv", "threshold_mv", "boost"), "junction")
    children = obj.get("children")
    if not isinstance(children, list) or not children:
        _fail(obj, "junction needs a non-empty 'children' list")
    kids = []
    for c in children:
        if isinstance(c, dict):
            kids.append(_junction(c, n_branches))
        elif isinstance(c, int) and not isinstance(c, bool):
            if not 0 <= c < n_branches:
                _fail(obj, f"child {c} is not a branch index (0..{n_branches - 1})")
            kids.append(c)
        else:
            _fail(obj, f"junction child must be a branch index or junction, got {c!r}")
    segs = obj.get("segments", [])
    if not isinstance(segs, list):
        _fail(obj, "'segments' must be a list")
    return Junction(_mode(obj), tuple(kids), tuple(_segment(s) for s in segs))


def tree_from_json(text: str) -> DendriteTree:
    """Parse and validate a tree configuration; errors name the source line."""
    doc = _located_loads(text)
    if not isinstance(doc, dict):
        raise TreeConfigError("top level must be an object", 1)
    _only(doc, ("branches", "junctions", "soma", "coupling"), "tree")
    branches_doc = doc.get("branches")
    if not isinstance(branches_doc, list) or not branches_doc:
        _fail(doc, "'branches' must be a non-empty list")
    branches = []
    for b in branches_doc:
        if not isinstance(b, dict):
            _fail(doc, f"branch must be an object, got {b!r}")
        _only(b, ("input", "compartment", "segments"), "branch")
        if not isinstance(b.get("input"), str):
            _fail(b, "branch needs a string 'input'")
        comp = b.get("compartment", 0)
        if isinstance(comp, bool) or not isinstance(comp, int):
            _fail(b, f"'compartment' must be an integer, got {comp!r}")
        segs = b.get("segments", [])
        if not isinstance(segs, list):
            _fail(b, "'segments' must be a list")
        branches.append(Branch(b["input"], tuple(_segment(s) for s in segs), comp))
    if "junctions" not in doc:
        _fail(doc, "missing 'junctions'")
    root = _junction(doc["junctions"], len(branches))
    soma_doc = doc.get("soma", {})
    if not isinstance(soma_doc, dict):
        _fail(doc, "'soma' must be an object")
    _only(soma_doc, ("threshold_mv",), "soma")
    soma = Soma(_num(soma_doc, "threshold_mv", Soma().threshold_mv))
    coupling = _num(doc, "coupling", 0.0, required=False)
    try:
        return DendriteTree(tuple(branches), root, soma, coupling)
    except TreeConfigError:
        raise
    except DendriteError as exc:
        _fail(doc, str(exc))


def load_tree(path) -> DendriteTree:
    with open(path, encoding="utf-8") as fh:
        return tree_from_json(fh.read())


def _segment_to_dict(seg: Segment) -> dict:
    kind = {
        Delay: "delay", LowPass: "lowpass", AdaptiveLowPass: "adaptive_lowpass",
        Gain: "gain", ModulatedDelay: "modulated_delay",
    }[type(seg)]
    return {"kind": kind, **{k: getattr(seg, k) for k in _SEGMENT_FIELDS[kind]}}


def _mode_to_dict(mode: IntegrationMode) -> dict:
    if isinstance(mode, Sublinear):
        return {"mode": "sublinear", "sat_scale_mv": mode.sat_scale_mv}
    if isinstance(mode, Supralinear):
        return {"mode": "supralinear", "threshold_mv": mode.threshold_mv, "boost": mode.boost}
    return {"mode": "linear"}


def tree_to_json(tree: DendriteTree) -> str:
    def junction(j: Junction) -> dict:
        d = _mode_to_dict(j.mode)
        d["children"] = [junction(c) if isinstance(c, Junction) else c for c in j.children]
        if j.segments:
            d["segments"] = [_segment_to_dict(s) for s in j.segments]
        return d

    doc = {
        "branches": [
            {"input": b.input, "compartment": b.compartment, "segments": [_segment_to_dict(s) for s in b.segments]}
            for b in tree.branches
        ],
        "junctions": junction(tree.root),
        "soma": {"threshold_mv": tree.soma.threshold_mv},
        "coupling": tree.coupling,
    }
    return json.dumps(doc, indent=2) + "\n"
