import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adc.dendrite_model import (
    OUTER_BRANCH_GAIN,
    TRUNK_GAIN,
    AdaptiveLowPass,
    AdaptiveState,
    Branch,
    Delay,
    DendriteError,
    DendriteTree,
    Gain,
    Junction,
    Linear,
    ModulatedDelay,
    Soma,
    Sublinear,
    Supralinear,
    TreeConfigError,
    adaptive_cutoff,
    apply_adaptive_lowpass,
    apply_gain,
    apply_lowpass,
    apply_modulated_delay,
    evaluate_tree,
    fdm_demux,
    fdm_mux,
    integrate,
    load_tree,
    lowpass_alpha,
    lowpass_response,
    tree_from_json,
    tree_to_json,
)
from adc.rng import Stream
from adc.signal_core import PulseSpec, Signal, gen_sine_pulse, shift

FS = 8000.0


def sig(x, fs=FS):
    return Signal(np.asarray(x, dtype=float), fs)


def steady_amplitude(y, f, fs, skip):
    """Least-squares amplitude of a sinusoid at f in y[skip:]."""
    t = np.arange(len(y))[skip:] / fs
    A = np.stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y[skip:], rcond=None)
    return float(np.hypot(*coef))


def fwhm(y):
    """Full width at half maximum in samples, with interpolated crossings."""
    half = y.max() / 2
    above = np.flatnonzero(y >= half)
    i, j = above[0], above[-1]
    left = i - (y[i] - half) / (y[i] - y[i - 1]) if i > 0 else float(i)
    right = j + (y[j] - half) / (y[j] - y[j + 1]) if j + 1 < len(y) else float(j)
    return right - left


def pulse_train(rate_hz, n_pulses, fs=FS, width_ms=1.0, total_ms=None):
    total_ms = total_ms or n_pulses * 1000.0 / rate_hz
    x = np.zeros(int(round(total_ms * fs / 1000)))
    period = int(round(fs / rate_hz))
    w = int(round(width_ms * fs / 1000))
    for k in range(n_pulses):
        x[k * period : k * period + w] = 1.0
    return x, period


class TestLowPass:
    def test_dc_converges(self):
        # the step residual decays as exp(-n / tau): 0.67% at 5 tau, < 0.1% from 7 tau
        fc = 100.0
        tau = FS / (2 * np.pi * fc)
        y = apply_lowpass(sig(np.full(int(8 * tau), 3.0)), fc).samples
        n5, n7 = int(np.ceil(5 * tau)), int(np.ceil(7 * tau))
        assert 1 - y[n5 - 1] / 3.0 == pytest.approx(math.exp(-n5 / tau), rel=1e-9)
        assert y[n7 - 1] == pytest.approx(3.0, rel=1e-3)

    def test_dc_gain_is_one(self):
        assert lowpass_response(0.0, 250.0, FS) == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("f", np.linspace(20, 3000, 10))
    def test_sine_gain_matches_transfer(self, f):
        fc = 300.0
        n = 16000
        x = np.sin(2 * np.pi * f * np.arange(n) / FS)
        y = apply_lowpass(sig(x), fc).samples
        assert steady_amplitude(y, f, FS, n // 2) == pytest.approx(lowpass_response(f, fc, FS), rel=0.02)

    def test_near_nyquist_passes_slow_input(self):
        x = 1.0 + 0.5 * np.sin(2 * np.pi * 10 * np.arange(4000) / FS)
        y = apply_lowpass(sig(x), 3999.0).samples
        assert np.max(np.abs(y[10:] - x[10:]) / np.abs(x[10:])) < 0.01

    def test_cutoff_range_checked(self):
        with pytest.raises(DendriteError):
            apply_lowpass(sig(np.ones(4)), 4000.0)
        with pytest.raises(DendriteError):
            apply_lowpass(sig(np.ones(4)), 0.0)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_linearity(self, a, b, seed):
        r = Stream(seed)
        x, y = r.normal(size=200), r.normal(size=200)
        lhs = apply_lowpass(sig(a * x + b * y), 500.0).samples
        rhs = a * apply_lowpass(sig(x), 500.0).samples + b * apply_lowpass(sig(y), 500.0).samples
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (abs(a) + abs(b) + 1))

    def test_response_monotone(self):
        h = lowpass_response(np.linspace(0, FS / 2, 200), 400.0, FS)
        assert np.all(np.diff(h) <= 0)

    def test_alpha_formula(self):
        assert lowpass_alpha(100.0, FS) == pytest.approx(1 - math.exp(-2 * math.pi * 100 / FS), rel=1e-15)


class TestAdaptiveLowPass:
    def test_zero_input_stays_at_fmax(self):
        p = AdaptiveLowPass()
        y, st_out = apply_adaptive_lowpass(sig(np.zeros(100)), p, 0.0)
        assert not y.samples.any()
        assert adaptive_cutoff(p, st_out.activity) == p.f_max_hz

    def test_zero_rate_gain_equals_fixed(self):
        p = AdaptiveLowPass(f_max_hz=1500.0, rate_gain=0.0)
        x = sig(Stream(2).normal(size=300))
        y, _ = apply_adaptive_lowpass(x, p, 0.0)
        np.testing.assert_array_equal(y.samples, apply_lowpass(x, 1500.0).samples)

    def test_high_rate_train_broadens_pulses(self):
        p = AdaptiveLowPass()
        fs = 48000.0
        widths = {}
        for rate in (20.0, 200.0):
            x, period = pulse_train(rate, int(rate), fs=fs, total_ms=1000.0)
            y, _ = apply_adaptive_lowpass(sig(x, fs), p, 0.0)
            last = (int(rate) - 1) * period
            widths[rate] = fwhm(y.samples[last : last + period])
        assert widths[200.0] > widths[20.0]

    def test_single_pulse_adapts_little(self):
        # broadening needs many spikes: one pulse moves the cutoff < 25% as far as twenty
        p = AdaptiveLowPass()
        one, _ = pulse_train(200.0, 1, total_ms=100.0)
        many, _ = pulse_train(200.0, 20, total_ms=100.0)
        _, s1 = apply_adaptive_lowpass(sig(one[:8]), p, 0.0)
        _, s20 = apply_adaptive_lowpass(sig(many), p, 0.0)
        d1 = p.f_max_hz - adaptive_cutoff(p, s1.activity)
        d20 = p.f_max_hz - adaptive_cutoff(p, s20.activity)
        assert 0 < d1 < 0.25 * d20

    def test_streaming_state_threads(self):
        p = AdaptiveLowPass()
        x = Stream(4).normal(size=400)
        whole, _ = apply_adaptive_lowpass(sig(x), p, 0.0)
        a, s = apply_adaptive_lowpass(sig(x[:150]), p, 0.0)
        b, _ = apply_adaptive_lowpass(sig(x[150:]), p, s)
        np.testing.assert_allclose(np.concatenate([a.samples, b.samples]), whole.samples, rtol=0, atol=1e-15)

    def test_invalid_params(self):
        with pytest.raises(DendriteError):
            apply_adaptive_lowpass(sig(np.zeros(3)), AdaptiveLowPass(f_max_hz=50.0, f_min_hz=100.0))


class TestGain:
    def test_trunk_default(self):
        x = gen_sine_pulse(PulseSpec(freq_hz=100.0, width_ms=10.0), 20.0, FS)  # peak sample is exactly 1
        assert apply_gain(x, TRUNK_GAIN).peak() == pytest.approx(24.0, rel=1e-12)

    def test_outer_branch_default(self):
        assert apply_gain(sig([0.0, 2.0]), OUTER_BRANCH_GAIN).peak() == pytest.approx(3.4, rel=1e-12)

    def test_identity(self):
        x = sig([1.0, -2.0])
        assert apply_gain(x, 1.0) == x

    def test_nonpositive_rejected(self):
        with pytest.raises(DendriteError):
            apply_gain(sig([1.0]), 0.0)


class TestModulatedDelay:
    def setup_method(self):
        self.x = gen_sine_pulse(PulseSpec(onset_ms=2.0), 40.0, FS)

    def test_zero_control_is_fixed_delay(self):
        y = apply_modulated_delay(self.x, ModulatedDelay(3.0, 0.7, "c"), sig(np.zeros(len(self.x))))
        assert y == shift(self.x, 3.0)

    def test_zero_kappa_ignores_control(self):
        c = sig(Stream(1).normal(size=len(self.x)))
        y = apply_modulated_delay(self.x, ModulatedDelay(3.0, 0.0, "c"), c)
        assert y == shift(self.x, 3.0)

    @given(st.floats(0.0, 5.0), st.floats(-0.5, 2.0))
    @settings(max_examples=30, deadline=None)
    def test_constant_control_closed_form(self, c, kappa):
        base = 4.0
        p = ModulatedDelay(base, kappa, "c")
        y = apply_modulated_delay(self.x, p, sig(np.full(len(self.x), c)))
        denom = 1 + kappa * c
        d = min(max(base / denom, 0.0), 10 * base) if denom > 0 else 10 * base
        np.testing.assert_allclose(y.samples, shift(self.x, d).samples, rtol=0, atol=1e-9)

    def test_mismatched_control_rejected(self):
        with pytest.raises(ValueError):
            apply_modulated_delay(self.x, ModulatedDelay(1.0, 1.0, "c"), sig(np.zeros(3)))


class TestIntegrate:
    def test_linear_sum(self):
        np.testing.assert_array_equal(integrate(Linear(), [sig([1.0, 2.0]), sig([3.0, -1.0])]).samples, [4.0, 1.0])

    def test_sublinear_two_2mv_peaks(self):
        y = integrate(Sublinear(30.0), [sig([2.0]), sig([2.0])]).samples[0]
        assert y == pytest.approx(30 * math.tanh(4 / 30), rel=1e-14)
        assert y == pytest.approx(3.97646, abs=5e-6)
        assert abs(y - 4.0) / 4.0 <= 0.01

    def test_supralinear_hinge(self):
        assert integrate(Supralinear(5.0, 1.0), [sig([8.0])]).samples[0] == 11.0

    @given(st.floats(0.0, 200.0, allow_subnormal=False))
    def test_ordering_bounds(self, s):
        x = np.array([s])
        assert Sublinear().apply(x)[0] <= Linear().apply(x)[0] <= Supralinear(1.0, 2.0).apply(x)[0]

    @given(st.floats(-5.0, 5.0, allow_subnormal=False).filter(lambda v: v != 0))
    def test_sublinear_linear_below_5mv(self, s):
        assert abs(Sublinear().apply(np.array([s]))[0] - s) / abs(s) <= 0.01

    def test_empty_rejected(self):
        with pytest.raises(DendriteError):
            integrate(Linear(), [])

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError):
            integrate(Linear(), [sig([1.0]), sig([1.0, 2.0])])


def two_branch(threshold=2.5, mode=None, seg_a=(), seg_b=()):
    return DendriteTree(
        (Branch("a", seg_a, 0), Branch("b", seg_b, 1)),
        Junction(mode or Supralinear(1.5, 2.0), (0, 1)),
        Soma(threshold),
    )


def unit_pulse(onset_ms):
    return gen_sine_pulse(PulseSpec(freq_hz=100.0, width_ms=10.0, onset_ms=onset_ms), 40.0, FS)


class TestEvaluateTree:
    def test_single_delay_branch(self):
        tree = DendriteTree((Branch("x", (Delay(10.0),)),), Junction(Linear(), (0,)), Soma(math.inf))
        x = unit_pulse(1.0)
        out = evaluate_tree(tree, {"x": x})
        assert out.waveform == shift(x, 10.0)
        assert out.fired is False

    def test_coincident_pulses_fire(self):
        p = unit_pulse(5.0)
        out = evaluate_tree(two_branch(), {"a": p, "b": p})
        assert out.peak_mv == pytest.approx(3.0, rel=1e-12)
        assert out.fired

    def test_misaligned_pulses_do_not_fire(self):
        out = evaluate_tree(two_branch(), {"a": unit_pulse(5.0), "b": unit_pulse(15.0)})
        assert out.peak_mv == pytest.approx(1.0, rel=1e-12)
        assert not out.fired

    def test_empty_inputs(self):
        out = evaluate_tree(two_branch(), {"a": sig([]), "b": sig([])})
        assert len(out.waveform) == 0 and out.peak_mv == 0.0 and not out.fired

    def test_missing_input(self):
        with pytest.raises(DendriteError, match="missing input"):
            evaluate_tree(two_branch(), {"a": unit_pulse(0.0)})

    def test_unreachable_branch_rejected(self):
        with pytest.raises(DendriteError, match="reachable"):
            DendriteTree((Branch("a"), Branch("b")), Junction(Linear(), (0,)))

    def test_shared_branch_rejected(self):
        with pytest.raises(DendriteError, match="more than one"):
            DendriteTree((Branch("a"),), Junction(Linear(), (0, Junction(Linear(), (0,)))))

    @given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-2, 2))
    @settings(max_examples=25, deadline=None)
    def test_superposition(self, seed, a, b):
        tree = DendriteTree(
            (Branch("l", (Delay(1.5), Gain(2.0))), Branch("r", (Gain(0.5), Delay(3.0))), Branch("l", (Delay(0.25),))),
            Junction(Linear(), (0, Junction(Linear(), (1, 2)))),
            Soma(math.inf),
        )
        r = Stream(seed)
        u = {k: sig(r.normal(size=64)) for k in ("l", "r")}
        v = {k: sig(r.normal(size=64)) for k in ("l", "r")}
        mix = {k: sig(a * u[k].samples + b * v[k].samples) for k in u}
        lhs = evaluate_tree(tree, mix).waveform.samples
        rhs = a * evaluate_tree(tree, u).waveform.samples + b * evaluate_tree(tree, v).waveform.samples
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * 64)

    def test_uncoupled_compartments_isolated(self):
        tree = DendriteTree(
            (Branch("a", (AdaptiveLowPass(),), 0), Branch("b", (AdaptiveLowPass(),), 1)),
            Junction(Linear(), (0, 1)),
            Soma(math.inf),
            coupling=0.0,
        )
        b = sig(Stream(1).normal(size=200))
        quiet = evaluate_tree(tree, {"a": sig(np.zeros(200)), "b": b}).states
        loud = evaluate_tree(tree, {"a": sig(5 * np.ones(200)), "b": b}).states
        assert quiet[1] == loud[1]
        assert quiet[0] != loud[0]

    def test_coupling_pulls_toward_mean(self):
        tree = DendriteTree(
            (Branch("a", (AdaptiveLowPass(),), 0), Branch("b", (AdaptiveLowPass(),), 1)),
            Junction(Linear(), (0, 1)),
            coupling=1.0,
        )
        st_ = evaluate_tree(tree, {"a": sig(np.ones(100)), "b": sig(np.zeros(100))}).states
        assert st_[0].activity == pytest.approx(st_[1].activity, rel=1e-12)

    def test_shared_compartment_threads_state(self):
        p = AdaptiveLowPass()
        tree = DendriteTree((Branch("a", (p,), 0), Branch("b", (p,), 0)), Junction(Linear(), (0, 1)), Soma(math.inf))
        a, b = sig(np.ones(50)), sig(np.zeros(50))
        out = evaluate_tree(tree, {"a": a, "b": b})
        _, s = apply_adaptive_lowpass(a, p, AdaptiveState())
        _, s = apply_adaptive_lowpass(b, p, s)
        assert out.states[0] == s


class TestFdm:
    def test_zero_inputs(self):
        z = sig(np.zeros(800))
        m = fdm_mux([z], [2000.0])
        t = np.arange(800) / FS
        np.testing.assert_allclose(m.samples, np.cos(2 * np.pi * 2000 * t), atol=1e-12)
        (back,) = fdm_demux(m, [2000.0], 600.0)
        assert np.max(np.abs(back.samples)) < 1e-6

    def test_single_channel_round_trip(self):
        x = sig(np.sin(2 * np.pi * 440 * np.arange(1600) / FS))
        (back,) = fdm_demux(fdm_mux([x], [2000.0]), [2000.0], 600.0)
        core = slice(200, -200)
        assert np.corrcoef(back.samples[core], x.samples[core])[0, 1] >= 0.99

    def test_carrier_collision_rejected(self):
        with pytest.raises(DendriteError, match="collide"):
            fdm_mux([sig([0.0]), sig([0.0])], [1000.0, 1000.0])

    def test_nyquist_rejected(self):
        with pytest.raises(DendriteError):
            fdm_demux(sig(np.zeros(10)), [3800.0], 600.0)

    def test_spacing_rejected(self):
        with pytest.raises(DendriteError, match="closer"):
            fdm_demux(sig(np.zeros(10)), [1500.0, 2000.0], 600.0)


DEMO = """{
  "branches": [
    {"input": "a", "segments": [{"kind": "delay", "delay_ms": 2.0}]},
    {"input": "b", "compartment": 1, "segments": [{"kind": "lowpass", "cutoff_hz": 500}]}
  ],
  "junctions": {"mode": "supralinear", "threshold_mv": 1.2, "boost": 2.0, "children": [0, 1]},
  "soma": {"threshold_mv": 2.0},
  "coupling": 0.25
}"""


class TestTreeConfig:
    def test_parse(self):
        tree = tree_from_json(DEMO)
        assert tree.branches[0].segments == (Delay(2.0),)
        assert tree.branches[1].compartment == 1
        assert tree.root.mode == Supralinear(1.2, 2.0)
        assert tree.coupling == 0.25

    def test_round_trip(self):
        tree = tree_from_json(DEMO)
        assert tree_from_json(tree_to_json(tree)) == tree

    def test_syntax_error_line(self):
        with pytest.raises(TreeConfigError) as e:
            tree_from_json('{\n  "branches": [\n    {"input": "a",}\n  ]\n}')
        assert e.value.line == 3

    def test_unknown_kind_line(self):
        bad = DEMO.replace('"kind": "lowpass"', '"kind": "bandpass"')
        with pytest.raises(TreeConfigError, match="bandpass") as e:
            tree_from_json(bad)
        assert e.value.line == 4

    def test_bad_parameter_line(self):
        bad = DEMO.replace('"delay_ms": 2.0', '"delay_ms": -2.0')
        with pytest.raises(TreeConfigError) as e:
            tree_from_json(bad)
        assert e.value.line == 3

    def test_unknown_field(self):
        with pytest.raises(TreeConfigError, match="unknown fields"):
            tree_from_json(DEMO.replace('"coupling"', '"couplng"'))

    def test_unreachable_branch(self):
        with pytest.raises(TreeConfigError, match="reachable"):
            tree_from_json(DEMO.replace('"children": [0, 1]', '"children": [0]'))

    def test_shipped_demo_fires(self):
        from pathlib import Path

        tree = load_tree(Path(__file__).parents[1] / "configs" / "coincidence_demo.json")
        p = gen_sine_pulse(PulseSpec(onset_ms=5.0), 40.0, FS)
        assert evaluate_tree(tree, {"a": p, "b": p}).fired
        q = gen_sine_pulse(PulseSpec(onset_ms=20.0), 40.0, FS)
        assert not evaluate_tree(tree, {"a": p, "b": q}).fired
