import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from adc.cli import main
from adc.experiment import SweepConfig
from adc.nn import load_checkpoint
from adc.signal_core import PulseSpec, gen_sine_pulse, read_dataset, read_manifest, shift

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMALL = ["--train-count", "12", "--test-count", "6"]


def run(*argv):
    return main([str(a) for a in argv])


class TestGlobal:
    def test_help_lists_subcommands(self):
        out = subprocess.run([sys.executable, "-m", "adc", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for name in ("gen-dataset", "simulate", "decode-itd", "gradcheck", "train", "sweep", "export"):
            assert name in out.stdout

    def test_missing_subcommand(self):
        assert run() == 2

    def test_unknown_flag(self, tmp_path):
        assert run("gen-dataset", "--bogus", "--out", tmp_path) == 2

    def test_bad_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ADC_SEED", "abc")
        assert run("gen-dataset", *SMALL, "--out", tmp_path) == 2


class TestGenDataset:
    def test_defaults(self, tmp_path, capsys):
        assert run("gen-dataset", "--out", tmp_path) == 0
        train, test = read_dataset(tmp_path / "train.adcd"), read_dataset(tmp_path / "test.adcd")
        assert len(train) == 800 == len(test)
        assert read_manifest(tmp_path / "manifest.json").classes_ms == (0.0, 5.0, 10.0)
        assert "0 ms: 267, 5 ms: 267, 10 ms: 266" in capsys.readouterr().out

    def test_zero_count_rejected(self, tmp_path, capsys):
        assert run("gen-dataset", "--train-count", "0", "--out", tmp_path) == 2
        assert "train_count" in capsys.readouterr().err
        assert not (tmp_path / "train.adcd").exists()

    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert run("gen-dataset", *SMALL, "--seed", 4, "--out", tmp_path / d) == 0
        for f in ("train.adcd", "test.adcd", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_seed_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 9, "train_count": 6, "test_count": 3}))
        monkeypatch.setenv("ADC_SEED", "5")
        run("gen-dataset", "--config", cfg, "--out", tmp_path / "file")
        run("gen-dataset", "--config", cfg, "--seed", 2, "--out", tmp_path / "flag")
        run("gen-dataset", "--train-count", 6, "--test-count", 3, "--out", tmp_path / "env")
        assert read_manifest(tmp_path / "file" / "manifest.json").seed == 9
        assert read_manifest(tmp_path / "flag" / "manifest.json").seed == 2
        assert read_manifest(tmp_path / "env" / "manifest.json").seed == 5

    def test_flag_overrides_config_field(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train_count": 6, "test_count": 3}))
        run("gen-dataset", "--config", cfg, "--train-count", 9, "--out", tmp_path)
        assert len(read_dataset(tmp_path / "train.adcd")) == 9


class TestSimulate:
    def test_demo_fires(self, tmp_path, capsys):
        out = tmp_path / "soma.csv"
        assert run("simulate", "--tree", CONFIGS / "coincidence_demo.json", "--pulse", "a=5", "--pulse", "b=5", "--out", out) == 0
        assert capsys.readouterr().out.startswith("fired: true")
        assert out.read_text().splitlines()[0] == "t_ms,soma_mv"

    def test_demo_misaligned_silent(self, tmp_path, capsys):
        args = ("simulate", "--tree", CONFIGS / "coincidence_demo.json", "--pulse", "a=5", "--pulse", "b=20")
        assert run(*args, "--out", tmp_path / "s.csv") == 0
        assert capsys.readouterr().out.startswith("fired: false")

    def test_single_delay_is_shift(self, tmp_path):
        tree = tmp_path / "tree.json"
        tree.write_text(json.dumps({"branches": [{"input": "a", "segments": [{"kind": "delay", "delay_ms": 3.0}]}], "junctions": {"mode": "linear", "children": [0]}}))
        out = tmp_path / "soma.csv"
        assert run("simulate", "--tree", tree, "--pulse", "a=4", "--out", out) == 0
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        expect = shift(gen_sine_pulse(PulseSpec(onset_ms=4.0), 40.0, 8000.0), 3.0)
        np.testing.assert_array_equal(data[:, 1], expect.samples)
        np.testing.assert_allclose(data[1, 0], 0.125)

    def test_malformed_json(self, tmp_path, capsys):
        tree = tmp_path / "bad.json"
        tree.write_text('{"branches": [\n}')
        out = tmp_path / "soma.csv"
        assert run("simulate", "--tree", tree, "--out", out) == 2
        assert "line 2" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_tree(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "x.csv") == 2


class TestDecodeItd:
    def test_noiseless_dataset(self, tmp_path, capsys):
        run("gen-dataset", "--train-count", 6, "--test-count", 30, "--snr-db", "none", "--jitter-ms", 0, "--out", tmp_path)
        out = tmp_path / "est.csv"
        assert run("decode-itd", "--dataset", tmp_path, "--out", out) == 0
        assert "accuracy: 1.0000" in capsys.readouterr().out
        assert len(out.read_text().splitlines()) == 31

    def test_stereo_csv(self, tmp_path, capsys):
        p = PulseSpec(onset_ms=10.0)
        left = gen_sine_pulse(p, 40.0, 8000.0)
        right = shift(left, 5.0)
        csv = tmp_path / "stereo.csv"
        np.savetxt(csv, np.stack([left.samples, right.samples], axis=1), delimiter=",", header="left,right", comments="")
        assert run("decode-itd", "--stereo-csv", csv, "--out", tmp_path / "e.csv") == 0
        assert "itd: 5 ms" in capsys.readouterr().out


class TestGradcheck:
    def test_passes(self, capsys):
        assert run("gradcheck", "--cases", 3) == 0
        assert "3 configs" in capsys.readouterr().out


class TestTrain:
    def test_checkpoint_deterministic(self, tmp_path):
        for name in ("a", "b"):
            args = ("train", *SMALL, "--arch", "dendritic", "--hidden", 2, "--epochs", 2, "--seed", 3)
            assert run(*args, "--out", tmp_path / f"{name}.adcm") == 0
        assert (tmp_path / "a.adcm").read_bytes() == (tmp_path / "b.adcm").read_bytes()
        assert load_checkpoint(tmp_path / "a.adcm").input_size == 3
        assert len((tmp_path / "a.history.csv").read_text().splitlines()) == 3

    def test_bad_hidden(self, tmp_path):
        assert run("train", *SMALL, "--hidden", 0, "--out", tmp_path / "m.adcm") == 2


class TestSweep:
    def test_single_record(self, tmp_path):
        args = ("sweep", *SMALL, "--trials", 1, "--hidden", 1, "--arch", "plain", "--epochs", 1)
        assert run(*args, "--out", tmp_path) == 0
        assert len((tmp_path / "sweep_records.csv").read_text().splitlines()) == 2
        for f in ("sweep_summary.csv", "sweep_chart.svg", "sweep_config.json"):
            assert (tmp_path / f).exists()
        cfg = SweepConfig.from_dict(json.loads((tmp_path / "sweep_config.json").read_text()))
        assert cfg.architectures == ("plain",) and cfg.dataset.train_count == 12

    def test_threads_identical(self, tmp_path):
        args = ("sweep", *SMALL, "--trials", 2, "--hidden", "1,2", "--epochs", 1)
        assert run(*args, "--threads", 1, "--out", tmp_path / "t1") == 0
        assert run(*args, "--threads", 2, "--out", tmp_path / "t2") == 0
        a = (tmp_path / "t1" / "sweep_records.csv").read_bytes()
        assert a == (tmp_path / "t2" / "sweep_records.csv").read_bytes()
        assert len(a.splitlines()) == 1 + 2 * 2 * 2

    def test_bad_arch(self, tmp_path):
        assert run("sweep", "--arch", "cnn", "--out", tmp_path) == 2

    def test_export(self, tmp_path):
        run("sweep", *SMALL, "--trials", 1, "--hidden", 1, "--epochs", 1, "--out", tmp_path / "s")
        assert run("export", "--records", tmp_path / "s" / "sweep_records.csv", "--out", tmp_path / "e") == 0
        a = (tmp_path / "s" / "sweep_summary.csv").read_text()
        assert a == (tmp_path / "e" / "sweep_summary.csv").read_text()

    def test_export_missing_records(self, tmp_path):
        assert run("export", "--records", tmp_path / "none.csv", "--out", tmp_path) == 1
