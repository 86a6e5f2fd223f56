"""Tests for scenario configuration, presets and the Monte Carlo harness."""

import json

import numpy as np
import pytest

from hannrx.errors import ConfigError
from hannrx.scenario import (CARRIER_HZ, InterfererConfig, ScenarioRunner, TrialRecord,
                             aggregate, child_seed, config_from_dict, doppler_from_speed,
                             emit_plotdata, interferer_numerology, load_config, preset,
                             read_ber_csv, run_scenario)
from hannrx.waveform import Numerology


def small_config(**overrides):
    data = {
        "preset": "paper-shape",
        "scenario_id": "unit",
        "desired": {"snr_grid_db": [10.0, 30.0]},
        "receivers": [{"kind": "rect", "support_len": 4},
                      {"kind": "hann", "iterations": 2, "theory_bound": True,
                       "support_len": 4}],
        "trials": 2,
        "psd_symbols": 20,
    }
    data.update(overrides)
    return config_from_dict(data)


class TestDoppler:
    def test_speed_conversion(self):
        # 120 km/h at the band centre
        assert doppler_from_speed(120.0) == pytest.approx(120 / 3.6 * CARRIER_HZ / 299_792_458.0)
        assert doppler_from_speed(120.0) == pytest.approx(288.31, abs=0.01)
        assert doppler_from_speed(0.0) == 0.0


class TestConfigValidation:
    def test_defaults_validate(self):
        cfg = config_from_dict({})
        assert cfg.trials >= 1 and cfg.receivers

    @pytest.mark.parametrize("data, path", [
        ({"trials": 0}, "trials"),
        ({"trials": "many"}, "config.trials"),
        ({"bogus": 1}, "bogus"),
        ({"desired": {"snr_grid_db": []}}, "desired.snr_grid_db"),
        ({"desired": {"snr_grid_db": [1, "x"]}}, "desired.snr_grid_db[1]"),
        ({"desired": {"fft_size": 64, "first_data_bin": 60}}, "desired"),
        ({"desired": {"channel": {"profile": "TDL-Q"}}}, "desired.channel.profile"),
        ({"desired": {"channel": {"doppler_hz": -1}}}, "desired.channel.doppler_hz"),
        ({"receivers": []}, "receivers"),
        ({"receivers": [{"kind": "mystery"}]}, "receivers[0].kind"),
        ({"receivers": [{"kind": "taper", "tail_len": 0}]}, "receivers[0].tail_len"),
        ({"receivers": [{"kind": "rect"}, {"kind": "rect"}]}, "receivers[1].id"),
        ({"receivers": [{"kind": "hann", "iterations": -1}]}, "receivers[0].iterations"),
        ({"interferers": [{"guard_hz": -5.0}]}, "interferers[0].guard_hz"),
        ({"interferers": [{"side": "left"}]}, "interferers[0].side"),
        ({"interferers": [{"taper_len": 100}]}, "interferers[0].taper_len"),
        ({"interferers": [{"fft_size": 512}]}, "interferers[0]"),
        ({"frame": {"pilot_start": 20}}, "frame.pilot_start"),
        ({"psd_resolution": 2}, "psd_resolution"),
    ])
    def test_errors_name_the_field(self, data, path):
        with pytest.raises(ConfigError) as info:
            config_from_dict(data)
        assert info.value.path == path
        assert str(info.value).startswith(f"{path}: ")

    def test_preset_with_overrides(self):
        cfg = config_from_dict({"preset": "paper-shape", "trials": 3,
                                "desired": {"snr_grid_db": [20]}})
        assert cfg.trials == 3
        assert cfg.desired.snr_grid_db == [20.0]
        assert cfg.desired.fft_size == 256

    def test_yaml(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("preset: paper-shape\ntrials: 4\nreceivers:\n  - kind: rect\n")
        cfg = load_config(path)
        assert cfg.trials == 4 and len(cfg.receivers) == 1

    def test_yaml_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("trials: [1,\n")
        with pytest.raises(ConfigError):
            load_config(bad)


class TestPresets:
    def test_paper_full(self):
        cfg = preset("paper-full")
        assert (cfg.desired.fft_size, cfg.desired.data_width) == (1024, 12)
        assert cfg.desired.cp_len == 72 and cfg.desired.scs_hz == 60e3
        assert len(cfg.interferers) == 2
        for i in cfg.interferers:
            assert i.snr_db == 20.0 and i.scs_hz == 15e3 and i.fft_size == 4096
            assert i.sample_offset == 128 and i.guard_hz == 30e3
            assert i.channel.profile == "TDL-C" and i.channel.rms_delay_ns == 300.0
        assert {i.side for i in cfg.interferers} == {"upper", "lower"}
        assert cfg.desired.channel.profile == "TDL-A"
        sched = cfg.frame.schedule()
        assert sched.pilot_symbol_indices == (3, 10)
        hann = [r for r in cfg.receivers if r.kind == "hann"][0]
        assert hann.iterations == 6

    def test_paper_shape_scaling(self):
        full, shape = preset("paper-full"), preset("paper-shape")
        assert shape.desired.fft_size == 256
        assert shape.desired.cp_len / shape.desired.fft_size == full.desired.cp_len / 1024
        assert shape.desired.data_width == 12
        assert shape.desired.first_data_bin * 4 == full.desired.first_data_bin
        for a, b in zip(full.interferers, shape.interferers):
            assert a.sample_offset == 4 * b.sample_offset
            assert a.fft_size == 4 * b.fft_size
            assert a.guard_hz == b.guard_hz

    def test_wide_guard(self):
        assert all(i.guard_hz == 105e3 for i in preset("paper-shape-wide").interferers)

    def test_unknown(self):
        with pytest.raises(ConfigError):
            preset("nope")


class TestGeometry:
    DESIRED = Numerology(256, 18, 12, 116, 60e3)

    @pytest.mark.parametrize("guard", [0.0, 30e3, 105e3])
    def test_guard_to_first_interferer_carrier(self, guard):
        upper = interferer_numerology(self.DESIRED, InterfererConfig(side="upper", guard_hz=guard))
        lower = interferer_numerology(self.DESIRED, InterfererConfig(side="lower", guard_hz=guard))
        edge_hi = (116 + 12 - 0.5) * 60e3
        edge_lo = (116 - 0.5) * 60e3
        assert upper.data_bins[0] * 15e3 - edge_hi == pytest.approx(round(guard / 15e3) * 15e3)
        assert edge_lo - lower.data_bins[-1] * 15e3 == pytest.approx(round(guard / 15e3) * 15e3)

    def test_mismatched_grid(self):
        with pytest.raises(Exception):
            interferer_numerology(self.DESIRED, InterfererConfig(fft_size=1000))


class TestSeeds:
    def test_stable_value(self):
        assert child_seed(2024, "paper-shape", 0, "noise") == 6414629890671948487

    def test_roles_and_trials_differ(self):
        seeds = {child_seed(1, "s", t, r) for t in range(5) for r in ("a", "b", "c")}
        assert len(seeds) == 15


class TestRunner:
    def test_receivers_share_the_stream(self):
        runner = ScenarioRunner(small_config())
        recs = runner.run_trial(0)
        for snr in (10.0, 30.0):
            sums = {r.input_checksum for r in recs if r.snr_db == snr}
            assert len(sums) == 1
        labels = {r.receiver for r in recs}
        assert labels == {"rect", "hann", "hann-theory"}
        iters = sorted({r.iteration for r in recs if r.receiver == "hann"})
        assert iters == [0, 1, 2]

    def test_trial_is_reproducible(self):
        a = ScenarioRunner(small_config()).run_trial(1)
        b = ScenarioRunner(small_config()).run_trial(1)
        assert [(r.receiver, r.errors) for r in a] == [(r.receiver, r.errors) for r in b]

    def test_components_scaling(self):
        # SNRs are per subcarrier: unit noise per bin, each 20 dB interferer
        # puts 100 per occupied bin on 408 of its 1024 bins
        runner = ScenarioRunner(small_config())
        comps = [runner.components(t) for t in range(12)]
        assert np.var(comps[0].noise) == pytest.approx(1.0, rel=0.1)
        power = np.mean([np.mean(np.abs(c.interference) ** 2) for c in comps])
        assert power == pytest.approx(2 * 100 * 408 / 1024, rel=0.3)


class TestOutputs:
    def test_one_record(self, tmp_path):
        rec = TrialRecord("s", "rect", 10.0, 0, 3, 96, 12.0, 0.01)
        paths = emit_plotdata([rec], tmp_path)
        lines = paths["ber_curves"].read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "receiver,snr_db,iteration,ber,ci_low,ci_high,errors,bits"
        assert lines[1].startswith("rect,10,0,0.0312,")

    def test_aggregate_and_round_trip(self, tmp_path):
        recs = [TrialRecord("s", rx, snr, it, e, 100, 0.0, 0.0, trial)
                for trial, e in enumerate([1, 4, 0])
                for rx in ("a", "b") for snr in (5.0, 10.0) for it in (0, 1)]
        agg = aggregate(recs)
        assert agg[("a", 5.0, 0)].errors == 5 and agg[("a", 5.0, 0)].bits == 300
        paths = emit_plotdata(recs, tmp_path)
        back = read_ber_csv(paths["ber_curves"])
        assert {k: (v.errors, v.bits) for k, v in back.items()} == \
               {k: (v.errors, v.bits) for k, v in agg.items()}

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(Exception):
            emit_plotdata([], tmp_path)


class TestRunScenario:
    def test_outputs_and_manifest(self, tmp_path):
        res = run_scenario(small_config(), tmp_path)
        for name in ("ber_curves", "psd_curves", "audit"):
            assert res.paths[name].exists()
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["trials_completed"] == 2
        assert man["master_seed"] == 2024
        assert "numpy" in man["versions"]
        psd = res.paths["psd_curves"].read_text().splitlines()
        assert psd[0] == "window,offset_scs,power_db,marker"

    def test_deterministic_bytes(self, tmp_path):
        run_scenario(small_config(), tmp_path / "a")
        run_scenario(small_config(), tmp_path / "b")
        for name in ("ber_curves.csv", "psd_curves.csv", "audit.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = small_config(trials=3)
        run_scenario(cfg, tmp_path / "full")
        partial = run_scenario(cfg, tmp_path / "resumed", max_trials=1)
        assert partial.manifest["trials_completed"] == 1
        done = run_scenario(cfg, tmp_path / "resumed")
        assert done.manifest["trials_completed"] == 3
        assert ((tmp_path / "full" / "ber_curves.csv").read_bytes()
                == (tmp_path / "resumed" / "ber_curves.csv").read_bytes())

    def test_journal_ignores_other_configs(self, tmp_path):
        run_scenario(small_config(), tmp_path)
        other = run_scenario(small_config(master_seed=7), tmp_path)
        assert {r.input_checksum for r in other.records}.isdisjoint(
            {r.input_checksum for r in run_scenario(small_config(), tmp_path / "x").records})

    def test_psd_only(self, tmp_path):
        res = run_scenario(small_config(), tmp_path, psd_only=True)
        assert "ber_curves" not in res.paths
        assert res.paths["psd_curves"].exists()
