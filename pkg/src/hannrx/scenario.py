"""
Config-driven Monte Carlo harness.

A scenario is a desired CP-OFDM user in a narrow band with mixed-numerology
interferers on either side. Every trial draws one frame; the desired signal,
the interference and the noise are generated once and combined at each SNR
of the grid, and every receiver sees the same received stream.

All randomness flows from child seeds hashed from
``(master_seed, scenario_id, trial, role)``, so results do not depend on the
order in which trials are run or resumed.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audit import audit_opcounts
from .channel import (TdlSpec, UserLink, apply_channel, awgn, interferer_stream,
                      make_tdl)
from .errors import ConfigError, InvalidInput
from .hann import HannReceiver
from .metrics import (BerCounter, analysis_window, count_errors, measure_sinr,
                      subcarrier_psd)
from .rx_baseline import BaselineReceiver, RxWindowSpec
from .waveform import FrameSchedule, Numerology, build_frame

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
# centre of NR band n41 (2496-2690 MHz); used to turn speeds into Doppler
CARRIER_HZ = 2.593e9


def doppler_from_speed(kmh: float, carrier_hz: float = CARRIER_HZ) -> float:
    return kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ChannelConfig:
    profile: str = "TDL-A"
    rms_delay_ns: float = 30.0
    doppler_hz: float = 0.0
    num_sinusoids: int = 32


@dataclass
class DesiredConfig:
    fft_size: int = 256
    cp_len: int = 18
    data_width: int = 12
    first_data_bin: int = 116
    scs_hz: float = 60e3
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    snr_grid_db: list = field(default_factory=lambda: [10.0, 20.0, 30.0])

    def numerology(self) -> Numerology:
        return Numerology(self.fft_size, self.cp_len, self.data_width,
                          self.first_data_bin, self.scs_hz)


@dataclass
class InterfererConfig:
    fft_size: int = 1024
    cp_len: int = 72
    data_width: int = 408
    scs_hz: float = 15e3
    side: str = "upper"
    guard_hz: float = 30e3
    snr_db: float = 20.0
    sample_offset: int = 32
    taper_len: int = 36
    channel: ChannelConfig = field(
        default_factory=lambda: ChannelConfig("TDL-C", 300.0, 0.0))


@dataclass
class FrameConfig:
    symbols_per_frame: int = 14
    pilot_period: int = 7
    pilot_start: int = 3
    pilot_seed: int = 0

    def schedule(self) -> FrameSchedule:
        return FrameSchedule.every(self.pilot_period, self.pilot_start,
                                   self.symbols_per_frame, self.pilot_seed)


@dataclass
class ReceiverConfig:
    kind: str = "rect"                   # rect | taper | hann
    id: str = ""
    tail_len: int = 0
    iterations: int = 6
    variance_mode: str = "estimated"
    theory_bound: bool = False
    support_len: int = 4
    ridge: float = 1e-3
    schedule: str = "serial"
    reweight: bool = True
    pooling: str = "time"

    @property
    def label(self) -> str:
        if self.id:
            return self.id
        if self.kind == "taper":
            return f"taper-{self.tail_len}"
        return self.kind


@dataclass
class ScenarioConfig:
    scenario_id: str = "custom"
    desired: DesiredConfig = field(default_factory=DesiredConfig)
    interferers: list = field(default_factory=list)
    frame: FrameConfig = field(default_factory=FrameConfig)
    receivers: list = field(default_factory=lambda: [ReceiverConfig()])
    trials: int = 10
    master_seed: int = 0
    psd_subcarrier: int = 5
    psd_resolution: int = 16
    psd_symbols: int = 200

    def to_dict(self) -> dict:
        return asdict(self)


def _section(data, path: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    return data


def _build(cls, data, path: str):
    """Instantiate a flat dataclass from a mapping, checking names and types."""
    data = _section(data, path)
    defaults = cls()
    kwargs = {}
    names = {f for f in cls.__dataclass_fields__}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown field")
        ref = getattr(defaults, key)
        sub = f"{path}.{key}"
        if isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ConfigError(sub, "expected a boolean")
        elif isinstance(ref, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(sub, "expected an integer")
        elif isinstance(ref, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(sub, "expected a number")
            value = float(value)
        elif isinstance(ref, str):
            if not isinstance(value, str):
                raise ConfigError(sub, "expected a string")
        kwargs[key] = value
    return cls(**kwargs)


def _channel(data, path: str, default: ChannelConfig) -> ChannelConfig:
    merged = {**asdict(default), **_section(data, path)}
    ch = _build(ChannelConfig, merged, path)
    if ch.rms_delay_ns < 0:
        raise ConfigError(f"{path}.rms_delay_ns", "must be >= 0")
    if ch.doppler_hz < 0:
        raise ConfigError(f"{path}.doppler_hz", "must be >= 0")
    if ch.num_sinusoids < 1:
        raise ConfigError(f"{path}.num_sinusoids", "must be >= 1")
    try:
        TdlSpec.from_profile(ch.profile, max(ch.rms_delay_ns, 1e-3) * 1e-9)
    except InvalidInput as exc:
        raise ConfigError(f"{path}.profile", str(exc)) from None
    return ch


def config_from_dict(data: dict) -> ScenarioConfig:
    """Validate a nested mapping into a ``ScenarioConfig``.

    Raises ``ConfigError`` naming the offending field path.
    """
    data = copy.deepcopy(_section(data, "config"))
    if "preset" in data:
        base = preset(data.pop("preset")).to_dict()
        data = _merge(base, data)
    known = set(ScenarioConfig.__dataclass_fields__)
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field")

    d = _section(data.get("desired"), "desired")
    grid = d.get("snr_grid_db", DesiredConfig().snr_grid_db)
    if not isinstance(grid, list) or not grid:
        raise ConfigError("desired.snr_grid_db", "must be a non-empty list")
    for i, v in enumerate(grid):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"desired.snr_grid_db[{i}]", "expected a number")
    flat = {k: v for k, v in d.items() if k not in ("channel", "snr_grid_db")}
    desired = _build(DesiredConfig, flat, "desired")
    desired.snr_grid_db = [float(v) for v in grid]
    desired.channel = _channel(d.get("channel"), "desired.channel", ChannelConfig())
    try:
        num = desired.numerology()
    except InvalidInput as exc:
        raise ConfigError("desired", str(exc)) from None

    raw_int = data.get("interferers", [])
    if not isinstance(raw_int, list):
        raise ConfigError("interferers", "expected a list")
    interferers = []
    for i, item in enumerate(raw_int):
        path = f"interferers[{i}]"
        item = _section(item, path)
        flat = {k: v for k, v in item.items() if k != "channel"}
        cfg = _build(InterfererConfig, flat, path)
        cfg.channel = _channel(item.get("channel"), f"{path}.channel",
                               InterfererConfig().channel)
        if cfg.guard_hz < 0:
            raise ConfigError(f"{path}.guard_hz", "guard band must be >= 0")
        if cfg.side not in ("upper", "lower"):
            raise ConfigError(f"{path}.side", "must be 'upper' or 'lower'")
        if cfg.sample_offset < 0:
            raise ConfigError(f"{path}.sample_offset", "must be >= 0")
        try:
            interferer_numerology(num, cfg)
        except InvalidInput as exc:
            raise ConfigError(path, str(exc)) from None
        if not 0 <= cfg.taper_len <= cfg.cp_len:
            raise ConfigError(f"{path}.taper_len", "must lie in [0, cp_len]")
        interferers.append(cfg)

    frame = _build(FrameConfig, data.get("frame"), "frame")
    try:
        schedule = frame.schedule()
    except InvalidInput as exc:
        raise ConfigError("frame", str(exc)) from None
    if not schedule.pilot_symbol_indices:
        raise ConfigError("frame.pilot_start", "frame has no pilot symbols")
    if not schedule.data_symbol_indices:
        raise ConfigError("frame.symbols_per_frame", "frame has no data symbols")

    raw_rx = data.get("receivers", [asdict(ReceiverConfig())])
    if not isinstance(raw_rx, list) or not raw_rx:
        raise ConfigError("receivers", "must be a non-empty list")
    receivers, labels = [], set()
    for i, item in enumerate(raw_rx):
        path = f"receivers[{i}]"
        rx = _build(ReceiverConfig, item, path)
        if rx.kind not in ("rect", "taper", "hann"):
            raise ConfigError(f"{path}.kind", "must be rect, taper or hann")
        if rx.kind == "taper" and not 0 < rx.tail_len <= num.cp_len:
            raise ConfigError(f"{path}.tail_len", "taper needs 0 < tail_len <= cp_len")
        if rx.iterations < 0:
            raise ConfigError(f"{path}.iterations", "must be >= 0")
        if rx.variance_mode not in ("estimated", "genie"):
            raise ConfigError(f"{path}.variance_mode", "must be estimated or genie")
        if rx.schedule not in ("serial", "parallel"):
            raise ConfigError(f"{path}.schedule", "must be serial or parallel")
        if rx.pooling not in ("time", "frequency"):
            raise ConfigError(f"{path}.pooling", "must be time or frequency")
        if not 1 <= rx.support_len <= num.fft_size:
            raise ConfigError(f"{path}.support_len", "out of range")
        if rx.ridge < 0:
            raise ConfigError(f"{path}.ridge", "must be >= 0")
        if rx.label in labels:
            raise ConfigError(f"{path}.id", f"duplicate receiver label {rx.label!r}")
        labels.add(rx.label)
        receivers.append(rx)

    top = {k: data[k] for k in ("scenario_id", "trials", "master_seed", "psd_subcarrier",
                                "psd_resolution", "psd_symbols") if k in data}
    cfg = _build(ScenarioConfig, top, "config")
    if cfg.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    if not 0 <= cfg.psd_subcarrier < num.data_width:
        raise ConfigError("psd_subcarrier", "outside the data band")
    if cfg.psd_resolution < 4:
        raise ConfigError("psd_resolution", "must be >= 4")
    if cfg.psd_symbols < 1:
        raise ConfigError("psd_symbols", "must be >= 1")
    cfg.desired, cfg.interferers, cfg.frame, cfg.receivers = (desired, interferers,
                                                              frame, receivers)
    return cfg


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> ScenarioConfig:
    import yaml

    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from None
    return config_from_dict(data or {})


# ---------------------------------------------------------------------------
# presets


def _preset_dict(scale: int, guard_hz: float = 30e3) -> dict:
    """Scenario at ``N = 1024 / scale``; every length scales with ``N``."""
    n = 1024 // scale
    cp = 72 // scale
    first = 464 // scale
    interferer = {
        "fft_size": 4 * n, "cp_len": 4 * cp, "data_width": 1632 // scale,
        "scs_hz": 15e3, "snr_db": 20.0, "sample_offset": 128 // scale,
        "taper_len": 2 * cp,
        "channel": {"profile": "TDL-C", "rms_delay_ns": 300.0,
                    "doppler_hz": doppler_from_speed(3.0)},
    }
    return {
        "scenario_id": ("paper-full" if scale == 1 else "paper-shape")
        + ("" if guard_hz == 30e3 else "-wide"),
        "desired": {
            "fft_size": n, "cp_len": cp, "data_width": 12, "first_data_bin": first,
            "scs_hz": 60e3, "snr_grid_db": [5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            "channel": {"profile": "TDL-A", "rms_delay_ns": 30.0,
                        "doppler_hz": doppler_from_speed(120.0)},
        },
        "interferers": [{**interferer, "side": "upper", "guard_hz": guard_hz},
                        {**interferer, "side": "lower", "guard_hz": guard_hz}],
        "frame": {"symbols_per_frame": 14, "pilot_period": 7, "pilot_start": 3},
        "receivers": [
            {"kind": "rect", "support_len": max(cp // 4, 1)},
            {"kind": "taper", "tail_len": cp // 2, "support_len": max(cp // 4, 1)},
            {"kind": "hann", "iterations": 6, "theory_bound": True,
             "support_len": max(cp // 4, 1)},
        ],
        "trials": 700,
        "master_seed": 2024,
    }


PRESETS = {
    "paper-full": lambda: _preset_dict(1),
    "paper-shape": lambda: _preset_dict(4),
    "paper-full-wide": lambda: _preset_dict(1, 105e3),
    "paper-shape-wide": lambda: _preset_dict(4, 105e3),
}


def preset(name: str) -> ScenarioConfig:
    """Named scenario: ``paper-full`` (N = 1024) or ``paper-shape`` (N = 256),
    with 30 kHz guards, or their ``-wide`` variants with 105 kHz guards."""
    try:
        data = PRESETS[name]()
    except KeyError:
        raise ConfigError("preset", f"unknown preset {name!r}; "
                          f"choose from {sorted(PRESETS)}") from None
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# scenario geometry


def interferer_numerology(desired: Numerology, cfg: InterfererConfig) -> Numerology:
    """
    Place an interferer band next to the desired band.

    Both users share the sample rate. The band starts ``round(guard / scs)``
    interferer bins away from the desired band edge, above or below it.
    """
    if abs(cfg.fft_size * cfg.scs_hz - desired.sample_rate) > 1e-6 * desired.sample_rate:
        raise InvalidInput("interferer and desired user must share the sample rate")
    ratio = cfg.fft_size // desired.fft_size
    if ratio * desired.fft_size != cfg.fft_size:
        raise InvalidInput("interferer FFT size must be a multiple of the desired one")
    if cfg.cp_len * desired.fft_size != desired.cp_len * cfg.fft_size:
        raise InvalidInput("interferer and desired symbols must have equal CP ratio")
    gap = int(round(cfg.guard_hz / cfg.scs_hz))
    if cfg.side == "upper":
        first = ratio * (desired.first_data_bin + desired.data_width) - ratio // 2 + gap
    else:
        first = ratio * desired.first_data_bin - ratio // 2 - gap - cfg.data_width + 1
    return Numerology(cfg.fft_size, cfg.cp_len, cfg.data_width, first, cfg.scs_hz)


def child_seed(master_seed: int, scenario_id: str, trial: int, role: str) -> int:
    """Stable 64-bit seed for one random role of one trial."""
    key = f"{master_seed}|{scenario_id}|{trial}|{role}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def checksum(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialRecord:
    scenario_id: str
    receiver: str
    snr_db: float
    iteration: int
    errors: int
    bits: int
    sinr_db: float
    wall_time: float
    trial: int = 0
    input_checksum: str = ""

    def __post_init__(self):
        if not 0 <= self.errors <= self.bits:
            raise InvalidInput("errors must lie in [0, bits]")


@dataclass
class TrialComponents:
    frame: object
    desired: np.ndarray           # unit-SNR desired channel output
    interference: np.ndarray      # sum of scaled interferer outputs
    noise: np.ndarray


class ScenarioRunner:
    """Builds receivers once and runs individual trials."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.numerology = config.desired.numerology()
        self.schedule = config.frame.schedule()
        self.interferer_numerologies = [interferer_numerology(self.numerology, c)
                                        for c in config.interferers]
        self.frame_len = self.schedule.symbols_per_frame * self.numerology.symbol_len
        self.receivers = {rx.label: (rx, self._make_receiver(rx)) for rx in config.receivers}

    def _make_receiver(self, rx: ReceiverConfig):
        if rx.kind == "hann":
            return HannReceiver(self.numerology, rx.support_len, rx.ridge, rx.iterations,
                                rx.variance_mode, schedule=rx.schedule,
                                reweight=rx.reweight, pooling=rx.pooling)
        window = (RxWindowSpec.rectangular() if rx.kind == "rect"
                  else RxWindowSpec.raised_cosine(rx.tail_len))
        return BaselineReceiver(self.numerology, window, rx.support_len, rx.ridge,
                                rx.reweight, rx.pooling)

    def _seed(self, trial: int, role: str) -> int:
        c = self.config
        return child_seed(c.master_seed, c.scenario_id, trial, role)

    def components(self, trial: int) -> TrialComponents:
        num, sched = self.numerology, self.schedule
        rng = np.random.default_rng(self._seed(trial, "payload"))
        n_bits = len(sched.data_symbol_indices) * 2 * num.data_width
        frame = build_frame(num, sched, rng.integers(0, 2, n_bits))
        fs = num.sample_rate
        ch = self.config.desired.channel
        spec = TdlSpec.from_profile(ch.profile, ch.rms_delay_ns * 1e-9, ch.doppler_hz,
                                    self._seed(trial, "desired-channel"), ch.num_sinusoids)
        desired = apply_channel(UserLink(frame.samples, 0.0, make_tdl(spec, fs, self.frame_len)))
        interference = np.zeros(self.frame_len, dtype=complex)
        for j, (cfg, inum) in enumerate(zip(self.config.interferers,
                                            self.interferer_numerologies)):
            x = interferer_stream(inum, cfg.taper_len,
                                  self._seed(trial, f"interferer{j}-data"), self.frame_len)
            ch = cfg.channel
            spec = TdlSpec.from_profile(ch.profile, ch.rms_delay_ns * 1e-9, ch.doppler_hz,
                                        self._seed(trial, f"interferer{j}-channel"),
                                        ch.num_sinusoids)
            link = UserLink(x, cfg.snr_db, make_tdl(spec, fs, self.frame_len),
                            cfg.sample_offset)
            interference += link.gain * apply_channel(link)
        noise = awgn(np.random.default_rng(self._seed(trial, "noise")), self.frame_len)
        return TrialComponents(frame, desired, interference, noise)

    def run_trial(self, trial: int) -> list[TrialRecord]:
        comp = self.components(trial)
        frame = comp.frame
        data = list(self.schedule.data_symbol_indices)
        truth_bits = frame.bits
        truth_sym = frame.symbols[data]
        disturbance = comp.interference + comp.noise
        records = []
        sid = self.config.scenario_id
        for snr in self.config.desired.snr_grid_db:
            y = np.sqrt(10 ** (snr / 10)) * comp.desired + disturbance
            y.setflags(write=False)
            digest = checksum(y)
            for label, (rx, receiver) in self.receivers.items():
                t0 = time.perf_counter()
                genie = disturbance if (rx.kind == "hann"
                                        and rx.variance_mode == "genie") else None
                if rx.kind == "hann":
                    res = receiver.receive_frame(y, self.schedule, frame.pilots, genie,
                                                 truth=frame.symbols if rx.theory_bound else None)
                    sinr = float(np.mean(measure_sinr(res.d_mrc, truth_sym).sinr_db))
                    rows = [(label, i, res.llrs(i)) for i in range(rx.iterations + 1)]
                    if rx.theory_bound:
                        rows.append((f"{label}-theory", 0, res.theory_llr))
                else:
                    res = receiver.receive_frame(y, self.schedule, frame.pilots)
                    sinr = float(np.mean(measure_sinr(res.d_hat[data], truth_sym).sinr_db))
                    rows = [(label, 0, res.llr)]
                if checksum(y) != digest:
                    raise RuntimeError(f"receiver {label} modified its input")
                dt = time.perf_counter() - t0
                for name, it, llr in rows:
                    e, b = count_errors(llr, truth_bits)
                    records.append(TrialRecord(sid, name, snr, it, e, b, sinr, dt,
                                               trial, digest))
        return records


# ---------------------------------------------------------------------------
# aggregation and output

JOURNAL = "journal.jsonl"


def aggregate(records) -> dict:
    """``{(receiver, snr_db, iteration): BerCounter}`` in sorted key order."""
    acc = {}
    for r in records:
        key = (r.receiver, float(r.snr_db), int(r.iteration))
        acc.setdefault(key, BerCounter()).add(r.errors, r.bits)
    return dict(sorted(acc.items()))


def _g3(x: float) -> str:
    return f"{x:.3g}"


def write_ber_csv(path, aggregates: dict):
    rows = [("receiver", "snr_db", "iteration", "ber", "ci_low", "ci_high", "errors", "bits")]
    for (rx, snr, it), c in aggregates.items():
        lo, hi = c.interval()
        rows.append((rx, _g3(snr), it, _g3(c.ber), _g3(lo), _g3(hi), c.errors, c.bits))
    _write_csv(path, rows)


def read_ber_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["receiver"], float(row["snr_db"]), int(row["iteration"]))
            out[key] = BerCounter(int(row["errors"]), int(row["bits"]))
    return out


def _write_csv(path, rows):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def psd_rows(config: ScenarioConfig) -> list:
    num = config.desired.numerology()
    windows = [("rect", analysis_window(num, "rectangular")),
               ("hann", analysis_window(num, "hann"))]
    for rx in config.receivers:
        if rx.kind == "taper":
            windows.append((rx.label, analysis_window(num, "taper", rx.tail_len)))
    rows = [("window", "offset_scs", "power_db", "marker")]
    for name, w in windows:
        curve = subcarrier_psd(num, config.psd_subcarrier, w, config.psd_resolution,
                               config.psd_symbols, seed=child_seed(
                                   config.master_seed, config.scenario_id, 0, "psd"))
        markers = set(curve.marker_offsets.tolist())
        for off, p in zip(curve.offsets, curve.power_db):
            rows.append((name, f"{off:.4f}", f"{p:.3f}", int(off in markers)))
    return rows


def audit_rows(config: ScenarioConfig):
    num = config.desired.numerology()
    iters = max([rx.iterations for rx in config.receivers if rx.kind == "hann"] or [0])
    report = audit_opcounts(num.fft_size, num.data_width, 4, iters, num.cp_len)
    return report, [("step", "formula", "measured"), *report.csv_rows()]


def emit_plotdata(records, out_dir, config: ScenarioConfig | None = None,
                  with_psd: bool = True, with_audit: bool = True) -> dict:
    """Write the curve CSVs; returns ``{name: path}``."""
    records = list(records)
    if not records and config is None:
        raise InvalidInput("no records to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if records:
        paths["ber_curves"] = out / "ber_curves.csv"
        write_ber_csv(paths["ber_curves"], aggregate(records))
    if config is not None and with_psd:
        paths["psd_curves"] = out / "psd_curves.csv"
        _write_csv(paths["psd_curves"], psd_rows(config))
    if config is not None and with_audit:
        paths["audit"] = out / "audit.csv"
        _write_csv(paths["audit"], audit_rows(config)[1])
    return paths


def _load_journal(path: Path, config_hash: str) -> dict:
    done = {}
    if not path.exists():
        return done
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                break                     # torn final write
            if entry.get("config") != config_hash:
                continue
            done[entry["trial"]] = [TrialRecord(**r) for r in entry["records"]]
    return done


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


@dataclass
class RunResult:
    records: list
    paths: dict
    manifest: dict


def run_scenario(config: ScenarioConfig, out_dir, resume: bool = True,
                 psd_only: bool = False, max_trials: int | None = None) -> RunResult:
    """
    Run every trial, journaling each completed one, then emit CSVs and a
    JSON manifest. Completed trials found in the journal are reused.
    ``max_trials`` stops early (for interrupted-run tests); the output files
    are then written from the partial set.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records = []
    chash = config_hash(config)
    if not psd_only:
        runner = ScenarioRunner(config)
        journal = out / JOURNAL
        done = _load_journal(journal, chash) if resume else {}
        if not resume and journal.exists():
            journal.unlink()
        n_new = 0
        with open(journal, "a") as fh:
            for trial in range(config.trials):
                if trial in done:
                    records.extend(done[trial])
                    continue
                if max_trials is not None and n_new >= max_trials:
                    break
                recs = runner.run_trial(trial)
                fh.write(json.dumps({"config": chash, "trial": trial,
                                     "records": [asdict(r) for r in recs]}) + "\n")
                fh.flush()
                records.extend(recs)
                n_new += 1
                if trial % 50 == 0:
                    log.info("trial %d/%d", trial + 1, config.trials)
        checks = {}
        for r in records:
            checks.setdefault((r.trial, r.snr_db), set()).add(r.input_checksum)
        if any(len(v) != 1 for v in checks.values()):
            raise RuntimeError("receivers consumed different received streams")
        log.info("input checksums consistent across receivers for %d streams", len(checks))
    paths = emit_plotdata(records, out, config)
    manifest = {
        "scenario_id": config.scenario_id,
        "config": config.to_dict(),
        "config_hash": chash,
        "master_seed": config.master_seed,
        "trials_completed": len({r.trial for r in records}),
        "child_seed_rule": "blake2b-64(master_seed|scenario_id|trial|role)",
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "hannrx": _version()},
        "outputs": {k: os.fspath(v) for k, v in paths.items()},
        "wall_time_s": time.perf_counter() - t0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return RunResult(records, paths, manifest)


def _version() -> str:
    from . import __version__
    return __version__
