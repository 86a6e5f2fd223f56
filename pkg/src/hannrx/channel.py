"""
Time-varying tapped-delay-line channels and multi-user signal composition.

Each tap is a sum-of-sinusoids Rayleigh process with the classic U-shaped
Doppler spectrum; tap delays are rounded to whole samples.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InvalidInput
from .numerics import dft
from .waveform import QPSK_POINTS, Numerology, add_cp, subcarrier_map

PROFILES = {"TDL-A": "tdl_a.csv", "TDL-C": "tdl_c.csv"}


def load_profile(name: str) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(delays_s, powers_linear)`` of a packaged PDP table."""
    try:
        fname = PROFILES[name.upper()]
    except KeyError:
        raise InvalidInput(f"unknown delay profile {name!r}") from None
    text = (resources.files("hannrx") / "data" / fname).read_text()
    rows = [r for r in csv.DictReader(
        io.StringIO("\n".join(l for l in text.splitlines() if not l.startswith("#"))))]
    delays = np.array([float(r["delay_ns"]) for r in rows]) * 1e-9
    powers = 10 ** (np.array([float(r["power_db"]) for r in rows]) / 10)
    return delays, powers


def rms_delay_spread(delays, powers) -> float:
    delays = np.asarray(delays, dtype=float)
    p = np.asarray(powers, dtype=float) / np.sum(powers)
    mean = np.sum(p * delays)
    return float(np.sqrt(np.sum(p * (delays - mean) ** 2)))


@dataclass(frozen=True)
class TdlSpec:
    tap_delays: np.ndarray
    tap_powers: np.ndarray
    rms_ds_target: float
    doppler_hz: float = 0.0
    seed: int = 0
    num_sinusoids: int = 32

    def __post_init__(self):
        delays = np.asarray(self.tap_delays, dtype=float).ravel()
        powers = np.asarray(self.tap_powers, dtype=float).ravel()
        if delays.size != powers.size or delays.size == 0:
            raise InvalidInput("tap_delays and tap_powers must be equal, non-empty")
        if np.any(delays < 0) or np.any(np.diff(delays) < 0):
            raise InvalidInput("tap delays must be nonnegative and sorted")
        if abs(powers.sum() - 1) > 1e-9:
            raise InvalidInput(f"tap powers must sum to 1, got {powers.sum()}")
        if self.doppler_hz < 0:
            raise InvalidInput("doppler_hz must be >= 0")
        if self.num_sinusoids < 1:
            raise InvalidInput("num_sinusoids must be >= 1")
        object.__setattr__(self, "tap_delays", delays)
        object.__setattr__(self, "tap_powers", powers)

    @classmethod
    def from_profile(cls, name: str, rms_ds: float, doppler_hz: float = 0.0,
                     seed: int = 0, num_sinusoids: int = 32) -> "TdlSpec":
        """Packaged PDP with delays rescaled to an exact RMS delay spread."""
        delays, powers = load_profile(name)
        order = np.argsort(delays, kind="stable")
        delays, powers = delays[order], powers[order] / powers.sum()
        delays = delays * (rms_ds / rms_delay_spread(delays, powers))
        return cls(delays, powers, rms_ds, doppler_hz, seed, num_sinusoids)

    @property
    def rms_delay_spread(self) -> float:
        return rms_delay_spread(self.tap_delays, self.tap_powers)


@dataclass(frozen=True)
class ChannelRealization:
    """Per-sample gains of each distinct integer lag.

    ``gains[i, n]`` multiplies ``x[n - lags[i]]`` in the output sample ``n``.
    """

    lags: np.ndarray
    gains: np.ndarray
    powers: np.ndarray

    @property
    def span(self) -> int:
        return self.gains.shape[1]

    @classmethod
    def identity(cls, span: int) -> "ChannelRealization":
        return cls(np.array([0]), np.ones((1, span), dtype=complex), np.ones(1))

    @classmethod
    def static(cls, taps, span: int) -> "ChannelRealization":
        """Time-invariant channel with gain ``taps[k]`` at lag ``k``."""
        taps = np.asarray(taps, dtype=complex)
        lags = np.flatnonzero(taps)
        if lags.size == 0:
            lags = np.array([0])
        return cls(lags, np.repeat(taps[lags, None], span, axis=1),
                   np.abs(taps[lags]) ** 2)

    def rms_delay_spread(self, sample_rate: float) -> float:
        return rms_delay_spread(self.lags / sample_rate, self.powers)

    def impulse_response(self, n: int, length: int) -> np.ndarray:
        """Taps seen by output sample ``n`` as a length-``length`` vector."""
        h = np.zeros(length, dtype=complex)
        keep = self.lags < length
        h[self.lags[keep]] = self.gains[keep, n]
        return h


def _sos_process(rng: np.random.Generator, n_samples: int, doppler_norm: float,
                 m: int) -> np.ndarray:
    """Unit-power sum-of-sinusoids fading process.

    Arrival angles are evenly spaced with a random rotation, phases are
    uniform; the ensemble autocorrelation is J0(2 pi f_d tau).
    """
    theta = rng.uniform(-np.pi, np.pi)
    alpha = (2 * np.pi * np.arange(m) + theta) / m
    phi = rng.uniform(0, 2 * np.pi, size=m)
    n = np.arange(n_samples)
    if doppler_norm == 0:
        return np.full(n_samples, np.exp(1j * phi).sum() / np.sqrt(m))
    arg = 2 * np.pi * doppler_norm * np.cos(alpha)[:, None] * n[None, :] + phi[:, None]
    return np.exp(1j * arg).sum(axis=0) / np.sqrt(m)


def make_tdl(spec: TdlSpec, sample_rate: float, duration: int) -> ChannelRealization:
    if duration <= 0:
        raise InvalidInput("duration must be positive")
    lags_all = np.rint(spec.tap_delays * sample_rate).astype(int)
    if lags_all.max() >= duration:
        raise InvalidInput(
            f"tap delay of {lags_all.max()} samples exceeds the {duration}-sample window")
    lags = np.unique(lags_all)
    powers = np.array([spec.tap_powers[lags_all == l].sum() for l in lags])
    children = np.random.SeedSequence(spec.seed).spawn(lags.size)
    gains = np.empty((lags.size, duration), dtype=complex)
    for i, (p, ss) in enumerate(zip(powers, children)):
        rng = np.random.default_rng(ss)
        gains[i] = np.sqrt(p) * _sos_process(rng, duration, spec.doppler_hz / sample_rate,
                                             spec.num_sinusoids)
    return ChannelRealization(lags, gains, powers)


@dataclass
class UserLink:
    samples: np.ndarray
    snr_db: float
    realization: ChannelRealization
    sample_offset: int = 0

    @property
    def gain(self) -> float:
        return float(np.sqrt(10 ** (self.snr_db / 10)))

    def aligned_samples(self) -> np.ndarray:
        """Transmit stream as timed at the receiver (circular shift by offset)."""
        return np.roll(np.asarray(self.samples), self.sample_offset)


def convolve_time_varying(realization: ChannelRealization, x: np.ndarray,
                          start: int = 0, length: int | None = None) -> np.ndarray:
    """``out[n] = sum_i gains[i, n] x[n - lags[i]]`` for ``n`` in the window.

    Samples before the start of ``x`` are zero.
    """
    x = np.asarray(x)
    if length is None:
        length = x.size - start
    stop = start + length
    if start < 0 or stop > x.size or stop > realization.span:
        raise InvalidInput(f"window [{start}, {stop}) outside the stream/realization")
    out = np.zeros(length, dtype=complex)
    for lag, g in zip(realization.lags, realization.gains):
        lo = max(start, lag)
        if lo >= stop:
            continue
        out[lo - start:] += g[lo:stop] * x[lo - lag:stop - lag]
    return out


def apply_channel(link: UserLink, window_start: int = 0,
                  length: int | None = None) -> np.ndarray:
    """Channel output (before SNR scaling) over ``[window_start, +length)``."""
    return convolve_time_varying(link.realization, link.aligned_samples(),
                                 window_start, length)


def channel_matrix(realization: ChannelRealization, window_start: int,
                   size: int) -> np.ndarray:
    """Explicit ``size x size`` convolution matrix of the window.

    Entry ``(i, j)`` is the gain applied at output ``window_start + i`` to the
    input sample ``window_start + j``; earlier inputs are not represented.
    """
    h = np.zeros((size, size), dtype=complex)
    for lag, g in zip(realization.lags, realization.gains):
        for i in range(lag, size):
            h[i, i - lag] = g[window_start + i]
    return h


def awgn(rng: np.random.Generator, n: int) -> np.ndarray:
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def compose_received(desired: UserLink, interferers=(), noise_seed=None,
                     noise: bool = True) -> np.ndarray:
    """Noise-normalised received stream ``z + sum_j sqrt(gamma_j) H_j x_j``."""
    if desired.sample_offset != 0:
        raise InvalidInput("the desired link defines the timing; its offset must be 0")
    n = np.asarray(desired.samples).size
    y = np.zeros(n, dtype=complex)
    for link in (desired, *interferers):
        if np.asarray(link.samples).size != n:
            raise InvalidInput("all links must span the same window")
        y += link.gain * apply_channel(link)
    if noise:
        y += awgn(np.random.default_rng(noise_seed), n)
    return y


def raised_cosine_ramp(length: int) -> np.ndarray:
    """Rising half-cosine taper, strictly inside (0, 1)."""
    k = np.arange(length)
    return 0.5 * (1 - np.cos(np.pi * (k + 0.5) / length))


def interferer_stream(numerology: Numerology, taper_len: int, seed,
                      n_samples: int) -> np.ndarray:
    """
    Random-QPSK CP-OFDM stream on the interferer's own grid.

    With ``taper_len > 0`` each symbol is transmit-windowed: the first
    ``taper_len`` CP samples ramp up and a cyclic suffix ramping down is
    overlap-added onto the next symbol, so the stream length is unchanged.
    """
    if not 0 <= taper_len <= numerology.cp_len:
        raise InvalidInput(
            f"taper_len must be in [0, {numerology.cp_len}], got {taper_len}")
    rng = np.random.default_rng(seed)
    sym_len = numerology.symbol_len
    n_sym = -(-n_samples // sym_len) + 1
    d = QPSK_POINTS[rng.integers(0, 4, size=(n_sym, numerology.data_width))]
    body = dft(subcarrier_map(numerology, d), inverse=True)
    symbols = add_cp(body, numerology.cp_len)
    if taper_len:
        ramp = raised_cosine_ramp(taper_len)
        symbols[:, :taper_len] *= ramp
        suffix = body[:, :taper_len] * (1 - ramp)
        symbols[1:, :taper_len] += suffix[:-1]
    return symbols.ravel()[:n_samples]
