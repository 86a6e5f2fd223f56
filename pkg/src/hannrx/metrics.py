"""
Measurement instruments: bit-error counting with confidence intervals,
per-subcarrier PSD under a receive window, and SINR measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InvalidInput
from .rx_baseline import RxWindowSpec
from .waveform import QPSK_POINTS, Numerology, ofdm_modulate

SINR_CAP_DB = 80.0
MIN_SINR_SAMPLES = 1000
PSD_FLOOR_DB = -300.0


def count_errors(decisions, truth) -> tuple[int, int]:
    """
    Hamming distance between decided and true bits.

    Floating-point ``decisions`` are treated as LLRs (negative means bit 1);
    integer or boolean input is taken as hard bits.
    """
    decisions = np.asarray(decisions)
    truth = np.asarray(truth).astype(bool).ravel()
    if decisions.size != truth.size:
        raise InvalidInput(f"{decisions.size} decisions for {truth.size} truth bits")
    if np.issubdtype(decisions.dtype, np.floating):
        hard = decisions.ravel() < 0
    else:
        hard = decisions.astype(bool).ravel()
    return int(np.count_nonzero(hard != truth)), int(truth.size)


def wilson_interval(errors: int, bits: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if bits <= 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / bits
    den = 1 + z ** 2 / bits
    center = (p + z ** 2 / (2 * bits)) / den
    half = z * np.sqrt(p * (1 - p) / bits + z ** 2 / (4 * bits ** 2)) / den
    return float(max(center - half, 0.0)), float(min(center + half, 1.0))


@dataclass
class BerCounter:
    """Associative error/bit accumulator."""

    errors: int = 0
    bits: int = 0

    def add(self, errors: int, bits: int) -> "BerCounter":
        if errors > bits or errors < 0:
            raise InvalidInput("errors must lie in [0, bits]")
        self.errors += int(errors)
        self.bits += int(bits)
        return self

    def merge(self, other: "BerCounter") -> "BerCounter":
        return BerCounter(self.errors + other.errors, self.bits + other.bits)

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")

    def interval(self, confidence: float = 0.95) -> tuple[float, float]:
        return wilson_interval(self.errors, self.bits, confidence)


@dataclass
class SinrMeasurement:
    sinr_db: np.ndarray
    gain: np.ndarray
    insufficient: bool


def measure_sinr(estimates, truth, remove_scaling: bool = True) -> SinrMeasurement:
    """
    Per-subcarrier SINR of ``estimates`` against ``truth``.

    Rows are symbols, columns subcarriers. With ``remove_scaling`` a complex
    gain is fitted per subcarrier first, so a biased estimator is not
    penalised for its bias. Values are capped at ``SINR_CAP_DB``; fewer than
    ``MIN_SINR_SAMPLES`` rows sets ``insufficient``.
    """
    est = np.atleast_2d(np.asarray(estimates))
    tru = np.atleast_2d(np.asarray(truth))
    if est.shape != tru.shape:
        raise InvalidInput("estimates and truth shapes differ")
    power = np.sum(np.abs(tru) ** 2, axis=0)
    if remove_scaling:
        gain = np.sum(np.conj(tru) * est, axis=0) / np.maximum(power, 1e-300)
    else:
        gain = np.ones(est.shape[1], dtype=complex)
    err = np.sum(np.abs(est - gain * tru) ** 2, axis=0)
    sig = np.abs(gain) ** 2 * power
    with np.errstate(divide="ignore"):
        sinr = 10 * np.log10(sig / err)
    sinr = np.minimum(np.nan_to_num(sinr, nan=SINR_CAP_DB, posinf=SINR_CAP_DB), SINR_CAP_DB)
    return SinrMeasurement(sinr, gain, est.shape[0] < MIN_SINR_SAMPLES)


# ---------------------------------------------------------------------------
# PSD


@dataclass
class PsdCurve:
    """Power versus offset from the subcarrier, peak-normalised to 0 dB."""

    offsets: np.ndarray
    power_db: np.ndarray
    marker_offsets: np.ndarray
    marker_db: np.ndarray

    def marker(self, offset: int) -> float:
        return float(self.marker_db[np.flatnonzero(self.marker_offsets == offset)[0]])


def analysis_window(numerology: Numerology, kind: str = "rectangular",
                    tail_len: int = 0) -> np.ndarray:
    """
    Receive window over one ``N + L`` symbol as seen by a single tone.

    ``rectangular`` passes the body, ``hann`` multiplies it by the periodic
    Hann window, ``taper`` ramps in over the last ``tail_len`` CP samples and
    out over the last ``tail_len`` body samples.
    """
    n, cp = numerology.fft_size, numerology.cp_len
    w = np.zeros(n + cp)
    if kind == "rectangular":
        w[cp:] = 1
    elif kind == "hann":
        w[cp:] = 1 - np.cos(2 * np.pi * np.arange(n) / n)
    elif kind == "taper":
        spec = RxWindowSpec.raised_cosine(tail_len)
        if not 0 < tail_len <= cp:
            raise InvalidInput("taper needs 0 < tail_len <= cp_len")
        w[cp:] = 1
        w[cp - tail_len:cp] = spec.taper
        w[n + cp - tail_len:] = 1 - spec.taper
    else:
        raise InvalidInput(f"unknown analysis window {kind!r}")
    return w


def subcarrier_psd(numerology: Numerology, subcarrier: int, window,
                   resolution: int = 16, n_symbols: int = 200, seed=0,
                   amplitude: float = 1.0, max_offset: int = 16) -> PsdCurve:
    """
    Averaged zero-padded periodogram of one active subcarrier after the
    receive window.

    Each symbol carries a random unit QPSK symbol on ``subcarrier`` (index
    into the data band) and nothing else. ``window`` is an ``N + L`` vector
    (see ``analysis_window``).
    """
    if resolution < 4:
        raise InvalidInput("resolution factor must be >= 4")
    if not 0 <= subcarrier < numerology.data_width:
        raise InvalidInput("subcarrier outside the data band")
    window = np.asarray(window, dtype=float)
    if window.size != numerology.symbol_len:
        raise InvalidInput("window must span one CP-OFDM symbol")
    rng = np.random.default_rng(seed)
    grid = np.zeros((n_symbols, numerology.data_width), dtype=complex)
    grid[:, subcarrier] = amplitude * QPSK_POINTS[rng.integers(0, 4, n_symbols)]
    x = ofdm_modulate(numerology, grid) * window
    size = resolution * numerology.fft_size
    spec = np.fft.fft(x, n=size, axis=-1)
    psd = np.mean(np.abs(spec) ** 2, axis=0)
    center = numerology.data_bins[subcarrier] * resolution
    k = np.arange(-max_offset * resolution, max_offset * resolution + 1)
    vals = psd[(center + k) % size]
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(vals / vals.max())
    db = np.maximum(db, PSD_FLOOR_DB)
    offsets = k / resolution
    on_grid = k % resolution == 0
    return PsdCurve(offsets, db, offsets[on_grid].astype(int), db[on_grid])


def sidelobe_decay(curve: PsdCurve, start: int = 4, stop: int = 8) -> float:
    """
    Sidelobe envelope decay in dB per octave.

    Takes the peak of each unit interval ``[k, k+1)`` between ``start`` and
    ``stop`` on both sides, averages the two sides and fits a line against
    ``log2`` of the interval centre.
    """
    centres, peaks = [], []
    for k in range(start, stop + 1):
        if k + 1 > curve.offsets.max():
            break
        sides = []
        for sign in (1, -1):
            sel = (sign * curve.offsets >= k) & (sign * curve.offsets < k + 1)
            sides.append(curve.power_db[sel].max())
        centres.append(k + 0.5)
        peaks.append(np.mean(sides))
    slope = np.polyfit(np.log2(centres), peaks, 1)[0]
    return float(-slope)
