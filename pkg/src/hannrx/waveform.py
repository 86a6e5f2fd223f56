"""
Standard CP-OFDM transmitter: QPSK mapping, subcarrier mapping, CP insertion
and frame assembly with a pilot cadence.

Nothing here depends on how the signal is received; the same transmit
stream feeds every receiver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .numerics import dft

QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
# bit labels of QPSK_POINTS, (b0, b1): b0 -> sign of I, b1 -> sign of Q
QPSK_LABELS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])


@dataclass(frozen=True)
class Numerology:
    """OFDM frame geometry of one user.

    Attributes
    ----------
    fft_size : int
        N, samples per OFDM symbol body.
    cp_len : int
        L, cyclic prefix length in samples.
    data_width : int
        D, number of contiguous data subcarriers.
    first_data_bin : int
        FFT bin of the lowest data subcarrier.
    scs_hz : float
        Subcarrier spacing.
    """

    fft_size: int
    cp_len: int
    data_width: int
    first_data_bin: int
    scs_hz: float = 60e3

    def __post_init__(self):
        n, cp, d, first = (self.fft_size, self.cp_len, self.data_width,
                           self.first_data_bin)
        if not 0 < cp < n:
            raise InvalidInput(f"need 0 < cp_len < fft_size, got L={cp}, N={n}")
        if not 2 <= d <= n - 2:
            raise InvalidInput(f"need 2 <= data_width <= N-2, got D={d}")
        if first < 1 or first + d > n - 1:
            raise InvalidInput(
                "data band plus one guard bin per side must avoid the wrap edge "
                f"(first_data_bin={first}, D={d}, N={n})")
        if self.scs_hz <= 0:
            raise InvalidInput("scs_hz must be positive")

    @property
    def symbol_len(self) -> int:
        return self.fft_size + self.cp_len

    @property
    def sample_rate(self) -> float:
        return self.fft_size * self.scs_hz

    @property
    def data_bins(self) -> np.ndarray:
        return self.first_data_bin + np.arange(self.data_width)

    @property
    def extended_bins(self) -> np.ndarray:
        return self.first_data_bin - 1 + np.arange(self.data_width + 2)


@dataclass(frozen=True)
class FrameSchedule:
    symbols_per_frame: int = 14
    pilot_symbol_indices: tuple[int, ...] = (3, 10)
    pilot_seed: int = 0

    def __post_init__(self):
        idx = tuple(int(i) for i in self.pilot_symbol_indices)
        if self.symbols_per_frame < 0:
            raise InvalidInput("symbols_per_frame must be >= 0")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidInput("pilot indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.symbols_per_frame):
            raise InvalidInput("pilot index outside the frame")
        object.__setattr__(self, "pilot_symbol_indices", idx)

    @classmethod
    def every(cls, period: int, start: int, symbols_per_frame: int,
              pilot_seed: int = 0) -> "FrameSchedule":
        """Pilots on symbols ``start, start+period, ...`` (0-based)."""
        return cls(symbols_per_frame,
                   tuple(range(start, symbols_per_frame, period)), pilot_seed)

    @property
    def data_symbol_indices(self) -> tuple[int, ...]:
        pilots = set(self.pilot_symbol_indices)
        return tuple(i for i in range(self.symbols_per_frame) if i not in pilots)


def qpsk_modulate(bits) -> np.ndarray:
    """Gray-mapped QPSK: bit pair (b0, b1) -> ((1-2 b0) + j(1-2 b1)) / sqrt(2)."""
    bits = np.asarray(bits, dtype=np.int8).ravel()
    if bits.size % 2:
        raise InvalidInput(f"QPSK needs an even bit count, got {bits.size}")
    pairs = bits.reshape(-1, 2)
    return ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) / np.sqrt(2)


def qpsk_llr(obs, noise_var) -> np.ndarray:
    """
    Approximate bit LLRs, ``log P(b=0)/P(b=1)``, for unit-energy Gray QPSK.

    ``noise_var`` is the complex noise variance per symbol (broadcast against
    ``obs``). Output interleaves (I, Q) bits along the last axis.
    """
    obs = np.asarray(obs)
    noise_var = np.asarray(noise_var, dtype=float)
    if np.any(noise_var <= 0):
        raise InvalidInput("noise variance must be positive")
    scale = 2 * np.sqrt(2) / noise_var
    llr = np.stack([scale * obs.real, scale * obs.imag], axis=-1)
    return llr.reshape(*obs.shape[:-1], -1) if obs.ndim else llr


def hard_bits(llr) -> np.ndarray:
    return (np.asarray(llr) < 0).astype(np.int8)


def subcarrier_map(numerology: Numerology, d) -> np.ndarray:
    """Place ``D`` symbols (last axis) on their bins of an ``N``-point grid."""
    d = np.asarray(d)
    if d.shape[-1] != numerology.data_width:
        raise InvalidInput(
            f"expected {numerology.data_width} symbols, got {d.shape[-1]}")
    grid = np.zeros(d.shape[:-1] + (numerology.fft_size,), dtype=complex)
    grid[..., numerology.data_bins] = d
    return grid


def subcarrier_demap(numerology: Numerology, spectrum) -> np.ndarray:
    return np.asarray(spectrum)[..., numerology.data_bins]


def add_cp(body: np.ndarray, cp_len: int) -> np.ndarray:
    return np.concatenate([body[..., -cp_len:], body], axis=-1)


def ofdm_modulate(numerology: Numerology, d) -> np.ndarray:
    """CP-OFDM symbol(s): ``A F^H M d``. Rows of a 2-D ``d`` are symbols."""
    body = dft(subcarrier_map(numerology, d), inverse=True)
    return add_cp(body, numerology.cp_len)


@dataclass
class Frame:
    """Transmit frame plus the records the receiver and scorer need."""

    samples: np.ndarray
    symbols: np.ndarray          # (S, D) transmitted grid, pilots included
    pilots: np.ndarray           # (P, D) pilot symbols in schedule order
    bits: np.ndarray             # (S_data, 2D) payload bits per data symbol
    schedule: FrameSchedule = field(repr=False)


def pilot_sequence(schedule: FrameSchedule, width: int) -> np.ndarray:
    rng = np.random.default_rng(schedule.pilot_seed)
    n = len(schedule.pilot_symbol_indices)
    return QPSK_POINTS[rng.integers(0, 4, size=(n, width))]


def build_frame(numerology: Numerology, schedule: FrameSchedule,
                payload_bits) -> Frame:
    d_width = numerology.data_width
    data_idx = schedule.data_symbol_indices
    bits = np.asarray(payload_bits, dtype=np.int8).ravel()
    need = len(data_idx) * 2 * d_width
    if bits.size != need:
        raise InvalidInput(f"payload must be {need} bits, got {bits.size}")
    grid = np.zeros((schedule.symbols_per_frame, d_width), dtype=complex)
    pilots = pilot_sequence(schedule, d_width)
    if schedule.pilot_symbol_indices:
        grid[list(schedule.pilot_symbol_indices)] = pilots
    bits = bits.reshape(len(data_idx), 2 * d_width)
    if data_idx:
        grid[list(data_idx)] = qpsk_modulate(bits).reshape(-1, d_width)
    samples = ofdm_modulate(numerology, grid).ravel()
    return Frame(samples=samples, symbols=grid, pilots=pilots, bits=bits,
                 schedule=schedule)
