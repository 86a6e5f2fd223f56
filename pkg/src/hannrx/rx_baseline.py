"""
Conventional receive path: windowed CP removal, pilot-based CIR estimation,
CFR computation and per-bin MMSE equalisation.

``K = 0`` gives the rectangular receiver; ``K > 0`` tapers the last ``K``
CP samples against the last ``K`` body samples (orthogonal receiver
windowing, valid while the channel's excess delay fits in ``L - K``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .numerics import LsProblem, LsSolution, dft, solve_ls
from .waveform import FrameSchedule, Numerology, qpsk_llr

EPS = 1e-12


@dataclass(frozen=True)
class RxWindowSpec:
    tail_len: int = 0
    taper: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        taper = np.asarray(self.taper, dtype=float).ravel()
        if self.tail_len < 0:
            raise InvalidInput("tail_len must be >= 0")
        if taper.size != self.tail_len:
            raise InvalidInput(
                f"taper needs {self.tail_len} coefficients, got {taper.size}")
        if np.any((taper < 0) | (taper > 1)):
            raise InvalidInput("taper coefficients must lie in [0, 1]")
        object.__setattr__(self, "taper", taper)

    @classmethod
    def rectangular(cls) -> "RxWindowSpec":
        return cls(0, np.zeros(0))

    @classmethod
    def raised_cosine(cls, tail_len: int) -> "RxWindowSpec":
        i = np.arange(tail_len)
        return cls(tail_len, 0.5 * (1 - np.cos(np.pi * (i + 0.5) / tail_len)))


def _check_window(numerology: Numerology, spec: RxWindowSpec):
    if spec.tail_len > numerology.cp_len:
        raise InvalidInput(
            f"tail_len {spec.tail_len} exceeds cp_len {numerology.cp_len}")


def cp_removal_matrix(numerology: Numerology, spec: RxWindowSpec) -> np.ndarray:
    """Explicit ``N x (N+L)`` windowed CP-removal matrix."""
    _check_window(numerology, spec)
    n, cp, k = numerology.fft_size, numerology.cp_len, spec.tail_len
    b = np.zeros((n, n + cp))
    b[np.arange(n - k), cp + np.arange(n - k)] = 1
    rows = n - k + np.arange(k)
    b[rows, cp - k + np.arange(k)] = spec.taper
    b[rows, cp + n - k + np.arange(k)] = 1 - spec.taper
    return b


def fold_window(y, numerology: Numerology, spec: RxWindowSpec) -> np.ndarray:
    """``B_K y`` without forming the matrix; rows of ``y`` are symbols."""
    _check_window(numerology, spec)
    y = np.asarray(y)
    n, cp, k = numerology.fft_size, numerology.cp_len, spec.tail_len
    if y.shape[-1] != n + cp:
        raise InvalidInput(f"expected {n + cp} samples per symbol, got {y.shape[-1]}")
    out = y[..., cp:].astype(complex)
    if k:
        out[..., n - k:] = spec.taper * y[..., cp - k:cp] + (1 - spec.taper) * y[..., cp + n - k:]
    return out


def receive_windowed(y, numerology: Numerology, spec: RxWindowSpec) -> np.ndarray:
    """Demapped received subcarriers ``M^T F B_K y``."""
    return dft(fold_window(y, numerology, spec))[..., numerology.data_bins]


def dft_columns(bins, support_len: int, fft_size: int) -> np.ndarray:
    """Unnormalised DFT rows for ``bins`` restricted to the first taps."""
    return np.exp(-2j * np.pi * np.outer(bins, np.arange(support_len)) / fft_size)


def pilot_design(pilots, numerology: Numerology, support_len: int) -> np.ndarray:
    """``diag(p) M^T F`` on the first ``support_len`` taps."""
    return np.asarray(pilots)[:, None] * dft_columns(
        numerology.data_bins, support_len, numerology.fft_size)


@dataclass
class CirEstimate:
    h: np.ndarray
    solution: LsSolution
    flagged_bins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def ill_conditioned(self) -> bool:
        return self.solution.ill_conditioned


def _relative_ridge(design: np.ndarray, ridge: float) -> float:
    # scale-free: ridge is relative to the mean column energy of the design
    return ridge * float(np.mean(np.sum(np.abs(design) ** 2, axis=0)))


def solve_cir(design, obs, ridge: float = 0.0, weights=None):
    """Ridge LS of a pilot design, optionally row-weighted.

    ``weights`` (e.g. inverse disturbance variances) scale each equation's
    squared error; only their ratios matter.
    """
    obs = np.asarray(obs)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != obs.shape or np.any(weights <= 0):
            raise InvalidInput("weights must be positive, one per observation")
        root = np.sqrt(weights / weights.mean())
        design, obs = design * root[:, None], obs * root
    return solve_ls(LsProblem(design, obs, None, _relative_ridge(design, ridge)))


def estimate_cir_baseline(r_pilot, pilots, numerology: Numerology,
                          support_len: int, ridge: float = 0.0,
                          weights=None) -> CirEstimate:
    """
    CIR estimate from one received pilot symbol.

    Returns a length-``N`` vector of physical tap gains, zero beyond the
    first ``support_len`` taps. ``ridge`` is relative to the mean column
    energy of the pilot design matrix; ``weights`` are optional per-bin
    row weights.
    """
    pilots = np.asarray(pilots)
    if np.any(np.abs(pilots) == 0):
        raise InvalidInput("pilots must be nonzero on every data bin")
    if not 1 <= support_len <= numerology.fft_size:
        raise InvalidInput("support_len out of range")
    design = pilot_design(pilots, numerology, support_len)
    sol = solve_cir(design, r_pilot, ridge, weights)
    h = np.zeros(numerology.fft_size, dtype=complex)
    h[:support_len] = sol.x
    return CirEstimate(h, sol)


def cfr_from_cir(h) -> np.ndarray:
    """Unnormalised DFT: physical taps -> per-bin gain, consistent with the
    unitary modulator/demodulator pair (a unit tap at lag 0 gives all ones)."""
    h = np.asarray(h)
    return np.sqrt(h.shape[-1]) * dft(h)


def moving_average3(v) -> np.ndarray:
    """3-tap moving average along the last axis, shrinking at the edges."""
    v = np.asarray(v, dtype=float)
    total = v.copy()
    count = np.ones(v.shape[-1])
    total[..., 1:] += v[..., :-1]
    total[..., :-1] += v[..., 1:]
    count[1:] += 1
    count[:-1] += 1
    return total / count


def residual_variance(obs, reconstructed, dof: int = 0, smooth: bool = True) -> np.ndarray:
    """Per-bin residual power, 3-bin smoothed unless ``smooth`` is off,
    clamped at ``EPS``.

    ``dof`` fitted parameters are compensated by scaling with
    ``rows / (rows - dof)``.
    """
    obs = np.asarray(obs)
    res = np.abs(obs - np.asarray(reconstructed)) ** 2
    rows = obs.shape[-1]
    if 0 < dof < rows:
        res = res * rows / (rows - dof)
    if smooth:
        res = moving_average3(res)
    return np.maximum(res, EPS)


def pilot_disturbance(per_pilot, pilot_idx, n_symbols: int, pooling: str) -> np.ndarray:
    """Spread per-pilot disturbance estimates over the frame.

    ``pooling="time"`` averages the pilots and holds the result for every
    symbol; ``"frequency"`` expects already smoothed rows and interpolates
    them linearly between pilots.
    """
    per_pilot = np.asarray(per_pilot)
    if pooling == "time":
        return np.repeat(np.maximum(per_pilot.mean(axis=0), EPS)[None], n_symbols, axis=0)
    if pooling == "frequency":
        return interpolate_symbols(per_pilot, pilot_idx, n_symbols)
    raise InvalidInput(f"unknown disturbance pooling {pooling!r}")


def interpolate_symbols(values, pilot_idx, n_symbols: int) -> np.ndarray:
    """Linear interpolation across symbols, held constant outside the pilots.

    ``values`` has one leading row per pilot symbol.
    """
    values = np.asarray(values)
    pilot_idx = np.asarray(pilot_idx, dtype=float)
    if pilot_idx.size == 0:
        raise InvalidInput("need at least one pilot symbol")
    s = np.arange(n_symbols, dtype=float)
    if pilot_idx.size == 1:
        return np.repeat(values[:1], n_symbols, axis=0)
    hi = np.clip(np.searchsorted(pilot_idx, s, side="right"), 1, pilot_idx.size - 1)
    lo = hi - 1
    t = np.clip((s - pilot_idx[lo]) / (pilot_idx[hi] - pilot_idx[lo]), 0, 1)
    t = t.reshape((-1,) + (1,) * (values.ndim - 1))
    return (1 - t) * values[lo] + t * values[hi]


@dataclass
class CfrEstimate:
    theta: np.ndarray
    per_bin_disturbance: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta)
        self.per_bin_disturbance = np.asarray(self.per_bin_disturbance, dtype=float)
        if self.theta.shape[-1] != self.per_bin_disturbance.shape[-1]:
            raise InvalidInput("theta and disturbance lengths differ")
        if np.any(self.per_bin_disturbance < 0):
            raise InvalidInput("disturbance variances must be nonnegative")


def equalize_mmse(r, est: CfrEstimate) -> tuple[np.ndarray, bool]:
    """Per-bin MMSE: ``conj(theta) r / (|theta|^2 + sigma^2)``.

    The second return value flags bins whose denominator hit the epsilon
    guard.
    """
    theta = est.theta
    den = np.abs(theta) ** 2 + est.per_bin_disturbance
    degenerate = bool(np.any(den < EPS))
    return np.conj(theta) * np.asarray(r) / np.maximum(den, EPS), degenerate


@dataclass
class BaselineResult:
    r: np.ndarray            # (S, D) received subcarriers
    theta: np.ndarray        # (S, D) CFR estimates
    noise_var: np.ndarray    # (S, D) disturbance variances used
    d_hat: np.ndarray        # (S, D) MMSE outputs
    llr: np.ndarray          # (S_data, 2D)


class BaselineReceiver:
    """Rectangular or tapered-CP OFDM receiver over a whole frame.

    Parameters
    ----------
    numerology : Numerology
        Desired user's frame geometry.
    window : RxWindowSpec
        CP-removal window; rectangular when ``tail_len == 0``.
    support_len : int
        Number of CIR taps estimated.
    ridge : float
        Relative ridge regulariser of the CIR least squares.
    reweight : bool
        Refit each pilot symbol with rows weighted by the inverse of the
        disturbance estimated from the first fit.
    pooling : {"time", "frequency"}
        ``time`` averages the raw per-bin residual power over the pilot
        symbols; ``frequency`` smooths each pilot over 3 bins and
        interpolates between pilots.
    """

    def __init__(self, numerology: Numerology, window: RxWindowSpec,
                 support_len: int, ridge: float = 1e-3, reweight: bool = True,
                 pooling: str = "time"):
        _check_window(numerology, window)
        self.numerology = numerology
        self.window = window
        self.support_len = support_len
        self.ridge = ridge
        self.reweight = reweight
        self.pooling = pooling

    def symbols_of(self, y) -> np.ndarray:
        sym = self.numerology.symbol_len
        y = np.asarray(y)
        return y[: (y.size // sym) * sym].reshape(-1, sym)

    def receive_frame(self, y, schedule: FrameSchedule, pilots,
                      disturbance=None) -> BaselineResult:
        """Equalise one frame.

        ``disturbance`` (the received stream with the desired signal removed)
        switches to genie disturbance variances: the per-bin power of the
        windowed disturbance averaged over the frame.
        """
        num = self.numerology
        r = receive_windowed(self.symbols_of(y), num, self.window)
        p_idx = list(schedule.pilot_symbol_indices)
        cirs, variances = [], []
        for p, pilot in zip(p_idx, pilots):
            weights = None
            for _ in range(2 if self.reweight else 1):
                est = estimate_cir_baseline(r[p], pilot, num, self.support_len, self.ridge,
                                            weights)
                theta_p = cfr_from_cir(est.h)[num.data_bins]
                weights = 1 / residual_variance(r[p], theta_p * pilot, self.support_len)
            cirs.append(est.h[: self.support_len])
            variances.append(residual_variance(r[p], theta_p * pilot, self.support_len,
                                               smooth=self.pooling == "frequency"))
        n_sym = schedule.symbols_per_frame
        h_all = np.zeros((n_sym, num.fft_size), dtype=complex)
        h_all[:, : self.support_len] = interpolate_symbols(np.array(cirs), p_idx, n_sym)
        theta = cfr_from_cir(h_all)[:, num.data_bins]
        if disturbance is not None:
            rz = receive_windowed(self.symbols_of(disturbance), num, self.window)
            var = np.broadcast_to(np.maximum(np.mean(np.abs(rz) ** 2, axis=0), EPS),
                                  theta.shape)
        else:
            var = pilot_disturbance(variances, p_idx, n_sym, self.pooling)
        d_hat, _ = equalize_mmse(r, CfrEstimate(theta, var))
        data = list(schedule.data_symbol_indices)
        # LLRs of the unbiased (ZF-scaled) estimate: var/|theta|^2 around d
        gain2 = np.maximum(np.abs(theta[data]) ** 2, EPS)
        z = np.conj(theta[data]) * r[data] / gain2
        llr = qpsk_llr(z, np.maximum(var[data] / gain2, EPS))
        return BaselineResult(r, theta, np.asarray(var), d_hat, llr)
