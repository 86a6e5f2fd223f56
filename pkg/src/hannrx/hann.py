"""
Hann receiver windowing for standard CP-OFDM.

The receiver drops the CP and multiplies the N body samples by a periodic
Hann window. In the frequency domain that is a circular convolution with the
kernel ``[-1/2, 1, -1/2]``: every subcarrier leaks into exactly its two
neighbours while far-away adjacent-band energy is strongly attenuated.

Three observations (its own bin and the two neighbours) per subcarrier are
combined with an equalised MRC, and the residual neighbour leakage is
removed by soft interference cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import expit, logsumexp

from .errors import InvalidInput
from .numerics import apply_banded, circulant, dft, dft_matrix
from .rx_baseline import (EPS, CirEstimate, cfr_from_cir, dft_columns,
                          interpolate_symbols, pilot_disturbance, residual_variance,
                          solve_cir)
from .waveform import QPSK_LABELS, QPSK_POINTS, FrameSchedule, Numerology, subcarrier_map

KERNEL_CENTER = 1.0
KERNEL_OFF = -0.5


@dataclass(frozen=True)
class HannWindow:
    variant: Literal["periodic", "paper-symmetric"]
    coefficients: np.ndarray
    scale: float

    @property
    def size(self) -> int:
        return self.coefficients.size


def hann_window(n: int, variant: str = "periodic") -> HannWindow:
    """
    Hann window over the ``n`` post-CP samples, written as
    ``scale * sin^2(pi k / P)``.

    ``periodic`` uses ``P = n`` and ``scale = 2`` (``w = 1 - cos(2 pi k / n)``),
    which makes the frequency-domain kernel exactly ``[-1/2, 1, -1/2]``.
    ``paper-symmetric`` uses ``P = n - 1`` with the closed-form scale
    ``4n / (2n + sin((pi - 2 pi n)/(n-1)) csc(pi/(n-1)) - 1)``; its kernel is
    only approximately tridiagonal.
    """
    if n < 3:
        raise InvalidInput(f"Hann window needs n >= 3, got {n}")
    k = np.arange(n)
    if variant == "periodic":
        return HannWindow(variant, 1 - np.cos(2 * np.pi * k / n), 2.0)
    if variant == "paper-symmetric":
        a = np.pi / (n - 1)
        scale = 4 * n / (2 * n + np.sin((np.pi - 2 * np.pi * n) / (n - 1)) / np.sin(a) - 1)
        return HannWindow(variant, scale * np.sin(a * k) ** 2, float(scale))
    raise InvalidInput(f"unknown Hann variant {variant!r}")


def hann_receive(y, numerology: Numerology, window: HannWindow) -> np.ndarray:
    """Full windowed spectrum ``F W y``; rows of ``y`` are symbols."""
    y = np.asarray(y)
    if y.shape[-1] != numerology.symbol_len:
        raise InvalidInput(
            f"expected {numerology.symbol_len} samples per symbol, got {y.shape[-1]}")
    if window.size != numerology.fft_size:
        raise InvalidInput("window length must equal the FFT size")
    return dft(window.coefficients * y[..., numerology.cp_len:])


def ici_kernel_matrix(n: int) -> np.ndarray:
    row = np.zeros(n)
    row[0], row[1], row[-1] = KERNEL_CENTER, KERNEL_OFF, KERNEL_OFF
    return circulant(row)


def ici_operator_check(n: int, window: HannWindow | None = None) -> float:
    """Max deviation of ``F diag(w) F^H`` from the tridiagonal circulant."""
    if window is None:
        window = hann_window(n)
    f = dft_matrix(n)
    product = f @ np.diag(window.coefficients) @ f.conj().T
    return float(np.max(np.abs(product - ici_kernel_matrix(n))))


def extended_demap(spectrum, numerology: Numerology) -> np.ndarray:
    """Data bins plus one neighbour each side: ``D + 2`` values."""
    return np.asarray(spectrum)[..., numerology.extended_bins]


def hann_pilot_design(pilots, numerology: Numerology, support_len: int) -> np.ndarray:
    """``M_ext^T T(nu) diag(M p) F`` restricted to the first taps."""
    n = numerology.fft_size
    spread = subcarrier_map(numerology, pilots)[:, None] * dft_columns(
        np.arange(n), support_len, n)
    filtered = apply_banded(KERNEL_CENTER, KERNEL_OFF, spread, circular=True)
    return filtered[numerology.extended_bins]


def filtered_pilots(pilots, numerology: Numerology) -> np.ndarray:
    """Kernel-filtered pilots as seen on the extended bins (flat channel)."""
    full = apply_banded(KERNEL_CENTER, KERNEL_OFF, subcarrier_map(numerology, pilots),
                        circular=True)
    return full[numerology.extended_bins]


def estimate_cir_hann(pilot_obs, pilots, numerology: Numerology, support_len: int,
                      ridge: float = 0.0, null_tol: float = 1e-6,
                      weights=None) -> CirEstimate:
    """
    CIR from the ``D + 2`` Hann-windowed pilot observations.

    Bins whose filtered pilot is near zero (``|f| < null_tol * max|f|``) are
    reported in ``flagged_bins``; they stay in the solve since their rows
    still constrain the non-zero-lag taps. ``weights`` are optional per-bin
    row weights (inverse disturbance variances).
    """
    pilots = np.asarray(pilots)
    pilot_obs = np.asarray(pilot_obs)
    if pilots.shape[-1] != numerology.data_width or np.any(pilots == 0):
        raise InvalidInput("pilots must cover all data bins with nonzero symbols")
    if pilot_obs.shape[-1] != numerology.data_width + 2:
        raise InvalidInput("pilot observation must have D + 2 entries")
    design = hann_pilot_design(pilots, numerology, support_len)
    sol = solve_cir(design, pilot_obs, ridge, weights)
    h = np.zeros(numerology.fft_size, dtype=complex)
    h[:support_len] = sol.x
    f = np.abs(filtered_pilots(pilots, numerology))
    flagged = np.flatnonzero(f < null_tol * f.max())
    return CirEstimate(h, sol, flagged)


def estimate_disturbance(pilot_obs, reconstructed, dof: int = 0,
                         smooth: bool = True) -> np.ndarray:
    """Per-bin disturbance power on the extended bins (3-bin smoothed unless
    ``smooth`` is off, clamped)."""
    pilot_obs = np.asarray(pilot_obs)
    if pilot_obs.shape != np.shape(reconstructed):
        raise InvalidInput("observation and reconstruction shapes differ")
    return residual_variance(pilot_obs, reconstructed, dof, smooth)


# ---------------------------------------------------------------------------
# equalised MRC


@dataclass
class MrcOperator:
    """Per-symbol combining bundle; leading axes index symbols.

    ``ext_channel`` is ``(D+2, D)``, ``combiner`` ``(D, D+2)``,
    ``residual_gain`` ``(D, D)``, ``residual_power`` ``(D,)`` and ``sinr``
    ``(D, D+2)``.
    """

    ext_channel: np.ndarray
    combiner: np.ndarray
    residual_gain: np.ndarray
    residual_power: np.ndarray
    sinr: np.ndarray
    unequalized: np.ndarray
    degenerate: bool = False


def extended_channel(theta) -> np.ndarray:
    """``(D+2) x D`` banded channel: column ``m`` is ``theta_m * [-1/2, 1, -1/2]``."""
    theta = np.asarray(theta)
    d = theta.shape[-1]
    h = np.zeros(theta.shape[:-1] + (d + 2, d), dtype=complex)
    m = np.arange(d)
    h[..., m, m] = KERNEL_OFF * theta
    h[..., m + 1, m] = KERNEL_CENTER * theta
    h[..., m + 2, m] = KERNEL_OFF * theta
    return h


def build_mrc(theta, noise_var, weighting: str = "optimal") -> MrcOperator:
    """
    Equalised MRC over the three bins carrying each subcarrier.

    ``noise_var`` (length ``D + 2``) is the disturbance variance per observed
    bin. Each observed bin's disturbance for subcarrier ``m`` is that variance
    plus the power the other subcarriers put there (treated as independent).

    ``weighting="optimal"`` uses ``conj(H) / disturbance``, the SINR-maximising
    combiner under that model. ``weighting="power-scaled"`` uses
    ``conj(H) * |H|^2 / disturbance``, i.e. each branch additionally scaled by
    its own signal power.
    """
    theta = np.asarray(theta, dtype=complex)
    noise_var = np.asarray(noise_var, dtype=float)
    d = theta.shape[-1]
    if noise_var.shape[-1] != d + 2:
        raise InvalidInput("noise_var must have D + 2 entries")
    if np.any(noise_var <= 0):
        raise InvalidInput("noise variances must be positive")
    h = extended_channel(theta)
    energy = np.abs(h) ** 2                                   # (.., D+2, D)
    observed = energy.sum(axis=-1)                            # (.., D+2)
    energy_t = np.swapaxes(energy, -1, -2)                    # (.., D, D+2)
    disruption = np.maximum((noise_var + observed)[..., None, :] - energy_t, EPS)
    h_t = np.conj(np.swapaxes(h, -1, -2))
    if weighting == "optimal":
        unequalized = h_t / disruption
    elif weighting == "power-scaled":
        unequalized = h_t * energy_t / disruption
    else:
        raise InvalidInput(f"unknown weighting {weighting!r}")
    norm = np.einsum("...mk,...km->...m", unequalized, h)
    degenerate = bool(np.any(np.abs(norm) < EPS))
    safe = np.where(np.abs(norm) < EPS, np.inf, norm)
    combiner = unequalized / safe[..., :, None]
    gain = combiner @ h - np.eye(d)
    power = (np.abs(combiner) ** 2) @ noise_var[..., :, None]
    return MrcOperator(ext_channel=h, combiner=combiner, residual_gain=gain,
                       residual_power=power[..., 0], sinr=energy_t / disruption,
                       unequalized=unequalized, degenerate=degenerate)


def mrc_combine(d_ext, op: MrcOperator) -> np.ndarray:
    """Matrix form ``C d_ext``."""
    d_ext = np.asarray(d_ext)
    if d_ext.shape[-1] != op.combiner.shape[-1]:
        raise InvalidInput("observation length does not match the combiner")
    return np.einsum("...mk,...k->...m", op.combiner, d_ext)


def mrc_combine_explicit(d_ext, theta, noise_var, weighting: str = "optimal") -> np.ndarray:
    """
    Scalar per-subcarrier evaluation of the combiner, independent of the
    matrix route. Observed bins are indexed ``0 .. D+1``; subcarrier ``d``
    (``1 .. D``) occupies bins ``d-1, d, d+1`` with gains
    ``-theta/2, theta, -theta/2``.
    """
    d_ext = np.asarray(d_ext, dtype=complex)
    theta = np.asarray(theta, dtype=complex)
    noise_var = np.asarray(noise_var, dtype=float)
    n_sc = theta.size
    coef = {-1: KERNEL_OFF, 0: KERNEL_CENTER, 1: KERNEL_OFF}

    def gain(kappa, tau):
        # gain of subcarrier tau (1..D) at observed bin kappa (0..D+1)
        if not 1 <= tau <= n_sc or abs(kappa - tau) > 1:
            return 0j
        return coef[kappa - tau] * theta[tau - 1]

    out = np.zeros(n_sc, dtype=complex)
    for d in range(1, n_sc + 1):
        num = den = 0
        for kappa in (d - 1, d, d + 1):
            g = gain(kappa, d)
            interference = sum(abs(gain(kappa, tau)) ** 2
                               for tau in (kappa - 1, kappa, kappa + 1) if tau != d)
            sinr = abs(g) ** 2 / (noise_var[kappa] + interference)
            if weighting == "power-scaled":
                num += sinr * np.conj(g) * d_ext[kappa]
                den += sinr * abs(g) ** 2
            else:
                if abs(g) < EPS:
                    continue
                num += sinr * d_ext[kappa] / g
                den += sinr
        out[d - 1] = num / den if den > EPS else 0
    return out


# ---------------------------------------------------------------------------
# soft interference cancellation


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray
    labels: np.ndarray

    @property
    def order(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    def llr(self, z, noise_var) -> np.ndarray:
        """Exact bit LLRs ``log P(b=0|z) / P(b=1|z)`` for Gaussian noise."""
        z = np.asarray(z)
        metric = -np.abs(z[..., None] - self.points) ** 2 / np.asarray(noise_var)[..., None]
        out = []
        for b in range(self.bits_per_symbol):
            zero = self.labels[:, b] == 0
            out.append(logsumexp(metric[..., zero], axis=-1)
                       - logsumexp(metric[..., ~zero], axis=-1))
        llr = np.stack(out, axis=-1)
        return llr.reshape(*z.shape[:-1], -1)

    def soft_symbols(self, llr) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of the symbol under independent bit posteriors."""
        llr = np.asarray(llr)
        llr = llr.reshape(*llr.shape[:-1], -1, self.bits_per_symbol)
        p0 = expit(np.clip(llr, -60, 60))                 # P(b = 0)
        probs = np.ones(llr.shape[:-1] + (self.order,))
        for b in range(self.bits_per_symbol):
            pb = np.where(self.labels[:, b] == 0, p0[..., b, None], 1 - p0[..., b, None])
            probs = probs * pb
        mean = probs @ self.points
        var = probs @ (np.abs(self.points) ** 2) - np.abs(mean) ** 2
        return mean, np.clip(var, 0.0, None)


QPSK = Constellation(QPSK_POINTS, QPSK_LABELS)


@dataclass
class SoftSymbolState:
    soft_mean: np.ndarray
    soft_var: np.ndarray
    llrs: np.ndarray
    iteration: int


@dataclass
class SicResult:
    history: list[SoftSymbolState]

    @property
    def final_llrs(self) -> np.ndarray:
        return self.history[-1].llrs

    def llrs(self, iteration: int) -> np.ndarray:
        return self.history[iteration].llrs


def sic_decode(d_mrc, op: MrcOperator, iterations: int = 6,
               constellation: Constellation = QPSK, initial_mean=None,
               initial_var=None, schedule: str = "serial") -> SicResult:
    """
    Gaussian soft interference cancellation.

    Iteration 0 demaps the MRC output with the residual ICI treated as noise.
    Each further iteration rebuilds soft symbols from LLRs, subtracts
    ``G @ mean`` and demaps with variance ``rho + |G|^2 @ var``.

    Parameters
    ----------
    schedule : {"serial", "parallel"}
        ``parallel`` updates every subcarrier from the previous iteration's
        soft symbols. ``serial`` sweeps the subcarriers (upwards on odd
        iterations, downwards on even ones) and refreshes each soft symbol as
        soon as its LLRs are recomputed, so later subcarriers in the sweep
        cancel with the newest estimates. Parallel updates tend to oscillate
        when neighbour coupling is strong.
    initial_mean, initial_var
        Replace the priors entering iteration 1 (e.g. genie knowledge).
    """
    if iterations < 0:
        raise InvalidInput("iterations must be >= 0")
    if schedule not in ("serial", "parallel"):
        raise InvalidInput(f"unknown schedule {schedule!r}")
    d_mrc = np.asarray(d_mrc)
    g = op.residual_gain
    g2 = np.abs(g) ** 2
    rho = op.residual_power
    bps = constellation.bits_per_symbol
    e_s = float(np.mean(np.abs(constellation.points) ** 2))
    var0 = rho + e_s * g2.sum(axis=-1)
    llr = constellation.llr(d_mrc, np.maximum(var0, EPS))
    history = [SoftSymbolState(np.zeros_like(d_mrc), np.full(d_mrc.shape, e_s), llr, 0)]
    for it in range(1, iterations + 1):
        if it == 1 and initial_mean is not None:
            mean = np.asarray(initial_mean, dtype=complex)
            var = (np.zeros(mean.shape) if initial_var is None
                   else np.asarray(initial_var, dtype=float))
        else:
            mean, var = constellation.soft_symbols(llr)
        state = SoftSymbolState(mean.copy(), var.copy(), None, it)
        if schedule == "parallel":
            z = d_mrc - np.einsum("...mk,...k->...m", g, mean)
            eff = rho + np.einsum("...mk,...k->...m", g2, var)
            llr = constellation.llr(z, np.maximum(eff, EPS))
        else:
            mean = np.broadcast_to(mean, d_mrc.shape).copy()
            var = np.broadcast_to(var, d_mrc.shape).copy()
            llr = np.array(llr, dtype=float, copy=True)
            order = range(d_mrc.shape[-1])
            for m in (order if it % 2 else reversed(order)):
                z = d_mrc[..., m] - np.einsum("...k,...k->...", g[..., m, :], mean)
                eff = rho[..., m] + np.einsum("...k,...k->...", g2[..., m, :], var)
                lm = constellation.llr(z[..., None], np.maximum(eff, EPS)[..., None])
                llr[..., m * bps:(m + 1) * bps] = lm
                mm, vm = constellation.soft_symbols(lm)
                mean[..., m], var[..., m] = mm[..., 0], vm[..., 0]
        state.llrs = llr
        history.append(state)
    return SicResult(history)


def genie_bound(d_mrc, op: MrcOperator, d_true) -> np.ndarray:
    """MRC output with the ICI of the true symbols removed."""
    return np.asarray(d_mrc) - np.einsum("...mk,...k->...m", op.residual_gain,
                                         np.asarray(d_true))


# ---------------------------------------------------------------------------
# frame-level receiver


@dataclass
class HannResult:
    d_ext: np.ndarray                 # (S, D+2) extended observations
    theta: np.ndarray                 # (S, D)
    noise_var: np.ndarray             # (S, D+2)
    d_mrc: np.ndarray                 # (S_data, D)
    sic: SicResult
    theory_llr: np.ndarray | None = None
    flagged_bins: list = field(default_factory=list)

    def llrs(self, iteration: int) -> np.ndarray:
        llr = self.sic.llrs(iteration)
        return llr.reshape(llr.shape[0], -1)


class HannReceiver:
    """Hann-windowed MRC-SIC receiver over a whole frame."""

    def __init__(self, numerology: Numerology, support_len: int, ridge: float = 1e-3,
                 iterations: int = 6, variance_mode: str = "estimated",
                 weighting: str = "optimal", window: str = "periodic",
                 schedule: str = "serial", reweight: bool = True,
                 pooling: str = "time"):
        if variance_mode not in ("estimated", "genie"):
            raise InvalidInput(f"unknown variance mode {variance_mode!r}")
        self.numerology = numerology
        self.support_len = support_len
        self.ridge = ridge
        self.iterations = iterations
        self.variance_mode = variance_mode
        self.weighting = weighting
        self.schedule = schedule
        self.reweight = reweight
        self.pooling = pooling
        self.window = hann_window(numerology.fft_size, window)

    def _observe(self, y) -> np.ndarray:
        sym = self.numerology.symbol_len
        y = np.asarray(y)
        rows = y[: (y.size // sym) * sym].reshape(-1, sym)
        return extended_demap(hann_receive(rows, self.numerology, self.window),
                              self.numerology)

    def receive_frame(self, y, schedule: FrameSchedule, pilots, disturbance=None,
                      truth=None, cfr=None) -> HannResult:
        """
        ``disturbance`` is the received stream with the desired signal removed
        (needed for the genie variance mode); ``truth`` is the ``(S, D)``
        transmitted grid, enabling the perfect-cancellation bound. A known
        ``cfr`` (``(D,)`` or ``(S, D)``) replaces the CIR estimate; the
        disturbance is then measured around it on the pilot symbols.
        """
        num = self.numerology
        d_ext = self._observe(y)
        p_idx = list(schedule.pilot_symbol_indices)
        cirs, variances, flagged = [], [], []
        n_sym = schedule.symbols_per_frame
        known = None
        if cfr is not None:
            known = np.broadcast_to(np.asarray(cfr, dtype=complex), (n_sym, num.data_width))
        for p, pilot in zip(p_idx, pilots):
            if known is not None:
                recon = extended_channel(known[p]) @ pilot
                variances.append(estimate_disturbance(d_ext[p], recon,
                                                      smooth=self.pooling == "frequency"))
                continue
            design = hann_pilot_design(pilot, num, self.support_len)
            weights = None
            for _ in range(2 if self.reweight else 1):
                est = estimate_cir_hann(d_ext[p], pilot, num, self.support_len, self.ridge,
                                        weights=weights)
                recon = design @ est.h[: self.support_len]
                weights = 1 / estimate_disturbance(d_ext[p], recon, self.support_len)
            cirs.append(est.h[: self.support_len])
            variances.append(estimate_disturbance(d_ext[p], recon, self.support_len,
                                                  smooth=self.pooling == "frequency"))
            flagged.append(est.flagged_bins)
        if known is None:
            h_all = np.zeros((n_sym, num.fft_size), dtype=complex)
            h_all[:, : self.support_len] = interpolate_symbols(np.array(cirs), p_idx, n_sym)
            theta = cfr_from_cir(h_all)[:, num.data_bins]
        else:
            theta = known.copy()
        if self.variance_mode == "genie":
            if disturbance is None:
                raise InvalidInput("genie variance mode needs the disturbance stream")
            power = np.mean(np.abs(self._observe(disturbance)) ** 2, axis=0)
            var = np.broadcast_to(np.maximum(power, EPS), (n_sym, num.data_width + 2))
        else:
            var = pilot_disturbance(variances, p_idx, n_sym, self.pooling)
        data = list(schedule.data_symbol_indices)
        op = build_mrc(theta[data], var[data], self.weighting)
        d_mrc = mrc_combine(d_ext[data], op)
        sic = sic_decode(d_mrc, op, self.iterations, schedule=self.schedule)
        theory = None
        if truth is not None:
            z = genie_bound(d_mrc, op, np.asarray(truth)[data])
            theory = QPSK.llr(z, np.maximum(op.residual_power, EPS)).reshape(len(data), -1)
        return HannResult(d_ext, theta, np.asarray(var), d_mrc, sic, theory, flagged)
