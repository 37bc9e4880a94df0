"""Monte Carlo link simulation over waveform-domain effective channels.

One trial draws a channel, builds H_eff for the configured waveform, sends a
Gray-QAM frame through it with AWGN, equalizes with MMSE or MRC and counts
bit errors. Channel state is either the true H_eff, a pilot-based estimate,
or the true H_eff plus a synthetic Gaussian mismatch.

Random streams are keyed so results do not depend on evaluation order:
the channel of trial t comes from ``(seed, 0, t)``, and bits, noise and
mismatch for SNR index s come from ``(seed, 1, s, t)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .chanmodel import ChannelConfig, ChannelRealization, segment_regions, sparsify, stream
from .operators import assemble_global, dft_matrix
from .sparse_oracle import SparseChannelSpec, ideal_reference, sparse_effective
from .transforms import Waveform, WaveformSpec, build_kernel

MODULATION_ORDERS = metrics.SUPPORTED_ORDERS


class Equalizer(enum.Enum):
    MMSE = "mmse"
    MRC = "mrc"


class CsiMode(enum.Enum):
    PERFECT = "perfect"
    ESTIMATED = "estimated"
    MISMATCHED = "mismatched"


class Regime(enum.Enum):
    SPARSE = "sparse"
    PROPOSED = "proposed"


# ---------------------------------------------------------------------------
# Gray square QAM


def _gray(i):
    return i ^ (i >> 1)


def _gray_inverse(g):
    g = np.array(g, copy=True)
    shift = g >> 1
    while np.any(shift):
        g ^= shift
        shift >>= 1
    return g


def bits_per_symbol(M: int) -> int:
    metrics.qam_constants(M)
    return int(round(math.log2(M)))


def _axis_scale(M: int) -> float:
    return math.sqrt(2 * (M - 1) / 3)


def modulate(bits, M: int) -> np.ndarray:
    """Gray-mapped square M-QAM with unit average energy.

    The first half of each symbol's bits selects the in-phase level, the
    second half the quadrature level; each half is Gray-coded along its axis.
    """
    k = bits_per_symbol(M)
    bits = np.asarray(bits, dtype=np.int64).reshape(-1, k)
    half = k // 2
    side = int(math.isqrt(M))
    weights = 1 << np.arange(half - 1, -1, -1)
    gi = bits[:, :half] @ weights
    gq = bits[:, half:] @ weights
    li = _gray_inverse(gi)
    lq = _gray_inverse(gq)
    return ((2 * li - (side - 1)) + 1j * (2 * lq - (side - 1))) / _axis_scale(M)


def demodulate(symbols, M: int) -> np.ndarray:
    """Hard decisions back to bits; non-finite inputs decode to the all-zero level index."""
    k = bits_per_symbol(M)
    half = k // 2
    side = int(math.isqrt(M))
    z = np.asarray(symbols, dtype=complex) * _axis_scale(M)
    z = np.where(np.isfinite(z), z, 0)

    def level(x):
        return np.clip(np.rint((x + side - 1) / 2), 0, side - 1).astype(np.int64)

    gi = _gray(level(z.real))
    gq = _gray(level(z.imag))
    shifts = np.arange(half - 1, -1, -1)
    out = np.concatenate([(gi[:, None] >> shifts) & 1, (gq[:, None] >> shifts) & 1], axis=1)
    return out.reshape(-1)


def constellation(M: int) -> np.ndarray:
    k = bits_per_symbol(M)
    idx = np.arange(M)
    bits = (idx[:, None] >> np.arange(k - 1, -1, -1)) & 1
    return modulate(bits.reshape(-1), M)


def slice_symbols(symbols, M: int) -> np.ndarray:
    return modulate(demodulate(symbols, M), M)


# ---------------------------------------------------------------------------
# equalizers


def equalize_mmse(H: np.ndarray, y: np.ndarray, noise_var: float) -> np.ndarray:
    """(H^H H + sigma^2 I)^{-1} H^H y; H may be tall. Falls back to the pseudo-inverse."""
    H = np.asarray(H)
    G = H.conj().T @ H
    if noise_var > 0:
        G = G + noise_var * np.eye(G.shape[0])
    rhs = H.conj().T @ y
    try:
        if noise_var <= 0 and np.linalg.cond(G) > 1e12:
            raise np.linalg.LinAlgError
        return np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(H) @ y


def equalize_mrc(
    H: np.ndarray,
    y: np.ndarray,
    iterations: int = 0,
    M: int | None = None,
    noise_var: float | None = None,
) -> np.ndarray:
    """Maximum-ratio combining per transmitted symbol.

    With ``iterations=0`` this is the column matched filter
    ``x_n = H[:, n]^H y / ||H[:, n]||^2``. With ``iterations > 0`` every sweep
    re-combines each symbol after cancelling the current estimates of all
    other symbols (Gauss-Seidel order). Feedback uses the posterior-mean
    symbol under a Gaussian model of the remaining interference plus noise,
    whose variance is tracked per symbol. The returned values are the last
    combiner outputs. Columns with zero norm yield NaN (unrecoverable).
    """
    H = np.asarray(H)
    y = np.asarray(y)
    d = np.sum(np.abs(H) ** 2, axis=0)
    dead = d <= 0
    safe = np.where(dead, 1.0, d)
    x = (H.conj().T @ y) / safe
    if iterations > 0:
        if M is None or noise_var is None:
            raise ValueError("iterative MRC needs the modulation order and noise variance")
        x = _mrc_sweeps(H, y, safe, iterations, M, noise_var, x)
    return np.where(dead, np.nan + 0j, x)


def _mrc_sweeps(H, y, d, iterations, M, noise_var, combined):
    points = constellation(M)
    n_sym = H.shape[1]
    est = np.zeros(n_sym, dtype=complex)
    var = np.ones(n_sym)  # unit-energy prior
    resid = y.astype(complex)
    Hc = H.conj()
    cross = np.abs(Hc.T @ H) ** 2  # |h_n^H h_m|^2
    scale = np.max(np.abs(H), axis=0)
    support = [np.flatnonzero(np.abs(H[:, n]) > 1e-12 * scale[n]) for n in range(n_sym)]
    for _ in range(iterations):
        moved = 0.0
        for n in range(n_sym):
            rows = support[n]
            col = H[rows, n]
            g = (Hc[rows, n] @ resid[rows]) / d[n] + est[n]
            combined[n] = g
            s2 = max(noise_var / d[n] + (cross[n] @ var - d[n] ** 2 * var[n]) / d[n] ** 2, 1e-15)
            dist = np.abs(g - points) ** 2
            w = np.exp(-(dist - dist.min()) / s2)
            w /= w.sum()
            new = w @ points
            var[n] = max(float(w @ np.abs(points) ** 2 - abs(new) ** 2), 0.0)
            delta = new - est[n]
            if delta != 0:
                resid[rows] -= col * delta
                est[n] = new
                moved = max(moved, abs(delta))
        if moved < 1e-9:
            break
    return combined


# ---------------------------------------------------------------------------
# pilots, overhead and channel estimation


@dataclass(frozen=True)
class PilotLayout:
    """Where pilots, guards and data sit in one waveform-domain frame."""

    kind: Waveform
    data_index: np.ndarray
    pilot_index: np.ndarray
    pilot_values: np.ndarray
    guard_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    readout_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    delay_span: int = 0
    doppler_span: int = 0
    reference_block: bool = False

    @property
    def num_data(self) -> int:
        return self.data_index.size


def payload_fraction(
    spec: WaveformSpec,
    max_delay_norm: float,
    max_doppler_norm: float = 0.0,
    pilot_spacing: int = 4,
) -> float:
    """Data share of the transmitted samples after CP, pilot and guard overhead.

    The prefix is ceil(1.2 l_max) samples for every waveform. Comb-pilot
    waveforms lose one tone in ``pilot_spacing``; embedded-pilot waveforms
    lose the pilot guard.
    """
    n = spec.frame_len
    cp = math.ceil(1.2 * max_delay_norm)
    if spec.kind in (Waveform.OFDM, Waveform.DFT_S_OFDM):
        return (1.0 - 1.0 / pilot_spacing) * n / (n + cp)
    guard = pilot_guard_size(spec, max_delay_norm, max_doppler_norm)
    return max(n - guard, 0) / (n + cp)


def _spans(spec: WaveformSpec, max_delay_norm: float, max_doppler_norm: float) -> tuple[int, int]:
    L = math.ceil(max_delay_norm - 1e-9)
    K = spec.afdm_kmax if spec.kind is Waveform.AFDM else math.ceil(max_doppler_norm - 1e-9)
    return max(L, 0), max(K, 0)


def pilot_guard_size(spec: WaveformSpec, max_delay_norm: float, max_doppler_norm: float) -> int:
    """Guard bins around an embedded pilot that keep data out of the readout window."""
    L, K = _spans(spec, max_delay_norm, max_doppler_norm)
    if spec.kind is Waveform.OTFS:
        M, Nn = spec.otfs_delay_bins, spec.otfs_doppler_bins
        return min(2 * L + 1, M) * min(4 * K + 1, Nn)
    if spec.kind is Waveform.AFDM:
        return min(2 * (2 * K + 1) * L + 4 * K + 1, spec.frame_len)
    return 0


def pilot_layout(spec: WaveformSpec, max_delay_norm: float, max_doppler_norm: float = 0.0, pilot_spacing: int = 4) -> PilotLayout:
    n = spec.frame_len
    L, K = _spans(spec, max_delay_norm, max_doppler_norm)
    if spec.kind is Waveform.OFDM:
        pilots = np.arange(0, n, pilot_spacing)
        data = np.setdiff1d(np.arange(n), pilots)
        return PilotLayout(spec.kind, data, pilots, np.ones(pilots.size, dtype=complex), delay_span=L)
    if spec.kind is Waveform.DFT_S_OFDM:
        # a dedicated reference block: comb-2 tones across the allocation
        pilots = np.arange(0, spec.dfts_num_tones, 2)
        return PilotLayout(
            spec.kind,
            np.arange(spec.dfts_num_tones),
            pilots,
            np.ones(pilots.size, dtype=complex),
            delay_span=L,
            reference_block=True,
        )
    if spec.kind is Waveform.OTFS:
        M, Nn = spec.otfs_delay_bins, spec.otfs_doppler_bins
        if 2 * L + 1 > M or 4 * K + 1 > Nn:
            raise ValueError("OTFS grid too small for the pilot guard")
        a_p, mu_p = L, Nn // 2
        a = np.arange(M)
        mu = np.arange(Nn)
        guard_a = np.abs(a - a_p) <= L
        guard_mu = np.abs(mu - mu_p) <= 2 * K
        read_a = (a >= a_p) & (a <= a_p + L)
        read_mu = np.abs(mu - mu_p) <= K
        grid = lambda ma, mm: np.flatnonzero((mm[:, None] & ma[None, :]).reshape(-1))
        guard = grid(guard_a, guard_mu)
        readout = grid(read_a, read_mu)
        pilot = np.array([mu_p * M + a_p])
    elif spec.kind is Waveform.AFDM:
        size = 2 * (2 * K + 1) * L + 4 * K + 1
        if size > n:
            raise ValueError("AFDM frame too short for the pilot guard")
        Q = 2 * K + 1
        n_p = Q * L + 2 * K
        guard = np.arange(n_p - Q * L - 2 * K, n_p + Q * L + 2 * K + 1)
        readout = np.arange(n_p - Q * L - K, n_p + K + 1)
        pilot = np.array([n_p])
    else:  # pragma: no cover
        raise ValueError(spec.kind)
    energy = float(guard.size)
    data = np.setdiff1d(np.arange(n), guard)
    return PilotLayout(
        spec.kind,
        data,
        pilot,
        np.array([math.sqrt(energy)], dtype=complex),
        guard_index=guard,
        readout_index=readout,
        delay_span=L,
        doppler_span=K,
    )


@dataclass(frozen=True)
class ChannelEstimate:
    matrix: np.ndarray
    taps: tuple = ()
    empty: bool = False


def nmse(H: np.ndarray, H_hat: np.ndarray) -> float:
    den = float(np.sum(np.abs(H) ** 2))
    return metrics.mismatch_energy(H, H_hat) / den if den > 0 else float("nan")


def delay_grid(num_pilots: int, delay_span: int) -> np.ndarray:
    """Half-sample delay grid over [-1/2, delay_span + 1/2], at most one atom per pilot."""
    return np.linspace(-0.5, delay_span + 0.5, max(1, min(num_pilots, 2 * delay_span + 3)))


def _interp_response(ls, tones, n, all_tones, interpolation, delay_span, noise_var):
    if interpolation == "linear":
        order = np.argsort(tones)
        t = tones[order]
        v = ls[order]
        tt = np.concatenate([t - n, t, t + n])
        vv = np.concatenate([v, v, v])
        return np.interp(all_tones, tt, vv.real) + 1j * np.interp(all_tones, tt, vv.imag)
    if interpolation != "dft":
        raise ValueError(f"unknown interpolation {interpolation!r}")
    # ridge fit of a few delay atoms to the pilot tones, then evaluation on every tone;
    # a half-sample grid follows off-grid delays without the wrap-around error of a
    # plain inverse DFT
    delays = delay_grid(tones.size, delay_span)
    basis = np.exp(-2j * np.pi * np.outer(tones, delays) / n)
    ridge = max(noise_var or 0.0, 1e-12) * delays.size
    gram = basis.conj().T @ basis + ridge * np.eye(delays.size)
    taps = np.linalg.solve(gram, basis.conj().T @ ls)
    return np.exp(-2j * np.pi * np.outer(all_tones, delays) / n) @ taps


def estimate_channel_simple(
    y: np.ndarray,
    layout: PilotLayout,
    spec: WaveformSpec,
    noise_var: float | None = None,
    interpolation: str = "dft",
    threshold_sigma: float = 3.0,
) -> ChannelEstimate:
    """Pilot-based estimate of H_eff from one received observation.

    Comb-pilot waveforms: least squares on the pilot tones, then interpolation
    across tones with a delay-domain fit (``"dft"``) or piecewise-linear
    (``"linear"``). The result is diagonal in the tone domain; for DFT-s-OFDM
    ``y`` is the received reference block on the allocated tones.

    Embedded-pilot waveforms: every readout bin whose magnitude exceeds
    ``threshold_sigma`` noise standard deviations is taken as a path. The
    noise level is ``noise_var`` when the receiver knows it, otherwise the
    power in the guard bins outside the readout window. The detected
    (h, l, k) taps are fed to the closed-form channel.
    """
    y = np.asarray(y)
    n = spec.frame_len
    if spec.kind is Waveform.OFDM:
        ls = y[layout.pilot_index] / layout.pilot_values
        resp = _interp_response(ls, layout.pilot_index, n, np.arange(n), interpolation, layout.delay_span, noise_var)
        return ChannelEstimate(np.diag(resp), empty=not np.any(np.abs(resp) > 0))
    if spec.kind is Waveform.DFT_S_OFDM:
        k0, nd = spec.dfts_first_tone, spec.dfts_num_tones
        ls = y[layout.pilot_index] / layout.pilot_values
        tones = k0 + layout.pilot_index
        resp = _interp_response(ls, tones, n, k0 + np.arange(nd), interpolation, layout.delay_span, noise_var)
        Fd = dft_matrix(nd)
        return ChannelEstimate(Fd @ (resp[:, None] * Fd.conj().T), empty=not np.any(np.abs(resp) > 0))
    readout = layout.readout_index
    xp = layout.pilot_values[0]
    if noise_var is not None:
        sigma = math.sqrt(noise_var)
    else:
        # guard bins outside the readout window also catch shifted data, so this overestimates
        outside = np.setdiff1d(layout.guard_index, np.concatenate([readout, layout.pilot_index]))
        sigma = math.sqrt(float(np.mean(np.abs(y[outside]) ** 2))) if outside.size else 0.0
    peak = float(np.max(np.abs(y[readout]))) if readout.size else 0.0
    thresh = max(threshold_sigma * sigma, 1e-9 * peak, 1e-300)
    taps = []
    L, K = layout.delay_span, layout.doppler_span
    if spec.kind is Waveform.OTFS:
        M = spec.otfs_delay_bins
        mu_p, a_p = divmod(int(layout.pilot_index[0]), M)
        for idx in readout:
            if abs(y[idx]) <= thresh:
                continue
            mu, a = divmod(int(idx), M)
            l, k = a - a_p, mu - mu_p
            h = y[idx] / xp * np.exp(-2j * np.pi * k * (a_p + l) / n)
            taps.append((complex(h), float(l), float(k)))
    else:
        Q = 2 * K + 1
        n_p = int(layout.pilot_index[0])
        c1n = Q
        for m in readout:
            if abs(y[m]) <= thresh:
                continue
            # m = n_p + k - Q l with |k| <= K
            off = int(m) - n_p
            l = (-off + K) // Q
            k = off + Q * l
            num = (m * m - n_p * n_p - c1n * l * l + 2 * n_p * l) % (2 * n)
            h = y[m] / xp * np.exp(2j * np.pi * num / (2 * n))
            taps.append((complex(h), float(l), float(k)))
    if not taps:
        return ChannelEstimate(np.zeros((n, n), dtype=complex), (), empty=True)
    return ChannelEstimate(sparse_effective(SparseChannelSpec(taps, spec)), tuple(taps))


# ---------------------------------------------------------------------------
# PAPR


def papr_db(signal: np.ndarray, oversample: int = 1) -> float:
    """Peak-to-average power of a time-domain block, oversampled by spectral zero padding."""
    s = np.asarray(signal, dtype=complex)
    s = oversample_signal(s, oversample)
    p = np.abs(s) ** 2
    return float(10 * np.log10(p.max() / p.mean()))


def oversample_signal(s: np.ndarray, factor: int) -> np.ndarray:
    """Band-limited interpolation by ``factor`` along the last axis."""
    if factor < 1:
        raise ValueError("oversampling factor must be >= 1")
    if factor == 1:
        return s
    n = s.shape[-1]
    S = np.fft.fft(s, axis=-1)
    out = np.zeros(s.shape[:-1] + (n * factor,), dtype=complex)
    pos = (n + 1) // 2  # bins 0..pos-1 are non-negative frequencies
    out[..., :pos] = S[..., :pos]
    neg = n // 2 - 1 if n % 2 == 0 else n - pos
    if neg:
        out[..., -neg:] = S[..., n - neg:]
    if n % 2 == 0:
        # split the Nyquist bin between both ends
        out[..., n // 2] = S[..., n // 2] / 2
        out[..., n * factor - n // 2] += S[..., n // 2] / 2
    return np.fft.ifft(out, axis=-1) * factor


def measure_papr(
    spec: WaveformSpec,
    M: int,
    num_frames: int,
    oversample: int = 4,
    thresholds_db=None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """PAPR of random fully loaded frames.

    Returns ``(thresholds_db, ccdf, papr_samples_db)`` with
    ``ccdf[i] = P(PAPR > thresholds_db[i])``.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    A = build_kernel(spec)
    rng = stream(seed, 2)
    k = bits_per_symbol(M)
    dim = spec.output_dim
    bits = rng.integers(0, 2, size=num_frames * dim * k)
    X = modulate(bits, M).reshape(num_frames, dim)
    S = X @ A.conj()  # rows are A^H x
    S = oversample_signal(S, oversample)
    p = np.abs(S) ** 2
    samples = 10 * np.log10(p.max(axis=1) / p.mean(axis=1))
    if thresholds_db is None:
        thresholds_db = np.round(np.arange(0.0, 14.01, 0.25), 2)
    thresholds_db = np.asarray(thresholds_db, dtype=float)
    ccdf = (samples[None, :] > thresholds_db[:, None]).mean(axis=1)
    return thresholds_db, ccdf, samples


def papr_at_ccdf(samples_db: np.ndarray, prob: float) -> float:
    """PAPR level exceeded with probability ``prob``."""
    return float(np.quantile(samples_db, 1.0 - prob))


# ---------------------------------------------------------------------------
# spectral efficiency


def max_order(gamma_eff: float, target_ber: float, orders=MODULATION_ORDERS) -> int:
    """Largest order whose analytic BER meets the target, 0 if none does."""
    best = 0
    for M in orders:
        if metrics.analytic_ber(gamma_eff, M) <= target_ber:
            best = max(best, M)
    return best


def spectral_efficiency(gamma_eff: float, target_ber: float, eta: float = 1.0, orders=MODULATION_ORDERS) -> float:
    M = max_order(gamma_eff, target_ber, orders)
    return eta * math.log2(M) if M else 0.0


def required_sinr(M: int, target_ber: float) -> float:
    """Smallest gamma_eff meeting ``target_ber`` for order M, by bisection."""
    lo, hi = 0.0, 1.0
    while metrics.analytic_ber(hi, M) > target_ber:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if metrics.analytic_ber(mid, M) > target_ber:
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# Monte Carlo driver


@dataclass(frozen=True)
class LinkConfig:
    waveform: WaveformSpec
    channel: ChannelConfig
    modulation_order: int = 4
    snr_grid_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    num_trials: int = 200
    equalizer: Equalizer = Equalizer.MMSE
    csi: CsiMode = CsiMode.PERFECT
    mismatch_level: float = 0.0
    regime: Regime = Regime.PROPOSED
    papr_oversample: int = 4
    target_ber: float = 1e-3
    min_errors: int = 100
    mrc_iterations: int = 8
    pilot_spacing: int = 4
    interpolation: str = "dft"
    ideal_ref: str = "region0"
    seed: int = 0

    def __post_init__(self):
        if self.num_trials < 1:
            raise ValueError("num_trials must be >= 1")
        if not 0 < self.target_ber < 0.5:
            raise ValueError("target_ber must lie in (0, 0.5)")
        if self.waveform.frame_len != self.channel.frame_len:
            raise ValueError("waveform and channel frame lengths differ")
        bits_per_symbol(self.modulation_order)
        if self.papr_oversample < 1:
            raise ValueError("papr_oversample must be >= 1")


@dataclass(frozen=True)
class SnrPoint:
    snr_db: float
    bits: int
    errors: int
    trials: int
    ber_mc: float
    ber_ci_low: float
    ber_ci_high: float
    ber_analytic: float
    gamma_eff_db: float
    se_bits_per_hz: float


@dataclass(frozen=True)
class LinkReport:
    config: LinkConfig
    points: tuple[SnrPoint, ...]
    rho: float
    payload_fraction: float
    nmse_ce: float | None = None
    papr_ccdf: tuple[tuple[float, float], ...] = ()


def binomial_interval(errors: int, bits: int, z: float = 3.0) -> tuple[float, float]:
    """Normal-approximation interval p +- z sqrt(p(1-p)/n), clipped to [0, 1]."""
    if bits == 0:
        return 0.0, 1.0
    p = errors / bits
    half = z * math.sqrt(max(p * (1 - p), 0.0) / bits)
    return max(0.0, p - half), min(1.0, p + half)


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(0, trial)).generate_state(1, np.uint64)[0])


def draw_channel(link: LinkConfig, trial: int) -> ChannelRealization:
    cfg = replace(link.channel, rng_seed=trial_seed(link.seed, trial))
    if link.regime is Regime.SPARSE:
        cfg = replace(cfg, num_regions=1)
        return sparsify(segment_regions(cfg))
    return segment_regions(cfg)


@dataclass
class _Trial:
    H_eff: np.ndarray
    H_id: np.ndarray
    kernel_rows: int


class _ChannelCache:
    """Per-trial effective channels, shared across SNR points."""

    def __init__(self, link: LinkConfig):
        self.link = link
        self.kernel = build_kernel(link.waveform)
        self._store: dict[int, _Trial] = {}

    def get(self, trial: int) -> _Trial:
        if trial not in self._store:
            real = draw_channel(self.link, trial)
            H = assemble_global(real).entries
            A = self.kernel
            H_eff = A @ H @ A.conj().T
            H_id = ideal_reference(real, self.link.waveform, self.link.ideal_ref)
            self._store[trial] = _Trial(H_eff, H_id, A.shape[0])
        return self._store[trial]


def _detect(link, H_eff_rx, y, data_idx, noise_var, x_known=None, known_idx=None):
    y = y.copy()
    if known_idx is not None and known_idx.size:
        y = y - H_eff_rx[:, known_idx] @ x_known
    Hd = H_eff_rx[:, data_idx]
    if link.equalizer is Equalizer.MMSE:
        return equalize_mmse(Hd, y, noise_var)
    return equalize_mrc(Hd, y, link.mrc_iterations, link.modulation_order, noise_var)


def simulate_frame(link: LinkConfig, trial: _Trial, snr_db: float, rng: np.random.Generator):
    """One frame at one SNR. Returns ``(bit_errors, bits, H_rx, data_index, nmse)``."""
    spec = link.waveform
    M = link.modulation_order
    k = bits_per_symbol(M)
    dim = spec.output_dim
    noise_var = 10 ** (-snr_db / 10)
    H = trial.H_eff
    sq = math.sqrt(noise_var / 2)

    def noise(size):
        return sq * (rng.standard_normal(size) + 1j * rng.standard_normal(size))

    data = np.arange(dim)
    pilots = np.zeros(0, dtype=int)
    x_p = np.zeros(0, dtype=complex)
    H_rx = H
    layout = est = err = None
    if link.csi is CsiMode.MISMATCHED:
        scale = math.sqrt(link.mismatch_level / dim / 2)
        H_rx = H + scale * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))
    elif link.csi is CsiMode.ESTIMATED:
        layout = pilot_layout(spec, link.channel.max_delay_norm, link.channel.max_doppler_norm, link.pilot_spacing)
        data = layout.data_index
        if layout.reference_block:
            # the reference block rides on the allocated tones, ahead of the data block
            Fd = dft_matrix(dim)
            ref = np.zeros(dim, dtype=complex)
            ref[layout.pilot_index] = layout.pilot_values
            y_ref = Fd.conj().T @ H @ Fd @ ref + noise(dim)
            est = estimate_channel_simple(y_ref, layout, spec, noise_var, link.interpolation)
        else:
            pilots = layout.pilot_index
            x_p = layout.pilot_values
    bits = rng.integers(0, 2, size=data.size * k)
    x = np.zeros(dim, dtype=complex)
    x[data] = modulate(bits, M)
    x[pilots] = x_p
    y = H @ x + noise(dim)
    if layout is not None:
        if est is None:
            est = estimate_channel_simple(y, layout, spec, noise_var, link.interpolation)
        H_rx = est.matrix
        err = nmse(H, H_rx)
    x_hat = _detect(link, H_rx, y, data, noise_var, x_p, pilots)
    errors = int(np.count_nonzero(demodulate(x_hat, M) != bits))
    return errors, bits.size, H_rx, data, err


def run_ber(link: LinkConfig, cache: _ChannelCache | None = None) -> LinkReport:
    """BER, analytic prediction and spectral efficiency on the SNR grid.

    Each SNR point runs trials until ``min_errors`` bit errors or the trial cap.
    The analytic column averages a_M Q(sqrt(b_M gamma_eff)) over the data
    symbols of the same channel draws, with gamma_id per symbol from its
    column of H_id and rho from the leakage and mismatch of that draw.
    """
    if link.num_trials < 1:
        raise ValueError("num_trials must be >= 1")
    cache = cache or _ChannelCache(link)
    spec = link.waveform
    M = link.modulation_order
    eta = payload_fraction(spec, link.channel.max_delay_norm, link.channel.max_doppler_norm, link.pilot_spacing)
    points = []
    rhos = []
    nmses = []
    for s_idx, snr_db in enumerate(link.snr_grid_db):
        noise_var = 10 ** (-snr_db / 10)
        errors = bits = trials = 0
        analytic = []
        for t in range(link.num_trials):
            tr = cache.get(t)
            rng = stream(link.seed, 1, s_idx, t)
            e, b, H_rx, data, err = simulate_frame(link, tr, snr_db, rng)
            errors += e
            bits += b
            trials += 1
            rep = metrics.leakage_split(tr.H_eff, tr.H_id, H_eff_hat=None if link.csi is CsiMode.PERFECT else H_rx)
            rhos.append(rep.rho)
            if err is not None:
                nmses.append(err)
            g_id = np.sum(np.abs(tr.H_id[:, data]) ** 2, axis=0) / noise_var
            analytic.append(np.mean(metrics.analytic_ber(metrics.effective_sinr(g_id, rep.rho), M)))
            if errors >= link.min_errors:
                break
        lo, hi = binomial_interval(errors, bits)
        rho_mean = float(np.mean(rhos[-trials:]))
        g_eff = float(metrics.effective_sinr(1.0 / noise_var, rho_mean))
        points.append(
            SnrPoint(
                snr_db=float(snr_db),
                bits=bits,
                errors=errors,
                trials=trials,
                ber_mc=errors / bits if bits else float("nan"),
                ber_ci_low=lo,
                ber_ci_high=hi,
                ber_analytic=float(np.mean(analytic)),
                gamma_eff_db=float(metrics.db(g_eff)),
                se_bits_per_hz=spectral_efficiency(g_eff, link.target_ber, eta),
            )
        )
    return LinkReport(
        config=link,
        points=tuple(points),
        rho=float(np.mean(rhos)) if rhos else float("nan"),
        payload_fraction=eta,
        nmse_ce=float(np.mean(nmses)) if nmses else None,
    )
