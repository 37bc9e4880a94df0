"""Waveform kernels and effective channels H_eff = A H A^H.

Two independent routes are provided. ``effective_channel`` takes an assembled
time-domain matrix and applies the kernel as a similarity transform.
``effective_channel_entrywise`` never forms H: it evaluates the delay-sum
expansion of every ray directly in the waveform domain, summing over the
auxiliary frequency index u, the region-restricted receive time p and the
transmit time q.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .chanmodel import ChannelRealization
from .operators import ChannelMatrix, dft_matrix


class Waveform(enum.Enum):
    OFDM = "ofdm"
    DFT_S_OFDM = "dfts"
    AFDM = "afdm"
    OTFS = "otfs"

    @classmethod
    def parse(cls, text: str) -> "Waveform":
        key = text.strip().lower().replace("-", "").replace("_", "")
        aliases = {"ofdm": cls.OFDM, "dfts": cls.DFT_S_OFDM, "dftsofdm": cls.DFT_S_OFDM, "afdm": cls.AFDM, "otfs": cls.OTFS}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown waveform {text!r}") from None


class Source(enum.Enum):
    TRIPLE_PRODUCT = "triple_product"
    ENTRY_FORMULA = "entry_formula"


_GROUPS = {
    Waveform.OFDM: (),
    Waveform.AFDM: ("afdm_kmax",),
    Waveform.OTFS: ("otfs_delay_bins", "otfs_doppler_bins"),
    Waveform.DFT_S_OFDM: ("dfts_first_tone", "dfts_num_tones"),
}
_ALL_PARAMS = ("afdm_kmax", "otfs_delay_bins", "otfs_doppler_bins", "dfts_first_tone", "dfts_num_tones")


@dataclass(frozen=True)
class WaveformSpec:
    kind: Waveform
    frame_len: int
    afdm_kmax: int | None = None
    otfs_delay_bins: int | None = None
    otfs_doppler_bins: int | None = None
    dfts_first_tone: int | None = None
    dfts_num_tones: int | None = None

    def __post_init__(self):
        if self.frame_len < 1:
            raise ValueError("frame_len must be positive")
        wanted = _GROUPS[self.kind]
        for name in _ALL_PARAMS:
            value = getattr(self, name)
            if name in wanted and value is None:
                raise ValueError(f"{self.kind.name} requires {name}")
            if name not in wanted and value is not None:
                raise ValueError(f"{name} does not apply to {self.kind.name}")
        if self.kind is Waveform.AFDM and self.afdm_kmax < 0:
            raise ValueError("afdm_kmax must be non-negative")
        if self.kind is Waveform.OTFS:
            if min(self.otfs_delay_bins, self.otfs_doppler_bins) < 1:
                raise ValueError("OTFS grid dimensions must be positive")
            if self.otfs_delay_bins * self.otfs_doppler_bins != self.frame_len:
                raise ValueError("OTFS grid must satisfy M' * N' = N")
        if self.kind is Waveform.DFT_S_OFDM:
            if self.dfts_first_tone < 0 or self.dfts_num_tones < 1:
                raise ValueError("invalid DFT-s-OFDM tone allocation")
            if self.dfts_first_tone + self.dfts_num_tones > self.frame_len:
                raise ValueError("DFT-s-OFDM allocation must satisfy k0 + Nd <= N")

    # convenience constructors -------------------------------------------------
    @classmethod
    def ofdm(cls, n: int) -> "WaveformSpec":
        return cls(Waveform.OFDM, n)

    @classmethod
    def afdm(cls, n: int, kmax: int) -> "WaveformSpec":
        return cls(Waveform.AFDM, n, afdm_kmax=int(kmax))

    @classmethod
    def otfs(cls, delay_bins: int, doppler_bins: int) -> "WaveformSpec":
        return cls(Waveform.OTFS, delay_bins * doppler_bins, otfs_delay_bins=delay_bins, otfs_doppler_bins=doppler_bins)

    @classmethod
    def dfts(cls, n: int, first_tone: int | None = None, num_tones: int | None = None) -> "WaveformSpec":
        """Localized allocation; defaults to the centred half band."""
        nd = n // 2 if num_tones is None else num_tones
        k0 = (n - nd) // 2 if first_tone is None else first_tone
        return cls(Waveform.DFT_S_OFDM, n, dfts_first_tone=k0, dfts_num_tones=nd)

    @classmethod
    def default(cls, kind: Waveform, n: int, kmax: int = 1) -> "WaveformSpec":
        """Reasonable parameters for ``kind`` at frame length ``n``."""
        if kind is Waveform.OFDM:
            return cls.ofdm(n)
        if kind is Waveform.AFDM:
            return cls.afdm(n, kmax)
        if kind is Waveform.DFT_S_OFDM:
            return cls.dfts(n)
        m = otfs_grid(n)
        return cls.otfs(m, n // m)

    @property
    def afdm_c1(self) -> float | None:
        if self.kind is not Waveform.AFDM:
            return None
        return (2 * self.afdm_kmax + 1) / (2 * self.frame_len)

    @property
    def afdm_c2(self) -> float | None:
        return 1 / (2 * self.frame_len) if self.kind is Waveform.AFDM else None

    @property
    def output_dim(self) -> int:
        return self.dfts_num_tones if self.kind is Waveform.DFT_S_OFDM else self.frame_len


def otfs_grid(n: int) -> int:
    """Delay-bin count M' for a near-square grid with M' <= N'."""
    best = 1
    for m in range(1, int(np.sqrt(n)) + 1):
        if n % m == 0:
            best = m
    return best


@dataclass(frozen=True)
class EffectiveChannel:
    spec: WaveformSpec
    matrix: np.ndarray
    source: Source


def chirp(n: int, numer: int, denom: int) -> np.ndarray:
    """exp(-j 2 pi (numer / denom) t^2) for t = 0..n-1, with the phase reduced exactly in integers."""
    t = np.arange(n, dtype=np.int64)
    return np.exp(-2j * np.pi * ((numer * t * t) % denom) / denom)


def build_kernel(spec: WaveformSpec) -> np.ndarray:
    """Unitary kernel A, or the Nd x N composite map for DFT-s-OFDM."""
    n = spec.frame_len
    if spec.kind is Waveform.OFDM:
        return dft_matrix(n)
    if spec.kind is Waveform.AFDM:
        theta1 = chirp(n, 2 * spec.afdm_kmax + 1, 2 * n)
        theta2 = chirp(n, 1, 2 * n)
        return theta2[:, None] * dft_matrix(n) * theta1[None, :]
    if spec.kind is Waveform.OTFS:
        return np.kron(dft_matrix(spec.otfs_doppler_bins), np.eye(spec.otfs_delay_bins))
    k0, nd = spec.dfts_first_tone, spec.dfts_num_tones
    return dft_matrix(nd) @ dft_matrix(n)[k0:k0 + nd]


def _as_array(H) -> np.ndarray:
    return H.entries if isinstance(H, ChannelMatrix) else np.asarray(H)


def effective_channel(H, spec: WaveformSpec, kernel: np.ndarray | None = None) -> EffectiveChannel:
    H = _as_array(H)
    if H.shape != (spec.frame_len, spec.frame_len):
        raise ValueError(f"channel is {H.shape}, waveform expects N = {spec.frame_len}")
    A = build_kernel(spec) if kernel is None else kernel
    return EffectiveChannel(spec, A @ H @ A.conj().T, Source.TRIPLE_PRODUCT)


# ---------------------------------------------------------------------------
# entrywise route


def _kernel_entries(spec: WaveformSpec) -> np.ndarray:
    """Kernel entries A[m, p] written out from their closed phase expressions."""
    n = spec.frame_len
    m = np.arange(n)[:, None]
    p = np.arange(n)[None, :]
    if spec.kind is Waveform.OFDM:
        return np.exp(-2j * np.pi * (m * p % n) / n) / np.sqrt(n)
    if spec.kind is Waveform.AFDM:
        c1n = 2 * spec.afdm_kmax + 1
        # c2 m^2 + m p / N + c1 p^2, all over the common denominator 2N
        num = (m * m + 2 * m * p + c1n * p * p) % (2 * n)
        return np.exp(-2j * np.pi * num / (2 * n)) / np.sqrt(n)
    if spec.kind is Waveform.OTFS:
        M, Nn = spec.otfs_delay_bins, spec.otfs_doppler_bins
        mu, a = np.divmod(np.arange(n), M)
        nu, b = np.divmod(np.arange(n), M)
        return (a[:, None] == b[None, :]) * np.exp(-2j * np.pi * (np.outer(mu, nu) % Nn) / Nn) / np.sqrt(Nn)
    k0, nd = spec.dfts_first_tone, spec.dfts_num_tones
    md = np.arange(nd)
    out = np.zeros((nd, n), dtype=complex)
    for a in range(nd):
        out += np.outer(np.exp(-2j * np.pi * md * a / nd), np.exp(-2j * np.pi * ((k0 + a) * np.arange(n) % n) / n))
    return out / np.sqrt(nd * n)


def effective_channel_entrywise(realization: ChannelRealization, spec: WaveformSpec) -> EffectiveChannel:
    """Sum every ray's contribution

        h/N * sum_u e^{-j2pi u l/N} [sum_{p in N_i} A[m,p] e^{j2pi (k+u) p/N}] [sum_q A*[n,q] e^{-j2pi u q/N}]

    without assembling the time-domain channel.
    """
    n = realization.frame_len
    if n != spec.frame_len:
        raise ValueError("realization and waveform disagree on N")
    K = _kernel_entries(spec)
    u = np.arange(n)
    q = np.arange(n)
    # q-sum does not depend on the ray: S_q[u, n'] = sum_q e^{-j2pi u q/N} A*[n', q]
    S_q = np.exp(-2j * np.pi * (np.outer(u, q) % n) / n) @ K.conj().T
    out = np.zeros((spec.output_dim, spec.output_dim), dtype=complex)
    for region in realization.regions:
        p = np.arange(region.start, region.stop)
        up = np.exp(2j * np.pi * (np.outer(p, u) % n) / n)
        for cl in region.clusters:
            # rays of one cluster share the delay, so their Doppler phasors add first
            doppler = sum(r.gain * np.exp(2j * np.pi * r.doppler_norm_total * p / n) for r in cl.rays)
            S_p = K[:, p] @ (doppler[:, None] * up)
            delay = np.exp(-2j * np.pi * u * cl.delay_norm_total / n)
            out += (S_p * delay[None, :]) @ S_q / n
    return EffectiveChannel(spec, out, Source.ENTRY_FORMULA)
