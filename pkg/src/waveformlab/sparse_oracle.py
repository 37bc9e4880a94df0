"""Closed-form effective channels for the sparse on-grid channel.

The sparse channel has one region, one ray per path and integer delay and
Doppler. Each waveform then has a permutation-like H_eff that can be written
down directly. These matrices serve as test oracles and as the ideal
reference H_id in the leakage split.

``literal=True`` returns the textbook forms, which keep only the support and
the chirp phases. The default adds the residual per-entry phases so that the
result equals A H A^H exactly:

* AFDM picks up ``exp(j2pi (c1 l^2 - n l / N))`` (needs even N),
* OTFS picks up the quasi-periodic phase of the delay-Doppler grid,
* DFT-s-OFDM is the despread tone-domain band, not a cyclic shift on Nd tones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chanmodel import ChannelRealization
from .transforms import Waveform, WaveformSpec


@dataclass(frozen=True)
class SparseChannelSpec:
    taps: tuple[tuple[complex, float, float], ...]
    waveform: WaveformSpec

    def __post_init__(self):
        n = self.waveform.frame_len
        object.__setattr__(self, "taps", tuple((complex(h), float(l), float(k)) for h, l, k in self.taps))
        for _, l, _ in self.taps:
            if not 0 <= l < n:
                raise ValueError(f"tap delay {l} outside [0, {n})")

    @property
    def frame_len(self) -> int:
        return self.waveform.frame_len


def _integer(value: float, what: str) -> int:
    r = round(value)
    if abs(value - r) > 1e-9:
        raise ValueError(f"{what} {value} is not on the integer grid")
    return int(r)


def sparse_ofdm(spec: SparseChannelSpec, literal: bool = False) -> np.ndarray:
    """sum_c h_c e^{-j2pi n l_c / N} delta[m - (n + k_c) mod N].

    Exact for fractional delay as well, so only the Doppler must be integer.
    """
    n = spec.frame_len
    cols = np.arange(n)
    H = np.zeros((n, n), dtype=complex)
    for h, l, k in spec.taps:
        k = _integer(k, "Doppler")
        if literal:
            l = _integer(l, "delay")
        np.add.at(H, ((cols + k) % n, cols), h * np.exp(-2j * np.pi * cols * l / n))
    return H


def sparse_afdm(spec: SparseChannelSpec, literal: bool = False) -> np.ndarray:
    """sum_c h_c e^{-j2pi c2 m^2} e^{j2pi c2 n^2} delta[n - (m - k_c + (2kmax+1) l_c) mod N]."""
    w = spec.waveform
    n = w.frame_len
    if w.kind is not Waveform.AFDM:
        raise ValueError("waveform is not AFDM")
    if not literal and n % 2:
        raise ValueError("the exact AFDM closed form needs an even frame length")
    q = 2 * w.afdm_kmax + 1
    rows = np.arange(n)
    H = np.zeros((n, n), dtype=complex)
    two_n = 2 * n
    for h, l, k in spec.taps:
        l = _integer(l, "delay")
        k = _integer(k, "Doppler")
        cols = (rows - k + q * l) % n
        # every phase is (integer)/(2N) turns
        num = cols * cols - rows * rows
        if not literal:
            num = num + q * l * l - 2 * cols * l
        np.add.at(H, (rows, cols), h * np.exp(2j * np.pi * (num % two_n) / two_n))
    return H


def sparse_otfs(spec: SparseChannelSpec, literal: bool = False) -> np.ndarray:
    """Two-dimensional circular shift on the (delay a, Doppler mu) grid, row index mu*M' + a."""
    w = spec.waveform
    if w.kind is not Waveform.OTFS:
        raise ValueError("waveform is not OTFS")
    M, Nn, n = w.otfs_delay_bins, w.otfs_doppler_bins, w.frame_len
    idx = np.arange(n)
    mu, a = np.divmod(idx, M)
    H = np.zeros((n, n), dtype=complex)
    for h, l, k in spec.taps:
        l = _integer(l, "delay")
        k = _integer(k, "Doppler")
        b = (a - l) % M
        nu = (mu - k) % Nn
        cols = nu * M + b
        if literal:
            phase = np.ones(n)
        else:
            wrap = np.floor_divide(a - l, M)
            phase = np.exp(2j * np.pi * (k * a % n) / n) * np.exp(2j * np.pi * ((nu * wrap) % Nn) / Nn)
        np.add.at(H, (idx, cols), h * phase)
    return H


def sparse_dfts(spec: SparseChannelSpec, literal: bool = False) -> np.ndarray:
    """Despread tone-domain channel on the Nd allocated tones.

    In the tone domain the tap is the shifted diagonal
    ``H_K[a, b] = e^{-j2pi (k0+b) l/N}`` for ``a = (k0 + b + k) mod N - k0`` inside the
    allocation; energy shifted out of the band is lost. Despreading with the
    Nd-point DFT gives ``F_Nd H_K F_Nd^H``. The literal form keeps the cyclic
    shift on Nd tones without despreading.
    """
    w = spec.waveform
    if w.kind is not Waveform.DFT_S_OFDM:
        raise ValueError("waveform is not DFT-s-OFDM")
    n, k0, nd = w.frame_len, w.dfts_first_tone, w.dfts_num_tones
    b = np.arange(nd)
    H = np.zeros((nd, nd), dtype=complex)
    for h, l, k in spec.taps:
        k = _integer(k, "Doppler")
        if literal:
            l = _integer(l, "delay")
            np.add.at(H, ((b + k) % nd, b), h * np.exp(-2j * np.pi * (k0 + b) * l / n))
            continue
        rows = (k0 + b + k) % n - k0
        keep = (rows >= 0) & (rows < nd)
        ra, bb = rows[keep], b[keep]
        ramp = h * np.exp(-2j * np.pi * (k0 + bb) * l / n)
        md = np.arange(nd)
        # (1/Nd) sum_b e^{-j2pi m a(b)/Nd} ramp_b e^{j2pi n b/Nd}
        left = np.exp(-2j * np.pi * (np.outer(md, ra) % nd) / nd)
        right = np.exp(2j * np.pi * (np.outer(bb, md) % nd) / nd)
        H += (left * ramp[None, :]) @ right / nd
    return H


_ORACLES = {
    Waveform.OFDM: sparse_ofdm,
    Waveform.AFDM: sparse_afdm,
    Waveform.OTFS: sparse_otfs,
    Waveform.DFT_S_OFDM: sparse_dfts,
}


def sparse_effective(spec: SparseChannelSpec, literal: bool = False) -> np.ndarray:
    return _ORACLES[spec.waveform.kind](spec, literal=literal)


def keeps_fractional_delay(kind: Waveform) -> bool:
    """OFDM and DFT-s-OFDM closed forms stay exact for off-grid delays."""
    return kind in (Waveform.OFDM, Waveform.DFT_S_OFDM)


def projected_taps(region, kind: Waveform, frame_len: int):
    """Grid projection of one region's rays: Doppler rounded, delay rounded where the form needs it."""
    taps = []
    for cl in region.clusters:
        l = cl.delay_norm_total
        if not keeps_fractional_delay(kind):
            l = float(np.round(l) % frame_len)
        for ray in cl.rays:
            taps.append((ray.gain, l, float(np.round(ray.doppler_norm_total))))
    return taps


def ideal_reference(realization: ChannelRealization, spec: WaveformSpec, mode: str = "region0") -> np.ndarray:
    """H_id: the closed-form channel of the realization's on-grid projection.

    ``mode="region0"`` projects the first region's rays. ``mode="per_region"``
    projects every region and weights the oracles by the region's share of
    the frame.
    """
    if mode == "region0":
        return sparse_effective(SparseChannelSpec(projected_taps(realization.regions[0], spec.kind, spec.frame_len), spec))
    if mode == "per_region":
        n = realization.frame_len
        return sum(
            len(region) / n * sparse_effective(SparseChannelSpec(projected_taps(region, spec.kind, n), spec))
            for region in realization.regions
        )
    raise ValueError(f"unknown ideal reference mode {mode!r}")
