"""Discrete-time channel operators: unitary DFT, fractional delay, Doppler, region selection."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chanmodel import ChannelRealization, StationarityRegion

MATRIX_MAGIC = b"HMAT"
_HEADER = struct.Struct("<4sQI")  # magic, N, flags -> 16 bytes


@dataclass(frozen=True)
class ChannelMatrix:
    size: int
    entries: np.ndarray
    region_matrices: tuple[np.ndarray, ...] | None = None


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT, ``F[m, k] = exp(-j 2 pi m k / n) / sqrt(n)``."""
    if n < 1:
        raise ValueError("DFT size must be positive")
    idx = np.arange(n)
    # reduce m*k modulo n before scaling so large sizes keep full phase accuracy
    return np.exp(-2j * np.pi * (np.outer(idx, idx) % n) / n) / np.sqrt(n)


def delay_ramp(l_tot: float, n: int) -> np.ndarray:
    """Diagonal of Lambda(l): exp(-j 2 pi m l / n)."""
    return np.exp(-2j * np.pi * np.arange(n) * l_tot / n)


def _check_delay(l_tot, n):
    if not 0 <= l_tot < n:
        raise ValueError(f"normalized delay {l_tot} outside [0, {n})")


def frac_delay_operator(l_tot: float, n: int) -> np.ndarray:
    """Dense P(l) = F^H diag(exp(-j 2 pi m l / n)) F."""
    _check_delay(l_tot, n)
    F = dft_matrix(n)
    return F.conj().T @ (delay_ramp(l_tot, n)[:, None] * F)


def frac_delay_column(l_tot: float, n: int) -> np.ndarray:
    """First column of the circulant P(l), computed with one inverse FFT."""
    return np.fft.ifft(delay_ramp(l_tot, n))


def apply_frac_delay(x: np.ndarray, l_tot: float) -> np.ndarray:
    """P(l) @ x via FFT, along the first axis."""
    x = np.asarray(x)
    n = x.shape[0]
    _check_delay(l_tot, n)
    ramp = delay_ramp(l_tot, n).reshape((n,) + (1,) * (x.ndim - 1))
    return np.fft.ifft(ramp * np.fft.fft(x, axis=0), axis=0)


def circulant(col: np.ndarray) -> np.ndarray:
    n = col.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return col[idx]


def doppler_phasor(k_tot: float, n: int) -> np.ndarray:
    return np.exp(2j * np.pi * k_tot * np.arange(n) / n)


def doppler_operator(k_tot: float, n: int) -> np.ndarray:
    """D(k) = diag(exp(j 2 pi k n' / n))."""
    return np.diag(doppler_phasor(k_tot, n))


def assemble_region(region: StationarityRegion, n: int, dense: bool = False) -> np.ndarray:
    """H_i = sum_c sum_r h D(k) P(l_c).

    ``dense=True`` multiplies materialized operators (reference path); the
    default builds each cluster's circulant from one inverse FFT and applies
    the summed Doppler phasors as a row scaling.
    """
    H = np.zeros((n, n), dtype=complex)
    for cl in region.clusters:
        if dense:
            P = frac_delay_operator(cl.delay_norm_total, n)
            for ray in cl.rays:
                H += ray.gain * doppler_operator(ray.doppler_norm_total, n) @ P
        else:
            _check_delay(cl.delay_norm_total, n)
            rows = sum(ray.gain * doppler_phasor(ray.doppler_norm_total, n) for ray in cl.rays)
            H += rows[:, None] * circulant(frac_delay_column(cl.delay_norm_total, n))
    return H


def selector(region: StationarityRegion, n: int) -> np.ndarray:
    """Diagonal 0/1 indicator W_i of the region's samples."""
    w = np.zeros(n)
    w[region.start:region.stop] = 1.0
    return np.diag(w)


def _check_partition(realization: ChannelRealization):
    expected = 0
    for region in realization.regions:
        if region.start != expected or region.stop <= region.start:
            raise RuntimeError("stationarity regions do not partition the frame")
        expected = region.stop
    if expected != realization.frame_len:
        raise RuntimeError("stationarity regions do not cover the frame")


def assemble_global(realization: ChannelRealization, keep_regions: bool = False, dense: bool = False) -> ChannelMatrix:
    """H = sum_i W_i H_i, i.e. row block i of H is row block i of H_i."""
    _check_partition(realization)
    n = realization.frame_len
    H = np.zeros((n, n), dtype=complex)
    kept = []
    for region in realization.regions:
        Hi = assemble_region(region, n, dense=dense)
        H[region.start:region.stop] = Hi[region.start:region.stop]
        if keep_regions:
            kept.append(Hi)
    return ChannelMatrix(size=n, entries=H, region_matrices=tuple(kept) if keep_regions else None)


def channel_matrix(realization: ChannelRealization) -> np.ndarray:
    return assemble_global(realization).entries


# ---------------------------------------------------------------------------
# binary dump


def matrix_bytes(matrix: np.ndarray, flags: int = 0) -> bytes:
    """Square complex matrix -> 16-byte header + row-major interleaved float64 (Re, Im)."""
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("only square matrices can be dumped")
    payload = np.ascontiguousarray(matrix).view(np.float64).astype("<f8").tobytes()
    return _HEADER.pack(MATRIX_MAGIC, matrix.shape[0], flags) + payload


def write_matrix(path, matrix: np.ndarray, flags: int = 0) -> None:
    Path(path).write_bytes(matrix_bytes(matrix, flags))


def read_matrix(path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    magic, n, flags = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise ValueError("bad matrix file magic")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != 2 * n * n:
        raise ValueError("truncated matrix file")
    return data.view(np.complex128).reshape(n, n).copy(), flags
