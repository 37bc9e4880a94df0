"""Position-dependent waveform selection from leakage ratios and a path-loss SINR map."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .chanmodel import ChannelConfig
from .linksim import MODULATION_ORDERS, Regime, _ChannelCache, LinkConfig, max_order
from .transforms import Waveform, WaveformSpec

_ENUM_ORDER = {w: i for i, w in enumerate(Waveform)}


@dataclass(frozen=True)
class CellGrid:
    positions: np.ndarray  # (P, 2) metres, cell centre at the origin
    gamma0_db: np.ndarray  # (P,)
    radius_m: float
    pathloss_exponent: float
    edge_snr_db: float

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must be an array of shape (P, 2)")
        if self.gamma0_db.shape != (self.positions.shape[0],):
            raise ValueError("one gamma0 value per position is required")
        if not np.all(np.isfinite(self.gamma0_db)):
            raise ValueError("gamma0 must be finite at every position")

    @property
    def distances(self) -> np.ndarray:
        return np.hypot(self.positions[:, 0], self.positions[:, 1])

    def __len__(self):
        return self.positions.shape[0]


def gamma0_at(distance_m, radius_m: float, pathloss_exponent: float = 3.5, edge_snr_db: float = 10.0, min_distance_m: float = 1.0):
    """Log-distance law anchored at the cell edge: edge + 10 n log10(R / r)."""
    r = np.maximum(np.asarray(distance_m, dtype=float), min_distance_m)
    return edge_snr_db + 10.0 * pathloss_exponent * np.log10(radius_m / r)


def gamma0_map(
    radius_m: float = 500.0,
    points_per_axis: int = 41,
    pathloss_exponent: float = 3.5,
    edge_snr_db: float = 10.0,
    min_distance_m: float = 1.0,
) -> CellGrid:
    """Square lattice over [-R, R]^2, keeping the points inside the disc of radius R."""
    if not radius_m > 0 or points_per_axis < 1 or not min_distance_m > 0:
        raise ValueError("radius, lattice size and minimum distance must be positive")
    axis = np.linspace(-radius_m, radius_m, points_per_axis) if points_per_axis > 1 else np.zeros(1)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    pos = np.column_stack([xx.ravel(), yy.ravel()])
    pos = pos[np.hypot(pos[:, 0], pos[:, 1]) <= radius_m * (1 + 1e-12)]
    g0 = gamma0_at(np.hypot(pos[:, 0], pos[:, 1]), radius_m, pathloss_exponent, edge_snr_db, min_distance_m)
    return CellGrid(pos, g0, radius_m, pathloss_exponent, edge_snr_db)


@dataclass(frozen=True)
class LeakageEnsemble:
    rho: float
    gamma_sig: float  # mean per-dimension signal power of H_id, unit symbol energy
    size: int


def ensemble_leakage(
    spec: WaveformSpec,
    channel: ChannelConfig,
    regime: Regime = Regime.PROPOSED,
    num_realizations: int = 100,
    seed: int = 0,
    ideal_ref: str = "region0",
) -> LeakageEnsemble:
    """Mean leakage ratio and ideal signal power over independent channel draws (perfect CSI)."""
    if num_realizations < 1:
        raise ValueError("num_realizations must be >= 1")
    channel = replace(channel, frame_len=spec.frame_len)
    link = LinkConfig(spec, channel, regime=regime, num_trials=num_realizations, ideal_ref=ideal_ref, seed=seed)
    cache = _ChannelCache(link)
    reports = [metrics.leakage_split(cache.get(t).H_eff, cache.get(t).H_id) for t in range(num_realizations)]
    return LeakageEnsemble(
        rho=float(np.mean([r.rho for r in reports])),
        gamma_sig=float(np.mean([r.gamma_sig for r in reports])),
        size=num_realizations,
    )


def ensemble_rho(spec: WaveformSpec, channel: ChannelConfig, regime: Regime = Regime.PROPOSED, num_realizations: int = 100, seed: int = 0, ideal_ref: str = "region0") -> float:
    return ensemble_leakage(spec, channel, regime, num_realizations, seed, ideal_ref).rho


@dataclass(frozen=True)
class WaveformProfile:
    """What the selector needs to know about one waveform at the operating point."""

    waveform: Waveform
    rho: float
    payload_fraction: float
    bandwidth_hz: float

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not 0 <= self.payload_fraction <= 1:
            raise ValueError("payload fraction must lie in [0, 1]")
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class RateSurface:
    waveform: Waveform
    gamma_eff_db: np.ndarray
    rate_continuous_bps: np.ndarray
    rate_bps: np.ndarray
    m_star: np.ndarray


def rate_map(
    cell: CellGrid,
    profiles,
    target_ber: float = 1e-3,
    orders=MODULATION_ORDERS,
) -> dict[Waveform, RateSurface]:
    """Per-waveform rate surfaces over the cell.

    The continuous rate is B log2(1 + gamma_eff); the discrete rate is
    B eta log2 M* with M* the largest order meeting ``target_ber``.
    """
    if not 0 < target_ber < 0.5:
        raise ValueError("target_ber must lie in (0, 0.5)")
    g0 = metrics.undb(cell.gamma0_db)
    out = {}
    for prof in profiles:
        g = np.asarray(metrics.effective_sinr(g0, prof.rho), dtype=float)
        m_star = np.array([max_order(x, target_ber, orders) for x in g], dtype=int)
        bits = np.log2(np.maximum(m_star, 1))
        out[prof.waveform] = RateSurface(
            waveform=prof.waveform,
            gamma_eff_db=np.asarray(metrics.db(g), dtype=float),
            rate_continuous_bps=prof.bandwidth_hz * np.log2(1.0 + g),
            rate_bps=prof.bandwidth_hz * prof.payload_fraction * bits,
            m_star=m_star,
        )
    return out


@dataclass(frozen=True)
class RankEntry:
    waveform: Waveform
    gamma_eff_db: float
    rate_bps: float
    m_star: int


@dataclass(frozen=True)
class WaveformRanking:
    entries: tuple[tuple[RankEntry, ...], ...]  # per position, best first
    winners: tuple[Waveform, ...]

    def counts(self) -> dict[Waveform, int]:
        """How many positions each waveform wins."""
        out = {w: 0 for w in Waveform}
        for w in self.winners:
            out[w] += 1
        return out


def rank_waveforms(cell: CellGrid, surfaces: dict[Waveform, RateSurface]) -> WaveformRanking:
    """Order waveforms by discrete rate at every position; ties go to the earlier enum member."""
    if not surfaces:
        raise ValueError("no waveforms to rank")
    kinds = sorted(surfaces, key=_ENUM_ORDER.__getitem__)
    entries = []
    for i in range(len(cell)):
        row = [RankEntry(w, float(surfaces[w].gamma_eff_db[i]), float(surfaces[w].rate_bps[i]), int(surfaces[w].m_star[i])) for w in kinds]
        row.sort(key=lambda e: (-e.rate_bps, _ENUM_ORDER[e.waveform]))
        entries.append(tuple(row))
    return WaveformRanking(tuple(entries), tuple(row[0].waveform for row in entries))


def high_rate_area(surfaces: dict[Waveform, RateSurface], fraction: float = 0.5) -> dict[Waveform, float]:
    """Share of positions where each waveform reaches ``fraction`` of the best rate seen anywhere."""
    peak = max(float(np.max(s.rate_bps)) for s in surfaces.values())
    if peak <= 0:
        return {w: 0.0 for w in surfaces}
    level = fraction * peak
    return {w: float(np.mean(s.rate_bps >= level - 1e-9 * peak)) for w, s in surfaces.items()}


def shannon_rate(gamma0_db, bandwidth_hz: float):
    return bandwidth_hz * np.log2(1.0 + metrics.undb(gamma0_db))


def discrete_rate_cap(profile: WaveformProfile, orders=MODULATION_ORDERS) -> float:
    return profile.bandwidth_hz * profile.payload_fraction * math.log2(max(orders))
