"""Stochastic non-WSSUS doubly dispersive channel generator.

A realization is a list of stationarity regions covering the frame. Inside a
region the cluster delays and the ray sets are frozen; at each boundary rays
die and are born (birth-death) and the cluster delays drift with mobility.

All randomness is drawn from PCG64 streams derived from ``rng_seed`` with a
spawn key per (region, cluster), so a realization is a pure function of
``(config, seed)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 3e8  # m/s, the rounded value behind the reference mobility table

TWO_PI = 2.0 * np.pi


class ConfigError(ValueError):
    """Raised for invalid or inconsistent channel configuration."""


@dataclass(frozen=True)
class ChannelConfig:
    carrier_freq_hz: float = 3.5e9
    bandwidth_hz: float = 20e6
    frame_len: int = 64
    num_regions: int = 1
    cluster_rate: float = 12.0
    ray_rate: float = 12.0
    max_excess_delay_s: float = 0.5e-6
    rms_delay_spread_s: float = 0.1e-6
    shadow_std_db: float = 3.0
    speed_mps: float = 300 / 3.6
    velocity_azimuth_rad: float = 0.0
    cluster_sector_width_rad: float = np.pi / 4
    vonmises_kappa: float = 4.0
    survival_prob: float = 0.7
    rng_seed: int = 0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ConfigError("bandwidth_hz must be positive")
        if self.frame_len < 2:
            raise ConfigError("frame_len must be >= 2")
        if self.num_regions < 1:
            raise ConfigError("num_regions must be >= 1")
        if self.num_regions > self.frame_len:
            raise ConfigError("num_regions cannot exceed frame_len")
        if self.cluster_rate < 0 or self.ray_rate < 0:
            raise ConfigError("Poisson rates must be non-negative")
        if self.max_excess_delay_s < 0:
            raise ConfigError("max_excess_delay_s must be non-negative")
        if self.max_excess_delay_s * self.bandwidth_hz >= self.frame_len:
            raise ConfigError("max_excess_delay_s * bandwidth_hz must be < frame_len")
        if self.shadow_std_db < 0:
            raise ConfigError("shadow_std_db must be non-negative")
        if self.speed_mps < 0:
            raise ConfigError("speed_mps must be non-negative")
        if not 0 <= self.cluster_sector_width_rad <= TWO_PI + 1e-12:
            raise ConfigError("cluster_sector_width_rad must lie in [0, 2*pi]")
        if self.vonmises_kappa < 0:
            raise ConfigError("vonmises_kappa must be non-negative")
        if not 0 <= self.survival_prob <= 1:
            raise ConfigError("survival_prob must lie in [0, 1]")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be an unsigned 64-bit integer")

    @property
    def frame_duration_s(self) -> float:
        """Observation window T = N / B."""
        return self.frame_len / self.bandwidth_hz

    @property
    def max_doppler_hz(self) -> float:
        return self.speed_mps / SPEED_OF_LIGHT * self.carrier_freq_hz

    @property
    def max_delay_norm(self) -> float:
        return self.max_excess_delay_s * self.bandwidth_hz

    @property
    def max_doppler_norm(self) -> float:
        return self.max_doppler_hz * self.frame_duration_s

    def region_bounds(self) -> list[tuple[int, int]]:
        """Equal-length partition of [0, N); the remainder goes to the last region."""
        step = self.frame_len // self.num_regions
        starts = [i * step for i in range(self.num_regions)]
        ends = starts[1:] + [self.frame_len]
        return list(zip(starts, ends))

    @classmethod
    def from_normalized(
        cls,
        frame_len: int,
        max_delay_norm: float,
        max_doppler_norm: float,
        **overrides,
    ) -> "ChannelConfig":
        """Pick bandwidth and speed that give the requested l_max and k_max at ``frame_len``.

        Keeps carrier frequency and maximum excess delay, so the resulting speed
        can be far outside the terrestrial range; used for stress scenarios where
        only the normalized quantities matter.
        """
        base = cls(frame_len=max(frame_len, 2), **{k: v for k, v in overrides.items() if k != "frame_len"})
        bandwidth = max_delay_norm / base.max_excess_delay_s
        doppler_hz = max_doppler_norm * bandwidth / frame_len
        speed = doppler_hz * SPEED_OF_LIGHT / base.carrier_freq_hz
        return replace(base, bandwidth_hz=bandwidth, speed_mps=speed)


@dataclass(frozen=True)
class Ray:
    gain: complex
    power_fraction: float
    phase_rad: float
    azimuth_rad: float
    doppler_hz: float
    doppler_norm_total: float
    delay_offset_norm: float
    weight: float = 1.0  # unnormalized Exp(1) draw; kept so survivors re-split consistently


@dataclass(frozen=True)
class Cluster:
    power: float
    delay_s: float
    delay_norm_total: float
    delay_drift: float
    mean_azimuth_rad: float
    sector_width_rad: float
    rays: tuple[Ray, ...]

    def __post_init__(self):
        if not self.rays:
            raise ValueError("a cluster needs at least one ray")


@dataclass(frozen=True)
class StationarityRegion:
    index: int
    sample_range: tuple[int, int]
    clusters: tuple[Cluster, ...]

    @property
    def start(self) -> int:
        return self.sample_range[0]

    @property
    def stop(self) -> int:
        return self.sample_range[1]

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class ChannelRealization:
    config: ChannelConfig
    regions: tuple[StationarityRegion, ...]
    shadowing_db: tuple[float, ...] = field(default=())

    @property
    def frame_len(self) -> int:
        return self.config.frame_len

    def iter_rays(self):
        """Yield ``(region, cluster_index, cluster, ray)`` for every active ray."""
        for region in self.regions:
            for c, cluster in enumerate(region.clusters):
                for ray in cluster.rays:
                    yield region, c, cluster, ray

    def num_rays(self) -> int:
        return sum(1 for _ in self.iter_rays())


# ---------------------------------------------------------------------------
# random streams


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, key...)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


_COUNTS_KEY = 0
_RAYS_KEY = 1


# ---------------------------------------------------------------------------
# parameter draws


def sample_counts(config: ChannelConfig, rng: np.random.Generator) -> tuple[int, list[int]]:
    """Poisson cluster count and per-cluster ray counts, each clamped to >= 1."""
    num_clusters = max(1, int(rng.poisson(config.cluster_rate)))
    rays = [max(1, int(r)) for r in rng.poisson(config.ray_rate, size=num_clusters)]
    return num_clusters, rays


def draw_cluster_delays(config: ChannelConfig, num_clusters: int, rng: np.random.Generator) -> np.ndarray:
    # order statistics of uniform arrivals = Poisson arrivals conditioned on the count
    return np.sort(rng.uniform(0.0, config.max_excess_delay_s, size=num_clusters))


def draw_cluster_powers(delays_s, config: ChannelConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shadowed exponential power-delay profile normalized to unit sum.

    Returns ``(powers, shadowing_db)``.
    """
    delays = np.asarray(delays_s, dtype=float)
    if delays.size == 0:
        raise ValueError("need at least one cluster delay")
    if not config.rms_delay_spread_s > 0:
        raise ConfigError("rms_delay_spread_s must be positive")
    shadow = rng.normal(0.0, config.shadow_std_db, size=delays.size)
    raw = np.exp(-delays / config.rms_delay_spread_s) * 10.0 ** (shadow / 10.0)
    return raw / raw.sum(), shadow


def draw_ray_gains(cluster_power: float, ray_count: int, rng: np.random.Generator):
    """Split ``cluster_power`` over ``ray_count`` rays with Exp(1)-normalized fractions.

    Returns ``(gains, fractions, phases, weights)``.
    """
    weights = rng.exponential(1.0, size=ray_count)
    phases = rng.uniform(0.0, TWO_PI, size=ray_count)
    return _gains_from_weights(cluster_power, weights, phases) + (phases, weights)


def _gains_from_weights(cluster_power, weights, phases):
    fractions = weights / weights.sum()
    gains = np.sqrt(cluster_power * fractions) * np.exp(1j * phases)
    return gains, fractions


def _wrap(angle):
    return (angle + np.pi) % TWO_PI - np.pi


def draw_angles(mean_rad: float, sector_rad: float, kappa: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Von Mises angles around ``mean_rad`` truncated to the sector by rejection."""
    if kappa < 0:
        raise ConfigError("vonmises_kappa must be non-negative")
    half = sector_rad / 2
    if half <= 0:
        return np.full(size, mean_rad % TWO_PI)
    out = np.empty(0)
    while out.size < size:
        cand = rng.vonmises(0.0, kappa, size=max(size - out.size, 1) * 2)
        if sector_rad < TWO_PI:
            cand = cand[np.abs(cand) <= half]
        out = np.concatenate([out, cand])
    return (mean_rad + out[:size]) % TWO_PI


def draw_doppler(config: ChannelConfig, mean_rad: float, sector_rad: float, size: int, rng: np.random.Generator):
    """Ray azimuths and Doppler shifts nu = f_D cos(theta - theta_v).

    Returns ``(azimuths, doppler_hz)``.
    """
    theta = draw_angles(mean_rad, sector_rad, config.vonmises_kappa, size, rng)
    return theta, config.max_doppler_hz * np.cos(theta - config.velocity_azimuth_rad)


# ---------------------------------------------------------------------------
# realization


def _fresh_rays(config, size, mean_rad, sector_rad, rng):
    weights = rng.exponential(1.0, size=size)
    phases = rng.uniform(0.0, TWO_PI, size=size)
    theta, nu = draw_doppler(config, mean_rad, sector_rad, size, rng)
    offsets = 0.5 - rng.uniform(0.0, 1.0, size=size)  # (-1/2, 1/2]
    return [
        dict(weight=w, phase=p, azimuth=t, doppler=v, offset=o)
        for w, p, t, v, o in zip(weights, phases, theta, nu, offsets)
    ]


def _build_rays(config, power, specs) -> tuple[Ray, ...]:
    weights = np.array([s["weight"] for s in specs])
    phases = np.array([s["phase"] for s in specs])
    gains, fractions = _gains_from_weights(power, weights, phases)
    T = config.frame_duration_s
    return tuple(
        Ray(
            gain=complex(g),
            power_fraction=float(f),
            phase_rad=float(s["phase"]),
            azimuth_rad=float(s["azimuth"]),
            doppler_hz=float(s["doppler"]),
            doppler_norm_total=float(s["doppler"] * T),
            delay_offset_norm=float(s["offset"]),
            weight=float(s["weight"]),
        )
        for g, f, s in zip(gains, fractions, specs)
    )


def birth_death(config: ChannelConfig, specs, mean_rad, sector_rad, rng):
    """One region transition: Bernoulli survival plus Poisson births.

    Births have mean ``ray_rate * (1 - survival_prob)`` so the ray count stays
    Poisson(ray_rate) in equilibrium. Survivors keep weight, phase and angle.
    """
    alive = rng.random(len(specs)) < config.survival_prob
    survivors = [s for s, keep in zip(specs, alive) if keep]
    births = int(rng.poisson(config.ray_rate * (1.0 - config.survival_prob)))
    if not survivors and births == 0:
        births = 1
    return survivors + _fresh_rays(config, births, mean_rad, sector_rad, rng), int(alive.sum())


def segment_regions(config: ChannelConfig, rng_seed: int | None = None) -> ChannelRealization:
    """Draw a full realization: clusters, rays, and their region-wise evolution."""
    seed = config.rng_seed if rng_seed is None else rng_seed
    if config.num_regions > config.frame_len:
        raise ConfigError("num_regions cannot exceed frame_len")
    rng = stream(seed, _COUNTS_KEY)
    num_clusters, ray_counts = sample_counts(config, rng)
    delays = draw_cluster_delays(config, num_clusters, rng)
    powers, shadow = draw_cluster_powers(delays, config, rng)
    mean_angles = rng.uniform(0.0, TWO_PI, size=num_clusters)
    width = config.cluster_sector_width_rad
    # Doppler > 0 means a shortening path, so the delay drifts the other way
    drifts = -config.speed_mps / SPEED_OF_LIGHT * np.cos(mean_angles - config.velocity_azimuth_rad)

    N = config.frame_len
    B = config.bandwidth_hz
    regions = []
    ray_specs = []
    delay_norm = delays * B
    for i, (start, stop) in enumerate(config.region_bounds()):
        clusters = []
        for c in range(num_clusters):
            r_rng = stream(seed, _RAYS_KEY, i, c)
            if i == 0:
                ray_specs.append(_fresh_rays(config, ray_counts[c], mean_angles[c], width, r_rng))
            else:
                ray_specs[c], _ = birth_death(config, ray_specs[c], mean_angles[c], width, r_rng)
            clusters.append(
                Cluster(
                    power=float(powers[c]),
                    delay_s=float(delays[c]),
                    delay_norm_total=float(delay_norm[c] % N),
                    delay_drift=float(drifts[c]),
                    mean_azimuth_rad=float(mean_angles[c]),
                    sector_width_rad=float(width),
                    rays=_build_rays(config, powers[c], ray_specs[c]),
                )
            )
        regions.append(StationarityRegion(index=i, sample_range=(start, stop), clusters=tuple(clusters)))
        # l^{tot,i+1} = l^{tot,i} + beta_c * B * T_region
        delay_norm = delay_norm + drifts * (stop - start)
    return ChannelRealization(config=config, regions=tuple(regions), shadowing_db=tuple(float(x) for x in shadow))


generate = segment_regions


def sparsify(realization: ChannelRealization) -> ChannelRealization:
    """Project onto the sparse model: one region, one ray per cluster, integer delay and Doppler.

    Each cluster keeps its strongest ray's phase and Doppler, carries the full
    cluster power, and both indices are rounded to the grid.
    """
    cfg = replace(realization.config, num_regions=1)
    region0 = realization.regions[0]
    N = cfg.frame_len
    T = cfg.frame_duration_s
    clusters = []
    for cl in region0.clusters:
        top = max(cl.rays, key=lambda r: r.power_fraction)
        k = float(np.round(top.doppler_norm_total))
        ray = Ray(
            gain=complex(np.sqrt(cl.power) * np.exp(1j * top.phase_rad)),
            power_fraction=1.0,
            phase_rad=top.phase_rad,
            azimuth_rad=top.azimuth_rad,
            doppler_hz=k / T,
            doppler_norm_total=k,
            delay_offset_norm=0.0,
        )
        clusters.append(replace(cl, delay_norm_total=float(np.round(cl.delay_norm_total) % N), rays=(ray,)))
    region = StationarityRegion(index=0, sample_range=(0, N), clusters=tuple(clusters))
    return ChannelRealization(config=cfg, regions=(region,), shadowing_db=realization.shadowing_db)


def from_taps(taps, frame_len: int, **config_overrides) -> ChannelRealization:
    """Single-region realization with one ray per ``(gain, delay_norm, doppler_norm)`` tap."""
    cfg = ChannelConfig(frame_len=frame_len, num_regions=1, **config_overrides)
    T = cfg.frame_duration_s
    clusters = []
    for h, l, k in taps:
        h = complex(h)
        ray = Ray(
            gain=h,
            power_fraction=1.0,
            phase_rad=float(np.angle(h) % TWO_PI),
            azimuth_rad=0.0,
            doppler_hz=float(k) / T,
            doppler_norm_total=float(k),
            delay_offset_norm=0.0,
        )
        clusters.append(
            Cluster(
                power=abs(h) ** 2,
                delay_s=float(l) / cfg.bandwidth_hz,
                delay_norm_total=float(l) % frame_len,
                delay_drift=0.0,
                mean_azimuth_rad=0.0,
                sector_width_rad=0.0,
                rays=(ray,),
            )
        )
    region = StationarityRegion(index=0, sample_range=(0, frame_len), clusters=tuple(clusters))
    return ChannelRealization(config=cfg, regions=(region,))


# ---------------------------------------------------------------------------
# text serialization

_HEADER = "# waveformlab channel realization v1"
_RAY_COLUMNS = (
    "region cluster l_tot k_tot re_h im_h power_fraction phase_rad azimuth_rad doppler_hz delay_offset_norm weight"
)


def _fmt(x) -> str:
    return repr(float(x))


def dumps_realization(realization: ChannelRealization) -> str:
    lines = [_HEADER]
    for f in fields(ChannelConfig):
        lines.append(f"# config {f.name} = {getattr(realization.config, f.name)!r}")
    lines.append("# shadowing_db " + " ".join(_fmt(x) for x in realization.shadowing_db))
    for region in realization.regions:
        lines.append(f"# region {region.index} {region.start} {region.stop}")
        for c, cl in enumerate(region.clusters):
            lines.append(
                f"# cluster {region.index} {c} "
                + " ".join(
                    _fmt(x)
                    for x in (cl.power, cl.delay_s, cl.delay_norm_total, cl.delay_drift, cl.mean_azimuth_rad, cl.sector_width_rad)
                )
            )
    lines.append(_RAY_COLUMNS)
    for region, c, cl, ray in realization.iter_rays():
        lines.append(
            f"{region.index} {c} "
            + " ".join(
                _fmt(x)
                for x in (
                    cl.delay_norm_total,
                    ray.doppler_norm_total,
                    ray.gain.real,
                    ray.gain.imag,
                    ray.power_fraction,
                    ray.phase_rad,
                    ray.azimuth_rad,
                    ray.doppler_hz,
                    ray.delay_offset_norm,
                    ray.weight,
                )
            )
        )
    return "\n".join(lines) + "\n"


def loads_realization(text: str) -> ChannelRealization:
    lines = text.splitlines()
    if not lines or lines[0] != _HEADER:
        raise ValueError("not a waveformlab realization file")
    cfg_kwargs = {}
    types = {f.name: f.type for f in fields(ChannelConfig)}
    shadow: tuple[float, ...] = ()
    region_ranges: dict[int, tuple[int, int]] = {}
    cluster_rows: dict[tuple[int, int], list[float]] = {}
    rays: dict[tuple[int, int], list[Ray]] = {}
    for line in lines[1:]:
        if line.startswith("# config "):
            name, value = line[len("# config "):].split(" = ", 1)
            cfg_kwargs[name] = int(value) if types[name] == "int" else float(value)
        elif line.startswith("# shadowing_db"):
            shadow = tuple(float(x) for x in line.split()[2:])
        elif line.startswith("# region "):
            i, start, stop = (int(x) for x in line.split()[2:])
            region_ranges[i] = (start, stop)
        elif line.startswith("# cluster "):
            parts = line.split()
            cluster_rows[(int(parts[2]), int(parts[3]))] = [float(x) for x in parts[4:]]
        elif line.startswith("region ") or not line.strip():
            continue
        else:
            parts = line.split()
            i, c = int(parts[0]), int(parts[1])
            vals = [float(x) for x in parts[2:]]
            rays.setdefault((i, c), []).append(
                Ray(
                    gain=complex(vals[2], vals[3]),
                    power_fraction=vals[4],
                    phase_rad=vals[5],
                    azimuth_rad=vals[6],
                    doppler_hz=vals[7],
                    doppler_norm_total=vals[1],
                    delay_offset_norm=vals[8],
                    weight=vals[9],
                )
            )
    cfg = ChannelConfig(**cfg_kwargs)
    regions = []
    for i in sorted(region_ranges):
        clusters = []
        c = 0
        while (i, c) in cluster_rows:
            p, d, l, drift, az, width = cluster_rows[(i, c)]
            clusters.append(Cluster(p, d, l, drift, az, width, tuple(rays[(i, c)])))
            c += 1
        regions.append(StationarityRegion(i, region_ranges[i], tuple(clusters)))
    return ChannelRealization(config=cfg, regions=tuple(regions), shadowing_db=shadow)


def save_realization(realization: ChannelRealization, path) -> None:
    Path(path).write_text(dumps_realization(realization))


def load_realization(path) -> ChannelRealization:
    return loads_realization(Path(path).read_text())


def expected_frame_energy(realization: ChannelRealization) -> float:
    """Sum of ray powers weighted by region length; equals N for a normalized realization."""
    return float(sum(len(reg) * sum(abs(r.gain) ** 2 for cl in reg.clusters for r in cl.rays) for reg in realization.regions))


def clarke_second_moment(max_doppler_hz: float) -> float:
    """E[nu^2] under isotropic scattering."""
    return max_doppler_hz**2 / 2

