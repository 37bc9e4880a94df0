"""Batch front end: INI configuration, experiment orchestration and deterministic output.

Every output directory gets a ``manifest.json`` holding the seed, the SHA-1
of the canonical configuration and a git-style blob hash of each file
written. Every CSV ends with a comment line pointing at that manifest.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import enum
import hashlib
import io
import json
import math
import os
import re
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics, selector
from .chanmodel import SPEED_OF_LIGHT, ChannelConfig, ConfigError, dumps_realization
from .linksim import (
    CsiMode,
    Equalizer,
    LinkConfig,
    Regime,
    _ChannelCache,
    draw_channel,
    measure_papr,
    payload_fraction,
    run_ber,
    spectral_efficiency,
)
from .operators import assemble_global, matrix_bytes
from .transforms import Waveform, WaveformSpec, otfs_grid

COMMANDS = ("generate", "effchan", "metrics", "ber", "se", "papr", "ratemap", "select", "table1")
LISTED_SPACINGS_HZ = (500.0, 1e3, 15e3, 60e3)
LISTED_BANDWIDTHS_HZ = (20e6, 100e6)
THREADS_ENV = "WAVEFORMLAB_THREADS"
MANIFEST_NAME = "manifest.json"


class ConfigFileError(ConfigError):
    """Invalid configuration file; carries the offending line when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


class ConfigWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# configuration model


@dataclass(frozen=True)
class ExperimentSettings:
    name: str = "default"
    seed: int = 0
    regime: Regime = Regime.PROPOSED
    out_dir: str = "out"
    ensemble_size: int = 100
    papr_frames: int = 1000


@dataclass(frozen=True)
class PhysicalChannel:
    carrier_freq_hz: float = 3.5e9
    bandwidth_hz: float = 20e6
    max_excess_delay_s: float = 0.5e-6
    rms_delay_spread_s: float = 0.1e-6
    speed_kmh: float = 300.0
    stationarity_time_s: float = 0.25e-3
    cluster_rate: float = 12.0
    ray_rate: float = 12.0
    shadow_std_db: float = 3.0
    velocity_azimuth_rad: float = 0.0
    cluster_sector_width_rad: float = math.pi / 4
    vonmises_kappa: float = 4.0
    survival_prob: float = 0.7

    @property
    def max_doppler_hz(self) -> float:
        return self.speed_kmh / 3.6 / SPEED_OF_LIGHT * self.carrier_freq_hz


@dataclass(frozen=True)
class LinkSettings:
    modulation_order: int = 4
    snr_grid_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    num_trials: int = 200
    csi: CsiMode = CsiMode.PERFECT
    mismatch_level: float = 0.0
    papr_oversample: int = 4
    target_ber: float = 1e-3
    min_errors: int = 100
    mrc_iterations: int = 8
    pilot_spacing: int = 4
    interpolation: str = "dft"
    ideal_ref: str = "region0"


@dataclass(frozen=True)
class WaveformSetup:
    """One waveform: operating-point numerology plus the reduced simulation frame.

    ``None`` fields are derived (written as ``auto`` in the file).
    """

    kind: Waveform
    enabled: bool = True
    subcarrier_spacing_hz: float = 15e3
    frame_len: int = 128
    equalizer: Equalizer = Equalizer.MMSE
    num_regions: int | None = None
    max_delay_norm: float | None = None
    max_doppler_norm: float | None = None
    afdm_kmax: int | None = None
    otfs_delay_bins: int | None = None
    dfts_first_tone: int | None = None
    dfts_num_tones: int | None = None


_WAVEFORM_DEFAULTS = {
    Waveform.OFDM: dict(subcarrier_spacing_hz=15e3, frame_len=128, equalizer=Equalizer.MMSE),
    Waveform.DFT_S_OFDM: dict(subcarrier_spacing_hz=15e3, frame_len=128, equalizer=Equalizer.MMSE),
    Waveform.AFDM: dict(subcarrier_spacing_hz=1e3, frame_len=512, equalizer=Equalizer.MRC),
    Waveform.OTFS: dict(subcarrier_spacing_hz=1e3, frame_len=512, equalizer=Equalizer.MRC),
}
_WAVEFORM_ONLY = {
    "afdm_kmax": Waveform.AFDM,
    "otfs_delay_bins": Waveform.OTFS,
    "dfts_first_tone": Waveform.DFT_S_OFDM,
    "dfts_num_tones": Waveform.DFT_S_OFDM,
}


def default_waveform(kind: Waveform) -> WaveformSetup:
    return WaveformSetup(kind, **_WAVEFORM_DEFAULTS[kind])


@dataclass(frozen=True)
class CellSettings:
    radius_m: float = 500.0
    points_per_axis: int = 41
    pathloss_exponent: float = 3.5
    edge_snr_db: float = 10.0
    min_distance_m: float = 1.0
    high_rate_fraction: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    channel: PhysicalChannel = field(default_factory=PhysicalChannel)
    link: LinkSettings = field(default_factory=LinkSettings)
    waveforms: tuple[WaveformSetup, ...] = field(default_factory=lambda: tuple(default_waveform(w) for w in Waveform))
    cell: CellSettings = field(default_factory=CellSettings)

    @property
    def enabled(self) -> tuple[WaveformSetup, ...]:
        return tuple(w for w in self.waveforms if w.enabled)

    # derived per-waveform objects -----------------------------------------
    def normalized_spread(self, setup: WaveformSetup) -> tuple[float, float]:
        """(l_max, k_max) of the operating point, unless overridden."""
        ch = self.channel
        l_max = ch.bandwidth_hz * ch.max_excess_delay_s if setup.max_delay_norm is None else setup.max_delay_norm
        k_max = ch.max_doppler_hz / setup.subcarrier_spacing_hz if setup.max_doppler_norm is None else setup.max_doppler_norm
        return l_max, k_max

    def regions(self, setup: WaveformSetup) -> int:
        if setup.num_regions is not None:
            return setup.num_regions
        symbol = 1.0 / setup.subcarrier_spacing_hz
        return int(min(setup.frame_len, max(1, math.ceil(symbol / self.channel.stationarity_time_s - 1e-9))))

    def channel_config(self, setup: WaveformSetup) -> ChannelConfig:
        """Simulation channel at the reduced frame length with the operating point's l_max and k_max."""
        ch = self.channel
        l_max, k_max = self.normalized_spread(setup)
        return ChannelConfig.from_normalized(
            setup.frame_len,
            l_max,
            k_max,
            carrier_freq_hz=ch.carrier_freq_hz,
            num_regions=self.regions(setup),
            cluster_rate=ch.cluster_rate,
            ray_rate=ch.ray_rate,
            max_excess_delay_s=ch.max_excess_delay_s,
            rms_delay_spread_s=ch.rms_delay_spread_s,
            shadow_std_db=ch.shadow_std_db,
            velocity_azimuth_rad=ch.velocity_azimuth_rad,
            cluster_sector_width_rad=ch.cluster_sector_width_rad,
            vonmises_kappa=ch.vonmises_kappa,
            survival_prob=ch.survival_prob,
        )

    def waveform_spec(self, setup: WaveformSetup, frame_len: int | None = None) -> WaveformSpec:
        n = setup.frame_len if frame_len is None else frame_len
        l_max, k_max = self.normalized_spread(setup)
        if setup.kind is Waveform.OFDM:
            return WaveformSpec.ofdm(n)
        if setup.kind is Waveform.AFDM:
            kmax = setup.afdm_kmax if setup.afdm_kmax is not None else max(1, math.ceil(k_max - 1e-9))
            return WaveformSpec.afdm(n, kmax)
        if setup.kind is Waveform.DFT_S_OFDM:
            if frame_len is not None:
                return WaveformSpec.dfts(n)
            return WaveformSpec.dfts(n, setup.dfts_first_tone, setup.dfts_num_tones)
        m = setup.otfs_delay_bins if setup.otfs_delay_bins is not None and frame_len is None else auto_otfs_grid(n, l_max, k_max)
        if n % m:
            raise ConfigFileError(f"otfs_delay_bins = {m} does not divide frame_len = {n}")
        return WaveformSpec.otfs(m, n // m)

    def operating_frame_len(self, setup: WaveformSetup) -> int:
        return max(2, round(self.channel.bandwidth_hz / setup.subcarrier_spacing_hz))

    def operating_payload_fraction(self, setup: WaveformSetup) -> float:
        l_max, k_max = self.normalized_spread(setup)
        spec = self.waveform_spec(setup, self.operating_frame_len(setup))
        return payload_fraction(spec, l_max, k_max, self.link.pilot_spacing)

    def link_config(self, setup: WaveformSetup) -> LinkConfig:
        lk = self.link
        return LinkConfig(
            waveform=self.waveform_spec(setup),
            channel=self.channel_config(setup),
            modulation_order=lk.modulation_order,
            snr_grid_db=lk.snr_grid_db,
            num_trials=lk.num_trials,
            equalizer=setup.equalizer,
            csi=lk.csi,
            mismatch_level=lk.mismatch_level,
            regime=self.experiment.regime,
            papr_oversample=lk.papr_oversample,
            target_ber=lk.target_ber,
            min_errors=lk.min_errors,
            mrc_iterations=lk.mrc_iterations,
            pilot_spacing=lk.pilot_spacing,
            interpolation=lk.interpolation,
            ideal_ref=lk.ideal_ref,
            seed=self.experiment.seed,
        )


def auto_otfs_grid(n: int, l_max: float, k_max: float) -> int:
    """Delay-bin count that fits the pilot guard, as close to square as possible."""
    L = max(math.ceil(l_max - 1e-9), 0)
    K = max(math.ceil(k_max - 1e-9), 0)
    fits = [m for m in range(1, n + 1) if n % m == 0 and m >= 2 * L + 1 and n // m >= 4 * K + 1]
    if not fits:
        return otfs_grid(n)
    return min(fits, key=lambda m: (abs(math.log(m / math.sqrt(n))), m))


# ---------------------------------------------------------------------------
# parsing and serialization


def _section_name(kind: Waveform) -> str:
    return f"waveform.{kind.value}"


_SECTIONS = {"experiment": ExperimentSettings, "channel": PhysicalChannel, "link": LinkSettings, "cell": CellSettings}
_ENUMS = {"Regime": Regime, "CsiMode": CsiMode, "Equalizer": Equalizer}


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """Line numbers of section headers and keys, for diagnostics."""
    index = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = re.sub(r"\s[#;].*$", "", raw).strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip().lower()), i)
    return index


def _convert(type_name: str, text: str):
    text = text.strip()
    optional = type_name.endswith("| None")
    base = type_name.replace("| None", "").strip()
    if optional and text.lower() == "auto":
        return None
    if base == "float":
        return float(text)
    if base == "int":
        value = float(text)
        if value != int(value):
            raise ValueError(f"{text!r} is not an integer")
        return int(value)
    if base == "str":
        return text
    if base == "bool":
        low = text.lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"{text!r} is not a boolean")
    if base.startswith("tuple[float"):
        return tuple(float(x) for x in text.replace(",", " ").split())
    if base in _ENUMS:
        enum_cls = _ENUMS[base]
        for member in enum_cls:
            if text.lower() in (member.value.lower(), member.name.lower()):
                return member
        raise ValueError(f"{text!r} is not one of {[m.value for m in enum_cls]}")
    raise TypeError(f"no converter for {type_name}")  # pragma: no cover


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _fill(cls, items, section, lines, base=None, skip=()):
    types = {f.name: f.type for f in dataclasses.fields(cls) if f.name not in skip}
    values = {}
    for key, text in items:
        where = lines.get((section, key))
        if key not in types:
            raise ConfigFileError(f"unknown key {key!r} in [{section}]", where)
        try:
            values[key] = _convert(types[key], text)
        except ValueError as exc:
            raise ConfigFileError(f"{section}.{key}: {exc}", where) from None
    return replace(base, **values) if base is not None else cls(**values)


def parse_config_text(text: str) -> ExperimentConfig:
    lines = _line_index(text)
    parser = configparser.ConfigParser(
        interpolation=None, default_section="\x00defaults", inline_comment_prefixes=("#", ";")
    )
    try:
        parser.read_string(text)
    except configparser.DuplicateSectionError as exc:
        raise ConfigFileError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigFileError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigFileError("key outside any section", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigFileError("malformed line", lineno) from None

    parts = {}
    waveforms = {w: default_waveform(w) for w in Waveform}
    for section in parser.sections():
        where = lines.get((section, None))
        items = list(parser.items(section))
        if section in _SECTIONS:
            parts[section] = _fill(_SECTIONS[section], items, section, lines)
            continue
        m = re.fullmatch(r"waveform\.(.+)", section)
        if not m:
            raise ConfigFileError(f"unknown section [{section}]", where)
        try:
            kind = Waveform.parse(m.group(1))
        except ValueError as exc:
            raise ConfigFileError(str(exc), where) from None
        if section != _section_name(kind):
            raise ConfigFileError(f"use [{_section_name(kind)}] for this waveform", where)
        skip = {"kind"} | {k for k, w in _WAVEFORM_ONLY.items() if w is not kind}
        waveforms[kind] = _fill(WaveformSetup, items, section, lines, base=waveforms[kind], skip=skip)

    try:
        config = ExperimentConfig(
            experiment=parts.get("experiment", ExperimentSettings()),
            channel=parts.get("channel", PhysicalChannel()),
            link=parts.get("link", LinkSettings()),
            waveforms=tuple(waveforms[w] for w in Waveform),
            cell=parts.get("cell", CellSettings()),
        )
    except TypeError as exc:  # pragma: no cover
        raise ConfigFileError(str(exc)) from None
    validate(config, lines)
    return config


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text)


def _check(cond, message, lines, section, key):
    if not cond:
        raise ConfigFileError(message, lines.get((section, key)) or lines.get((section, None)))


def validate(config: ExperimentConfig, lines=None, warn: bool = True) -> None:
    """Invariant checks; derived simulation objects are built once so their own checks fire too."""
    lines = lines or {}
    ex, ch, lk, cell = config.experiment, config.channel, config.link, config.cell
    _check(0 <= ex.seed < 2**64, "seed must be an unsigned 64-bit integer", lines, "experiment", "seed")
    _check(ex.ensemble_size >= 1, "ensemble_size must be >= 1", lines, "experiment", "ensemble_size")
    _check(ex.papr_frames >= 1, "papr_frames must be >= 1", lines, "experiment", "papr_frames")
    for key in ("carrier_freq_hz", "bandwidth_hz", "stationarity_time_s"):
        _check(getattr(ch, key) > 0, f"{key} must be positive", lines, "channel", key)
    _check(ch.speed_kmh >= 0, "speed_kmh must be non-negative", lines, "channel", "speed_kmh")
    if warn and ch.bandwidth_hz not in LISTED_BANDWIDTHS_HZ:
        warnings.warn(f"bandwidth_hz = {ch.bandwidth_hz:g} is not one of the reference bandwidths", ConfigWarning, stacklevel=3)
    _check(lk.modulation_order in metrics.SUPPORTED_ORDERS, f"modulation_order must be one of {metrics.SUPPORTED_ORDERS}", lines, "link", "modulation_order")
    _check(lk.num_trials >= 1, "num_trials must be >= 1", lines, "link", "num_trials")
    _check(0 < lk.target_ber < 0.5, "target_ber must lie in (0, 0.5)", lines, "link", "target_ber")
    _check(len(lk.snr_grid_db) >= 1, "snr_grid_db must not be empty", lines, "link", "snr_grid_db")
    _check(lk.papr_oversample >= 1, "papr_oversample must be >= 1", lines, "link", "papr_oversample")
    _check(lk.pilot_spacing >= 2, "pilot_spacing must be >= 2", lines, "link", "pilot_spacing")
    _check(lk.interpolation in ("dft", "linear"), "interpolation must be 'dft' or 'linear'", lines, "link", "interpolation")
    _check(lk.ideal_ref in ("region0", "per_region"), "ideal_ref must be 'region0' or 'per_region'", lines, "link", "ideal_ref")
    _check(lk.mismatch_level >= 0, "mismatch_level must be non-negative", lines, "link", "mismatch_level")
    _check(cell.radius_m > 0 and cell.min_distance_m > 0, "radius_m and min_distance_m must be positive", lines, "cell", "radius_m")
    _check(cell.points_per_axis >= 1, "points_per_axis must be >= 1", lines, "cell", "points_per_axis")
    _check(0 < cell.high_rate_fraction <= 1, "high_rate_fraction must lie in (0, 1]", lines, "cell", "high_rate_fraction")
    for setup in config.waveforms:
        sec = _section_name(setup.kind)
        _check(setup.subcarrier_spacing_hz > 0, "subcarrier_spacing_hz must be positive", lines, sec, "subcarrier_spacing_hz")
        if warn and setup.subcarrier_spacing_hz not in LISTED_SPACINGS_HZ:
            warnings.warn(
                f"[{sec}] subcarrier_spacing_hz = {setup.subcarrier_spacing_hz:g} is not one of the reference spacings",
                ConfigWarning,
                stacklevel=3,
            )
        _check(setup.frame_len >= 2, "frame_len must be >= 2", lines, sec, "frame_len")
        if not setup.enabled:
            continue
        try:
            config.link_config(setup)
        except ValueError as exc:
            raise ConfigFileError(f"[{sec}] {exc}", lines.get((sec, None))) from None


def serialize(config: ExperimentConfig, include_output: bool = True) -> str:
    """Canonical INI text; every value is written explicitly."""
    out = io.StringIO()

    def section(name, obj, skip=()):
        out.write(f"[{name}]\n")
        for f in dataclasses.fields(obj):
            if f.name in skip:
                continue
            out.write(f"{f.name} = {_format(getattr(obj, f.name))}\n")
        out.write("\n")

    section("experiment", config.experiment, () if include_output else ("out_dir",))
    section("channel", config.channel)
    section("link", config.link)
    for setup in config.waveforms:
        skip = {"kind"} | {k for k, w in _WAVEFORM_ONLY.items() if w is not setup.kind}
        section(_section_name(setup.kind), setup, skip)
    section("cell", config.cell)
    return out.getvalue().rstrip("\n") + "\n"


def config_hash(config: ExperimentConfig) -> str:
    """SHA-1 of everything that influences results (the output directory does not)."""
    return hashlib.sha1(serialize(config, include_output=False).encode()).hexdigest()


# ---------------------------------------------------------------------------
# output helpers


def blob_sha1(data: bytes) -> str:
    """Content hash in git's blob format."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class _Writer:
    def __init__(self, out_dir: Path, config: ExperimentConfig):
        self.out_dir = out_dir
        self.config = config
        self.files: dict[str, bytes] = {}
        self.trailer = f"# manifest {MANIFEST_NAME} seed={config.experiment.seed} config_sha1={config_hash(config)}\n"

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _num(v) for v in row])
        buf.write(self.trailer)
        self.files[name] = buf.getvalue().encode()

    def raw(self, name: str, data: bytes) -> None:
        self.files[name] = data

    def flush(self, command: str) -> list[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name in sorted(self.files):
            path = self.out_dir / name
            path.write_bytes(self.files[name])
            written.append(path)
        manifest = {
            "command": command,
            "config_sha1": config_hash(self.config),
            "name": self.config.experiment.name,
            "outputs": {name: blob_sha1(data) for name, data in sorted(self.files.items())},
            "regime": self.config.experiment.regime.value,
            "seed": self.config.experiment.seed,
        }
        path = self.out_dir / MANIFEST_NAME
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(path)
        return written


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_generate(config, writer, threads):
    def one(setup):
        real = draw_channel(config.link_config(setup), 0)
        return setup, real

    for setup, real in _map(one, config.enabled, threads):
        writer.raw(f"realization_{setup.kind.value}.txt", dumps_realization(real).encode())


def _cmd_effchan(config, writer, threads):
    def one(setup):
        link = config.link_config(setup)
        tr = _ChannelCache(link).get(0)
        return setup, assemble_global(draw_channel(link, 0)).entries, tr.H_eff, tr.H_id

    for setup, H, H_eff, H_id in _map(one, config.enabled, threads):
        name = setup.kind.value
        for label, matrix, flags in (("H", H, 0), ("Heff", H_eff, 1), ("Hid", H_id, 2)):
            writer.raw(f"{label}_{name}.hmat", matrix_bytes(matrix, flags))


def _leakage(config, setup):
    link = config.link_config(setup)
    return selector.ensemble_leakage(
        link.waveform,
        link.channel,
        config.experiment.regime,
        config.experiment.ensemble_size,
        seed=config.experiment.seed,
        ideal_ref=config.link.ideal_ref,
    )


def _profiles(config, threads, ensembles=None):
    ensembles = ensembles or _map(lambda s: _leakage(config, s), config.enabled, threads)
    return [
        selector.WaveformProfile(s.kind, ens.rho, config.operating_payload_fraction(s), config.channel.bandwidth_hz)
        for s, ens in zip(config.enabled, ensembles)
    ]


METRICS_HEADER = (
    "waveform",
    "seed",
    "gamma_id_db",
    "rho",
    "gamma_eff_db",
    "ber_analytic",
    "chi_tau",
    "chi_nu",
    "chi_stat",
    "delta_l_sym",
    "snr_db",
    "frame_len",
    "num_regions",
    "sinr_floor_db",
    "payload_fraction",
)


def _cmd_metrics(config, writer, threads):
    """One row per waveform and SNR point; leakage from the realization ensemble."""
    ch = config.channel
    ensembles = _map(lambda s: _leakage(config, s), config.enabled, threads)
    profiles = _profiles(config, threads, ensembles)
    rows = []
    for setup, ens, prof in zip(config.enabled, ensembles, profiles):
        ind = metrics.regime_indicators(
            ch.speed_kmh / 3.6,
            ch.carrier_freq_hz,
            ch.bandwidth_hz,
            setup.subcarrier_spacing_hz,
            ch.max_excess_delay_s,
            ch.stationarity_time_s,
            ch.cluster_sector_width_rad,
        )
        for snr in config.link.snr_grid_db:
            g_id = ens.gamma_sig * float(metrics.undb(snr))
            g_eff = float(metrics.effective_sinr(g_id, ens.rho))
            rows.append(
                (
                    setup.kind.value,
                    config.experiment.seed,
                    float(metrics.db(g_id)),
                    ens.rho,
                    float(metrics.db(g_eff)),
                    float(metrics.analytic_ber(g_eff, config.link.modulation_order)),
                    ind.chi_tau,
                    ind.chi_nu,
                    ind.chi_stat,
                    ind.delta_l_sym,
                    snr,
                    setup.frame_len,
                    config.regions(setup),
                    float(metrics.db(metrics.sinr_floor(ens.rho))),
                    prof.payload_fraction,
                )
            )
    writer.csv("metrics.csv", METRICS_HEADER, rows)


BER_HEADER = ("snr_db", "ber_mc", "ber_ci_low", "ber_ci_high", "ber_analytic")


def _cmd_ber(config, writer, threads):
    reports = _map(lambda s: run_ber(config.link_config(s)), config.enabled, threads)
    for setup, rep in zip(config.enabled, reports):
        rows = [(p.snr_db, p.ber_mc, p.ber_ci_low, p.ber_ci_high, p.ber_analytic) for p in rep.points]
        writer.csv(f"ber_{setup.kind.value}.csv", BER_HEADER, rows)


def _cmd_se(config, writer, threads):
    for setup, prof in zip(config.enabled, _profiles(config, threads)):
        rows = []
        for snr in config.link.snr_grid_db:
            g = float(metrics.effective_sinr(metrics.undb(snr), prof.rho))
            rows.append((snr, spectral_efficiency(g, config.link.target_ber, prof.payload_fraction)))
        writer.csv(f"se_{setup.kind.value}.csv", ("snr_db", "se"), rows)


def _cmd_papr(config, writer, threads):
    def one(setup):
        spec = config.waveform_spec(setup)
        return measure_papr(spec, config.link.modulation_order, config.experiment.papr_frames, config.link.papr_oversample, seed=config.experiment.seed)

    for setup, (thr, ccdf, _) in zip(config.enabled, _map(one, config.enabled, threads)):
        writer.csv(f"papr_{setup.kind.value}.csv", ("papr_db", "ccdf"), zip(thr, ccdf))


def _cell(config):
    c = config.cell
    return selector.gamma0_map(c.radius_m, c.points_per_axis, c.pathloss_exponent, c.edge_snr_db, c.min_distance_m)


def _surfaces(config, threads):
    cell = _cell(config)
    profiles = _profiles(config, threads)
    return cell, profiles, selector.rate_map(cell, profiles, config.link.target_ber)


def _cmd_ratemap(config, writer, threads):
    cell, profiles, surfaces = _surfaces(config, threads)
    ranking = selector.rank_waveforms(cell, surfaces)
    kinds = [p.waveform for p in profiles]
    header = ["x_m", "y_m", "gamma0_db"]
    for w in kinds:
        header += [f"{w.value}_gamma_eff_db", f"{w.value}_rate_bps", f"{w.value}_M_star"]
    header.append("winner")
    rows = []
    for i in range(len(cell)):
        row = [cell.positions[i, 0], cell.positions[i, 1], cell.gamma0_db[i]]
        for w in kinds:
            s = surfaces[w]
            row += [s.gamma_eff_db[i], s.rate_bps[i], int(s.m_star[i])]
        row.append(ranking.winners[i].value)
        rows.append(row)
    writer.csv("ratemap.csv", header, rows)


SELECT_HEADER = ("waveform", "rho", "payload_fraction", "positions_won", "high_rate_area", "peak_rate_bps")


def _cmd_select(config, writer, threads):
    cell, profiles, surfaces = _surfaces(config, threads)
    ranking = selector.rank_waveforms(cell, surfaces)
    counts = ranking.counts()
    area = selector.high_rate_area(surfaces, config.cell.high_rate_fraction)
    rows = [
        (p.waveform.value, p.rho, p.payload_fraction, counts[p.waveform], area[p.waveform], float(np.max(surfaces[p.waveform].rate_bps)))
        for p in profiles
    ]
    writer.csv("selection.csv", SELECT_HEADER, rows)


def _cmd_table1(config, writer, threads):
    writer.csv("table1.csv", metrics.TABLE1_HEADER, metrics.table1())


_HANDLERS = {
    "generate": _cmd_generate,
    "effchan": _cmd_effchan,
    "metrics": _cmd_metrics,
    "ber": _cmd_ber,
    "se": _cmd_se,
    "papr": _cmd_papr,
    "ratemap": _cmd_ratemap,
    "select": _cmd_select,
    "table1": _cmd_table1,
}


def run_experiment(config: ExperimentConfig, command: str, out_dir=None, threads: int = 1) -> list[Path]:
    """Run one subcommand and write its outputs plus the manifest; returns the paths written."""
    if command not in _HANDLERS:
        raise ValueError(f"unknown command {command!r}")
    out = Path(out_dir if out_dir is not None else config.experiment.out_dir)
    writer = _Writer(out, config)
    _HANDLERS[command](config, writer, max(1, threads))
    return writer.flush(command)


# ---------------------------------------------------------------------------
# entry point


def _threads(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigFileError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="waveformlab", description="Waveform effective-channel experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="INI configuration file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override [experiment] seed")
    p.add_argument("--out", type=Path, help="output directory (overrides [experiment] out_dir)")
    p.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV}, then 1)")
    p.add_argument("--regime", choices=[r.value for r in Regime], help="override [experiment] regime")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConfigWarning)
            config = parse_config(args.config) if args.config else ExperimentConfig()
        for w in caught:
            print(f"waveformlab: warning: {w.message}", file=sys.stderr)
        ex = config.experiment
        if args.seed is not None:
            ex = replace(ex, seed=args.seed)
        if args.regime is not None:
            ex = replace(ex, regime=Regime(args.regime))
        if args.out is not None:
            ex = replace(ex, out_dir=str(args.out))
        config = replace(config, experiment=ex)
        validate(config, warn=False)
        threads = _threads(args.threads)
    except (ConfigError, ValueError) as exc:
        print(f"waveformlab: config error: {exc}", file=sys.stderr)
        return 1
    try:
        paths = run_experiment(config, args.command, threads=threads)
    except Exception as exc:  # noqa: BLE001 - any failure past configuration is a runtime error
        print(f"waveformlab: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
