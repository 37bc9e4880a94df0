"""Resolvability indicators, leakage split, effective SINR and the Gray-QAM BER model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .chanmodel import SPEED_OF_LIGHT

SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class RegimeIndicators:
    max_doppler_hz: float
    doppler_spread_hz: float
    max_delay_norm: float
    max_doppler_norm: float
    chi_tau: float
    chi_nu: float
    chi_stat: float
    delta_l_sym: float


def regime_indicators(
    v_mps: float,
    f_c: float,
    B: float,
    delta_f: float,
    tau_max: float,
    t_stat: float | None = None,
    sector_width_rad: float = np.pi / 4,
) -> RegimeIndicators:
    """Normalized indicators for symbol duration T = 1/delta_f.

    ``t_stat`` defaults to T (a single stationarity region per symbol).
    A static terminal (``v_mps = 0``) is allowed and gives zero Doppler terms.
    """
    if v_mps < 0:
        raise ValueError("speed must be non-negative")
    for name, value in (("f_c", f_c), ("B", B), ("delta_f", delta_f), ("tau_max", tau_max)):
        if not value > 0:
            raise ValueError(f"{name} must be positive")
    T = 1.0 / delta_f
    t_stat = T if t_stat is None else t_stat
    if not t_stat > 0:
        raise ValueError("t_stat must be positive")
    f_d = v_mps / SPEED_OF_LIGHT * f_c
    spread = 2 * f_d * np.sin(min(sector_width_rad, np.pi) / 2)
    return RegimeIndicators(
        max_doppler_hz=f_d,
        doppler_spread_hz=spread,
        max_delay_norm=B * tau_max,
        max_doppler_norm=f_d * T,
        chi_tau=B * tau_max,
        chi_nu=f_d * T,
        chi_stat=T / t_stat,
        delta_l_sym=B * v_mps / SPEED_OF_LIGHT * T,
    )


TABLE1_SPEEDS_KMH = (30, 120, 300)
TABLE1_HEADER = (
    "v_kmh",
    "f_D_hz",
    "l_max_B20MHz",
    "l_max_B100MHz",
    "k_max_df500Hz",
    "k_max_df60kHz",
    "dl_sym_df500Hz_B20MHz",
    "dl_sym_df500Hz_B100MHz",
    "dl_sym_df60kHz_B20MHz",
    "dl_sym_df60kHz_B100MHz",
)


def table1(speeds_kmh=TABLE1_SPEEDS_KMH, f_c: float = 3.5e9, tau_max: float = 0.5e-6) -> list[tuple[float, ...]]:
    """Mobility operating points: one row per speed, columns as in ``TABLE1_HEADER``."""
    rows = []
    for v_kmh in speeds_kmh:
        v = v_kmh / 3.6
        ind = {
            (df, B): regime_indicators(v, f_c, B, df, tau_max)
            for df in (500.0, 60e3)
            for B in (20e6, 100e6)
        }
        rows.append(
            (
                float(v_kmh),
                ind[(500.0, 20e6)].max_doppler_hz,
                ind[(500.0, 20e6)].max_delay_norm,
                ind[(500.0, 100e6)].max_delay_norm,
                ind[(500.0, 20e6)].max_doppler_norm,
                ind[(60e3, 20e6)].max_doppler_norm,
                ind[(500.0, 20e6)].delta_l_sym,
                ind[(500.0, 100e6)].delta_l_sym,
                ind[(60e3, 20e6)].delta_l_sym,
                ind[(60e3, 100e6)].delta_l_sym,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# leakage split


@dataclass(frozen=True)
class LeakageReport:
    gamma_sig: float
    gamma_leak: float
    gamma_mm: float
    rho: float
    gamma_id: float
    gamma_eff: float


def mismatch_energy(H_eff: np.ndarray, H_eff_hat: np.ndarray) -> float:
    H_eff, H_eff_hat = np.asarray(H_eff), np.asarray(H_eff_hat)
    if H_eff.shape != H_eff_hat.shape:
        raise ValueError("matrix shapes differ")
    return float(np.sum(np.abs(H_eff - H_eff_hat) ** 2))


def leakage_split(
    H_eff: np.ndarray,
    H_id: np.ndarray,
    symbol_energy: float = 1.0,
    noise_var: float | None = None,
    H_eff_hat: np.ndarray | None = None,
) -> LeakageReport:
    """Per-dimension signal, leakage and mismatch powers for i.i.d. symbols of energy E_s.

    E||A x||^2 = ||A||_F^2 E_s, so every term is a Frobenius norm scaled by
    E_s / N_dim. Without ``noise_var`` the SINR fields are NaN.
    """
    H_eff, H_id = np.asarray(H_eff), np.asarray(H_id)
    if H_eff.shape != H_id.shape:
        raise ValueError("H_eff and H_id shapes differ")
    scale = symbol_energy / H_eff.shape[1]
    sig = float(np.sum(np.abs(H_id) ** 2)) * scale
    leak = float(np.sum(np.abs(H_eff - H_id) ** 2)) * scale
    mm = 0.0 if H_eff_hat is None else mismatch_energy(H_eff, H_eff_hat) * scale
    rho = (leak + mm) / sig if sig > 0 else np.inf
    if noise_var is None:
        g_id = g_eff = float("nan")
    else:
        g_id = sig / noise_var if noise_var > 0 else np.inf
        g_eff = sinr_from_powers(sig, noise_var, leak, mm)
    return LeakageReport(sig, leak, mm, float(rho), float(g_id), float(g_eff))


def sinr_from_powers(gamma_sig: float, noise_var: float, gamma_leak: float, gamma_mm: float = 0.0) -> float:
    """gamma_sig / (sigma^2 + gamma_leak + gamma_mm)."""
    den = noise_var + gamma_leak + gamma_mm
    return gamma_sig / den if den > 0 else float("inf")


def effective_sinr(gamma_id, rho):
    """gamma_id / (1 + rho gamma_id); saturates at 1/rho."""
    gamma_id = np.asarray(gamma_id, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(gamma_id < 0) or np.any(rho < 0):
        raise ValueError("gamma_id and rho must be non-negative")
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        out = gamma_id / (1.0 + rho * gamma_id)
        out = np.where(np.isinf(gamma_id), 1.0 / rho, out)
    return out[()] if out.ndim == 0 else out


def sinr_floor(rho: float) -> float:
    return 1.0 / rho if rho > 0 else float("inf")


def qfunc(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def qam_constants(M: int) -> tuple[float, float]:
    if M not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported modulation order {M}; choose from {SUPPORTED_ORDERS}")
    a = 4.0 / np.log2(M) * (1.0 - 1.0 / np.sqrt(M))
    b = 3.0 / (M - 1)
    return a, b


def analytic_ber(gamma_eff, M: int):
    """Gray square M-QAM bit error approximation a_M Q(sqrt(b_M gamma))."""
    a, b = qam_constants(M)
    g = np.asarray(gamma_eff, dtype=float)
    if np.any(g < 0):
        raise ValueError("gamma_eff must be non-negative")
    out = a * qfunc(np.sqrt(b * g))
    return out[()] if np.ndim(out) == 0 else out


def db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def undb(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)
