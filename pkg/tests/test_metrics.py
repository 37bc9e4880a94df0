import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waveformlab import metrics
from waveformlab.metrics import (
    analytic_ber,
    effective_sinr,
    leakage_split,
    mismatch_energy,
    qam_constants,
    qfunc,
    regime_indicators,
    sinr_floor,
    sinr_from_powers,
    table1,
)

# published mobility operating points, as printed (f_D to 0.1 Hz, the rest to 4 decimals)
MOBILITY_TABLE = [
    (30, 97.2, 10, 50, 0.1944, 0.0016, 0.0011, 0.0056, 0.0000, 0.0000),
    (120, 388.9, 10, 50, 0.7778, 0.0065, 0.0044, 0.0222, 0.0000, 0.0002),
    (300, 972.2, 10, 50, 1.9444, 0.0162, 0.0111, 0.0556, 0.0001, 0.0005),
]


def test_mobility_rows_match_published_values():
    for row, ref in zip(table1(), MOBILITY_TABLE):
        assert row[0] == ref[0]
        assert round(row[1], 1) == ref[1]
        for got, want in zip(row[2:], ref[2:]):
            assert round(got, 4) == pytest.approx(want, abs=1e-12)


def test_mobility_header_width():
    assert all(len(r) == len(metrics.TABLE1_HEADER) for r in table1())


def test_indicators_examples():
    ind = regime_indicators(300 / 3.6, 3.5e9, 20e6, 500.0, 0.5e-6)
    assert ind.max_doppler_hz == pytest.approx(972.2, abs=0.05)
    assert ind.max_delay_norm == pytest.approx(10.0)
    assert ind.max_doppler_norm == pytest.approx(1.9444, abs=5e-5)
    assert ind.delta_l_sym == pytest.approx(0.0111, abs=5e-5)
    assert ind.chi_stat == pytest.approx(1.0)
    ind = regime_indicators(120 / 3.6, 3.5e9, 100e6, 60e3, 0.5e-6)
    assert ind.max_doppler_norm == pytest.approx(0.0065, abs=5e-5)
    assert ind.delta_l_sym == pytest.approx(0.0002, abs=5e-5)


def test_static_terminal():
    ind = regime_indicators(0.0, 3.5e9, 20e6, 15e3, 0.5e-6)
    assert ind.max_doppler_hz == ind.max_doppler_norm == ind.delta_l_sym == ind.doppler_spread_hz == 0


@pytest.mark.parametrize("bad", [dict(v_mps=-1), dict(B=0), dict(delta_f=-5), dict(tau_max=0), dict(t_stat=0)])
def test_indicator_errors(bad):
    args = dict(v_mps=10, f_c=3.5e9, B=20e6, delta_f=15e3, tau_max=0.5e-6)
    args.update(bad)
    with pytest.raises(ValueError):
        regime_indicators(**args)


def test_leakage_split_examples():
    H = np.eye(8) * (1 + 1j)
    rep = leakage_split(H, H)
    assert rep.gamma_leak == 0 and rep.rho == 0
    alpha = 0.3 - 0.4j
    rep = leakage_split(np.eye(8) + alpha * np.eye(8), np.eye(8), noise_var=0.1)
    assert rep.gamma_leak / rep.gamma_sig == pytest.approx(abs(alpha) ** 2)
    assert rep.gamma_eff <= rep.gamma_id
    assert math.isnan(leakage_split(H, H).gamma_eff)


def test_leakage_split_matches_symbol_average(rng):
    n = 6
    H_eff = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H_id = np.diag(np.diag(H_eff))
    rep = leakage_split(H_eff, H_id)
    x = (rng.choice([-1, 1], (n, 200_000)) + 1j * rng.choice([-1, 1], (n, 200_000))) / np.sqrt(2)
    leak = np.mean(np.abs((H_eff - H_id) @ x) ** 2)
    assert rep.gamma_leak == pytest.approx(leak, rel=1e-2)


def test_mismatch_energy():
    H = np.random.default_rng(3).standard_normal((16, 16))
    assert mismatch_energy(H, H) == 0
    assert mismatch_energy(H, H + 0.01 * np.eye(16)) == pytest.approx(16e-4)
    G = H + 1j * np.random.default_rng(4).standard_normal((16, 16))
    brute = sum(abs(H[i, j] - G[i, j]) ** 2 for i in range(16) for j in range(16))
    assert mismatch_energy(H, G) == pytest.approx(brute)
    with pytest.raises(ValueError):
        mismatch_energy(H, H[:4])


def test_effective_sinr_examples():
    assert effective_sinr(7.0, 0.0) == 7.0
    assert effective_sinr(10.0, 0.05) == pytest.approx(10 / 1.5)
    assert effective_sinr(np.inf, 0.1) == pytest.approx(10.0)
    assert effective_sinr(1e12, 0.1) == pytest.approx(10.0, rel=1e-9)
    assert sinr_floor(0.1) == 10 and sinr_floor(0) == math.inf
    with pytest.raises(ValueError):
        effective_sinr(-1, 0.1)


@given(g=st.floats(1e-3, 1e6), rho=st.floats(0, 10), d=st.floats(1e-3, 10))
def test_effective_sinr_monotone(g, rho, d):
    assert effective_sinr(g + d, rho) >= effective_sinr(g, rho)
    assert effective_sinr(g, rho + d) <= effective_sinr(g, rho)


@given(
    sig=st.floats(1e-3, 1e3), noise=st.floats(1e-6, 1e2), leak=st.floats(0, 1e2), mm=st.floats(0, 1e2)
)
@settings(max_examples=200)
def test_reduced_form_equals_power_form(sig, noise, leak, mm):
    gamma_id = sig / noise
    rho = (leak + mm) / sig
    assert effective_sinr(gamma_id, rho) == pytest.approx(sinr_from_powers(sig, noise, leak, mm), rel=1e-12)


def test_qam_constants():
    assert qam_constants(4) == pytest.approx((1.0, 1.0))
    a, b = qam_constants(16)
    assert a == pytest.approx(0.75) and b == pytest.approx(0.2)
    with pytest.raises(ValueError):
        qam_constants(8)


def test_ber_examples():
    assert analytic_ber(0.0, 4) == pytest.approx(0.5)
    assert qfunc(1.0) == pytest.approx(0.15866, abs=1e-5)
    assert analytic_ber(1.0, 4) == pytest.approx(0.15866, abs=1e-5)
    floor = analytic_ber(effective_sinr(1e12, 0.05), 16)
    assert floor == pytest.approx(0.75 * qfunc(math.sqrt(0.2 / 0.05)), rel=1e-6) and floor > 0
    with pytest.raises(ValueError):
        analytic_ber(-1.0, 4)


def test_ber_monotone_in_snr_and_order():
    g = np.logspace(-2, 3, 200)
    for M in metrics.SUPPORTED_ORDERS:
        assert np.all(np.diff(analytic_ber(g, M)) <= 0)
    g = np.logspace(np.log10(4.0), 3, 200)
    for lo, hi in zip(metrics.SUPPORTED_ORDERS, metrics.SUPPORTED_ORDERS[1:]):
        assert np.all(analytic_ber(g, hi) >= analytic_ber(g, lo))


def test_order_inversion_below_six_db():
    # the prefactor a_M shrinks with M, so the approximation ranks orders wrongly near gamma = 0
    assert analytic_ber(0.01, 16) < analytic_ber(0.01, 4)


def test_db_round_trip():
    assert metrics.db(100.0) == pytest.approx(20.0)
    assert metrics.undb(metrics.db(3.7)) == pytest.approx(3.7)
