import math

import numpy as np
import pytest

from waveformlab import metrics
from waveformlab.chanmodel import ChannelConfig
from waveformlab.linksim import Regime
from waveformlab.selector import (
    CellGrid,
    WaveformProfile,
    discrete_rate_cap,
    ensemble_leakage,
    gamma0_at,
    gamma0_map,
    high_rate_area,
    rank_waveforms,
    rate_map,
    shannon_rate,
)
from waveformlab.transforms import Waveform, WaveformSpec

B = 20e6


def profiles(rhos, etas=None):
    etas = etas or {w: 0.8 for w in rhos}
    return [WaveformProfile(w, rhos[w], etas[w], B) for w in rhos]


def test_pathloss_doubling():
    drop = gamma0_at(100.0, 500) - gamma0_at(200.0, 500)
    assert drop == pytest.approx(10 * 3.5 * math.log10(2))
    assert drop == pytest.approx(10.54, abs=5e-3)
    assert gamma0_at(500.0, 500, edge_snr_db=7.0) == pytest.approx(7.0)


def test_map_peaks_at_centre_and_is_isotropic():
    cell = gamma0_map(radius_m=500, points_per_axis=21)
    centre = np.argmin(cell.distances)
    assert cell.distances[centre] == 0
    assert cell.gamma0_db[centre] == cell.gamma0_db.max()
    assert np.all(cell.distances <= 500 + 1e-9)
    lookup = {tuple(np.round(p, 6)): g for p, g in zip(cell.positions, cell.gamma0_db)}
    for (x, y), g in lookup.items():
        assert lookup[(round(-y, 6), round(x, 6))] == pytest.approx(g)


def test_map_rejects_bad_parameters():
    with pytest.raises(ValueError):
        gamma0_map(radius_m=0)
    with pytest.raises(ValueError):
        CellGrid(np.zeros((3, 2)), np.zeros(2), 1.0, 3.5, 10.0)


def test_profile_validation():
    with pytest.raises(ValueError):
        WaveformProfile(Waveform.OFDM, -0.1, 0.5, B)
    with pytest.raises(ValueError):
        WaveformProfile(Waveform.OFDM, 0.1, 1.5, B)


def test_effective_sinr_substitution():
    cell = CellGrid(np.zeros((1, 2)), np.array([20.0]), 500.0, 3.5, 10.0)
    surf = rate_map(cell, profiles({Waveform.OFDM: 0.05}))[Waveform.OFDM]
    assert surf.gamma_eff_db[0] == pytest.approx(metrics.db(100 / 6))
    assert surf.gamma_eff_db[0] == pytest.approx(12.22, abs=5e-3)


def test_zero_leakage_gives_shannon():
    cell = gamma0_map(points_per_axis=11)
    surf = rate_map(cell, profiles({Waveform.AFDM: 0.0}))[Waveform.AFDM]
    np.testing.assert_allclose(surf.rate_continuous_bps, shannon_rate(cell.gamma0_db, B))


def test_rate_monotone_in_leakage():
    cell = gamma0_map(points_per_axis=15)
    surf = rate_map(cell, profiles({Waveform.OFDM: 0.01, Waveform.AFDM: 0.2}))
    assert np.all(surf[Waveform.OFDM].rate_bps >= surf[Waveform.AFDM].rate_bps)
    assert np.all(surf[Waveform.OFDM].rate_continuous_bps >= surf[Waveform.AFDM].rate_continuous_bps)
    assert np.max(surf[Waveform.OFDM].rate_bps) <= discrete_rate_cap(profiles({Waveform.OFDM: 0.01})[0])


def test_equal_leakage_decided_by_overhead():
    cell = gamma0_map(points_per_axis=11)
    rho = {w: 0.01 for w in Waveform}
    eta = {Waveform.OFDM: 0.7, Waveform.DFT_S_OFDM: 0.6, Waveform.AFDM: 0.9, Waveform.OTFS: 0.8}
    ranking = rank_waveforms(cell, rate_map(cell, profiles(rho, eta)))
    served = [i for i, row in enumerate(ranking.entries) if row[0].rate_bps > 0]
    assert served and all(ranking.winners[i] is Waveform.AFDM for i in served)
    assert [e.waveform for e in ranking.entries[served[0]]] == [Waveform.AFDM, Waveform.OTFS, Waveform.OFDM, Waveform.DFT_S_OFDM]


def test_ties_go_to_enum_order():
    cell = CellGrid(np.zeros((1, 2)), np.array([-30.0]), 500.0, 3.5, 10.0)
    surf = rate_map(cell, profiles({Waveform.AFDM: 0.0, Waveform.OFDM: 0.0}))
    ranking = rank_waveforms(cell, surf)
    assert ranking.winners == (Waveform.OFDM,)
    assert ranking.counts()[Waveform.OFDM] == 1
    with pytest.raises(ValueError):
        rank_waveforms(cell, {})


def test_regime_pattern():
    cell = gamma0_map(points_per_axis=31)
    eta = {Waveform.OFDM: 0.74, Waveform.DFT_S_OFDM: 0.74, Waveform.AFDM: 0.99, Waveform.OTFS: 0.99}
    sparse = rate_map(cell, profiles({w: 0.0 for w in Waveform}, eta))
    proposed = rate_map(cell, profiles({Waveform.OFDM: 0.02, Waveform.DFT_S_OFDM: 0.02, Waveform.AFDM: 1.7, Waveform.OTFS: 1.7}, eta))
    a_s, a_p = high_rate_area(sparse), high_rate_area(proposed)
    assert a_s[Waveform.AFDM] > a_s[Waveform.OFDM]
    assert a_p[Waveform.AFDM] < a_p[Waveform.OFDM]
    counts = rank_waveforms(cell, proposed).counts()
    assert counts[Waveform.OFDM] > counts[Waveform.AFDM]


def test_high_rate_area_all_zero():
    cell = CellGrid(np.zeros((2, 2)), np.array([-40.0, -40.0]), 500.0, 3.5, 10.0)
    assert high_rate_area(rate_map(cell, profiles({Waveform.OFDM: 0.0}))) == {Waveform.OFDM: 0.0}


def test_target_ber_validated():
    with pytest.raises(ValueError):
        rate_map(gamma0_map(points_per_axis=3), profiles({Waveform.OFDM: 0.0}), target_ber=0.6)


def test_ensemble_leakage_regimes():
    ch = ChannelConfig.from_normalized(64, 3.0, 0.9, num_regions=2)
    spec = WaveformSpec.afdm(64, 1)
    sparse = ensemble_leakage(spec, ch, Regime.SPARSE, num_realizations=4)
    proposed = ensemble_leakage(spec, ch, Regime.PROPOSED, num_realizations=4)
    assert sparse.rho < 1e-20 < proposed.rho
    assert proposed.size == 4 and proposed.gamma_sig > 0
    with pytest.raises(ValueError):
        ensemble_leakage(spec, ch, num_realizations=0)
