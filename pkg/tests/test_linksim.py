import math

import numpy as np
import pytest
from scipy.optimize import brentq

from waveformlab import metrics
from waveformlab.chanmodel import ChannelConfig, stream
from waveformlab.linksim import (
    CsiMode,
    Equalizer,
    LinkConfig,
    Regime,
    _Trial,
    binomial_interval,
    constellation,
    demodulate,
    equalize_mmse,
    equalize_mrc,
    estimate_channel_simple,
    max_order,
    measure_papr,
    modulate,
    nmse,
    papr_at_ccdf,
    papr_db,
    payload_fraction,
    pilot_layout,
    required_sinr,
    run_ber,
    simulate_frame,
    spectral_efficiency,
)
from waveformlab.sparse_oracle import SparseChannelSpec, sparse_effective
from waveformlab.transforms import Waveform, WaveformSpec, build_kernel


def test_qpsk_symbols():
    s = modulate([0, 0, 0, 1, 1, 0, 1, 1], 4)
    expected = {complex(a, b) / math.sqrt(2) for a in (-1, 1) for b in (-1, 1)}
    assert {complex(np.round(x, 12)) for x in s} == {complex(np.round(x, 12)) for x in expected}


@pytest.mark.parametrize("M", [4, 16, 64, 256])
def test_unit_energy_and_round_trip(M, rng):
    pts = constellation(M)
    assert len(set(np.round(pts, 9))) == M
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)
    bits = rng.integers(0, 2, 100_000 * int(math.log2(M)))
    sym = modulate(bits, M)
    np.testing.assert_array_equal(demodulate(sym, M), bits)
    if M == 4:
        assert abs(np.mean(np.abs(sym) ** 2) - 1) < 1e-3


@pytest.mark.parametrize("M", [4, 16, 64])
def test_gray_neighbours_differ_in_one_bit(M):
    pts = constellation(M)
    k = int(math.log2(M))
    labels = (np.arange(M)[:, None] >> np.arange(k - 1, -1, -1)) & 1
    step = 2 / math.sqrt(2 * (M - 1) / 3)
    for i in range(M):
        d = np.abs(pts - pts[i])
        for j in np.flatnonzero(np.isclose(d, step)):
            assert np.sum(labels[i] != labels[j]) == 1


def test_unsupported_order():
    with pytest.raises(ValueError):
        modulate([0, 1, 0], 8)


def test_mmse_examples(rng):
    H = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    x = modulate(rng.integers(0, 2, 32), 4)
    np.testing.assert_allclose(demodulate(equalize_mmse(H, H @ x, 0.0), 4), demodulate(x, 4))
    y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    np.testing.assert_allclose(equalize_mmse(np.eye(8), y, 0.3), y / 1.3)
    G = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    ref = np.linalg.inv(G.conj().T @ G + 0.2 * np.eye(8)) @ G.conj().T @ y
    assert np.max(np.abs(equalize_mmse(G, y, 0.2) - ref)) < 1e-10


def test_mmse_singular_noiseless_uses_pseudo_inverse():
    H = np.diag([1.0, 2.0, 0.0])
    y = np.array([1.0, 4.0, 0.0])
    np.testing.assert_allclose(equalize_mmse(H, y, 0.0), [1.0, 2.0, 0.0])


def test_mrc_scalar_channel_and_scaling(rng):
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    h = 0.7 + 0.2j
    np.testing.assert_allclose(equalize_mrc(h * np.eye(6), y), y / h)
    H = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    alpha = -2.5j
    np.testing.assert_allclose(equalize_mrc(alpha * H, alpha * y), equalize_mrc(H, y))


def test_mrc_dead_column_flagged():
    H = np.array([[1.0, 0.0], [0.0, 0.0]])
    out = equalize_mrc(H, np.array([2.0, 1.0]))
    assert out[0] == 2.0 and np.isnan(out[1])


def test_iterative_mrc_needs_order():
    with pytest.raises(ValueError):
        equalize_mrc(np.eye(2), np.ones(2), iterations=2)


def test_mrc_combining_gain():
    spec = WaveformSpec.otfs(8, 8)
    one = sparse_effective(SparseChannelSpec([(1, 0, 0)], spec))
    three = sparse_effective(SparseChannelSpec([(1, 0, 0), (1, 1, 1), (1, 3, -2)], spec))
    rng = stream(5, 0)
    w = (rng.standard_normal((64, 4000)) + 1j * rng.standard_normal((64, 4000))) / math.sqrt(2)
    v1 = np.mean([np.abs(equalize_mrc(one, c)) ** 2 for c in w.T])
    v3 = np.mean([np.abs(equalize_mrc(three, c)) ** 2 for c in w.T])
    assert v1 / v3 == pytest.approx(3.0, rel=0.03)


def test_noise_variance_preserved_by_kernels():
    rng = stream(9, 0)
    w = (rng.standard_normal((64, 15625)) + 1j * rng.standard_normal((64, 15625))) / math.sqrt(2)
    for kind in (Waveform.OFDM, Waveform.AFDM, Waveform.OTFS):
        A = build_kernel(WaveformSpec.default(kind, 64))
        assert np.mean(np.abs(A @ w) ** 2) == pytest.approx(1.0, rel=0.01)


def test_payload_fraction_values():
    assert payload_fraction(WaveformSpec.ofdm(64), 10.0) == pytest.approx(0.75 * 64 / 76)
    afdm = WaveformSpec.afdm(256, 1)
    guard = 2 * 3 * 10 + 4 + 1
    assert payload_fraction(afdm, 10.0, 0.97) == pytest.approx((256 - guard) / (256 + 12))
    otfs = WaveformSpec.otfs(32, 8)
    assert payload_fraction(otfs, 10.0, 0.97) == pytest.approx((256 - 21 * 5) / (256 + 12))


@pytest.mark.parametrize("spec", [WaveformSpec.afdm(64, 1), WaveformSpec.otfs(16, 8)], ids=["afdm", "otfs"])
def test_embedded_pilot_layout_partitions_frame(spec):
    lay = pilot_layout(spec, 3.0, 0.9)
    assert np.intersect1d(lay.data_index, lay.guard_index).size == 0
    assert np.union1d(lay.data_index, lay.guard_index).size == spec.frame_len
    assert set(lay.readout_index) <= set(lay.guard_index)
    assert lay.pilot_index[0] in lay.guard_index
    assert abs(lay.pilot_values[0]) ** 2 == pytest.approx(lay.guard_index.size)


def test_pilot_guard_that_does_not_fit():
    with pytest.raises(ValueError):
        pilot_layout(WaveformSpec.otfs(4, 4), 3.0, 1.0)


def _received(spec, taps, lay, rng):
    H = sparse_effective(SparseChannelSpec(taps, spec))
    x = np.zeros(spec.frame_len, dtype=complex)
    x[lay.data_index] = modulate(rng.integers(0, 2, 2 * lay.num_data), 4)
    x[lay.pilot_index] = lay.pilot_values
    return H, H @ x


@pytest.mark.parametrize("spec", [WaveformSpec.otfs(16, 8), WaveformSpec.afdm(64, 1)], ids=["otfs", "afdm"])
def test_noiseless_embedded_estimate_is_exact(spec, rng):
    taps = [(0.8, 0, 0), (0.5j, 2, 1), (-0.3, 3, -1)]
    lay = pilot_layout(spec, 3.0, 1.0)
    H, y = _received(spec, taps, lay, rng)
    est = estimate_channel_simple(y, lay, spec, noise_var=0.0)
    assert not est.empty and len(est.taps) == 3
    assert nmse(H, est.matrix) < 1e-20


def test_zero_channel_gives_empty_estimate(rng):
    spec = WaveformSpec.otfs(16, 8)
    lay = pilot_layout(spec, 3.0, 1.0)
    est = estimate_channel_simple(np.zeros(128, dtype=complex), lay, spec)
    assert est.empty and not np.any(est.matrix)


def test_ofdm_dense_pilots_noiseless(rng):
    spec = WaveformSpec.ofdm(64)
    H = sparse_effective(SparseChannelSpec([(0.9, 0, 0), (0.4j, 1, 0), (-0.2, 3, 0)], spec))
    lay = pilot_layout(spec, 3.0, pilot_spacing=1)
    x = np.zeros(64, dtype=complex)
    x[lay.pilot_index] = lay.pilot_values
    est = estimate_channel_simple(H @ x, lay, spec, noise_var=0.0)
    assert nmse(H, est.matrix) < 1e-12


def test_ofdm_comb_pilots_linear_interpolation(rng):
    spec = WaveformSpec.ofdm(64)
    H = sparse_effective(SparseChannelSpec([(0.9, 0, 0), (0.4j, 1, 0)], spec))
    lay = pilot_layout(spec, 1.0)
    x = np.zeros(64, dtype=complex)
    x[lay.pilot_index] = 1
    est = estimate_channel_simple(H @ x, lay, spec, interpolation="linear")
    assert nmse(H, est.matrix) < 1e-2
    with pytest.raises(ValueError):
        estimate_channel_simple(H @ x, lay, spec, interpolation="cubic")


def test_papr_single_tone_is_flat():
    A = build_kernel(WaveformSpec.ofdm(64))
    tone = np.zeros(64)
    tone[5] = 1
    assert papr_db(A.conj().T @ tone) == pytest.approx(0.0, abs=1e-9)
    assert papr_db(A.conj().T @ tone, oversample=4) == pytest.approx(0.0, abs=1e-9)


def test_papr_ccdf_properties():
    spec = WaveformSpec.ofdm(128)
    thr, c1, _ = measure_papr(spec, 4, 2000, oversample=1, seed=3)
    _, c4, _ = measure_papr(spec, 4, 2000, oversample=4, thresholds_db=thr, seed=3)
    assert np.all(c4 >= c1)
    for c in (c1, c4):
        assert np.all((c >= 0) & (c <= 1)) and np.all(np.diff(c) <= 0)
    with pytest.raises(ValueError):
        measure_papr(spec, 4, 0)


def test_papr_dfts_below_ofdm():
    thr, c_ofdm, s_ofdm = measure_papr(WaveformSpec.ofdm(512), 4, 10_000, seed=1)
    _, c_dfts, s_dfts = measure_papr(WaveformSpec.dfts(512), 4, 10_000, thresholds_db=thr, seed=1)
    assert np.all(c_dfts <= c_ofdm)
    assert papr_at_ccdf(s_dfts, 1e-2) < papr_at_ccdf(s_ofdm, 1e-2)


def test_spectral_efficiency_examples():
    assert spectral_efficiency(0.1, 1e-3) == 0.0
    assert spectral_efficiency(1e9, 1e-3) == 8.0
    assert spectral_efficiency(1e9, 1e-3, eta=0.5) == 4.0
    assert max_order(0.1, 1e-3) == 0
    g = np.logspace(-1, 4, 300)
    se = [spectral_efficiency(x, 1e-3) for x in g]
    assert np.all(np.diff(se) >= 0)


def test_required_sinr_matches_root_finder():
    oracle = brentq(lambda g: metrics.analytic_ber(g, 16) - 1e-3, 1e-3, 1e4, xtol=1e-12)
    assert required_sinr(16, 1e-3) == pytest.approx(oracle, rel=1e-9)
    assert max_order(required_sinr(16, 1e-3) * 1.0001, 1e-3) >= 16


def test_binomial_interval():
    lo, hi = binomial_interval(100, 10_000)
    half = 3 * math.sqrt(0.01 * 0.99 / 10_000)
    assert (lo, hi) == pytest.approx((0.01 - half, 0.01 + half))
    assert binomial_interval(0, 0) == (0.0, 1.0)


def _sparse_link(**kw):
    ch = ChannelConfig.from_normalized(64, 3.0, 0.0)
    base = dict(regime=Regime.SPARSE, snr_grid_db=(4.0,), num_trials=40, seed=2)
    base.update(kw)
    return LinkConfig(WaveformSpec.ofdm(64), ch, **base)


def test_link_config_validation():
    with pytest.raises(ValueError):
        _sparse_link(num_trials=0)
    with pytest.raises(ValueError):
        _sparse_link(target_ber=0.7)


def test_static_sparse_ofdm_matches_analytic():
    rep = run_ber(_sparse_link(num_trials=400, min_errors=10**9))
    p = rep.points[0]
    assert p.bits >= 10_000
    assert rep.rho < 1e-20
    assert p.ber_ci_low <= p.ber_analytic <= p.ber_ci_high


def test_run_ber_is_reproducible():
    a = run_ber(_sparse_link())
    b = run_ber(_sparse_link())
    assert a.points == b.points


def test_mismatch_floor_near_prediction():
    ch = ChannelConfig.from_normalized(64, 3.0, 0.0)
    link = LinkConfig(WaveformSpec.ofdm(64), ch, csi=CsiMode.MISMATCHED, mismatch_level=0.1)
    flat = _Trial(np.eye(64, dtype=complex), np.eye(64, dtype=complex), 64)
    errors = bits = 0
    for t in range(3000):
        e, b, *_ = simulate_frame(link, flat, 60.0, stream(1, t))
        errors += e
        bits += b
    floor = metrics.analytic_ber(metrics.effective_sinr(1e6, 0.1), 4)
    assert floor / 2 <= errors / bits <= 2 * floor


def test_estimated_csi_reports_nmse():
    ch = ChannelConfig.from_normalized(64, 3.0, 0.0)
    link = LinkConfig(WaveformSpec.ofdm(64), ch, regime=Regime.SPARSE, csi=CsiMode.ESTIMATED, snr_grid_db=(30.0,), num_trials=5)
    rep = run_ber(link)
    assert rep.nmse_ce is not None and rep.nmse_ce < 0.05
    assert 0 <= rep.points[0].ber_mc <= 0.5


def test_mrc_link_runs():
    ch = ChannelConfig.from_normalized(64, 3.0, 0.9)
    link = LinkConfig(WaveformSpec.otfs(8, 8), ch, regime=Regime.SPARSE, equalizer=Equalizer.MRC, snr_grid_db=(20.0,), num_trials=5)
    assert run_ber(link).points[0].ber_mc < 0.05
