import numpy as np
import pytest

from waveformlab.chanmodel import from_taps
from waveformlab.operators import assemble_global
from waveformlab.transforms import (
    Source,
    Waveform,
    WaveformSpec,
    build_kernel,
    effective_channel,
    effective_channel_entrywise,
    otfs_grid,
)

from conftest import random_realization

FULL_FRAME = (Waveform.OFDM, Waveform.AFDM, Waveform.OTFS)


def specs(n):
    return [WaveformSpec.ofdm(n), WaveformSpec.afdm(n, 1), WaveformSpec.default(Waveform.OTFS, n), WaveformSpec.dfts(n)]


def test_afdm_chirp_parameters():
    spec = WaveformSpec.afdm(8, 1)
    assert spec.afdm_c1 == pytest.approx(3 / 16)
    assert spec.afdm_c2 == pytest.approx(1 / 16)
    assert WaveformSpec.ofdm(8).afdm_c1 is None


def test_degenerate_otfs_kernel():
    np.testing.assert_allclose(build_kernel(WaveformSpec.otfs(1, 1)), [[1.0]])


@pytest.mark.parametrize("spec", specs(64), ids=lambda s: s.kind.value)
def test_kernels_unitary(spec):
    A = build_kernel(spec)
    assert np.linalg.norm(A @ A.conj().T - np.eye(A.shape[0])) < 1e-11


def test_dfts_kernel_shape():
    spec = WaveformSpec.dfts(64, first_tone=5, num_tones=20)
    assert build_kernel(spec).shape == (20, 64)
    assert spec.output_dim == 20


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind=Waveform.OFDM, frame_len=8, afdm_kmax=1),
        dict(kind=Waveform.AFDM, frame_len=8),
        dict(kind=Waveform.OTFS, frame_len=8, otfs_delay_bins=3, otfs_doppler_bins=3),
        dict(kind=Waveform.DFT_S_OFDM, frame_len=8, dfts_first_tone=5, dfts_num_tones=4),
        dict(kind=Waveform.OFDM, frame_len=0),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        WaveformSpec(**kwargs)


def test_waveform_names_parse():
    assert Waveform.parse("DFT-s-OFDM") is Waveform.DFT_S_OFDM
    assert Waveform.parse(" otfs ") is Waveform.OTFS
    with pytest.raises(ValueError):
        Waveform.parse("fbmc")


def test_otfs_grid_is_near_square():
    assert otfs_grid(64) == 8
    assert otfs_grid(24) == 4
    assert otfs_grid(13) == 1


@pytest.mark.parametrize("spec", specs(16), ids=lambda s: s.kind.value)
def test_identity_and_scalar_channels(spec):
    d = spec.output_dim
    np.testing.assert_allclose(effective_channel(np.eye(16), spec).matrix, np.eye(d), atol=1e-12)
    h = 0.4 - 0.9j
    np.testing.assert_allclose(effective_channel(h * np.eye(16), spec).matrix, h * np.eye(d), atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        effective_channel(np.eye(8), WaveformSpec.ofdm(16))
    with pytest.raises(ValueError):
        effective_channel_entrywise(random_realization(8, 0), WaveformSpec.ofdm(16))


@pytest.mark.parametrize("spec", specs(16), ids=lambda s: s.kind.value)
def test_entrywise_unit_ray_is_identity(spec):
    eff = effective_channel_entrywise(from_taps([(1.0, 0, 0)], 16), spec)
    assert eff.source is Source.ENTRY_FORMULA
    np.testing.assert_allclose(eff.matrix, np.eye(spec.output_dim), atol=1e-12)


def test_entrywise_ofdm_integer_delay_is_diagonal():
    eff = effective_channel_entrywise(from_taps([(1.0, 2, 0)], 16), WaveformSpec.ofdm(16)).matrix
    expected = np.diag(np.exp(-2j * np.pi * np.arange(16) * 2 / 16))
    assert np.max(np.abs(eff - expected)) < 1e-12


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("kind", list(Waveform), ids=lambda k: k.value)
def test_entrywise_matches_triple_product(kind, seed):
    n = 24
    real = random_realization(n, seed, num_regions=2)
    spec = WaveformSpec.otfs(4, 6) if kind is Waveform.OTFS else WaveformSpec.default(kind, n)
    H = assemble_global(real)
    a = effective_channel(H, spec)
    b = effective_channel_entrywise(real, spec)
    assert a.source is Source.TRIPLE_PRODUCT
    assert np.max(np.abs(a.matrix - b.matrix)) < 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_energy_conserved(seed):
    real = random_realization(32, seed, num_regions=2)
    H = assemble_global(real).entries
    for kind in FULL_FRAME:
        spec = WaveformSpec.default(kind, 32)
        assert abs(np.linalg.norm(effective_channel(H, spec).matrix) - np.linalg.norm(H)) < 1e-9
    spec = WaveformSpec.dfts(32)
    F = build_kernel(WaveformSpec.ofdm(32))
    HK = (F @ H @ F.conj().T)[spec.dfts_first_tone:spec.dfts_first_tone + spec.dfts_num_tones][:, spec.dfts_first_tone:spec.dfts_first_tone + spec.dfts_num_tones]
    assert abs(np.linalg.norm(effective_channel(H, spec).matrix) - np.linalg.norm(HK)) < 1e-9


def test_afdm_chirps_unit_modulus_for_several_kmax():
    for kmax in (1, 2, 5):
        A = build_kernel(WaveformSpec.afdm(32, kmax))
        assert np.linalg.norm(A @ A.conj().T - np.eye(32)) < 1e-11
        np.testing.assert_allclose(np.abs(A), 1 / np.sqrt(32), atol=1e-14)


def test_otfs_kernel_entries_follow_grid_indexing():
    M, Nn = 4, 3
    A = build_kernel(WaveformSpec.otfs(M, Nn))
    for p in range(M * Nn):
        for q in range(M * Nn):
            mu, a = divmod(p, M)
            nu, b = divmod(q, M)
            expected = (a == b) * np.exp(-2j * np.pi * mu * nu / Nn) / np.sqrt(Nn)
            assert abs(A[p, q] - expected) < 1e-14
