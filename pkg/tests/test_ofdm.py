import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstatic.ofdm import (C0, NoPeakError, OfdmConfig, PathComponent, Periodogram, RangeAmbiguityError,
                          ReceptionGrid, SubspaceError, clutter_subtract, extract_range, grid_from_bytes,
                          grid_to_bytes, music_azimuth, music_spectrum, periodogram, periodogram_from_bytes,
                          periodogram_to_bytes, synthesize_grid, ula_snapshots)

SMALL = OfdmConfig(64, 16, 120e3, 1 / 120e3, 64, 16)
PADDED = OfdmConfig(64, 16, 120e3, 1 / 120e3, 256, 32)

# c0 / (120 kHz * 4096), mpmath at 30 digits
RANGE_BIN_4096 = 0.609929317220052083


def _on_grid(u, cfg=SMALL, gain=1.0, v=0):
    return PathComponent(gain, cfg.delay_for_bin(u), v / (cfg.symbol_duration_s * cfg.fft_doppler))


def test_config_validation():
    with pytest.raises(ValueError):
        OfdmConfig(64, 16, 120e3, 1e-5, 32, 16)
    with pytest.raises(ValueError):
        OfdmConfig(0, 16)
    OfdmConfig().check_bandwidth(400e6)
    with pytest.raises(ValueError):
        OfdmConfig().check_bandwidth(100e6)


def test_synthesis_trivial_examples():
    assert np.all(synthesize_grid([], SMALL).data == 0)
    g = synthesize_grid([PathComponent(1.0, 0.0)], SMALL)
    assert np.all(g.data == 1 + 0j)


def test_synthesis_matches_elementwise_oracle():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 30
    cfg = OfdmConfig(8, 4, 120e3, 1 / 120e3, 16, 8)
    paths = [PathComponent(0.7 - 0.2j, cfg.delay_for_bin(3)), PathComponent(0.4j, 1.37e-6, 2500.0)]
    g = synthesize_grid(paths, cfg).data
    for n in range(cfg.n_subcarriers):
        for m in range(cfg.n_symbols):
            ref = sum(mp.mpc(p.gain) * mp.expj(2 * mp.pi * (m * mp.mpf(cfg.symbol_duration_s) * p.doppler_hz
                                                           - n * mp.mpf(p.delay_s) * cfg.subcarrier_spacing_hz))
                      for p in paths)
            assert abs(complex(ref) - g[n, m]) < 1e-12


def test_out_of_window_delay_raises():
    with pytest.raises(RangeAmbiguityError):
        synthesize_grid([PathComponent(1.0, 1 / SMALL.subcarrier_spacing_hz)], SMALL)
    with pytest.raises(ValueError):
        PathComponent(1.0, -1e-9)


def test_noise_is_deterministic_per_seed():
    a = synthesize_grid([], SMALL, 0.1, 7).data
    b = synthesize_grid([], SMALL, 0.1, 7).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, synthesize_grid([], SMALL, 0.1, 8).data)
    assert np.std(a.real) == pytest.approx(0.1, rel=0.1)


def test_periodogram_zero_and_single_peak():
    assert np.all(periodogram(synthesize_grid([], SMALL)).amplitude == 0)
    p = periodogram(synthesize_grid([_on_grid(5, v=3)], SMALL))
    u, v = np.unravel_index(np.argmax(p.amplitude), p.amplitude.shape)
    assert (u, v) == (5, 3)
    assert p.amplitude[u, v] == pytest.approx((64 * 16) ** 2, rel=1e-12)


def test_periodogram_matches_double_sum_oracle():
    cfg = OfdmConfig(12, 4, 120e3, 1 / 120e3, 20, 6)
    rng = np.random.default_rng(0)
    d = rng.standard_normal((12, 4)) + 1j * rng.standard_normal((12, 4))
    p = periodogram(ReceptionGrid(d, cfg)).amplitude
    pp, qq = np.meshgrid(np.arange(12), np.arange(4), indexing="ij")
    for u, v in [(0, 0), (3, 5), (19, 2)]:
        s = np.sum(d * np.exp(-2j * np.pi * qq * v / 6) * np.exp(2j * np.pi * pp * u / 20))
        assert p[u, v] == pytest.approx(abs(s) ** 2, rel=1e-10)


def test_two_orthogonal_paths_give_equal_peaks():
    p = periodogram(synthesize_grid([_on_grid(4, v=1), _on_grid(20, v=9)], SMALL)).amplitude
    peak = (64 * 16) ** 2
    assert p[4, 1] == pytest.approx(peak, rel=1e-10)
    assert p[20, 9] == pytest.approx(peak, rel=1e-10)
    assert np.sum(p > 1e-6 * peak) == 2


def test_clutter_subtraction():
    tgt, clut = _on_grid(9), PathComponent(3.0, SMALL.delay_for_bin(2))
    full = synthesize_grid([tgt, clut], SMALL)
    bg = synthesize_grid([clut], SMALL)
    diff = clutter_subtract(full, bg)
    np.testing.assert_allclose(diff.data, synthesize_grid([tgt], SMALL).data, atol=1e-12)
    assert np.all(clutter_subtract(full, full).data == 0)
    np.testing.assert_array_equal(clutter_subtract(full, synthesize_grid([], SMALL)).data, full.data)
    with pytest.raises(ValueError):
        clutter_subtract(full, synthesize_grid([], PADDED))


def test_extract_range_examples():
    a = np.zeros((SMALL.fft_range, SMALL.fft_doppler))
    a[0, 2] = 1.0
    assert extract_range(Periodogram(a, SMALL)).range_m == 0.0
    big = OfdmConfig(3332, 16, 120e3, 1 / 120e3, 4096, 16)
    assert big.range_bin_m == pytest.approx(RANGE_BIN_4096, rel=1e-15)
    b = np.zeros((4096, 16))
    b[1, 0] = 1.0
    assert extract_range(Periodogram(b, big)).range_m == pytest.approx(RANGE_BIN_4096, rel=1e-15)
    with pytest.raises(NoPeakError):
        extract_range(Periodogram(np.ones((64, 16)), SMALL))


def test_extract_range_tie_breaks_toward_closest():
    a = np.zeros((64, 16))
    a[7, 1] = a[30, 4] = 5.0
    assert extract_range(Periodogram(a, SMALL)).peak_bin == (7, 1)


def test_exhaustive_on_grid_recovery():
    for u in range(SMALL.fft_range):
        est = extract_range(periodogram(synthesize_grid([_on_grid(u)], SMALL)))
        assert est.peak_bin[0] == u
        assert est.range_m == pytest.approx(u * C0 / (SMALL.subcarrier_spacing_hz * SMALL.fft_range), abs=1e-12)


def test_off_grid_error_within_one_bin_at_20db():
    rng = np.random.default_rng(3)
    noise = 10 ** (-20 / 20) / np.sqrt(2)
    for _ in range(50):
        u = rng.uniform(0, SMALL.fft_range - 1)
        est = extract_range(periodogram(synthesize_grid([PathComponent(1.0, SMALL.delay_for_bin(u))], SMALL,
                                                         noise, rng)))
        assert abs(est.range_m - u * SMALL.range_bin_m) <= SMALL.range_bin_m


def test_refinement_improves_off_grid_estimate():
    u = 17.3
    p = periodogram(synthesize_grid([PathComponent(1.0, PADDED.delay_for_bin(u))], PADDED))
    coarse, fine = extract_range(p), extract_range(p, refine=True)
    truth = u * PADDED.range_bin_m
    assert abs(fine.range_m - truth) < abs(coarse.range_m - truth)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_scaling_invariance(a, seed):
    g = synthesize_grid([_on_grid(11, v=2)], SMALL, 0.5, seed)
    p1, p2 = periodogram(g), periodogram(ReceptionGrid(a * g.data, SMALL))
    np.testing.assert_allclose(p2.amplitude, a**2 * p1.amplitude, rtol=1e-10, atol=1e-12 * p2.amplitude.max())
    assert extract_range(p1).peak_bin == extract_range(p2).peak_bin


@pytest.mark.parametrize("deg", [-60, -30, 0, 30, 60])
def test_music_single_source(deg):
    x = ula_snapshots(np.deg2rad(deg), 4, 0.5, 32, rng_seed=1)
    est = np.rad2deg(music_azimuth(x, 0.5, 1, 0.1))
    assert abs(est[0] - deg) <= 0.1


def test_music_matches_fine_scan_oracle():
    x = ula_snapshots(np.deg2rad(30), 4, 0.5, 32, rng_seed=2)
    theta, p = music_spectrum(x, 0.5, 1, 0.01)
    fine = np.rad2deg(theta[np.argmax(p)])
    assert abs(fine - 30) < 0.01
    assert abs(np.rad2deg(music_azimuth(x, 0.5, 1, 0.1)[0]) - fine) <= 0.1


def test_music_two_sources():
    x = ula_snapshots(np.deg2rad([-40, 40]), 4, 0.5, 64, rng_seed=3)
    est = np.rad2deg(music_azimuth(x, 0.5, 2, 0.1))
    np.testing.assert_allclose(est, [-40, 40], atol=0.1)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(-70, 70))
def test_music_global_phase_invariance(phi, deg):
    x = ula_snapshots(np.deg2rad(deg), 4, 0.5, 16, noise_std=0.05, rng_seed=4)
    np.testing.assert_array_equal(music_azimuth(x), music_azimuth(x * np.exp(1j * phi)))


def test_music_errors():
    x = ula_snapshots(0.2, 4, 0.5, 16, rng_seed=0)
    with pytest.raises(SubspaceError):
        music_azimuth(x[:, :3])
    with pytest.raises(SubspaceError):
        music_azimuth(x, n_sources=4)
    # one noiseless source: rank 1 covariance cannot host two signals
    with pytest.raises(SubspaceError):
        music_azimuth(x, n_sources=2)


def test_binary_round_trip():
    g = synthesize_grid([_on_grid(3)], PADDED, 0.1, 5)
    back = grid_from_bytes(grid_to_bytes(g))
    assert back.config == PADDED
    np.testing.assert_array_equal(back.data, g.data.astype(np.complex64))
    p = periodogram(g)
    buf = periodogram_to_bytes(p)
    assert buf[:8] == b"OFDMPGM1" and len(buf) == 8 + 16 + 16 + 8 * 256 * 32
    q = periodogram_from_bytes(buf)
    np.testing.assert_array_equal(q.amplitude, p.amplitude)
    with pytest.raises(ValueError):
        grid_from_bytes(buf)
    with pytest.raises(ValueError):
        periodogram_from_bytes(buf[:10])
