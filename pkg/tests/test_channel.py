import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamcodex.channel import (ArrayGeometry, ChannelTensor, PathSet, ScenarioConfig, UserPool,
                               array_response, generate_channels, synthesize_channel)
from beamcodex.datafile import (ConfigMismatchError, DatasetError, load_codebook, load_dataset,
                                save_codebook, save_dataset)
from beamcodex.codebooks import oversampled_dft, OversamplingSpec


def small_scenario(**kw):
    base = dict(n_users=3, n_rx=2, n_subcarriers=16, n_timeslots=4, cluster_count=3,
                paths_per_cluster=2, rng_seed=7)
    base.update(kw)
    return ScenarioConfig(**base)


def single_path(gain=1.0, delay=0.0, doppler=0.0, tx_u=0.0, tx_v=0.0, rx_cos=0.0):
    return PathSet(gains=np.array([gain], dtype=complex), delays=np.array([delay]),
                   dopplers=np.array([doppler]), tx_u=np.array([tx_u]), tx_v=np.array([tx_v]),
                   rx_cos=np.array([rx_cos]))


class TestArrayResponse:
    def test_single_element(self):
        a = array_response(ArrayGeometry(1, 1), 0.3, 1.1)
        np.testing.assert_allclose(a, [1.0])

    def test_broadside_pair(self):
        a = array_response(ArrayGeometry(2, 1), math.pi / 2, math.pi / 2)
        np.testing.assert_allclose(a, np.array([1, 1]) / math.sqrt(2), atol=1e-15)

    def test_quarter_wave_progression(self):
        a = array_response(ArrayGeometry(4, 1), math.acos(0.5), math.pi / 2)
        expected = 0.5 * np.exp(1j * np.pi * np.arange(4) / 2)
        np.testing.assert_allclose(a, expected, atol=1e-15)

    @given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi),
           st.integers(1, 6), st.integers(1, 6))
    def test_unit_norm(self, az, el, nx, ny):
        a = array_response(ArrayGeometry(nx, ny), az, el)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-12

    def test_planar_is_kronecker(self):
        g = ArrayGeometry(3, 2)
        a = array_response(g, 0.7, 1.2)
        ax = array_response(ArrayGeometry(3, 1), 0.7, math.pi / 2)
        ay = array_response(ArrayGeometry(2, 1), 1.2, math.pi / 2)
        np.testing.assert_allclose(a, np.kron(ax, ay), atol=1e-15)

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            ArrayGeometry(0, 1)


class TestSynthesis:
    def test_flat_channel(self):
        g = ArrayGeometry(1, 1)
        h = synthesize_channel(single_path(), g, 1, np.arange(8) * 1e5, np.arange(5) * 1e-3)
        np.testing.assert_allclose(h, np.ones((5, 8, 1, 1)), atol=1e-15)

    def test_two_path_ripple(self):
        # |H(f)|^2 of two unit taps is 2 + 2 cos(2 pi (tau2 - tau1) f)
        g = ArrayGeometry(1, 1)
        k, df = 32, 120e3
        tau = 1.0 / (2 * df * k) * 5
        paths = PathSet(gains=np.array([1.0, 1.0], dtype=complex), delays=np.array([0.0, tau]),
                        dopplers=np.zeros(2), tx_u=np.zeros(2), tx_v=np.zeros(2), rx_cos=np.zeros(2))
        freqs = np.arange(k) * df
        h = synthesize_channel(paths, g, 1, freqs, [0.0])[0, :, 0, 0]
        expected = np.array([2 + 2 * math.cos(2 * math.pi * tau * f) for f in freqs])
        np.testing.assert_allclose(np.abs(h) ** 2, expected, atol=1e-12)

    def test_doppler_phase_drift(self):
        g = ArrayGeometry(2, 2)
        nu, dt = 137.0, 0.5e-3
        h = synthesize_channel(single_path(doppler=nu, tx_u=0.3), g, 1, [0.0], np.arange(6) * dt)
        ratio = h[1:, 0, 0, 0] / h[:-1, 0, 0, 0]
        np.testing.assert_allclose(np.angle(ratio), 2 * math.pi * nu * dt, atol=1e-9)


class TestGenerate:
    def test_shape_and_determinism(self):
        cfg = small_scenario()
        g = ArrayGeometry(2, 2)
        a = generate_channels(cfg, g)
        b = generate_channels(cfg, g)
        assert a.shape == (3, 4, 16, 2, 4)
        assert np.array_equal(a.h, b.h)
        assert np.all(np.isfinite(a.h))

    def test_seed_changes_output(self):
        g = ArrayGeometry(2, 2)
        a = generate_channels(small_scenario(rng_seed=1), g)
        b = generate_channels(small_scenario(rng_seed=2), g)
        assert not np.allclose(a.h, b.h)

    def test_delay_sparsity(self):
        cfg = small_scenario(n_subcarriers=64)
        h = generate_channels(cfg, ArrayGeometry(2, 2)).h
        taps = np.fft.ifft(h, axis=2)
        energy = np.sum(np.abs(taps) ** 2, axis=(1, 3, 4))        # [U, K]
        n_paths = cfg.cluster_count * cfg.paths_per_cluster
        for u in range(cfg.n_users):
            top = np.sort(energy[u])[::-1][:n_paths]
            assert top.sum() >= 0.99 * energy[u].sum()

    def test_mean_power_matches_pathloss(self):
        cfg = small_scenario(n_users=1)
        g = ArrayGeometry(2, 2)
        pool = UserPool(cfg, g)
        p = pool.paths(0)
        h = pool.channel([0])
        expected = np.sum(np.abs(p.gains) ** 2) / (cfg.n_rx * g.n_ports)
        assert expected == pytest.approx(p.meta["per_entry_power"], rel=1e-9)
        assert np.mean(np.abs(h) ** 2) == pytest.approx(expected, rel=0.8)

    def test_pool_matches_full_tensor(self):
        cfg = small_scenario()
        g = ArrayGeometry(2, 2)
        full = generate_channels(cfg, g).h
        part = UserPool(cfg, g).channel([2, 0], slots=[1, 3], subcarriers=[0, 5])
        np.testing.assert_array_equal(part, full[[2, 0]][:, [1, 3]][:, :, [0, 5]])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            small_scenario(n_subcarriers=0)
        with pytest.raises(ValueError):
            small_scenario(min_distance=500.0, cell_radius=100.0)
        with pytest.raises(TypeError):
            generate_channels({"n_users": 2}, ArrayGeometry(2, 2))

    def test_tensor_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            ChannelTensor(np.zeros((2, 3)))


class TestDatafile:
    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.integers(1, 3), min_size=5, max_size=5), st.integers(0, 2 ** 31))
    def test_round_trip(self, tmp_path_factory, shape, seed):
        rng = np.random.default_rng(seed)
        h = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        path = tmp_path_factory.mktemp("ds") / "h.bsim"
        save_dataset(ChannelTensor(h, seed=seed), path)
        back = load_dataset(path)
        assert back.h.tobytes() == h.astype(np.complex128).tobytes()
        assert back.seed == seed

    def test_header_and_config(self, tmp_path):
        cfg = small_scenario()
        t = generate_channels(cfg, ArrayGeometry(2, 2))
        path = tmp_path / "c.bsim"
        save_dataset(t, path)
        raw = path.read_bytes()
        assert raw[:5] == b"BSIM1"
        back = load_dataset(path, config=cfg, expected_shape=t.shape)
        assert back.config == cfg
        np.testing.assert_array_equal(back.h, t.h)

    def test_truncated(self, tmp_path):
        path = tmp_path / "c.bsim"
        save_dataset(ChannelTensor(np.ones((1, 1, 2, 1, 2))), path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DatasetError, match="corrupt"):
            load_dataset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bsim"
        path.write_bytes(b"NOTME" + b"\0" * 20)
        with pytest.raises(DatasetError):
            load_dataset(path)

    def test_config_hash_mismatch(self, tmp_path):
        cfg = small_scenario()
        path = tmp_path / "c.bsim"
        save_dataset(generate_channels(cfg, ArrayGeometry(1, 2)), path)
        with pytest.raises(ConfigMismatchError):
            load_dataset(path, config=small_scenario(rng_seed=99))

    def test_shape_mismatch(self, tmp_path):
        path = tmp_path / "c.bsim"
        save_dataset(ChannelTensor(np.ones((1, 1, 2, 1, 2))), path)
        with pytest.raises(DatasetError):
            load_dataset(path, expected_shape=(1, 1, 2, 1, 3))

    def test_codebook_round_trip(self, tmp_path):
        fb = oversampled_dft(ArrayGeometry(2, 2), OversamplingSpec(2, 1))
        path = tmp_path / "fb.bsim"
        save_codebook(fb, path)
        back = load_codebook(path)
        assert back.kind == "FB"
        assert back.spec == fb.spec
        np.testing.assert_array_equal(back.words, fb.words)
        with pytest.raises(DatasetError):
            load_dataset(path)
