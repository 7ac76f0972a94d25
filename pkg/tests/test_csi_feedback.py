import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamcodex import csi_feedback as cf
from beamcodex.channel import ArrayGeometry
from beamcodex.codebooks import Codebook, OversamplingSpec, orthogonal_subset, oversampled_dft

from oracles import crandn, quantize_oracle, reconstruct_oracle


def fb_of(nx, ny, oh=1, ov=1):
    return oversampled_dft(ArrayGeometry(nx, ny), OversamplingSpec(oh, ov))


class TestQuantize:
    def test_single_codeword(self):
        fb = fb_of(2, 4, 2, 2)
        block = orthogonal_subset(fb, (0, 0))
        comp = cf.quantize_type2(3.0 * block[:, 5].conj()[None], fb, 1)
        assert comp.q0 == (0, 0)
        assert comp.q.tolist() == [[5]]
        np.testing.assert_allclose(comp.a, [[1.0]])

    def test_complete_basis_reproduces_projection(self, rng):
        fb = fb_of(2, 2, 2, 2)
        x = crandn(rng, 2, 4)
        comp = cf.quantize_type2(x, fb, 4)
        rows = cf.reconstruct_component(comp, fb, use_reference=True)
        np.testing.assert_allclose(rows, x, atol=1e-12)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        nx, ny = [(1, 2), (2, 2), (2, 4), (4, 2), (1, 8)][seed % 5]
        oh, ov = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        fb = fb_of(nx, ny, oh, ov)
        l = int(rng.integers(1, min(3, nx * ny) + 1))
        x = crandn(rng, int(rng.integers(1, 3)), nx * ny)
        comp = cf.quantize_type2(x, fb, l)
        q0, q, a = quantize_oracle(x, nx, ny, oh, ov, l)
        assert comp.q0 == q0
        np.testing.assert_array_equal(comp.q, q)
        np.testing.assert_allclose(comp.a, a, atol=1e-12)

    def test_invariants(self, rng):
        fb = fb_of(4, 2, 2, 2)
        comp = cf.quantize_type2(crandn(rng, 2, 8), fb, 3)
        for r in range(2):
            assert np.sum(np.isclose(np.abs(comp.a[r]), 1.0)) >= 1
            assert comp.a[r, 0] == pytest.approx(1.0)
            assert np.all(np.abs(comp.a[r]) <= 1.0 + 1e-12)
            assert len(set(comp.q[r].tolist())) == 3
            assert np.all(comp.q[r] < 8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_captured_energy_monotone(self, seed):
        rng = np.random.default_rng(seed)
        fb = fb_of(2, 4, 2, 2)
        x = crandn(rng, 2, 8)
        caps = []
        for l in range(1, 9):
            comp = cf.quantize_type2(x, fb, l)
            caps.append(np.sum(np.abs(comp.a * comp.ref[:, None]) ** 2))
        assert all(b >= a - 1e-9 for a, b in zip(caps, caps[1:]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-math.pi, math.pi))
    def test_rotation_covariance(self, seed, phi):
        rng = np.random.default_rng(seed)
        fb = fb_of(2, 2, 2, 1)
        x = crandn(rng, 2, 4)
        a = cf.quantize_type2(x, fb, 2)
        b = cf.quantize_type2(x * np.exp(1j * phi), fb, 2)
        assert a.q0 == b.q0
        np.testing.assert_array_equal(a.q, b.q)
        np.testing.assert_allclose(a.a, b.a, atol=1e-9)
        np.testing.assert_allclose(b.ref, a.ref * np.exp(1j * phi), atol=1e-9)

    def test_errors(self):
        fb = fb_of(2, 2)
        with pytest.raises(ValueError):
            cf.quantize_type2(np.zeros((1, 4)), fb, 1)
        with pytest.raises(ValueError):
            cf.quantize_type2(np.ones((1, 4)), fb, 5)
        with pytest.raises(ValueError):
            cf.quantize_type2(np.ones((1, 3)), fb, 1)

    def test_beamformed_input(self, rng):
        fb = fb_of(2, 2, 2, 2)
        cs = Codebook(orthogonal_subset(fb, (1, 0)), "CSIRS")
        x = crandn(rng, 2, 4)
        direct = cf.quantize_type2(x, fb, 2)
        via = cf.quantize_type2(x @ cs.words, fb, 2, csirs=cs)
        assert direct.q0 == via.q0
        np.testing.assert_allclose(direct.a, via.a, atol=1e-12)


class TestBits:
    def test_combination_count(self):
        assert math.comb(32, 4) == 35960
        assert cf.combination_bits(32, 4) == 16

    def report(self, fb, l, n_bwp=1, p_csi=8):
        comp = cf.PmiComponent(q0=(0, 0), q=np.tile(np.arange(l), (2, 1)), a=np.ones((2, l)),
                               ref=np.ones(2))
        return cf.CsiReport(cri=0, rank=2, snr=1.0, components=[comp] * n_bwp, p_csi=p_csi)

    def test_breakdown(self):
        fb = fb_of(4, 8, 4, 4)
        bits = cf.count_bits(self.report(fb, 4), fb)
        assert bits.breakdown == {"combination": 32, "oversampling": 4, "amplitude": 24,
                                  "phase": 18, "cri": 3, "rank": 1, "cqi": 4}
        assert bits.total_bits == 86

    def test_single_beam_has_no_coefficients(self):
        fb = fb_of(4, 8, 4, 4)
        b = cf.count_bits(self.report(fb, 1), fb).breakdown
        assert b["amplitude"] == 0 and b["phase"] == 0

    def test_bwp_linearity(self):
        fb = fb_of(4, 8, 4, 4)
        one = cf.count_bits(self.report(fb, 4), fb).breakdown
        two = cf.count_bits(self.report(fb, 4, n_bwp=2), fb).breakdown
        for key in ("combination", "oversampling", "amplitude", "phase"):
            assert two[key] == 2 * one[key]
        for key in ("cri", "rank", "cqi"):
            assert two[key] == one[key]

    def test_flags(self):
        fb = fb_of(4, 8, 4, 4)
        rep = self.report(fb, 4)
        assert cf.count_bits(rep, fb, include_coefficients=False).breakdown["amplitude"] == 0
        sub = cf.count_bits(rep, fb, coefficient_subbands=3).breakdown
        assert sub["amplitude"] == 72 and sub["combination"] == 32

    def test_coefficient_bits_grow_with_l(self):
        fb = fb_of(4, 8, 4, 4)
        coef = [sum(cf.count_bits(self.report(fb, l), fb).breakdown[k] for k in ("amplitude", "phase"))
                for l in range(1, 33)]
        assert coef == [2 * 7 * (l - 1) for l in range(1, 33)]


class TestReconstruct:
    @pytest.mark.parametrize("seed", range(10))
    def test_pmi_matches_loop(self, seed):
        rng = np.random.default_rng(seed)
        fb = fb_of(2, 4, 2, 3)
        comp = cf.quantize_type2(crandn(rng, 2, 8), fb, 3)
        rows = cf.reconstruct_pmi(cf.CsiReport(0, 1, 1.0, [comp]), fb)
        np.testing.assert_allclose(rows, reconstruct_oracle(comp.q0, comp.q, comp.a, 2, 4, 2, 3), atol=1e-12)

    def test_single_beam_proportional(self):
        fb = fb_of(2, 4, 2, 2)
        b = orthogonal_subset(fb, (1, 1))[:, 3]
        comp = cf.quantize_type2(2.5 * b.conj()[None], fb, 1)
        rows = cf.reconstruct_component(comp, fb)
        np.testing.assert_allclose(rows[0] * 8, b.conj(), atol=1e-12)

    def test_full_block_exact(self, rng):
        fb = fb_of(2, 2, 2, 2)
        f = orthogonal_subset(fb, (1, 1))
        h = crandn(rng, 2, 4)
        np.testing.assert_allclose(cf.reconstruct_channel(h @ f, f), h, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_fast_path_matches_pinv(self, seed):
        rng = np.random.default_rng(seed)
        fb = fb_of(4, 2, 3, 2)
        block = fb.block_columns(int(rng.integers(3)), int(rng.integers(2)))
        cols = rng.choice(block, size=int(rng.integers(1, 9)), replace=False)
        f = fb.words[:, cols]
        g = crandn(rng, 2, len(cols))
        fast = cf.reconstruct_channel(g, f, fast=True)
        slow = cf.reconstruct_channel(g, f, fast=False)
        assert np.max(np.abs(fast - slow)) < 1e-9

    def test_rank_deficient(self):
        fb = fb_of(2, 2)
        f = fb.words[:, [0, 1, 1]]
        with pytest.raises(np.linalg.LinAlgError, match=r"\[2\]"):
            cf.reconstruct_channel(np.ones((1, 3)), f)
        out = cf.reconstruct_channel(np.ones((1, 3)), f, strict=False)
        assert out.shape == (1, 4)

    def test_fast_requires_orthogonal(self):
        fb = fb_of(2, 1, 2, 1)
        f = fb.words[:, [0, 2]]                                   # different blocks
        assert not cf.is_orthogonal_block(f)
        with pytest.raises(ValueError):
            cf.reconstruct_channel(np.ones((1, 2)), f, fast=True)
        np.testing.assert_allclose(cf.reconstruct_channel(np.ones((1, 2)), f) @ f, np.ones((1, 2)),
                                   atol=1e-12)

    def test_aggregate(self, rng):
        e = [crandn(rng, 2, 4) for _ in range(3)]
        out = cf.aggregate_users(e)
        assert out.shape == (3, 2, 4)
        np.testing.assert_array_equal(cf.aggregate_users([e[2], e[0], e[1]])[0], out[2])
        np.testing.assert_array_equal(cf.aggregate_users(e[:1])[0], e[0])
        with pytest.raises(ValueError):
            cf.aggregate_users([e[0], np.ones((1, 4))])
        with pytest.raises(ValueError):
            cf.aggregate_users([])


class TestRankAndScale:
    def test_rank_one_channel(self, rng):
        x = np.outer(crandn(rng, 2), crandn(rng, 8))
        assert cf.select_rank(x[None], x[None], 1e-3, 1) == 1

    def test_two_strong_layers(self, rng):
        q, _ = np.linalg.qr(crandn(rng, 8, 2))
        x = np.eye(2) @ q.T * 10
        assert cf.select_rank(x, x, 1e-4, 1) == 2

    def test_bad_reconstruction_prefers_rank_one(self, rng):
        q, _ = np.linalg.qr(crandn(rng, 8, 8))
        x = np.diag([10.0, 9.0]) @ q[:, :2].T
        wrong = np.diag([10.0, 9.0]) @ q[:, [0, 5]].T       # second layer points elsewhere
        assert cf.select_rank(x, wrong, 1e-2, 1) == 1

    def test_scale_to_snr(self, rng):
        est = crandn(rng, 2, 2, 8)
        f = fb_of(2, 4).words[:, :3]
        out = cf.scale_to_snr(est, f, snr=50.0, noise_power=2e-3, n_subcarriers=16)
        power = np.sum(np.abs(out @ f) ** 2, axis=-2).mean(axis=0).max()
        assert power == pytest.approx(50.0 * 16 * 8 * 2e-3)
        assert np.allclose(out / est, (out / est).flat[0])

    def test_report_json(self, rng):
        fb = fb_of(2, 2, 2, 2)
        cs = Codebook(orthogonal_subset(fb, (0, 1)), "CSIRS")
        rep = cf.make_report(crandn(rng, 2, 2, 4), cs, fb, 2, cri=1, snr=3.0)
        d = json.loads(rep.to_json())
        assert d["cri"] == 1 and len(d["per_bwp"]) == 2 and d["p_csi"] == 4
        assert rep.rank == 2
