"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The heavy fixtures (trained generator, default sweep) are built once per
session.  Run with ``pytest tests/test_acceptance.py -v``; the verdicts are
printed in the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from beamcodex import beam_training as bt
from beamcodex import csi_feedback as cf
from beamcodex.bsc.mlp import MlpModel, cosine_loss
from beamcodex.channel import ArrayGeometry
from beamcodex.cli import EXIT_OK, main
from beamcodex.codebooks import OversamplingSpec, oversampled_dft
from beamcodex.harness import config as hc
from beamcodex.harness import experiments as ex

from acceptance_log import record
from oracles import crandn, quantize_oracle

pytestmark = pytest.mark.acceptance


# -- shared fixtures -------------------------------------------------------

@pytest.fixture(scope="session")
def default_cfg():
    return hc.load_config()


@pytest.fixture(scope="session")
def trained(default_cfg):
    site = ex.Site(default_cfg, default_cfg.ssb_scenario)
    est, info = ex.run_training(default_cfg, site)
    return est, info, site


@pytest.fixture(scope="session")
def default_sweep(default_cfg):
    start = time.perf_counter()
    _, summary = ex.run_csirs_sweep(default_cfg)
    elapsed = time.perf_counter() - start
    table = {(r["axis"], r["value"], r["scheme"]): r["mean_eff_sse"] for r in summary}
    return table, elapsed


# -- 1. quantizer vs exhaustive enumeration ----------------------------------

def test_c01_quantizer_oracle():
    rng = np.random.default_rng(20240601)
    shapes = [(nx, ny) for nx in range(1, 9) for ny in range(1, 9) if nx * ny <= 8]
    n, mismatches = 1000, 0
    start = time.perf_counter()
    for _ in range(n):
        nx, ny = shapes[rng.integers(len(shapes))]
        oh, ov = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        l = int(rng.integers(1, min(3, nx * ny) + 1))
        n_r = int(rng.integers(1, 3))
        fb = oversampled_dft(ArrayGeometry(nx, ny), OversamplingSpec(oh, ov))
        x = crandn(rng, n_r, nx * ny)
        comp = cf.quantize_type2(x, fb, l)
        q0, q, a = quantize_oracle(x, nx, ny, oh, ov, l)
        if comp.q0 != q0 or not np.array_equal(comp.q, q) or not np.allclose(comp.a, a, rtol=0, atol=1e-12):
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    record(1, ok, f"{mismatches} mismatches in {n} instances, {elapsed:.1f} s")
    assert ok


# -- 2. noiseless reconstruction exactness ------------------------------------

def span_channel(rng, fb, l, n_r):
    """Rows in the span of ``l`` columns of one orthogonal block.

    Each row has one unit coefficient and ``l - 1`` coefficients of total
    magnitude at most 0.05, so the strongest codeword of every row lies in the
    generating block whatever the oversampling.
    """
    qx, qy = int(rng.integers(fb.spec.o_h)), int(rng.integers(fb.spec.o_v))
    cols = fb.block_columns(qx, qy)
    pick = rng.choice(len(cols), size=l, replace=False)
    basis = fb.words[:, cols[pick]].conj().T / fb.n_ports          # rows b^H / N_T
    rows = []
    for _ in range(n_r):
        coef = np.empty(l, dtype=complex)
        coef[0] = np.exp(2j * np.pi * rng.random())
        if l > 1:
            mag = rng.random(l - 1)
            coef[1:] = 0.05 * mag / mag.sum() * np.exp(2j * np.pi * rng.random(l - 1))
        rows.append(rng.uniform(0.5, 2.0) * coef @ basis)
    return np.array(rows), (qx, qy)


def test_c02_reconstruction_exact():
    rng = np.random.default_rng(7)
    fb = oversampled_dft(ArrayGeometry(4, 8), OversamplingSpec(4, 4))
    worst_rel, worst_dir, worst_fast, passed = 0.0, 0.0, 0.0, 0
    for trial in range(100):
        l = [1, 2, 4, 8, 16, 32][trial % 6]
        h, q0 = span_channel(rng, fb, l, 2)
        f = fb.words[:, fb.block_columns(*q0)]                     # CSI-RS: the whole block
        g = h @ f                                                  # noiseless beamformed estimate
        comp = cf.quantize_type2(g, fb, l, csirs=f)
        rows = cf.reconstruct_component(comp, fb, use_reference=True)
        h_hat = cf.reconstruct_channel(rows @ f, f)
        rel = np.linalg.norm(h_hat - h) / np.linalg.norm(h)
        # without the diagnostic reference the rows are exact up to one scale each
        rel_rows = cf.reconstruct_component(comp, fb)
        direction = max(1 - abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
                        for a, b in zip(rel_rows, h))
        fast = np.max(np.abs(cf.reconstruct_channel(g, f, fast=True) - cf.reconstruct_channel(g, f, fast=False)))
        worst_rel, worst_dir, worst_fast = max(worst_rel, rel), max(worst_dir, direction), max(worst_fast, fast)
        passed += comp.q0 == q0 and rel < 1e-9 and direction < 1e-9 and fast < 1e-9
    ok = passed == 100
    record(2, ok, f"{passed}/100 exact; max rel err {worst_rel:.1e}, max direction err {worst_dir:.1e}, "
                  f"fast vs pinv {worst_fast:.1e}")
    assert ok


# -- 3. LS estimation MSE law --------------------------------------------------

def test_c03_ls_mse_law():
    rng = np.random.default_rng(3)
    n_t, trials = 4, 10_000
    lines, ok = [], True
    for snr, ratio in itertools.product([0.1, 1.0, 10.0], [1, 4]):
        n_p = n_t * ratio
        s = np.fft.fft(np.eye(n_p))[:n_t] / math.sqrt(n_t)        # unit-norm pilot columns
        sigma2 = 1.0 / snr
        h = crandn(rng, trials, n_t)
        y = h @ s + math.sqrt(sigma2) * crandn(rng, trials, n_p)
        est = bt.estimate_ls(y, s, noise_power=sigma2)
        emp = float(np.mean(np.abs(est.estimate - h) ** 2))
        law = n_t / (n_p * snr)
        err = abs(emp - law) / law
        ok &= err < 0.10 and abs(est.mse - law) < 1e-12 * law
        lines.append(f"snr={snr:g},N_p/N_T={ratio}:{100 * err:.1f}%")
    record(3, ok, "relative error " + " ".join(lines))
    assert ok


# -- 4. gradient check on a reduced default network --------------------------

def test_c04_gradient_check():
    rng = np.random.default_rng(4)
    hidden = (9, 113, 17, 15, 5)                                  # default widths / 16
    model = MlpModel((4, 4, 4), (2, 2, 4), hidden=hidden, dropout=(0,) * 5, seed=4, dtype=np.float64)
    x = rng.standard_normal((3, 4, 4, 4))
    y = rng.standard_normal((3, 2, 2, 4))
    pred, cache = model.forward(x, return_cache=True)
    _, g = cosine_loss(pred, y, return_grad=True)
    grads = model.backward(g, cache)
    eps, worst = 1e-6, 0.0
    for p, gp in zip(model.params(), grads):
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            up = cosine_loss(model.forward(x), y)
            p[i] = old - eps
            down = cosine_loss(model.forward(x), y)
            p[i] = old
            num[i] = (up - down) / (2 * eps)
        scale = max(np.max(np.abs(num)), np.max(np.abs(gp)), 1e-12)
        worst = max(worst, float(np.max(np.abs(num - gp)) / scale))
    ok = worst < 1e-4
    record(4, ok, f"max per-tensor relative error {worst:.2e} over {len(grads)} tensors")
    assert ok


# -- 5. ten-sample overfit -----------------------------------------------------

OVERFIT = ["training.train_samples=10", "training.val_samples=1", "training.learning_rate=0.002",
           "training.batch_size=10", "training.max_epochs=400", "training.patience=400"]


def test_c05_overfit():
    cfg = hc.load_config(None, OVERFIT)
    site = ex.Site(cfg, cfg.ssb_scenario)
    x, y, _, _ = ex.training_sets(cfg, site)
    a = ex.make_estimator(cfg).fit(x, y, x, y)
    b = ex.make_estimator(cfg).fit(x, y, x, y)
    loss = a.validation_loss(x, y)
    same = np.array_equal(a.predict(x), b.predict(x)) and a.history_.to_csv() == b.history_.to_csv()
    ok = loss < 0.05 and same and a.n_steps_ <= cfg.training.max_epochs
    record(5, ok, f"loss {loss:.4f} after {a.n_steps_} steps, deterministic={same}")
    assert ok


# -- 6. codebook quality -------------------------------------------------------

def test_c06_codebook_quality(default_cfg, trained):
    est, info, site = trained
    s = ex.evaluate_ssb(default_cfg, est, site, n_drops=2000)
    mean = {k: float(np.mean(v)) for k, v in s.items()}
    gain = mean["BSC"] - mean["DFT"]
    ok = mean["no-BF"] < mean["DFT"] < mean["BSC"] <= mean["RSV"] and gain >= 1.0
    record(6, ok, "mean RSRP dBm " + ", ".join(f"{k} {v:.2f}" for k, v in mean.items())
           + f"; BSC-DFT {gain:+.2f} dB ({info['steps']} training steps)")
    assert ok


# -- 7-9. feedback sweep trends --------------------------------------------------

def test_c07_feedback_resolution(default_sweep):
    table, elapsed = default_sweep
    v = [table[("l_csi", l, "MU-MIMO")] for l in (1, 4, 32)]
    ratio = v[2] / v[0]
    ok = v[0] < v[1] < v[2] and ratio >= 1.5 and elapsed < 1800
    record(7, ok, f"Eff-SSE L=1/4/32: {v[0]:.2f}/{v[1]:.2f}/{v[2]:.2f}, ratio {ratio:.2f}, "
                  f"sweep {elapsed / 60:.1f} min")
    assert ok


def test_c08_codebook_saturation(default_sweep):
    table, _ = default_sweep
    e = {p: table[("p_csi", p, "MU-MIMO")] for p in (2, 8, 16)}
    low, high = e[8] - e[2], e[16] - e[8]
    ok = high < low
    record(8, ok, f"gain P 2->8 {low:+.2f}, 8->16 {high:+.2f}")
    assert ok


def test_c09_overhead_effects(default_cfg, default_sweep):
    table, _ = default_sweep
    base = default_cfg.sweep.base_nrb
    nrbs = sorted(v for v in default_cfg.sweep.nrb)
    e = {n: table[("nrb", n, "MU-MIMO")] for n in nrbs}
    above = [n for n in nrbs if n > base]
    decreases = bool(above) and all(e[n] < e[base] for n in above)
    b1, b2 = table[("bwp", 1, "MU-MIMO")], table[("bwp", 2, "MU-MIMO")]
    change = abs(b2 - b1) / b1
    ok = decreases and change < 0.10
    record(9, ok, "NRB " + " ".join(f"{n}:{e[n]:.2f}" for n in nrbs)
           + f"; BWP 1->2 change {100 * change:.1f}%")
    assert ok


# -- 10. site transfer -----------------------------------------------------------

def test_c10_site_transfer(default_cfg, trained):
    est, info, _ = trained
    _, summary, tuned = ex.run_site_transfer(default_cfg, est)
    within = summary["fine_tune_steps"] <= 0.01 * summary["original_steps"]
    improved = summary["fine_tuned_p10_db"] > summary["agnostic_p10_db"]
    ok = within and improved and summary["fine_tune_steps"] > 0
    record(10, ok, f"p10 (BSC-RSV) {summary['agnostic_p10_db']:.2f} -> {summary['fine_tuned_p10_db']:.2f} dB "
                   f"with {summary['fine_tune_steps']}/{summary['original_steps']} steps")
    assert ok


# -- 11. byte-identical reruns ----------------------------------------------------

SMALL = ["--set", "ssb_scenario.n_users=60", "--set", "training.train_samples=8",
         "--set", "training.val_samples=2", "--set", "training.hidden=[16, 8]",
         "--set", "training.dropout=[0.2, 0.0]", "--set", "training.max_epochs=2",
         "--set", "training.batch_size=4", "--set", "site_transfer.finetune_samples=5",
         "--set", "site_transfer.test_drops=3", "--set", "site_transfer.budget_fraction=0.5",
         "--set", "sweep.nrb=[24, 48]"]


def run_all(out):
    model = str(out / "model.bscm")
    steps = [["train"], ["eval-ssb", "--model", model, "--drops", "3"], ["sweep-csirs", "--drops", "2"],
             ["site-transfer", "--model", model]]
    for argv in steps:
        assert main(argv + ["--output-dir", str(out)] + SMALL) == EXIT_OK


def test_c11_determinism(tmp_path):
    run_all(tmp_path / "a")
    run_all(tmp_path / "b")
    csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    differ = [n for n in csvs if (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()]
    ok = len(csvs) >= 7 and not differ
    record(11, ok, f"{len(csvs)} CSV files compared, {len(differ)} differ {differ if differ else ''}".rstrip())
    assert ok
