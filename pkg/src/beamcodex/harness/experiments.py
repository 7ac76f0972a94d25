"""End-to-end experiments: codebook learning, SSB RSRP comparison, CSI-RS sweeps, site transfer.

Randomness is split hierarchically from the root seed as
``SeedSequence([seed, drop, stage])`` so that a drop sees the same users,
channels and noise whatever sweep point is being evaluated.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .. import beam_training as bt
from .. import csi_feedback as cf
from .. import downlink as dl
from ..bsc.beamspace import build_input, build_target
from ..bsc.codex import BeamspaceCodex, infer_codebook
from ..channel import ArrayGeometry, UserPool
from ..codebooks import (Codebook, OversamplingSpec, default_ssb_band, oversampled_dft,
                         random_dft_ssb, rsv_from_band, unbeamformed_codebook)

logger = logging.getLogger(__name__)

STAGE_USERS, STAGE_SSB, STAGE_CSIRS, STAGE_PRIOR, STAGE_SLOT = 0, 1, 2, 3, 4
SSB_KINDS = ("no-BF", "DFT", "BSC", "RSV")


def drop_rng(seed, drop, stage):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(drop), int(stage)]))


def drop_seed(seed, drop, stage):
    return int(np.random.SeedSequence([int(seed), int(drop), int(stage)]).generate_state(1)[0])


def dbm(watts):
    return 10.0 * np.log10(np.maximum(watts, 1e-300)) + 30.0


class Site:
    """Geometry, feedback codebook and user population of one simulated site."""

    def __init__(self, cfg, scenario):
        self.cfg = cfg
        self.scenario = scenario
        self.geometry = ArrayGeometry(cfg.n_x, cfg.n_y)
        self.fb = oversampled_dft(self.geometry, OversamplingSpec(cfg.o_h, cfg.o_v))
        self.pool = UserPool(scenario, self.geometry)
        self.band = default_ssb_band(scenario.n_subcarriers)

    def band_channel(self, users, slot):
        """``[U, K_ssb, N_R, N_T]`` on the SSB band at one slot."""
        return self.pool.channel(users, slots=[slot], subcarriers=self.band)[:, 0]


# --------------------------------------------------------------------------
# SSB codebooks and the learned generator


def site_tuned_dft(site, l_max, n_users):
    """``l_max`` FB columns with the highest mean received power over calibration users."""
    users = np.arange(min(n_users, site.scenario.n_users))
    h = site.band_channel(users, 0)
    power = np.einsum("ukrn,nc->ukrc", h, site.fb.words)
    score = np.mean(np.abs(power) ** 2, axis=(0, 1, 2))
    cols = np.argsort(-score, kind="stable")[:l_max]
    return Codebook(site.fb.words[:, cols], "SSB")


@dataclass
class SsbDrop:
    users: np.ndarray
    slot: int
    h_band: np.ndarray
    prior: Codebook
    feedback: bt.SsbFeedback
    rsv: Codebook


def ssb_drop(site, seed, drop, user_ids, user_range, include_prob):
    """Draw active users, a slot and a random DFT prior; run the SSB sweep and build the RSV target."""
    cfg = site.cfg
    rng = drop_rng(seed, drop, STAGE_USERS)
    n_active = int(rng.integers(user_range[0], user_range[1] + 1))
    users = np.sort(rng.choice(user_ids, size=min(n_active, len(user_ids)), replace=False))
    slot = int(drop_rng(seed, drop, STAGE_SLOT).integers(site.scenario.n_timeslots))
    h_band = site.band_channel(users, slot)
    prior = random_dft_ssb(site.fb, cfg.l_max, drop_seed(seed, drop, STAGE_PRIOR))
    fb = bt.ssb_round(h_band, prior, site.scenario.noise_power, ssb_band=np.arange(len(site.band)),
                      include_prob=include_prob, seed=drop_seed(seed, drop, STAGE_SSB),
                      n_subcarriers=site.scenario.n_subcarriers)
    rsv, _ = rsv_from_band(h_band, cfg.l_max)
    return SsbDrop(users=users, slot=slot, h_band=h_band, prior=prior, feedback=fb, rsv=rsv)


def measure_codebook(site, h_band, codebook, seed):
    """Best-beam RSRP (W) of every user in the drop, noise included."""
    n_sc = site.scenario.n_subcarriers
    rngs = [np.random.default_rng(np.random.SeedSequence([seed, 9, u])) for u in range(len(h_band))]
    beam = bt.measure_rsrp(h_band, codebook, site.scenario.noise_power, n_sc, rngs)
    return beam.max(axis=1)


def split_users(scenario, fraction):
    n_train = int(round(fraction * scenario.n_users))
    ids = np.arange(scenario.n_users)
    return ids[:n_train], ids[n_train:]


def build_dataset(site, seed, n_samples, user_ids, user_range, include_prob, first_drop=0):
    """Stacked network inputs and RSV targets for ``n_samples`` drops."""
    t = site.cfg.training
    xs, ys = [], []
    for d in range(first_drop, first_drop + n_samples):
        sd = ssb_drop(site, seed, d, user_ids, user_range, include_prob)
        xs.append(build_input(sd.prior, sd.feedback, site.geometry, t.n_x0, t.n_y0))
        ys.append(build_target(sd.rsv, site.geometry, t.n_x0, t.n_y0))
    return np.asarray(xs, dtype=np.float32), np.asarray(ys, dtype=np.float32)


def make_estimator(cfg, seed=None):
    t = cfg.training
    return BeamspaceCodex(n_x0=t.n_x0, n_y0=t.n_y0, l_max=cfg.l_max, hidden=tuple(t.hidden),
                          dropout=tuple(t.dropout), learning_rate=t.learning_rate,
                          batch_size=t.batch_size, max_epochs=t.max_epochs, patience=t.patience,
                          loss_mode=t.loss_mode, seed=cfg.seed if seed is None else seed)


def training_sets(cfg, site):
    """``(x_train, y_train, x_val, y_val)`` drawn from the training users of ``site``."""
    train_ids, _ = split_users(site.scenario, cfg.train_user_fraction)
    t = cfg.training
    if t.train_samples < 1 or t.val_samples < 1:
        raise ValueError("insufficient samples: train and validation sets must be non-empty")
    x_tr, y_tr = build_dataset(site, cfg.seed, t.train_samples, train_ids, cfg.dataset_user_range,
                               cfg.include_prob, first_drop=0)
    x_va, y_va = build_dataset(site, cfg.seed, t.val_samples, train_ids, cfg.dataset_user_range,
                               cfg.include_prob, first_drop=t.train_samples)
    return x_tr, y_tr, x_va, y_va


def run_training(cfg, site=None):
    """Build train/validation sets on the training users and fit the generator.

    Returns ``(estimator, info)`` where ``info`` records sample counts and steps.
    """
    site = site or Site(cfg, cfg.ssb_scenario)
    start = time.perf_counter()
    x_tr, y_tr, x_va, y_va = training_sets(cfg, site)
    built = time.perf_counter()
    est = make_estimator(cfg).fit(x_tr, y_tr, x_va, y_va)
    info = {"train_samples": len(x_tr), "val_samples": len(x_va), "steps": est.n_steps_,
            "dataset_seconds": built - start, "train_seconds": time.perf_counter() - built,
            "val_loss": est.validation_loss(x_va, y_va)}
    logger.info("trained %d steps, val loss %.4f", est.n_steps_, info["val_loss"])
    return est, info


TEST_DROP_OFFSET = 10_000_000


def evaluate_ssb(cfg, estimator=None, site=None, n_drops=None, seed=None):
    """Per-user best-beam RSRP (dBm) for each codebook kind on held-out users.

    Returns a dict ``kind -> 1-D array`` over all users of all drops.  The BSC
    entry is omitted when no estimator is given.
    """
    site = site or Site(cfg, cfg.ssb_scenario)
    _, test_ids = split_users(site.scenario, cfg.train_user_fraction)
    seed = cfg.seed if seed is None else seed
    n_drops = cfg.test_drops if n_drops is None else n_drops
    nobf = unbeamformed_codebook(site.geometry.n_ports)
    out = {k: [] for k in SSB_KINDS if k != "BSC" or estimator is not None}
    for d in range(TEST_DROP_OFFSET, TEST_DROP_OFFSET + n_drops):
        sd = ssb_drop(site, seed, d, test_ids, cfg.dataset_user_range, cfg.include_prob)
        ms = drop_seed(seed, d, 7)
        books = {"no-BF": nobf, "DFT": sd.prior, "RSV": sd.rsv}
        if estimator is not None:
            books["BSC"] = infer_codebook(estimator, sd.prior, sd.feedback, site.geometry)
        for kind, book in books.items():
            out[kind].append(dbm(measure_codebook(site, sd.h_band, book, ms)))
    return {k: np.concatenate(v) for k, v in out.items()}


def cdf_table(samples, percentiles=range(0, 101, 5)):
    rows = []
    for kind in SSB_KINDS:
        if kind not in samples:
            continue
        values = np.percentile(samples[kind], list(percentiles))
        rows.extend({"kind": kind, "percentile": int(p), "rsrp_dbm": float(v)}
                    for p, v in zip(percentiles, values))
    return rows


def run_ssb_experiment(cfg, estimator=None, site=None):
    """CDF rows and mean RSRP per codebook kind."""
    samples = evaluate_ssb(cfg, estimator, site)
    summary = [{"kind": k, "mean_rsrp_dbm": float(np.mean(samples[k])),
                "median_rsrp_dbm": float(np.median(samples[k])), "n_users": int(len(samples[k]))}
               for k in SSB_KINDS if k in samples]
    return cdf_table(samples), summary, samples


def transfer_scenario(cfg):
    st = cfg.site_transfer
    return cfg.ssb_scenario.replace(site_seed=st.site_seed, rng_seed=st.rng_seed,
                                    vehicular_fraction=st.vehicular_fraction,
                                    road_offset=st.road_offset, road_heading_deg=st.road_heading_deg,
                                    sector_center_deg=st.sector_center_deg)


def bsc_rsv_delta(cfg, estimator, site, n_drops, seed):
    s = evaluate_ssb(cfg, estimator, site, n_drops=n_drops, seed=seed)
    return s["BSC"] - s["RSV"]


def run_site_transfer(cfg, estimator, budget_fraction=None):
    """Agnostic vs fine-tuned (BSC - RSV) RSRP deltas on a regenerated site.

    Returns ``(rows, summary, tuned)``: histogram rows, a dict with the 10th
    percentiles and the fine-tuning step count.
    """
    st = cfg.site_transfer
    budget_fraction = st.budget_fraction if budget_fraction is None else budget_fraction
    new_site = Site(cfg, transfer_scenario(cfg))
    train_ids, _ = split_users(new_site.scenario, cfg.train_user_fraction)
    seed = cfg.seed + 1
    before = bsc_rsv_delta(cfg, estimator, new_site, st.test_drops, seed)
    n_ft = st.finetune_samples
    n_val = max(1, n_ft // 5)
    x, y = build_dataset(new_site, seed, n_ft + n_val, train_ids, cfg.dataset_user_range,
                         cfg.include_prob)
    tuned = _clone_fitted(estimator)
    tuned.fine_tune(x[:n_ft], y[:n_ft], x[n_ft:], y[n_ft:], budget_fraction=budget_fraction)
    after = bsc_rsv_delta(cfg, tuned, new_site, st.test_drops, seed)
    edges = np.arange(-30.0, 10.0 + 1e-9, 1.0)
    h0, _ = np.histogram(np.clip(before, edges[0], edges[-1]), edges)
    h1, _ = np.histogram(np.clip(after, edges[0], edges[-1]), edges)
    rows = [{"bin_lo_db": float(lo), "bin_hi_db": float(hi), "agnostic": int(a), "fine_tuned": int(b)}
            for lo, hi, a, b in zip(edges[:-1], edges[1:], h0, h1)]
    summary = {
        "agnostic_p10_db": float(np.percentile(before, 10)),
        "fine_tuned_p10_db": float(np.percentile(after, 10)),
        "agnostic_mean_db": float(np.mean(before)),
        "fine_tuned_mean_db": float(np.mean(after)),
        "original_steps": int(estimator.n_steps_),
        "fine_tune_steps": int(tuned.fine_tune_steps_),
    }
    return rows, summary, tuned


def _clone_fitted(est):
    other = BeamspaceCodex(**est.get_params())
    other.model_ = est.model_.copy()
    other.n_steps_ = est.n_steps_
    other.n_features_in_ = est.n_features_in_
    return other


# --------------------------------------------------------------------------
# CSI-RS feedback sweeps


class MuContext:
    """Fixed per-experiment objects for the MU-MIMO pipeline."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.site = Site(cfg, cfg.scenario)
        self.ssb = site_tuned_dft(self.site, cfg.l_max, cfg.calibration_users)
        sc = cfg.scenario
        self.csi_slot = math.ceil(cfg.l_max / bt.SSB_PER_SLOT)
        self.data_slots = np.arange(0, sc.n_timeslots, cfg.data_slot_stride)


@dataclass
class MuDrop:
    drop: int
    users: np.ndarray
    h_data: np.ndarray         # [U, T_d, K, N_R, N_T]
    h_ssb: np.ndarray          # [U, K, N_R, N_T] at slot 0
    h_csi: np.ndarray          # [U, K, N_R, N_T] at the CSI-RS slot
    feedback: bt.SsbFeedback


def mu_drop(ctx, drop):
    cfg, site = ctx.cfg, ctx.site
    rng = drop_rng(cfg.seed, drop, STAGE_USERS)
    lo, hi = cfg.active_user_range
    n_active = int(rng.integers(lo, hi + 1))
    users = np.sort(rng.choice(site.scenario.n_users, size=n_active, replace=False))
    slots = np.unique(np.concatenate([[0, ctx.csi_slot], ctx.data_slots]))
    h = site.pool.channel(users, slots=slots)
    pos = {int(s): i for i, s in enumerate(slots)}
    h_ssb = h[:, pos[0]]
    h_csi = h[:, pos[ctx.csi_slot]]
    h_data = h[:, [pos[int(s)] for s in ctx.data_slots]]
    fb = bt.ssb_round(h_ssb, ctx.ssb, site.scenario.noise_power, ssb_band=site.band,
                      include_prob=cfg.sweep_include_prob, seed=drop_seed(cfg.seed, drop, STAGE_SSB))
    return MuDrop(drop=drop, users=users, h_data=h_data, h_ssb=h_ssb, h_csi=h_csi, feedback=fb)


def _data_sinr(ctx, md, est_bands, sched, bands):
    """True-channel SINR ``[U_sel, T_d, K, R]`` with per-sub-band RZF precoders."""
    cfg, sc = ctx.cfg, ctx.site.scenario
    idx = [int(np.flatnonzero(md.users == u)[0]) for u in sched.users]
    r_max = int(sched.ranks.max())
    out = np.zeros((len(idx), md.h_data.shape[1], sc.n_subcarriers, r_max))
    for b, ks in enumerate(bands):
        pre = dl.rzf_precode(est_bands[:, b], sc.noise_power, ranks=sched.ranks, users=sched.users,
                             n_subcarriers=sc.n_subcarriers)
        h = [md.h_data[i][:, ks] for i in idx]
        out[:, :, ks] = dl.sinr_all(h, pre, sc.noise_power, sc.n_subcarriers, cfg.sinr_convention)
    return out


def _baseline_sinr(ctx, md, precoders):
    sc = ctx.site.scenario
    idx = [int(np.flatnonzero(md.users == u)[0]) for u in precoders.users]
    h = [md.h_data[i] for i in idx]
    return dl.sinr_all(h, precoders, sc.noise_power, sc.n_subcarriers, ctx.cfg.sinr_convention)


def run_pipeline(ctx, md, l_csi, p_csi, bwp, nrb):
    """SSB -> decompose -> CSI-RS -> type-II -> reconstruct -> schedule -> RZF -> Eff-SSE.

    Returns per-user record dicts for the MU-MIMO, SU-MIMO and non-PMI schemes.
    """
    cfg, site = ctx.cfg, ctx.site
    sc = site.scenario
    block = bt.select_csirs_block(ctx.ssb, md.feedback, site.fb, p_csi)
    csirs = bt.decompose_ssb_to_csirs(ctx.ssb, md.feedback, block, p_csi)
    meas = bt.csirs_round(md.h_csi, csirs, sc.noise_power, nrb, seed=drop_seed(cfg.seed, md.drop, STAGE_CSIRS),
                          bwp=bwp, pilots_per_rb=cfg.pilots_per_rb,
                          rb_per_subcarrier=sc.rb_per_subcarrier, snr_cap_db=cfg.snr_cap_db)
    reporting = np.flatnonzero(md.feedback.included)
    f = csirs.words
    pinv = np.linalg.pinv(f) if cf.dependent_columns(f) else None
    n_sub = math.ceil(nrb / cfg.subband_rbs)
    est, bits, reports = [], [], []
    for u in reporting:
        g = meas.eff_channel_est[u]                                  # [BWP, N_R, P]
        x = g @ (pinv if pinv is not None else cf._right_inverse(f))
        comps = [cf.quantize_type2(xb, site.fb, l_csi) for xb in x]
        rows = np.stack([cf.reconstruct_component(c, site.fb) for c in comps])
        rank = cf.select_rank(x, rows, meas.noise_est[u], sc.n_subcarriers)
        rep = cf.CsiReport(cri=int(meas.cri[u]), rank=rank, snr=float(meas.snr[u]),
                           components=comps, p_csi=p_csi)
        h_hat = cf.reconstruct_channel(rows @ f, csirs, strict=False)
        h_hat = cf.scale_to_snr(h_hat, f, rep.snr, sc.noise_power, sc.n_subcarriers)
        est.append(h_hat)
        bits.append(cf.count_bits(rep, site.fb, coefficient_subbands=n_sub).total_bits)
        reports.append(rep)
    est = cf.aggregate_users(est)                                    # [U_r, BWP, N_R, N_P]
    labels = md.users[reporting]
    bands = bt.split_band(sc.n_subcarriers, bwp)
    budget = bt.budget(sc, cfg.l_max, p_csi, nrb, bwp, bits, pilots_per_rb=cfg.pilots_per_rb,
                       ssb_band=site.band, signaling_overhead=cfg.signaling_overhead)
    cells = (ctx.data_slots, np.arange(sc.n_subcarriers))
    results = {}
    ri = [rep.rank for rep in reports]
    sched = dl.schedule(est, sc.noise_power, candidates=labels, n_subcarriers=sc.n_subcarriers,
                        cap=cfg.scheduler_cap, greedy_fallback=cfg.greedy_fallback, rank_limits=ri)
    sel = [int(np.flatnonzero(labels == u)[0]) for u in sched.users]
    results["MU-MIMO"] = (sched.users, sched.ranks, dl.effective_sum_se(_data_sinr(ctx, md, est[sel], sched, bands), budget, cells))
    su = dl.schedule(est, sc.noise_power, candidates=labels, n_subcarriers=sc.n_subcarriers,
                     cap=cfg.scheduler_cap, greedy_fallback=cfg.greedy_fallback, max_users=1,
                     rank_limits=ri)
    sel = [int(np.flatnonzero(labels == u)[0]) for u in su.users]
    results["SU-MIMO"] = (su.users, su.ranks, dl.effective_sum_se(_data_sinr(ctx, md, est[sel], su, bands), budget, cells))
    # non-PMI: CRI (+ wideband CQI) only
    small = [ceil_log2(p_csi) + 1 + 4] * len(reporting)
    budget_np = bt.budget(sc, cfg.l_max, p_csi, nrb, bwp, small, pilots_per_rb=cfg.pilots_per_rb,
                          ssb_band=site.band, signaling_overhead=cfg.signaling_overhead)
    pre = dl.non_pmi_baseline(meas.cri[reporting], meas.snr[reporting], csirs, users=labels)
    results["non-PMI"] = (pre.users, pre.ranks, dl.effective_sum_se(_baseline_sinr(ctx, md, pre), budget_np, cells))
    feedback_bits = {"MU-MIMO": int(sum(bits)), "SU-MIMO": int(sum(bits)), "non-PMI": int(sum(small))}
    overhead = {"MU-MIMO": budget.overhead_fraction, "SU-MIMO": budget.overhead_fraction,
                "non-PMI": budget_np.overhead_fraction}
    records = []
    snr_of = {int(u): float(meas.snr[i]) for i, u in enumerate(md.users)}
    best = md.feedback.best_rsrp()
    rsrp_of = {int(u): float(dbm(best[i])) for i, u in enumerate(md.users)}
    for scheme, (users, ranks, res) in results.items():
        for i, u in enumerate(users):
            layers = res.sinr[i][..., : int(ranks[i])]
            p10, p50, p90 = np.percentile(10 * np.log10(np.maximum(layers, 1e-30)), [10, 50, 90])
            records.append({
                "scheme": scheme, "user": int(u), "rsrp_dbm": rsrp_of[int(u)],
                "snr_db": 10 * math.log10(max(snr_of[int(u)], 1e-30)),
                "se": float(res.se_per_user[i]),
                "eff_sse": float(res.eff_sse * res.se_per_user[i] / max(res.sum_se, 1e-300)),
                "sum_eff_sse": float(res.eff_sse),
                "sinr_p10_db": float(p10), "sinr_p50_db": float(p50), "sinr_p90_db": float(p90),
                "feedback_bits": feedback_bits[scheme], "overhead": float(overhead[scheme]),
                "n_scheduled": int(len(users)),
            })
    return records


def ceil_log2(n):
    return math.ceil(math.log2(n)) if n > 1 else 0


def sweep_points(cfg):
    """Ordered ``(axis, value, params)`` triples of the sweep grid."""
    sw = cfg.sweep
    base = {"l_csi": sw.base_l_csi, "p_csi": sw.base_p_csi, "bwp": sw.base_bwp, "nrb": sw.base_nrb}
    points = []
    for axis in sw.axes:
        for v in getattr(sw, axis):
            p = dict(base)
            p[axis] = int(v)
            if axis == "p_csi":
                p["l_csi"] = sw.p_sweep_l_csi
            if axis == "bwp" and sw.bwp_scales_nrb:
                p["nrb"] = sw.base_nrb * int(v)
                p["nrb_per_bwp"] = sw.base_nrb
            points.append((axis, int(v), p))
    return points


_WORKER_CTX = {}


def _sweep_drop(cfg, drop):
    """All sweep points of one drop (runs in the caller or in a worker process)."""
    key = cfg.config_id()
    ctx = _WORKER_CTX.get(key)
    if ctx is None:
        _WORKER_CTX.clear()
        ctx = _WORKER_CTX[key] = MuContext(cfg)
    md = mu_drop(ctx, drop)
    out = []
    for pi, (axis, value, p) in enumerate(sweep_points(cfg)):
        nrb_per_bwp = p.get("nrb_per_bwp", p["nrb"])
        recs = run_pipeline(ctx, md, p["l_csi"], p["p_csi"], p["bwp"], nrb_per_bwp)
        for r in recs:
            r.update({"point": pi, "axis": axis, "value": value, "drop": int(drop),
                      "l_csi": p["l_csi"], "p_csi": p["p_csi"], "bwp": p["bwp"], "nrb": p["nrb"]})
        out.extend(recs)
    return out


def run_csirs_sweep(cfg, drops=None, progress=None, workers=1):
    """Per-user records for every sweep point and drop, plus a summary table.

    Drops are independent; with ``workers > 1`` they run in a process pool.
    Records are ordered by (sweep point, drop, scheme, user) whatever the
    evaluation order, so the output does not depend on ``workers``.
    """
    drops = list(range(cfg.monte_carlo_drops) if drops is None else drops)
    points = sweep_points(cfg)
    records = []
    if workers > 1 and len(drops) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for d, recs in zip(drops, pool.map(_sweep_drop, [cfg] * len(drops), drops)):
                records.extend(recs)
                if progress:
                    progress(d)
    else:
        for d in drops:
            records.extend(_sweep_drop(cfg, d))
            if progress:
                progress(d)
    order = {"MU-MIMO": 0, "SU-MIMO": 1, "non-PMI": 2}
    records.sort(key=lambda r: (r["point"], r["drop"], order[r["scheme"]], r["user"]))
    return records, summarize_sweep(records, points, len(drops))


def summarize_sweep(records, points, n_drops):
    """Mean Eff-SSE per (sweep point, scheme) over drops."""
    per = {}
    for r in records:
        key = (r["point"], r["scheme"], r["drop"])
        per[key] = r["sum_eff_sse"]
    rows = []
    for pi, (axis, value, p) in enumerate(points):
        for scheme in ("MU-MIMO", "SU-MIMO", "non-PMI"):
            vals = [per[(pi, scheme, d)] for (q, s, d) in per if q == pi and s == scheme]
            if not vals:
                continue
            rows.append({"axis": axis, "value": value, "scheme": scheme,
                         "mean_eff_sse": float(np.mean(vals)), "drops": len(vals)})
    return rows
