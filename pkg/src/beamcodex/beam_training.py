"""SSB and CSI-RS beam training.

Received pilots follow ``y = (H f) / sqrt(K N_T) + n`` with ``n ~ CN(0, sigma^2)``
per resource element, where ``K`` is the number of simulated subcarriers
(each standing for a group of resource blocks) and ``||f||^2 = N_T``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_complex_array, check_fraction, check_positive_int
from .channel import ChannelTensor
from .codebooks import Codebook, default_ssb_band

logger = logging.getLogger(__name__)

RE_PER_RB_SLOT = 12 * 14
SSB_RE_PER_RB = 48          # 4 OFDM symbols x 12 subcarriers per SSB
SSB_PER_SLOT = 2
# MCS index 0 of the 64QAM table: Qm = 2, R = 120/1024
MCS0_SPECTRAL_EFFICIENCY = 2 * 120 / 1024


def _slot_view(h, slot=None):
    """Return ``[U, K, N_R, N_T]`` for one slot from a tensor or a 4-D array."""
    arr = h.h if isinstance(h, ChannelTensor) else np.asarray(h)
    if arr.ndim == 5:
        return arr[:, 0 if slot is None else slot]
    if arr.ndim == 4:
        return arr
    raise ValueError(f"expected [U,T,K,N_R,N_T] or [U,K,N_R,N_T], got shape {arr.shape}")


def _user_rng(seed, stage, user):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stage, int(user)]))


def _cn(rng, shape, var):
    if var == 0:
        return np.zeros(shape, dtype=complex)
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class SsbFeedback:
    """SSB report as seen by the base station.

    ``rsrp`` and ``ssbri`` are zeroed (``-1`` for the index) for users whose
    report is not included.  ``beam_rsrp`` keeps every user's per-beam
    measurement for evaluation only.
    """

    rsrp: np.ndarray
    ssbri: np.ndarray
    included: np.ndarray
    beam_rsrp: np.ndarray = field(repr=False)

    @property
    def n_users(self):
        return len(self.rsrp)

    def best_rsrp(self):
        """Best-beam RSRP of every user regardless of inclusion (W)."""
        return self.beam_rsrp.max(axis=1)

    def reporter_counts(self, l_max):
        return np.bincount(self.ssbri[self.included], minlength=l_max)[:l_max]

    def rsrp_sums(self, l_max):
        out = np.zeros(l_max)
        np.add.at(out, self.ssbri[self.included], self.rsrp[self.included])
        return out


def measure_rsrp(h_band, ssb, noise_power, n_subcarriers, rngs=None):
    """Per-beam RSRP ``[U, L]``: max over rx antennas of the summed pilot power.

    Parameters
    ----------
    h_band : ndarray, shape [U, K_b, N_R, N_T]
        Channel on the SSB subcarriers.
    rngs : list of Generator, optional
        One stream per user; ``None`` means noiseless.
    """
    h_band = check_complex_array(h_band, "h_band", ndim=4)
    f = ssb.words
    n_t = f.shape[0]
    y = np.einsum("ukrn,nl->uklr", h_band, f) / math.sqrt(n_subcarriers * n_t)
    if rngs is not None and noise_power > 0:
        for u, rng in enumerate(rngs):
            y[u] += _cn(rng, y.shape[1:], noise_power)
    return np.max(np.sum(np.abs(y) ** 2, axis=1), axis=-1)


def ssb_round(h, ssb, noise_power, ssb_band=None, include_prob=1.0, seed=0, slot=None,
              n_subcarriers=None):
    """Sweep the SSB codebook and collect strongest-beam reports.

    Every user measures every beam on the SSB sub-band; its report is included
    with probability ``include_prob`` (independent per user, fixed by ``seed``).
    ``n_subcarriers`` is the full-band ``K`` of the pilot scaling when ``h``
    only holds a sub-band (defaults to the subcarrier count of ``h``).
    """
    hs = _slot_view(h, slot)
    n_users, n_sc = hs.shape[0], hs.shape[1]
    include_prob = check_fraction(include_prob, "include_prob")
    if ssb_band is None:
        ssb_band = default_ssb_band(n_sc)
    ssb_band = np.asarray(ssb_band, dtype=int)
    if ssb_band.size == 0:
        raise ValueError("SSB band is empty")
    if ssb_band.min() < 0 or ssb_band.max() >= n_sc:
        raise ValueError("SSB band outside [0, K)")
    rngs = None
    if noise_power > 0:
        rngs = [_user_rng(seed, 1, u) for u in range(n_users)]
    beam = measure_rsrp(hs[:, ssb_band], ssb, noise_power, n_subcarriers or n_sc, rngs)
    incl_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    included = incl_rng.random(n_users) < include_prob
    return feedback_from_rsrp(beam, included)


def feedback_from_rsrp(beam_rsrp, included):
    beam_rsrp = np.asarray(beam_rsrp, dtype=float)
    included = np.asarray(included, dtype=bool)
    best = np.argmax(beam_rsrp, axis=1)
    rsrp = np.where(included, beam_rsrp[np.arange(len(best)), best], 0.0)
    ssbri = np.where(included, best, -1)
    return SsbFeedback(rsrp=rsrp, ssbri=ssbri, included=included, beam_rsrp=beam_rsrp)


def largest_remainder(weights, total):
    """Integer split of ``total`` proportional to ``weights`` (ties to lower index)."""
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    quota = total * weights / weights.sum()
    base = np.floor(quota).astype(int)
    rem = quota - base
    short = total - base.sum()
    order = np.lexsort((np.arange(len(rem)), -rem))
    base[order[:short]] += 1
    return base


def decompose_columns(ssb, feedback, fb_codebook, p_csi):
    """FB-codebook columns for the CSI-RS codebook (see :func:`decompose_ssb_to_csirs`)."""
    p_csi = check_positive_int(p_csi, "p_csi")
    if p_csi > len(fb_codebook):
        raise ValueError(f"p_csi={p_csi} exceeds FB codebook size {len(fb_codebook)}")
    l_max = len(ssb)
    budgets = largest_remainder(feedback.reporter_counts(l_max), p_csi)
    corr = np.abs(fb_codebook.words.conj().T @ ssb.words)      # [N_FB, L]
    chosen = []
    taken = set()
    for i in range(l_max):
        need = budgets[i]
        if need == 0:
            continue
        for col in np.argsort(-corr[:, i], kind="stable"):
            if col not in taken:
                chosen.append(int(col))
                taken.add(int(col))
                need -= 1
                if need == 0:
                    break
    return np.asarray(chosen, dtype=int)


def decompose_ssb_to_csirs(ssb, feedback, fb_codebook, p_csi):
    """Split the SSB beams into their strongest FB-codebook components.

    Beam ``i`` gets a share of ``p_csi`` proportional to the number of
    included users reporting it (largest-remainder rounding; uniform shares
    when nobody reported).  Components are taken in descending ``|B^H f_i|``
    order, skipping columns already claimed by an earlier beam.
    """
    cols = decompose_columns(ssb, feedback, fb_codebook, p_csi)
    return fb_codebook.subset(cols, "CSIRS")


def select_csirs_block(ssb, feedback, fb_codebook, p_csi):
    """Orthogonal FB block best aligned with the reported SSB beams.

    Each block is scored by the power of the components that
    :func:`decompose_columns` would take from it, weighted by the per-beam
    budgets; ties go to the lowest ``(qx, qy)``.  Restricting the CSI-RS
    beams to one block keeps them mutually orthogonal.
    """
    p_csi = check_positive_int(p_csi, "p_csi")
    if p_csi > fb_codebook.block_size:
        raise ValueError(f"p_csi={p_csi} exceeds the orthogonal block size {fb_codebook.block_size}")
    budgets = largest_remainder(feedback.reporter_counts(len(ssb)), p_csi)
    best, best_score = None, -np.inf
    for qx in range(fb_codebook.spec.o_h):
        for qy in range(fb_codebook.spec.o_v):
            words = fb_codebook.words[:, fb_codebook.block_columns(qx, qy)]
            power = np.abs(words.conj().T @ ssb.words) ** 2          # [N_block, L]
            top = -np.sort(-power, axis=0)
            score = sum(top[:b, i].sum() for i, b in enumerate(budgets) if b)
            if score > best_score * (1 + 1e-12):
                best, best_score = (qx, qy), score
    return Codebook(fb_codebook.words[:, fb_codebook.block_columns(*best)], "FB")


@dataclass
class CsiMeasurement:
    """CSI-RS measurements of all users.

    eff_channel_est : [U, BWP, N_R, P] LS estimate of ``H F`` per sub-band
    beam_snr : [U, P] per-beam SNR (linear, capped)
    snr : [U] best-beam SNR
    cri : [U] index of the best beam
    noise_est : [U] estimated noise power per resource element
    """

    eff_channel_est: np.ndarray
    beam_snr: np.ndarray
    snr: np.ndarray
    cri: np.ndarray
    noise_est: np.ndarray
    n_pilots: int


def split_band(n_subcarriers, bwp):
    bwp = check_positive_int(bwp, "bwp")
    if bwp > n_subcarriers:
        raise ValueError("more sub-bands than subcarriers")
    return np.array_split(np.arange(n_subcarriers), bwp)


def pilot_cells(band, nrb, rb_per_subcarrier):
    """Subcarrier indices and RB counts of a centred ``nrb``-RB pilot block in ``band``."""
    full, part = divmod(nrb, rb_per_subcarrier)
    n_cells = full + (1 if part else 0)
    if n_cells > len(band):
        raise ValueError(f"{nrb} RBs do not fit in a sub-band of {len(band) * rb_per_subcarrier} RBs")
    start = (len(band) - n_cells) // 2
    cells = np.asarray(band)[start:start + n_cells]
    rbs = np.full(n_cells, rb_per_subcarrier)
    if part:
        rbs[-1] = part
    return cells, rbs


def csirs_round(h, csirs, noise_power, nrb, seed=0, bwp=1, pilots_per_rb=1,
                rb_per_subcarrier=4, snr_cap_db=60.0, slot=None):
    """Beamformed CSI-RS measurement with LS estimation of ``H F``.

    In each sub-band a contiguous block of ``nrb`` resource blocks carries
    ``pilots_per_rb`` unit pilots per RB for every beam; the estimate of
    column ``c`` is the average of the de-scaled observations, treating the
    effective channel as flat over the block.  Noise power is estimated from
    the zero-power resources of the other beams.
    """
    hs = _slot_view(h, slot)
    n_users, n_sc, n_rx, n_t = hs.shape
    nrb = check_positive_int(nrb, "nrb")
    f = csirs.words
    p = f.shape[1]
    scale = math.sqrt(n_sc * n_t)
    bands = split_band(n_sc, bwp)
    cap = 10 ** (snr_cap_db / 10)
    blocks = [pilot_cells(b, nrb, rb_per_subcarrier) for b in bands]
    n_pilots = nrb * pilots_per_rb
    n_zp = n_pilots * max(p - 1, 1)

    est = np.empty((n_users, len(bands), n_rx, p), dtype=complex)
    beam_snr = np.empty((n_users, p))
    noise_est = np.empty(n_users)
    for u in range(n_users):
        rng = _user_rng(seed, 2, u)
        for b, (cells, rbs) in enumerate(blocks):
            hf = hs[u, cells] @ f                               # [n_cells, N_R, P]
            m = (rbs * pilots_per_rb)[:, None, None]
            clean = np.sum(m * hf, axis=0) / n_pilots
            # sum of m per-RE noises is CN(0, m sigma^2); undo the 1/sqrt(K N_T) scaling
            noise = _cn(rng, (n_rx, p), n_pilots * noise_power) * scale / n_pilots
            est[u, b] = clean + noise
        if noise_power > 0:
            noise_est[u] = noise_power * rng.gamma(n_zp, 1.0 / n_zp)
        else:
            noise_est[u] = 0.0
        power = np.sum(np.abs(est[u]) ** 2, axis=(0, 1)) / len(bands)     # [P]
        with np.errstate(divide="ignore", invalid="ignore"):
            snr = power / (n_sc * n_t * noise_est[u])
        beam_snr[u] = np.where(np.isfinite(snr), np.minimum(snr, cap), cap)
    cri = np.argmax(beam_snr, axis=1)
    snr = beam_snr[np.arange(n_users), cri]
    return CsiMeasurement(eff_channel_est=est, beam_snr=beam_snr, snr=snr, cri=cri,
                          noise_est=noise_est, n_pilots=n_pilots)


@dataclass
class LsEstimate:
    estimate: np.ndarray
    mse: float
    noise_power: float


def estimate_ls(received, pilots, noise_power=None):
    """Least-squares estimate of ``h`` from ``received = h @ pilots + noise``.

    Parameters
    ----------
    received : ndarray, shape [..., N_pilots]
    pilots : ndarray, shape [N_T, N_pilots]
        Known pilot matrix; must have full row rank.
    noise_power : float, optional
        Per-sample noise variance.  Estimated from the residual when omitted
        (requires more pilots than unknowns).

    Returns
    -------
    LsEstimate
        ``mse`` is the predicted per-entry error variance
        ``sigma^2 * mean(diag((S S^H)^-1))``; for orthogonal unit-power pilots
        this is ``N_T / (N_pilots * SNR)`` with ``SNR = 1 / sigma^2``.
    """
    y = check_complex_array(received, "received")
    s = check_complex_array(pilots, "pilots", ndim=2)
    n_t, n_p = s.shape
    if y.shape[-1] != n_p:
        raise ValueError(f"received has {y.shape[-1]} samples, pilots have {n_p}")
    gram = s @ s.conj().T
    if n_p < n_t or np.linalg.matrix_rank(gram) < n_t:
        raise np.linalg.LinAlgError("singular pilot design: pilots do not have full row rank")
    gram_inv = np.linalg.inv(gram)
    h = y @ s.conj().T @ gram_inv
    if noise_power is None:
        dof = n_p - n_t
        if dof <= 0:
            noise_power = float("nan")
        else:
            resid = y - h @ s
            rows = max(1, resid.size // n_p)
            noise_power = float(np.sum(np.abs(resid) ** 2) / (rows * dof))
    mse = float(noise_power * np.real(np.trace(gram_inv)) / n_t)
    return LsEstimate(estimate=h, mse=mse, noise_power=float(noise_power))


@dataclass
class ResourceBudget:
    """Beam-management resources removed from the data grid.

    ``weights[t, k]`` is the fraction of resource elements of cell ``(t, k)``
    consumed by SSB, CSI-RS and uplink feedback.  ``t_bm`` / ``k_bm`` list the
    slots / subcarriers that are fully consumed.
    """

    weights: np.ndarray
    feedback_bits: int
    signaling_overhead: float
    counts: dict

    @property
    def t_bm(self):
        return np.flatnonzero(np.all(self.weights >= 1.0, axis=1))

    @property
    def k_bm(self):
        return np.flatnonzero(np.all(self.weights >= 1.0, axis=0))

    @property
    def overhead_fraction(self):
        """Share of the grid lost to beam management and signaling."""
        used = float(np.mean(self.weights))
        return 1.0 - (1.0 - used) * (1.0 - self.signaling_overhead)


def budget(cfg, l_max, p_csi, nrb, bwp, report_bits, *, pilots_per_rb=1, ssb_band=None,
           signaling_overhead=0.1, mcs0_se=MCS0_SPECTRAL_EFFICIENCY):
    """Lay out beam-management resources on the ``[T, K]`` grid of ``cfg``.

    Allocation rules
    ----------------
    * SSB: two blocks per slot starting at slot 0, each using 48 REs in every
      RB of the SSB sub-band.
    * CSI-RS: in the first slot after the SSB burst, ``p_csi * pilots_per_rb``
      REs per RB over ``nrb`` RBs in each of the ``bwp`` sub-bands (the same
      centred blocks as :func:`csirs_round`).
    * Uplink feedback: each report rounded up to whole RBs at MCS0
      (``mcs0_se * 168`` bits per RB-slot), packed RB by RB from the slot after
      the CSI-RS.
    * Signaling: a further multiplicative ``signaling_overhead`` on the rest.

    ``report_bits`` is one count per reporting user (or a single int).
    """
    n_t_slots, n_sc, r = cfg.n_timeslots, cfg.n_subcarriers, cfg.rb_per_subcarrier
    check_positive_int(l_max, "l_max", minimum=0)
    check_positive_int(p_csi, "p_csi", minimum=0)
    check_positive_int(nrb, "nrb", minimum=0)
    check_positive_int(bwp, "bwp")
    signaling_overhead = check_fraction(signaling_overhead, "signaling_overhead", closed_right=False)
    bits = np.atleast_1d(np.asarray(report_bits, dtype=np.int64))
    if np.any(bits < 0):
        raise ValueError("report_bits must be non-negative")
    cell_re = r * RE_PER_RB_SLOT
    used = np.zeros((n_t_slots, n_sc))        # resource elements per cell

    if ssb_band is None:
        ssb_band = default_ssb_band(n_sc)
    ssb_slots = math.ceil(l_max / SSB_PER_SLOT)
    if ssb_slots > n_t_slots:
        raise ValueError(f"{l_max} SSB beams need {ssb_slots} slots, frame has {n_t_slots}")
    for i in range(l_max):
        used[i // SSB_PER_SLOT, ssb_band] += SSB_RE_PER_RB * r
    csi_slot = ssb_slots
    csi_re = 0
    if p_csi > 0 and nrb > 0:
        if csi_slot >= n_t_slots:
            raise ValueError("SSB burst leaves no slot for CSI-RS")
        per_rb = p_csi * pilots_per_rb
        for band in split_band(n_sc, bwp):
            cells, rbs = pilot_cells(band, nrb, r)
            used[csi_slot, cells] += per_rb * rbs
            csi_re += int(per_rb * rbs.sum())
    bits_per_rb = mcs0_se * RE_PER_RB_SLOT
    ul_rbs = int(sum(math.ceil(b / bits_per_rb) for b in bits if b > 0))
    if ul_rbs:
        start = (csi_slot + 1) * n_sc * r
        total_rb = n_t_slots * n_sc * r
        if start + ul_rbs > total_rb:
            raise ValueError(f"feedback needs {ul_rbs} RBs, frame has {total_rb - start} left")
        rb_index = np.arange(start, start + ul_rbs)
        slot, rb = np.divmod(rb_index, n_sc * r)
        np.add.at(used, (slot, rb // r), RE_PER_RB_SLOT)
    weights = used / cell_re
    if np.any(weights > 1.0 + 1e-12):
        raise ValueError("beam-management resources exceed the cell capacity")
    counts = {
        "ssb_re": int(l_max * len(ssb_band) * r * SSB_RE_PER_RB),
        "csirs_re": csi_re,
        "feedback_rb": ul_rbs,
        "total_re": int(n_t_slots * n_sc * cell_re),
    }
    return ResourceBudget(weights=np.minimum(weights, 1.0), feedback_bits=int(bits.sum()),
                          signaling_overhead=signaling_overhead, counts=counts)
