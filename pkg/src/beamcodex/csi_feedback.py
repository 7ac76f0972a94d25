"""Type-II PMI quantization, feedback bit accounting and channel reconstruction.

The quantizer works on the port-domain rows ``X = (H F) F^+`` of the
estimated beamformed channel, so that correlations with the ``N_P``-port
feedback codebook are well defined.  Each row is represented by
``L_CSI`` columns of one orthogonal DFT block and complex coefficients
normalized by the strongest one.  The base station rebuilds a row as
``sum_l a_l * conj(b_l) / N_T``; since block columns satisfy
``b_i^H b_j = N_T delta_ij`` this inverts the correlations ``c = x b`` exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_complex_array, check_positive_int

ORTHO_TOL = 1e-9
TIE_RTOL = 1e-12


@dataclass
class PmiComponent:
    """PMI of one sub-band: shift ``q0 = (qx, qy)``, block-local indices ``q`` and coefficients ``a``.

    ``q[r]`` is ordered by decreasing coefficient magnitude, so ``a[r, 0] = 1``
    is the normalizer.  ``ref`` holds the un-normalized strongest coefficient
    of each row; it is diagnostic only and not part of the reported bits.
    """

    q0: tuple
    q: np.ndarray
    a: np.ndarray
    ref: np.ndarray = field(repr=False)

    @property
    def l_csi(self):
        return self.q.shape[1]

    @property
    def n_rows(self):
        return self.q.shape[0]

    def to_dict(self):
        return {
            "q0": [int(self.q0[0]), int(self.q0[1])],
            "q": self.q.tolist(),
            "a": [[[float(z.real), float(z.imag)] for z in row] for row in self.a],
        }


@dataclass
class CsiReport:
    cri: int
    rank: int
    snr: float
    components: list
    p_csi: int = 1

    @property
    def per_bwp(self):
        return self.components

    def to_json(self):
        """Canonical JSON (sorted keys, compact separators)."""
        d = {
            "cri": int(self.cri),
            "rank": int(self.rank),
            "snr": float(self.snr),
            "p_csi": int(self.p_csi),
            "per_bwp": [c.to_dict() for c in self.components],
        }
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


@dataclass
class FeedbackBits:
    total_bits: int
    breakdown: dict


def to_port_domain(eff_est, csirs):
    """Map a beamformed estimate ``[N_R, P]`` to port-domain rows ``[N_R, N_P]``."""
    f = csirs.words if hasattr(csirs, "words") else np.asarray(csirs)
    return eff_est @ _right_inverse(f)


def quantize_type2(x, fb, l_csi, csirs=None):
    """Type-II PMI of one sub-band.

    Parameters
    ----------
    x : ndarray [N_R, N_P]
        Port-domain estimate; if ``csirs`` is given, ``x`` is the beamformed
        estimate ``[N_R, P]`` and is mapped through ``F^+`` first.
    fb : FbCodebook
    l_csi : int
        Beams per row, at most ``N_X N_Y``.

    Returns
    -------
    PmiComponent
    """
    x = check_complex_array(x, "x", ndim=2)
    if csirs is not None:
        x = to_port_domain(x, csirs)
    if x.shape[1] != fb.n_ports:
        raise ValueError(f"input has {x.shape[1]} ports, codebook has {fb.n_ports}")
    l_csi = check_positive_int(l_csi, "l_csi")
    if l_csi > fb.block_size:
        raise ValueError(f"l_csi={l_csi} exceeds orthogonal block size {fb.block_size}")
    if not np.any(x):
        raise ValueError("cannot quantize an all-zero channel estimate")
    c = np.abs(x @ fb.words)
    # mathematically equal magnitudes (e.g. a single element along one axis) go to the lowest flat index
    flat = int(np.flatnonzero(c.ravel() >= c.max() * (1.0 - TIE_RTOL))[0])
    col = flat % c.shape[1]
    q0 = fb.block_of(col)
    c_ortho = x @ fb.words[:, fb.block_columns(*q0)]
    n_rows = x.shape[0]
    q = np.empty((n_rows, l_csi), dtype=int)
    a = np.zeros((n_rows, l_csi), dtype=complex)
    ref = np.zeros(n_rows, dtype=complex)
    for r in range(n_rows):
        order = np.argsort(-np.abs(c_ortho[r]), kind="stable")[:l_csi]
        q[r] = order
        coef = c_ortho[r, order]
        if coef[0] == 0:
            a[r, 0] = 1.0
            continue
        ref[r] = coef[0]
        a[r] = coef / coef[0]
    return PmiComponent(q0=q0, q=q, a=a, ref=ref)


def select_rank(measured, reconstructed, noise_power, n_subcarriers, max_rank=2):
    """Rank indicator chosen by the UE from its own measurement.

    For each candidate rank ``r`` the precoder is formed from the strongest
    ``r`` right singular vectors of the PMI reconstruction (equal power,
    total ``N_T``) and applied to the measured port-domain channel; the rank
    with the highest LMMSE sum rate wins, ties going to the lower rank.  A
    layer the PMI cannot resolve therefore costs rate instead of adding it.

    Parameters
    ----------
    measured, reconstructed : ndarray [..., N_R, N_P]
        Measured rows ``G F^+`` and rows rebuilt from the PMI, per sub-band.
    noise_power : float
        Per-resource-element noise power.
    n_subcarriers : int
        ``K`` of the ``1 / sqrt(K N_T)`` signal scaling.
    """
    x = np.asarray(measured, dtype=complex)
    rows = np.asarray(reconstructed, dtype=complex)
    x = x.reshape(-1, *x.shape[-2:])
    rows = rows.reshape(-1, *rows.shape[-2:])
    n_r, n_t = x.shape[-2:]
    max_rank = int(min(max_rank, n_r, n_t))
    load = n_subcarriers * n_t * noise_power
    best, best_rate = 0, 0.0
    for r in range(1, max_rank + 1):
        rate = 0.0
        for xb, rb in zip(x, rows):
            _, _, vh = np.linalg.svd(rb, full_matrices=False)
            e = xb @ vh[:r].conj().T * math.sqrt(n_t / r)
            m = e @ e.conj().T + max(load, 1e-300) * np.eye(n_r)
            s_val = np.real(np.sum(e.conj() * np.linalg.solve(m, e), axis=0))
            s_val = np.clip(s_val, 0.0, 1.0 - 1e-15)
            rate += float(np.sum(np.log2(1.0 / (1.0 - s_val))))
        if best == 0 or rate > best_rate + 1e-12 * max(abs(best_rate), 1.0):
            best, best_rate = r, rate
    return best


def make_report(eff_est, csirs, fb, l_csi, cri, snr, rank=2):
    """Report of one user from its per-sub-band estimates ``[BWP, N_R, P]``."""
    eff_est = np.asarray(eff_est)
    if eff_est.ndim == 2:
        eff_est = eff_est[None]
    pinv = _right_inverse(csirs.words)
    comps = [quantize_type2(g @ pinv, fb, l_csi) for g in eff_est]
    rank = int(min(rank, eff_est.shape[1]))
    return CsiReport(cri=int(cri), rank=rank, snr=float(snr), components=comps,
                     p_csi=csirs.words.shape[1])


def combination_bits(n, l):
    return math.ceil(math.log2(math.comb(n, l))) if math.comb(n, l) > 1 else 0


def count_bits(report, fb, include_coefficients=True, amp_bits=4, phase_bits=3, cqi_bits=4,
               coefficient_subbands=1):
    """Uplink bits of a report.

    Per sub-band component: ``ceil(log2 C(N_X N_Y, L))`` per row for the beam
    combination, ``ceil(log2(O_H O_V))`` for the oversampling shift and,
    unless disabled, ``amp_bits + phase_bits`` for every non-normalizer
    coefficient, repeated for each of ``coefficient_subbands`` reporting
    subbands of the CSI-RS band.  CRI, rank and CQI are shared across
    sub-bands.
    """
    n_block = fb.block_size
    n_sub = check_positive_int(coefficient_subbands, "coefficient_subbands")
    b = {"combination": 0, "oversampling": 0, "amplitude": 0, "phase": 0}
    for comp in report.components:
        rows, l = comp.q.shape
        b["combination"] += rows * combination_bits(n_block, l)
        b["oversampling"] += math.ceil(math.log2(fb.n_blocks)) if fb.n_blocks > 1 else 0
        if include_coefficients:
            b["amplitude"] += n_sub * rows * (l - 1) * amp_bits
            b["phase"] += n_sub * rows * (l - 1) * phase_bits
    b["cri"] = math.ceil(math.log2(report.p_csi)) if report.p_csi > 1 else 0
    b["rank"] = 1
    b["cqi"] = cqi_bits
    return FeedbackBits(total_bits=int(sum(b.values())), breakdown=b)


def reconstruct_component(comp, fb, use_reference=False):
    """Rows ``[N_R, N_P]`` rebuilt from one :class:`PmiComponent`."""
    cols = fb.block_columns(*comp.q0)
    if np.any(comp.q < 0) or np.any(comp.q >= len(cols)):
        raise IndexError("PMI index outside the orthogonal block")
    basis = fb.words[:, cols].conj().T / fb.n_ports           # rows b^H / N_T
    a = comp.a * comp.ref[:, None] if use_reference else comp.a
    return np.einsum("rl,rlp->rp", a, basis[comp.q])


def reconstruct_pmi(report, fb, use_reference=False):
    """Reconstructed port-domain rows: ``[N_R, N_P]`` for one sub-band, else ``[BWP, N_R, N_P]``."""
    comps = report.components if isinstance(report, CsiReport) else [report]
    rows = np.stack([reconstruct_component(c, fb, use_reference) for c in comps])
    return rows[0] if len(comps) == 1 else rows


def dependent_columns(f, tol=1e-9):
    """Indices of columns of ``f`` that lie in the span of the preceding ones."""
    bad = []
    basis = np.zeros((f.shape[0], 0), dtype=complex)
    for j in range(f.shape[1]):
        v = f[:, j]
        resid = v - basis @ (basis.conj().T @ v)
        norm = np.linalg.norm(resid)
        if norm <= tol * max(np.linalg.norm(v), 1e-300):
            bad.append(j)
            continue
        basis = np.concatenate([basis, (resid / norm)[:, None]], axis=1)
    return bad


def is_orthogonal_block(f, tol=ORTHO_TOL):
    gram = f.conj().T @ f
    n_t = f.shape[0]
    return np.max(np.abs(gram - n_t * np.eye(f.shape[1]))) <= tol * n_t


def _right_inverse(f, strict=True):
    bad = dependent_columns(f)
    if bad:
        if strict:
            raise np.linalg.LinAlgError(
                f"CSI-RS codebook is rank-deficient; columns {bad} depend on earlier columns")
        return np.linalg.pinv(f)
    if is_orthogonal_block(f):
        return f.conj().T / f.shape[0]
    return np.linalg.pinv(f)


def reconstruct_channel(beamformed, csirs, fast=None, strict=True):
    """``(H F) F^+``: channel rows from beamformed rows ``[..., N_R, P]``.

    When the CSI-RS columns are mutually orthogonal with ``||f||^2 = N_T``
    (any subset of one orthogonal DFT block) ``F^+ = F^H / N_T`` and the
    pseudo-inverse is skipped; ``fast=False`` forces the general route.
    """
    f = csirs.words if hasattr(csirs, "words") else np.asarray(csirs, dtype=complex)
    beamformed = check_complex_array(beamformed, "beamformed")
    if beamformed.shape[-1] != f.shape[1]:
        raise ValueError(f"beamformed rows have {beamformed.shape[-1]} beams, codebook has {f.shape[1]}")
    bad = dependent_columns(f)
    if bad:
        if strict:
            raise np.linalg.LinAlgError(
                f"CSI-RS codebook is rank-deficient; columns {bad} depend on earlier columns")
        return beamformed @ np.linalg.pinv(f)
    use_fast = is_orthogonal_block(f) if fast is None else fast
    if use_fast:
        if not is_orthogonal_block(f):
            raise ValueError("fast path requires mutually orthogonal CSI-RS columns")
        return beamformed @ f.conj().T / f.shape[0]
    return beamformed @ np.linalg.pinv(f)


def aggregate_users(estimates):
    """Stack per-user estimates in the given order into ``[U, N_R, N_P]`` (or with sub-band axis)."""
    estimates = [np.asarray(e) for e in estimates]
    if not estimates:
        raise ValueError("no user estimates to aggregate")
    shape = estimates[0].shape
    for i, e in enumerate(estimates):
        if e.shape != shape:
            raise ValueError(f"estimate {i} has shape {e.shape}, expected {shape}")
    return np.stack(estimates)


def scale_to_snr(est, beam, snr, noise_power, n_subcarriers):
    """Rescale a relative estimate so that ``||est f||^2 = snr K N_T sigma^2``.

    ``beam`` is the reported codeword ``[N_T]`` or a set of codewords
    ``[N_T, P]``; with a set, the strongest codeword under the estimate is
    matched, which stays well defined when a coarse estimate is nearly
    orthogonal to the reported one.  ``est`` may carry a leading sub-band
    axis; the scale is common to all sub-bands of the user.
    """
    beam = np.asarray(beam)
    n_t = beam.shape[0]
    target = snr * n_subcarriers * n_t * noise_power
    cols = beam[:, None] if beam.ndim == 1 else beam
    proj = np.sum(np.abs(est @ cols) ** 2, axis=-2)             # [..., P]
    proj = proj.reshape(-1, cols.shape[1]).mean(axis=0)
    current = float(proj.max())
    if current <= 0 or target <= 0:
        return est
    return est * math.sqrt(target / current)
