"""MU-MIMO downlink: RZF precoding, LMMSE SINR, scheduling and effective sum SE.

Data symbols follow the same scaling as the pilots,
``y = H F s / sqrt(K N_T) + n``, with the precoders of all scheduled users
sharing the total power ``||F||_F^2 = N_T`` equally.  The SINR is evaluated on
the true channel while the precoders come from the reconstructed estimate.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int

logger = logging.getLogger(__name__)

DEFAULT_SCHEDULER_CAP = 8


@dataclass
class PrecoderSet:
    """Per-user precoders ``f[i]`` of shape ``[N_T, R_i]`` for ``users[i]``.

    ``power_scale`` is ``sqrt(N_T / U_sel)``; every user block has Frobenius
    norm equal to it.
    """

    users: np.ndarray
    f: list
    power_scale: float

    @property
    def ranks(self):
        return np.array([fi.shape[1] for fi in self.f], dtype=int)

    def stacked(self):
        """All layers side by side ``[N_T, L_total]`` and the owner of each layer."""
        owner = np.concatenate([np.full(fi.shape[1], i) for i, fi in enumerate(self.f)])
        return np.concatenate(self.f, axis=1), owner


def layer_rows(est_u, rank):
    """Strongest ``rank`` right-singular directions of one user's estimate, as rows scaled by sigma."""
    _, s, vh = np.linalg.svd(est_u, full_matrices=False)
    return s[:rank, None] * vh[:rank]


def regularization(n_layers, noise_power, n_subcarriers):
    """MMSE diagonal loading for ``n_layers`` streams at total power ``N_T``."""
    return n_layers * n_subcarriers * noise_power


def rzf_precode(est, noise_power, ranks=None, users=None, n_subcarriers=1, alpha=None):
    """Regularized zero-forcing precoders from stacked estimates.

    Parameters
    ----------
    est : ndarray [U, N_R, N_P]
        Reconstructed channels of the candidate users.
    noise_power : float
        Noise power per resource element.
    ranks : sequence of int, optional
        Layers per user (default 1); each layer is a virtual user whose row is
        a scaled right singular vector of the user's estimate.
    users : sequence of int, optional
        Labels stored in the result (default ``range(U)``).
    n_subcarriers : int
        ``K`` in the pilot/data scaling, entering the regularization.
    alpha : float, optional
        Override the loading ``sum(ranks) * K * sigma^2``.
    """
    est = np.asarray(est, dtype=complex)
    if est.ndim == 2:
        est = est[None]
    n_users, _, n_t = est.shape
    check_positive_int(n_users, "number of users")
    ranks = [1] * n_users if ranks is None else [int(r) for r in ranks]
    users = np.arange(n_users) if users is None else np.asarray(users)
    g = np.concatenate([layer_rows(est[i], ranks[i]) for i in range(n_users)], axis=0)
    n_layers = g.shape[0]
    if alpha is None:
        alpha = regularization(n_layers, noise_power, n_subcarriers)
    gram = g @ g.conj().T + alpha * np.eye(n_layers)
    if alpha == 0 and np.linalg.matrix_rank(gram) < n_layers:
        raise np.linalg.LinAlgError("zero regularization with rank-deficient channel sum")
    w = g.conj().T @ np.linalg.inv(gram)                     # [N_T, L]
    scale = math.sqrt(n_t / n_users)
    f, start = [], 0
    for r in ranks:
        wu = w[:, start:start + r]
        start += r
        norm = np.linalg.norm(wu)
        if norm == 0:
            raise ValueError("precoder of a scheduled user vanished (zero channel estimate)")
        f.append(wu * (scale / norm))
    return PrecoderSet(users=users, f=f, power_scale=scale)


def lmmse_sinr(h, f_all, own, noise_power, n_subcarriers, convention="consistent", n_users=None):
    """Per-layer LMMSE SINR of one user.

    Parameters
    ----------
    h : ndarray [..., N_R, N_T]
        True channel of the user at one or more resource elements.
    f_all : ndarray [N_T, L]
        Precoders of all scheduled layers.
    own : array of int
        Columns of ``f_all`` belonging to this user.
    convention : {"consistent", "user_loaded"}
        ``"consistent"`` uses the covariance ``H F F^H H^H + K N_T sigma^2 I``
        implied by the signal model.  ``"user_loaded"`` uses ``U N_T sigma^2`` as the
        loading and divides the ratio by ``K``; both agree for ``U = 1, K = 1``.

    Returns
    -------
    ndarray [..., len(own)]
        ``s / (1 - s)`` with ``s = g^H M^{-1} g`` for each own layer ``g``.
    """
    e = h @ f_all                                             # [..., N_R, L]
    n_r, n_t = h.shape[-2], h.shape[-1]
    if convention == "consistent":
        load, post = n_subcarriers * n_t * noise_power, 1.0
    elif convention == "user_loaded":
        load, post = (n_users or 1) * n_t * noise_power, 1.0 / n_subcarriers
    else:
        raise ValueError(f"unknown SINR convention {convention!r}")
    m = e @ np.swapaxes(e.conj(), -1, -2) + load * np.eye(n_r)
    g = e[..., :, own]
    sol = np.linalg.solve(m, g)
    s = np.real(np.sum(g.conj() * sol, axis=-2))
    s = np.clip(s, 0.0, 1.0 - 1e-15)
    return post * s / (1.0 - s)


def sinr_all(h_users, precoders, noise_power, n_subcarriers, convention="consistent"):
    """SINR ``[U_sel, ..., R_max]`` for every scheduled user (zeros pad unused layers).

    ``h_users[i]`` is the true channel ``[..., N_R, N_T]`` of ``precoders.users[i]``.
    """
    f_all, owner = precoders.stacked()
    r_max = int(precoders.ranks.max())
    out = []
    for i, h in enumerate(h_users):
        own = np.flatnonzero(owner == i)
        s = lmmse_sinr(h, f_all, own, noise_power, n_subcarriers, convention,
                       n_users=len(precoders.users))
        pad = np.zeros(s.shape[:-1] + (r_max,))
        pad[..., : s.shape[-1]] = s
        out.append(pad)
    return np.stack(out)


def _predicted_rates(est, assignments, noise_power, n_subcarriers):
    """Predicted sum SE for each assignment of ranks in ``{0,1,2}`` (estimate used as truth).

    Assignments sharing the same sequence of nonzero ranks are evaluated as one batch.
    """
    n_users, _, n_t = est.shape
    max_rank = 2
    # precompute layer rows per user and rank
    rows = {(u, r): layer_rows(est[u], r) for u in range(n_users) for r in range(1, max_rank + 1)
            if r <= min(est.shape[1], n_t)}
    rates = np.full(len(assignments), -np.inf)
    def pattern(a):
        return tuple(r for r in a if r)

    for pat in sorted({pattern(a) for a in assignments}):
        idx = [i for i, a in enumerate(assignments) if pattern(a) == pat]
        total = sum(pat)
        if total == 0:
            rates[idx] = 0.0
            continue
        g = np.stack([np.concatenate([rows[(u, r)] for u, r in enumerate(assignments[i]) if r], axis=0)
                      for i in idx])                                # [B, L, N_T]
        sel = np.array([[u for u, r in enumerate(assignments[i]) if r] for i in idx])
        rks = np.array([[r for r in assignments[i] if r] for i in idx])
        alpha = regularization(total, noise_power, n_subcarriers)
        gram = g @ np.swapaxes(g.conj(), 1, 2) + alpha * np.eye(total)
        w = np.swapaxes(g.conj(), 1, 2) @ np.linalg.inv(gram)      # [B, N_T, L]
        n_sel = sel.shape[1]
        owner = np.stack([np.repeat(np.arange(n_sel), rk) for rk in rks])   # [B, L]
        norms = np.zeros((len(idx), n_sel))
        col_pow = np.sum(np.abs(w) ** 2, axis=1)                   # [B, L]
        np.add.at(norms, (np.arange(len(idx))[:, None], owner), col_pow)
        layer_scale = math.sqrt(n_t / n_sel) / np.sqrt(np.take_along_axis(norms, owner, 1))
        f = w * layer_scale[:, None, :]
        total_rate = np.zeros(len(idx))
        load = n_subcarriers * n_t * noise_power
        for j in range(n_sel):
            h = est[sel[:, j]]                                     # [B, N_R, N_T]
            e = h @ f                                               # [B, N_R, L]
            m = e @ np.swapaxes(e.conj(), 1, 2) + load * np.eye(h.shape[1])
            sol = np.linalg.solve(m, e)
            s = np.real(np.sum(e.conj() * sol, axis=1))            # [B, L]
            s = np.clip(s, 0.0, 1.0 - 1e-15)
            mine = owner == j
            total_rate += np.sum(np.where(mine, np.log2(1.0 / (1.0 - s)), 0.0), axis=1)
        rates[idx] = total_rate
    return rates


@dataclass
class Schedule:
    users: np.ndarray
    ranks: np.ndarray
    predicted_se: float
    exhaustive: bool = True


def schedule(est, noise_power, candidates=None, n_subcarriers=1, cap=DEFAULT_SCHEDULER_CAP,
             max_users=None, max_rank=2, greedy_fallback=False, rel_tol=1e-12, rank_limits=None):
    """Pick users and ranks maximizing the predicted sum SE on the estimate.

    Parameters
    ----------
    est : ndarray [U, N_R, N_P] or [U, BWP, N_R, N_P]
        Reconstructed channels; with a sub-band axis the predicted SE is
        averaged over sub-bands.
    candidates : sequence of int, optional
        Labels of the rows of ``est`` (default ``range(U)``).
    cap : int
        Largest ``U`` for exhaustive search over ``{off, 1, ..., max_rank}^U``.
    max_users : int, optional
        Limit on simultaneously scheduled users (1 gives SU-MIMO).
    greedy_fallback : bool
        Above the cap, add the best (user, rank) one at a time instead of
        raising.  Not an exhaustive search.
    rank_limits : sequence of int, optional
        Per-candidate rank ceiling, e.g. the reported rank indicators.

    Ties within ``rel_tol`` go to the lexicographically smallest sorted
    ``(user, rank)`` list.
    """
    est = np.asarray(est, dtype=complex)
    if est.ndim == 3:
        est = est[:, None]
    n_users = est.shape[0]
    candidates = np.arange(n_users) if candidates is None else np.asarray(candidates)
    max_rank = min(max_rank, est.shape[2], est.shape[3])
    limits = (np.full(n_users, max_rank) if rank_limits is None
              else np.minimum(np.asarray(rank_limits, dtype=int), max_rank))
    if len(limits) != n_users:
        raise ValueError("rank_limits must have one entry per candidate")
    if n_users > cap:
        if not greedy_fallback:
            raise ValueError(
                f"{n_users} users exceed the exhaustive scheduler cap of {cap}; "
                "lower the user count or enable greedy_fallback")
        return _greedy(est, noise_power, candidates, n_subcarriers, max_users, limits)
    choices = range(max_rank + 1)
    assignments = [a for a in itertools.product(choices, repeat=n_users)
                   if any(a) and all(r <= lim for r, lim in zip(a, limits))
                   and (max_users is None or sum(1 for r in a if r) <= max_users)]
    rates = np.mean([_predicted_rates(est[:, b], assignments, noise_power, n_subcarriers)
                     for b in range(est.shape[1])], axis=0)
    return _pick(assignments, rates, candidates, rel_tol)


def _pick(assignments, rates, candidates, rel_tol, exhaustive=True):
    best = np.max(rates)
    near = np.flatnonzero(rates >= best - rel_tol * max(abs(best), 1.0))
    keys = [tuple((int(candidates[u]), r) for u, r in enumerate(assignments[i]) if r) for i in near]
    j = near[min(range(len(near)), key=lambda n: keys[n])]
    a = assignments[j]
    sel = [u for u, r in enumerate(a) if r]
    return Schedule(users=candidates[sel], ranks=np.array([a[u] for u in sel]),
                    predicted_se=float(rates[j]), exhaustive=exhaustive)


def _greedy(est, noise_power, candidates, n_subcarriers, max_users, limits):
    n_users = est.shape[0]
    current = [0] * n_users
    current_rate = 0.0
    while True:
        trials = []
        for u in range(n_users):
            for r in range(1, int(limits[u]) + 1):
                if current[u] == r:
                    continue
                if current[u] == 0 and max_users is not None and sum(1 for x in current if x) >= max_users:
                    continue
                a = list(current)
                a[u] = r
                trials.append(tuple(a))
        if not trials:
            break
        rates = np.mean([_predicted_rates(est[:, b], trials, noise_power, n_subcarriers)
                         for b in range(est.shape[1])], axis=0)
        j = int(np.argmax(rates))
        if rates[j] <= current_rate * (1 + 1e-12):
            break
        current, current_rate = list(trials[j]), float(rates[j])
    sched = _pick([tuple(current)], np.array([current_rate]), candidates, 0.0, exhaustive=False)
    return sched


@dataclass
class SeResult:
    """SINR grid and spectral efficiencies in bits/s/Hz (averaged over the evaluated grid)."""

    sinr: np.ndarray
    se_per_user: np.ndarray
    sum_se: float
    eff_sse: float


def effective_sum_se(sinr, budget=None, cells=None):
    """Overhead-adjusted sum spectral efficiency.

    Parameters
    ----------
    sinr : ndarray [U_sel, T_d, K_d, R]
        Linear SINR on the evaluated grid (zeros for unused layers).
    budget : ResourceBudget, optional
        Fraction of each ``(t, k)`` cell used for beam management and the
        signaling overhead; ``None`` means no overhead.
    cells : (slots, subcarriers), optional
        Grid indices of the ``T_d`` and ``K_d`` axes inside the budget grid
        (default: the full grid).
    """
    sinr = np.asarray(sinr, dtype=float)
    if sinr.ndim != 4:
        raise ValueError("sinr must be [U, T, K, R]")
    rate = np.sum(np.log2(1.0 + np.maximum(sinr, 0.0)), axis=-1)      # [U, T, K]
    se_user = rate.mean(axis=(1, 2))
    sum_se = float(se_user.sum())
    if budget is None:
        return SeResult(sinr=sinr, se_per_user=se_user, sum_se=sum_se, eff_sse=sum_se)
    w = budget.weights
    if cells is not None:
        w = w[np.ix_(np.asarray(cells[0]), np.asarray(cells[1]))]
    if w.shape != rate.shape[1:]:
        raise ValueError(f"budget grid {w.shape} does not match SINR grid {rate.shape[1:]}")
    eff = float(np.sum(rate * (1.0 - w)) / (w.size)) * (1.0 - budget.signaling_overhead)
    return SeResult(sinr=sinr, se_per_user=se_user, sum_se=sum_se, eff_sse=eff)


def non_pmi_baseline(cri, strength, csirs, included=None, users=None):
    """Rank-1 beamforming with the reported CSI-RS codewords.

    For each distinct reported codeword the user with the strongest reported
    SNR/RSRP is served with that codeword; ties go to the lower user.  Power is
    split equally, ``f = f_cri / sqrt(U_sel)``.
    """
    cri = np.asarray(cri, dtype=int)
    strength = np.asarray(strength, dtype=float)
    n = len(cri)
    users = np.arange(n) if users is None else np.asarray(users)
    included = np.ones(n, bool) if included is None else np.asarray(included, bool)
    best = {}
    for i in range(n):
        if not included[i] or cri[i] < 0:
            continue
        c = int(cri[i])
        if c not in best or strength[i] > strength[best[c]]:
            best[c] = i
    picks = sorted(best.values())
    if not picks:
        raise ValueError("no reports to serve")
    n_sel = len(picks)
    scale = math.sqrt(csirs.n_ports / n_sel)
    f = [csirs.words[:, [cri[i]]] / math.sqrt(n_sel) for i in picks]
    return PrecoderSet(users=users[picks], f=f, power_scale=scale)
