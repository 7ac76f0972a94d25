"""Independent reference implementations used by the tests.

Each oracle recomputes a quantity by direct enumeration or naive loops from
the defining formulas, without calling the package routine under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def dft(n):
    return np.array([[np.exp(2j * np.pi * a * b / n) for b in range(n)] for a in range(n)]) / math.sqrt(n)


def shifted_dft(o, n, q):
    d = np.diag([np.exp(-2j * np.pi * i * q / (o * n)) for i in range(n)])
    return d @ dft(n)


def fb_word(n_x, n_y, o_h, o_v, qx, qy, mx, my):
    """Oversampled planar DFT codeword, rescaled to ``||f||^2 = N_X N_Y``."""
    bx = shifted_dft(o_h, n_x, qx)[:, mx]
    by = shifted_dft(o_v, n_y, qy)[:, my]
    return np.kron(bx, by) * math.sqrt(n_x * n_y)


def all_fb_words(n_x, n_y, o_h, o_v):
    """Dict ``(qx, qy, mx, my) -> codeword`` over the whole codebook."""
    return {(qx, qy, mx, my): fb_word(n_x, n_y, o_h, o_v, qx, qy, mx, my)
            for qx in range(o_h) for qy in range(o_v) for mx in range(n_x) for my in range(n_y)}


def quantize_oracle(x, n_x, n_y, o_h, o_v, l_csi):
    """Exhaustive type-II PMI search.

    Q0 maximizes ``|x_r . b|`` over every row and every codeword of every
    shift; per row, the ``l_csi``-subset of the chosen orthogonal block with the
    largest captured ``sum |c|^2`` is found by enumerating all combinations.
    Returns ``(q0, q, a)`` with ``q`` ordered by decreasing ``|c|``.
    """
    words = all_fb_words(n_x, n_y, o_h, o_v)
    # scan in flat order of C = X B (rows, then columns ordered qx, mx, qy, my);
    # near-equal magnitudes keep the earlier entry
    best_key, best_val = None, -1.0
    for r in range(x.shape[0]):
        for qx, mx, qy, my in itertools.product(range(o_h), range(n_x), range(o_v), range(n_y)):
            v = abs(np.sum(x[r] * words[(qx, qy, mx, my)]))
            if v > best_val * (1 + 1e-12):
                best_key, best_val = (qx, qy, mx, my), v
    qx, qy = best_key[:2]
    block = [words[(qx, qy, mx, my)] for mx in range(n_x) for my in range(n_y)]
    q_rows, a_rows = [], []
    for r in range(x.shape[0]):
        c = np.array([np.sum(x[r] * w) for w in block])
        best_set, best_cap = None, -1.0
        for comb in itertools.combinations(range(len(block)), l_csi):
            cap = sum(abs(c[j]) ** 2 for j in comb)
            if cap > best_cap:
                best_set, best_cap = comb, cap
        ordered = sorted(best_set, key=lambda j: (-abs(c[j]), j))
        q_rows.append(ordered)
        a_rows.append([c[j] / c[ordered[0]] for j in ordered])
    return (qx, qy), np.array(q_rows), np.array(a_rows)


def reconstruct_oracle(q0, q, a, n_x, n_y, o_h, o_v):
    """Naive double loop: row ``r`` = sum over ``l`` of ``a[r, l] conj(b_{q[r, l]}) / N_T``."""
    n_t = n_x * n_y
    out = np.zeros((q.shape[0], n_t), dtype=complex)
    for r in range(q.shape[0]):
        for l in range(q.shape[1]):
            mx, my = divmod(int(q[r, l]), n_y)
            w = fb_word(n_x, n_y, o_h, o_v, q0[0], q0[1], mx, my)
            for p in range(n_t):
                out[r, p] += a[r, l] * np.conj(w[p]) / n_t
    return out


def rsrp_oracle(h_band, words, n_subcarriers):
    """Per-beam RSRP by explicit summation: max over rx of sum_k |h_k f / sqrt(K N_T)|^2."""
    n_users, n_k, n_r, n_t = h_band.shape
    out = np.zeros((n_users, words.shape[1]))
    for u in range(n_users):
        for i in range(words.shape[1]):
            per_rx = []
            for r in range(n_r):
                total = 0.0
                for k in range(n_k):
                    y = sum(h_band[u, k, r, p] * words[p, i] for p in range(n_t))
                    total += abs(y) ** 2 / (n_subcarriers * n_t)
                per_rx.append(total)
            out[u, i] = max(per_rx)
    return out


def decompose_oracle(ssb_words, fb_words, budgets):
    """Greedy per-beam top-|correlation| selection with de-duplication, by brute force."""
    taken, chosen = set(), []
    for i, need in enumerate(budgets):
        corr = [(abs(np.vdot(fb_words[:, j], ssb_words[:, i])), j) for j in range(fb_words.shape[1])]
        corr.sort(key=lambda t: (-t[0], t[1]))
        for _, j in corr:
            if need == 0:
                break
            if j not in taken:
                taken.add(j)
                chosen.append(j)
                need -= 1
    return chosen


def lmmse_rate(h_list, f_list, load):
    """Sum of log2(1 + SINR) with SINR = s / (1 - s), s = g^H (E E^H + load I)^-1 g."""
    f_all = np.concatenate(f_list, axis=1)
    owner = np.concatenate([[i] * f.shape[1] for i, f in enumerate(f_list)])
    total = 0.0
    for i, h in enumerate(h_list):
        e = h @ f_all
        m = e @ e.conj().T + load * np.eye(h.shape[0])
        for col in np.flatnonzero(owner == i):
            g = e[:, col]
            s = float(np.real(g.conj() @ np.linalg.solve(m, g)))
            s = min(max(s, 0.0), 1.0 - 1e-15)
            total += math.log2(1.0 / (1.0 - s))
    return total


def rzf_oracle(est_rows_per_user, alpha, n_t):
    """RZF with per-user Frobenius normalization to ``sqrt(N_T / U)``."""
    g = np.concatenate(est_rows_per_user, axis=0)
    w = g.conj().T @ np.linalg.inv(g @ g.conj().T + alpha * np.eye(g.shape[0]))
    out, start = [], 0
    for rows in est_rows_per_user:
        wu = w[:, start:start + rows.shape[0]]
        start += rows.shape[0]
        out.append(wu * math.sqrt(n_t / len(est_rows_per_user)) / np.linalg.norm(wu))
    return out


def svd_rows(h, r):
    _, s, vh = np.linalg.svd(h, full_matrices=False)
    return s[:r, None] * vh[:r]


def schedule_oracle(est, noise_power, n_subcarriers, limits=None, max_users=None):
    """Enumerate every (user subset, rank) assignment and return the best sorted (user, rank) list."""
    n_users, n_r, n_t = est.shape
    max_rank = min(2, n_r, n_t)
    limits = [max_rank] * n_users if limits is None else list(limits)
    load = n_subcarriers * n_t * noise_power
    best, best_key = -np.inf, None
    for ranks in itertools.product(range(max_rank + 1), repeat=n_users):
        if not any(ranks) or any(r > lim for r, lim in zip(ranks, limits)):
            continue
        sel = [u for u in range(n_users) if ranks[u]]
        if max_users is not None and len(sel) > max_users:
            continue
        rows = [svd_rows(est[u], ranks[u]) for u in sel]
        alpha = sum(ranks) * n_subcarriers * noise_power
        f = rzf_oracle(rows, alpha, n_t)
        rate = lmmse_rate([est[u] for u in sel], f, load)
        key = tuple((u, ranks[u]) for u in sel)
        if rate > best * (1 + 1e-9) + 1e-12 or (abs(rate - best) <= 1e-9 * max(abs(best), 1) and key < best_key):
            best, best_key = rate, key
    return best_key, best
