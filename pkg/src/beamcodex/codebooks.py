"""Beamforming codebooks: oversampled 2-D DFT, SSB and RSV constructions.

Column layout of the oversampled planar DFT codebook
----------------------------------------------------
``B = kron(B_x, B_y)`` with ``B_x = [U, D U, ..., D^(O_H-1) U]`` (and likewise
``B_y``), so the global column of horizontal shift ``qx``, horizontal beam
``mx``, vertical shift ``qy`` and vertical beam ``my`` is::

    col = (qx * N_X + mx) * (O_V * N_Y) + qy * N_Y + my

Within one orthogonal block (fixed ``qx, qy``) beams are ordered
``j = mx * N_Y + my``, which is the column order of
``(D^qx U_NX) kron (D^qy U_NY)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._validation import check_complex_array, check_index, check_positive_int
from .channel import ArrayGeometry, ChannelTensor

logger = logging.getLogger(__name__)

KINDS = ("SSB", "CSIRS", "FB", "RSV")
POWER_TOL = 1e-9


class Codebook:
    """Ordered set of beamforming codewords stored as columns of ``words``.

    Every codeword satisfies ``||f||^2 = N_T`` (checked at construction).
    """

    def __init__(self, words, kind):
        words = check_complex_array(words, "words", ndim=2)
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        if words.shape[1] < 1:
            raise ValueError("a codebook needs at least one codeword")
        n_t = words.shape[0]
        power = np.sum(np.abs(words) ** 2, axis=0)
        bad = np.flatnonzero(np.abs(power - n_t) > POWER_TOL * max(n_t, 1))
        if bad.size:
            raise ValueError(
                f"codewords {bad[:5].tolist()} violate ||f||^2 = {n_t} (got {power[bad[:5]]})")
        self._words = words.copy()
        self._words.setflags(write=False)
        self.kind = kind

    @classmethod
    def normalized(cls, words, kind):
        """Build a codebook after rescaling every column to ``||f||^2 = N_T``."""
        words = check_complex_array(words, "words", ndim=2)
        norms = np.linalg.norm(words, axis=0)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValueError(f"codewords {zero.tolist()} are zero and cannot be normalized")
        return cls(words * (np.sqrt(words.shape[0]) / norms), kind)

    @property
    def words(self):
        return self._words

    @property
    def n_ports(self):
        return self._words.shape[0]

    def __len__(self):
        return self._words.shape[1]

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, n_ports={self.n_ports}, size={len(self)})"

    def subset(self, columns, kind=None):
        columns = np.asarray(columns, dtype=int)
        return Codebook(self._words[:, columns], kind or self.kind)

    def header_extras(self):
        return {}


@dataclass(frozen=True)
class OversamplingSpec:
    o_h: int = 1
    o_v: int = 1

    def __post_init__(self):
        check_positive_int(self.o_h, "o_h")
        check_positive_int(self.o_v, "o_v")


class FbCodebook(Codebook):
    """Oversampled planar DFT codebook that remembers its index layout."""

    def __init__(self, words, geometry, spec):
        super().__init__(words, "FB")
        self.geometry = geometry
        self.spec = spec

    @property
    def block_size(self):
        return self.geometry.n_x * self.geometry.n_y

    @property
    def n_blocks(self):
        return self.spec.o_h * self.spec.o_v

    def global_index(self, qx, qy, mx, my):
        g, s = self.geometry, self.spec
        return (qx * g.n_x + mx) * (s.o_v * g.n_y) + qy * g.n_y + my

    def split_index(self, col):
        """Inverse of :meth:`global_index`: ``col -> (qx, qy, mx, my)``."""
        check_index(int(col), len(self), "column")
        g, s = self.geometry, self.spec
        ix, iy = divmod(int(col), s.o_v * g.n_y)
        qx, mx = divmod(ix, g.n_x)
        qy, my = divmod(iy, g.n_y)
        return qx, qy, mx, my

    def block_columns(self, qx, qy):
        """Global column indices of orthogonal block ``(qx, qy)`` in local order."""
        g = self.geometry
        mx, my = np.meshgrid(np.arange(g.n_x), np.arange(g.n_y), indexing="ij")
        return self.global_index(qx, qy, mx.ravel(), my.ravel())

    def block_of(self, col):
        qx, qy, _, _ = self.split_index(col)
        return qx, qy

    def header_extras(self):
        g = self.geometry
        return {"geometry": [g.n_x, g.n_y, g.spacing], "oversampling": [self.spec.o_h, self.spec.o_v]}


def codebook_from_header(header, words):
    kind = header.get("codebook_kind")
    if kind == "FB" and "geometry" in header:
        n_x, n_y, spacing = header["geometry"]
        return FbCodebook(words, ArrayGeometry(n_x, n_y, spacing), OversamplingSpec(*header["oversampling"]))
    return Codebook(words, kind)


def dft_matrix(n):
    """Unitary DFT matrix ``U[n, m] = exp(j 2 pi n m / N) / sqrt(N)``.

    Column ``m`` is the half-wavelength array response at ``cos(theta) = 2 m / N``.
    """
    n = check_positive_int(n, "n")
    idx = np.arange(n)
    return np.exp(2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def oversampling_shift(o, n):
    """Diagonal ``D_{O,N}`` entries ``exp(-j 2 pi i / (O N))``, returned as a vector."""
    return np.exp(-2j * np.pi * np.arange(n) / (o * n))


def oversampled_1d(o, n):
    """``[U, D U, ..., D^(O-1) U]`` of shape ``[N, O N]``."""
    u = dft_matrix(n)
    d = oversampling_shift(o, n)
    return np.concatenate([(d ** q)[:, None] * u for q in range(o)], axis=1)


def oversampled_dft(geometry, spec=None):
    """Oversampled planar DFT feedback codebook ``kron(B_{O_H,N_X}, B_{O_V,N_Y})``."""
    spec = spec or OversamplingSpec()
    bx = oversampled_1d(spec.o_h, geometry.n_x)
    by = oversampled_1d(spec.o_v, geometry.n_y)
    words = np.kron(bx, by) * np.sqrt(geometry.n_ports)
    return FbCodebook(words, geometry, spec)


def _block_index(fb, q0):
    if isinstance(q0, tuple):
        qx, qy = q0
        if not (0 <= qx < fb.spec.o_h and 0 <= qy < fb.spec.o_v):
            raise IndexError(f"oversampling shift {q0} out of range")
        return qx, qy
    return fb.block_of(q0)


def orthogonal_subset(fb, q0):
    """Orthogonal block containing column ``q0`` (or given as a ``(qx, qy)`` pair).

    Returns the ``[N_P, N_X N_Y]`` matrix ``(D^qx U_NX) kron (D^qy U_NY)``
    scaled to the codebook power (``||f||^2 = N_T``).
    """
    qx, qy = _block_index(fb, q0)
    return fb.words[:, fb.block_columns(qx, qy)]


def default_ssb_band(n_subcarriers, fraction=0.2):
    """Centred contiguous sub-band covering ``fraction`` of the band (at least one subcarrier)."""
    width = max(1, int(round(fraction * n_subcarriers)))
    width = min(width, n_subcarriers)
    start = (n_subcarriers - width) // 2
    return np.arange(start, start + width)


def _phase_fixed(v):
    i = int(np.argmax(np.abs(v) > 1e-12 * np.max(np.abs(v))))
    return v * np.exp(-1j * np.angle(v[i]))


def rsv_from_band(h_band, l_max):
    """RSV codebook from per-user channels on a sub-band.

    Parameters
    ----------
    h_band : ndarray, shape [U, K_b, N_R, N_T]
        Channel of each user on the subcarriers of the band (one slot).
    l_max : int
        Number of codewords.

    Returns
    -------
    codebook : Codebook
        Right singular vectors of the mean band covariance of each user, the
        ``l_max`` globally largest singular values first.  Ties go to the lower
        user index, then the lower singular index.
    info : list of (user, index, singular value)
    """
    h_band = check_complex_array(h_band, "h_band", ndim=4)
    n_t = h_band.shape[-1]
    l_max = check_positive_int(l_max, "l_max")
    if l_max > n_t:
        raise ValueError(f"l_max={l_max} exceeds N_T={n_t}")
    if not np.any(h_band):
        raise ValueError("channel is identically zero; RSV codebook is undefined")
    cov = np.einsum("ukri,ukrj->uij", h_band.conj(), h_band) / h_band.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[:, ::-1], 0.0, None)
    evecs = evecs[:, :, ::-1]
    sv = np.sqrt(evals)
    n_users = sv.shape[0]
    users = np.repeat(np.arange(n_users), n_t)
    idx = np.tile(np.arange(n_t), n_users)
    flat = sv.ravel()
    order = np.lexsort((idx, users, -flat))[:l_max]
    words = np.stack([_phase_fixed(evecs[users[o], :, idx[o]]) for o in order], axis=1)
    info = [(int(users[o]), int(idx[o]), float(flat[o])) for o in order]
    return Codebook.normalized(words, "RSV"), info


def rsv_codebook(h, slot, l_max, band=None):
    """RSV codebook of a channel tensor at one slot, computed on the SSB band."""
    arr = h.h if isinstance(h, ChannelTensor) else np.asarray(h)
    if arr.ndim != 5:
        raise ValueError("expected a [U, T, K, N_R, N_T] channel")
    check_index(int(slot), arr.shape[1], "slot")
    if band is None:
        band = default_ssb_band(arr.shape[2])
    cb, _ = rsv_from_band(arr[:, slot][:, np.asarray(band)], l_max)
    return cb


def random_dft_ssb(fb, l_max, seed):
    """``l_max`` distinct columns of ``fb`` drawn uniformly without replacement."""
    l_max = check_positive_int(l_max, "l_max")
    if l_max > len(fb):
        raise ValueError(f"l_max={l_max} exceeds codebook size {len(fb)}")
    rng = np.random.default_rng(seed)
    cols = rng.choice(len(fb), size=l_max, replace=False)
    return Codebook(fb.words[:, cols], "SSB")


def unbeamformed_codebook(n_ports):
    """Single codeword exciting only the first port (``sqrt(N_T) e_0``)."""
    words = np.zeros((n_ports, 1), dtype=complex)
    words[0, 0] = np.sqrt(n_ports)
    return Codebook(words, "SSB")
