"""Beamspace (angular-grid) representation of codebooks and training samples.

A codeword ``f`` of a planar array is reshaped to ``F[ix, iy]`` and projected
onto array responses on uniform direction-cosine grids
``u_m = -1 + 2 m / n_x0`` and ``v_n = -1 + 2 n / n_y0``::

    O = A_x^H F conj(A_y),   A_x[:, m] = a_{N_X}(u_m)

so ``O[m, n] = a(u_m, v_n)^H f`` is the matched-filter output towards that
grid direction.  For half-wavelength spacing and ``n_x0 >= N_X`` the grid
responses form a tight frame and the map is inverted exactly by
pseudo-inverses on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channel import ula_response
from ..codebooks import Codebook


def cos_grid(n):
    return -1.0 + 2.0 * np.arange(n) / n


def angular_matrix(n_elements, n_grid, spacing=0.5):
    """``[n_elements, n_grid]`` matrix of array responses on the cosine grid."""
    return ula_response(n_elements, cos_grid(n_grid), spacing).T


def _check_grid(geometry, n_x0, n_y0):
    if n_x0 < geometry.n_x or n_y0 < geometry.n_y:
        raise ValueError(
            f"beamspace grid {n_x0}x{n_y0} is smaller than the {geometry.n_x}x{geometry.n_y} array")


def to_beamspace(codebook, geometry, n_x0, n_y0):
    """Complex beamspace ``[L, n_x0, n_y0]`` of every codeword."""
    _check_grid(geometry, n_x0, n_y0)
    words = codebook.words if isinstance(codebook, Codebook) else np.asarray(codebook)
    ax = angular_matrix(geometry.n_x, n_x0, geometry.spacing)
    ay = angular_matrix(geometry.n_y, n_y0, geometry.spacing)
    f = words.T.reshape(-1, geometry.n_x, geometry.n_y)
    return np.einsum("xm,lxy,yn->lmn", ax.conj(), f, ay.conj())


def from_beamspace(bs, geometry, kind="SSB"):
    """Invert :func:`to_beamspace` by least squares and renormalize to ``||f||^2 = N_T``."""
    bs = np.asarray(bs, dtype=complex)
    if bs.ndim == 2:
        bs = bs[None]
    _, n_x0, n_y0 = bs.shape
    _check_grid(geometry, n_x0, n_y0)
    ax = angular_matrix(geometry.n_x, n_x0, geometry.spacing)
    ay = angular_matrix(geometry.n_y, n_y0, geometry.spacing)
    left = np.linalg.pinv(ax.conj().T)            # [N_X, n_x0]
    right = np.linalg.pinv(ay.conj())             # [n_y0, N_Y]
    if np.linalg.matrix_rank(ax) < geometry.n_x or np.linalg.matrix_rank(ay) < geometry.n_y:
        raise np.linalg.LinAlgError("angular matrices are rank-deficient")
    f = np.einsum("xm,lmn,ny->lxy", left, bs, right)
    words = f.reshape(len(f), -1).T
    return Codebook.normalized(words, kind)


def split_complex(bs):
    """``[L, nx, ny]`` complex -> ``[nx, ny, 2L]`` real (real parts then imaginary parts)."""
    bs = np.moveaxis(np.asarray(bs), 0, -1)
    return np.concatenate([bs.real, bs.imag], axis=-1)


def merge_complex(x):
    """Inverse of :func:`split_complex`."""
    x = np.asarray(x)
    l_max = x.shape[-1] // 2
    return np.moveaxis(x[..., :l_max] + 1j * x[..., l_max:], -1, 0)


def minmax(values):
    """Min-max normalization; a constant vector maps to 1 if nonzero, else 0."""
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full_like(values, 1.0 if hi != 0 else 0.0)
    return (values - lo) / (hi - lo)


@dataclass
class BeamspaceSample:
    input: np.ndarray        # [n_x0 + 2, n_y0 + 2, 2 L]
    target: np.ndarray       # [n_x0, n_y0, 2 L]


def side_channels(feedback, l_max):
    """Per-beam reporter counts and min-max normalized linear RSRP sums."""
    counts = feedback.reporter_counts(l_max).astype(float)
    sums = feedback.rsrp_sums(l_max)
    return counts, minmax(sums)


def build_input(prior, feedback, geometry, n_x0, n_y0, scale=None):
    """Network input for a prior codebook and its SSB feedback.

    The interior holds the prior beamspace (divided by ``sqrt(N_T)`` unless
    ``scale`` is given); the one-cell border of real channel ``i`` holds the
    reporter count of beam ``i`` and that of imaginary channel ``i`` its
    normalized RSRP sum.  Excluded users contribute nothing.
    """
    l_max = len(prior)
    scale = np.sqrt(geometry.n_ports) if scale is None else scale
    interior = split_complex(to_beamspace(prior, geometry, n_x0, n_y0)) / scale
    counts, rsrp = side_channels(feedback, l_max)
    border = np.concatenate([counts, rsrp])
    x = np.empty((n_x0 + 2, n_y0 + 2, 2 * l_max))
    x[...] = border
    x[1:-1, 1:-1] = interior
    return x


def build_target(rsv, geometry, n_x0, n_y0, scale=None):
    scale = np.sqrt(geometry.n_ports) if scale is None else scale
    return split_complex(to_beamspace(rsv, geometry, n_x0, n_y0)) / scale


def build_sample(prior, feedback, rsv, geometry, n_x0, n_y0):
    """Training pair: (prior beamspace + feedback border, RSV beamspace)."""
    if len(prior) != len(rsv):
        raise ValueError(f"prior has {len(prior)} beams, RSV target has {len(rsv)}")
    if feedback.beam_rsrp.shape[1] != len(prior):
        raise ValueError("feedback was measured with a different number of beams")
    return BeamspaceSample(input=build_input(prior, feedback, geometry, n_x0, n_y0),
                           target=build_target(rsv, geometry, n_x0, n_y0))
