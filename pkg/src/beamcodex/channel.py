"""Clustered MU-MIMO OFDM channel generator.

A desk-scale stand-in for a full geometry-based stochastic simulator.  Each
user sees a handful of clusters (a direct cluster along the line towards the
base station, local scatterer clusters around it and, occasionally, one of a
few fixed site scatterers), every cluster made of several sub-paths.  The
frequency response at slot ``t`` and subcarrier ``k`` is

    H[t, k] = sum_p g_p exp(-j 2 pi tau_p f_k) exp(j 2 pi nu_p t dt) a_rx(p) a_tx(p)^H

with unit-norm array responses, so the per-entry mean power of ``H`` equals
``sum_p |g_p|^2 / (N_R N_T)``.  Path gains are scaled so that this mean power
equals the transmit power times the large-scale gain, spread over the
physical resource elements represented by one simulated subcarrier.

Delays are snapped to the sampling grid ``1 / (K * df)`` by default, which
makes the inverse DFT across subcarriers exactly sparse.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive_int

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array with ``n_x`` horizontal and ``n_y`` vertical elements.

    Ports are ordered with the vertical index running fastest, i.e. port
    ``p = ix * n_y + iy``, which matches ``kron(x_response, y_response)``.
    """

    n_x: int
    n_y: int = 1
    spacing: float = 0.5

    def __post_init__(self):
        check_positive_int(self.n_x, "n_x")
        check_positive_int(self.n_y, "n_y")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def n_ports(self):
        return self.n_x * self.n_y


def ula_response(n, cos_angle, spacing=0.5):
    """Unit-norm linear-array response ``exp(j 2 pi d m cos(theta)) / sqrt(n)``.

    ``cos_angle`` may be an array; the element axis is appended last.
    """
    m = np.arange(n)
    c = np.asarray(cos_angle, dtype=float)[..., None]
    return np.exp(2j * np.pi * spacing * m * c) / np.sqrt(n)


def steering_vector(geometry, u, v):
    """Planar response for direction cosines ``u`` (horizontal) and ``v`` (vertical)."""
    ax = ula_response(geometry.n_x, u, geometry.spacing)
    ay = ula_response(geometry.n_y, v, geometry.spacing)
    out = ax[..., :, None] * ay[..., None, :]
    return out.reshape(out.shape[:-2] + (geometry.n_ports,))


def array_response(geometry, azimuth, elevation):
    """Array response for angles measured from the horizontal and vertical array axes.

    The horizontal factor has phase progression ``pi * n * cos(azimuth)`` (for
    half-wavelength spacing) and the vertical factor ``pi * n * cos(elevation)``;
    the planar response is their Kronecker product and has unit norm.
    """
    return steering_vector(geometry, np.cos(azimuth), np.cos(elevation))


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario parameters for :func:`generate_channels`.

    Defaults are a desk-scale urban-macro-like sector: 3.5 GHz, 30 kHz
    numerology with each simulated subcarrier standing for ``rb_per_subcarrier``
    resource blocks, 10% vehicular users on a road crossing the sector.  The
    cluster parameters are plausible values, not a calibrated 3GPP set.
    """

    n_users: int = 16
    n_rx: int = 4
    carrier_hz: float = 3.5e9
    n_subcarriers: int = 64
    n_timeslots: int = 32
    slot_dt: float = 0.5e-3
    subcarrier_spacing: float = 30e3
    rb_per_subcarrier: int = 4
    cluster_count: int = 5
    paths_per_cluster: int = 4
    delay_spread: float = 30e-9
    azimuth_spread_deg: float = 12.0
    elevation_spread_deg: float = 2.0
    subpath_azimuth_spread_deg: float = 2.0
    subpath_elevation_spread_deg: float = 0.5
    direct_cluster_gain_db: float = 6.0
    vehicular_fraction: float = 0.1
    vehicular_speed_mean: float = 25.0
    vehicular_speed_std: float = math.sqrt(5.0)
    pedestrian_speed_max: float = 3.0
    cell_radius: float = 250.0
    min_distance: float = 35.0
    bs_height: float = 25.0
    ue_height: float = 1.5
    sector_center_deg: float = 0.0
    sector_halfwidth_deg: float = 60.0
    road_offset: float = 150.0
    road_heading_deg: float = 20.0
    n_site_scatterers: int = 6
    site_scatterer_prob: float = 0.3
    tx_power_dbm: float = 46.0
    noise_figure_db: float = 7.0
    shadowing_db: float = 6.0
    noise_power: float | None = None
    integer_delays: bool = True
    rng_seed: int = 0
    site_seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_rx", "n_subcarriers", "n_timeslots",
                     "rb_per_subcarrier", "cluster_count", "paths_per_cluster"):
            check_positive_int(getattr(self, name), name)
        check_positive_int(self.n_site_scatterers, "n_site_scatterers", minimum=0)
        for name in ("carrier_hz", "slot_dt", "subcarrier_spacing", "cell_radius",
                     "min_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delay_spread < 0:
            raise ValueError("delay_spread must be non-negative")
        if self.min_distance >= self.cell_radius:
            raise ValueError("min_distance must be below cell_radius")
        if not 0 <= self.vehicular_fraction <= 1:
            raise ValueError("vehicular_fraction must lie in [0, 1]")
        if self.noise_power is None:
            n0 = BOLTZMANN * 290.0 * self.subcarrier_spacing * 10 ** (self.noise_figure_db / 10)
            object.__setattr__(self, "noise_power", n0)
        elif self.noise_power < 0:
            raise ValueError("noise_power must be non-negative")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def subcarrier_bandwidth(self):
        """Bandwidth represented by one simulated subcarrier (Hz)."""
        return self.rb_per_subcarrier * 12 * self.subcarrier_spacing

    @property
    def n_resource_blocks(self):
        return self.n_subcarriers * self.rb_per_subcarrier

    @property
    def tap_duration(self):
        return 1.0 / (self.n_subcarriers * self.subcarrier_bandwidth)

    def frequencies(self):
        return np.arange(self.n_subcarriers) * self.subcarrier_bandwidth

    def times(self):
        return np.arange(self.n_timeslots) * self.slot_dt

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        if "subcarrier_spacing" in changes or "noise_figure_db" in changes:
            changes.setdefault("noise_power", None)
        return dataclasses.replace(self, **changes)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class PathSet:
    """Propagation paths of one user.

    BS-side directions are direction cosines ``(tx_u, tx_v)``; the UE side is a
    linear array with direction cosine ``rx_cos``.
    """

    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray
    tx_u: np.ndarray
    tx_v: np.ndarray
    rx_cos: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.gains)


def synthesize_channel(paths, geometry, n_rx, freqs, times):
    """Frequency response ``[T, K, N_R, N_T]`` of a :class:`PathSet`."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    a_tx = steering_vector(geometry, paths.tx_u, paths.tx_v)           # [P, N_T]
    a_rx = ula_response(n_rx, paths.rx_cos)                             # [P, N_R]
    freq_phase = np.exp(-2j * np.pi * np.outer(freqs, paths.delays))    # [K, P]
    time_phase = np.exp(2j * np.pi * np.outer(times, paths.dopplers))   # [T, P]
    coef = time_phase[:, None, :] * freq_phase[None, :, :] * paths.gains
    spatial = a_rx[:, :, None] * a_tx.conj()[:, None, :]                # [P, N_R, N_T]
    p = len(paths)
    out = coef.reshape(-1, p) @ spatial.reshape(p, -1)
    return out.reshape(len(times), len(freqs), n_rx, geometry.n_ports)


@dataclass
class ChannelTensor:
    """Complex channel ``h`` of shape ``[U, T, K, N_R, N_T]`` plus provenance."""

    h: np.ndarray
    seed: int | None = None
    config: ScenarioConfig | None = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.complex128)
        if self.h.ndim != 5:
            raise ValueError(f"channel tensor must be 5-D [U,T,K,N_R,N_T], got {self.h.shape}")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel tensor has non-finite entries")

    @property
    def shape(self):
        return self.h.shape

    @property
    def n_users(self):
        return self.h.shape[0]


def _site_layout(cfg):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.site_seed, 0x5173]))
    n = cfg.n_site_scatterers
    hw = math.radians(cfg.sector_halfwidth_deg + 10.0)
    az = math.radians(cfg.sector_center_deg) + rng.uniform(-hw, hw, n)
    dist = rng.uniform(60.0, 0.9 * cfg.cell_radius, n)
    height = rng.uniform(5.0, 30.0, n)
    xy = np.stack([dist * np.sin(az), dist * np.cos(az)], axis=1)
    return {"scatterer_xy": xy, "scatterer_height": height}


def _bs_direction(xy, height, cfg):
    """Direction cosines at the BS array towards a point (array broadside = sector centre)."""
    d2 = np.hypot(xy[..., 0], xy[..., 1])
    az = np.arctan2(xy[..., 0], xy[..., 1]) - math.radians(cfg.sector_center_deg)
    el = np.arctan2(height - cfg.bs_height, d2)
    return np.cos(el) * np.sin(az), np.sin(el)


def _sample_position(rng, cfg, vehicular):
    c = math.radians(cfg.sector_center_deg)
    hw = math.radians(cfg.sector_halfwidth_deg)
    if vehicular:
        # points on a straight road at distance road_offset from the BS
        h = math.radians(cfg.road_heading_deg) + c
        normal = np.array([math.cos(h), -math.sin(h)])
        along = np.array([math.sin(h), math.cos(h)])
        for _ in range(1000):
            s = rng.uniform(-cfg.cell_radius, cfg.cell_radius)
            xy = cfg.road_offset * normal + s * along
            d = float(np.hypot(*xy))
            az = math.atan2(xy[0], xy[1]) - c
            az = (az + math.pi) % (2 * math.pi) - math.pi
            if cfg.min_distance <= d <= cfg.cell_radius and abs(az) <= hw:
                heading = math.atan2(along[0], along[1]) + (0.0 if rng.random() < 0.5 else math.pi)
                return xy, heading
    r2 = rng.uniform(cfg.min_distance ** 2, cfg.cell_radius ** 2)
    az = c + rng.uniform(-hw, hw)
    d = math.sqrt(r2)
    xy = np.array([d * math.sin(az), d * math.cos(az)])
    return xy, rng.uniform(-math.pi, math.pi)


def _pathloss_db(d3d, cfg):
    # 3GPP UMa NLOS-style slope
    return 13.54 + 39.08 * math.log10(d3d) + 20 * math.log10(cfg.carrier_hz / 1e9) \
        - 0.6 * (cfg.ue_height - 1.5)


def draw_user_paths(cfg, geometry, user, site=None):
    """Draw the :class:`PathSet` of one user; pure function of ``(cfg, user)``."""
    if site is None:
        site = _site_layout(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 0xC4A7, user]))
    vehicular = rng.random() < cfg.vehicular_fraction
    xy, heading = _sample_position(rng, cfg, vehicular)
    if vehicular:
        speed = max(0.0, rng.normal(cfg.vehicular_speed_mean, cfg.vehicular_speed_std))
    else:
        speed = rng.uniform(0.0, cfg.pedestrian_speed_max)
    d2 = float(np.hypot(*xy))
    d3 = math.hypot(d2, cfg.bs_height - cfg.ue_height)
    pl_db = _pathloss_db(d3, cfg) + rng.normal(0.0, cfg.shadowing_db)
    u0, v0 = _bs_direction(xy, cfg.ue_height, cfg)
    az0 = math.asin(float(np.clip(u0 / math.cos(math.asin(v0)), -1, 1)))
    el0 = math.asin(float(v0))
    ue_orient = rng.uniform(-math.pi, math.pi)
    to_bs = math.atan2(-xy[0], -xy[1])

    n_c, n_p = cfg.cluster_count, cfg.paths_per_cluster
    c_az = np.empty(n_c)
    c_el = np.empty(n_c)
    c_delay = np.empty(n_c)
    c_world_aoa = np.empty(n_c)
    c_power_db = np.empty(n_c)
    r_tau = 2.3
    ds = max(cfg.delay_spread, 1e-12)
    for c in range(n_c):
        if c == 0:
            c_az[c], c_el[c], c_delay[c] = az0, el0, 0.0
            c_world_aoa[c] = to_bs
            c_power_db[c] = cfg.direct_cluster_gain_db
            continue
        n_sites = len(site["scatterer_xy"])
        if n_sites and rng.random() < cfg.site_scatterer_prob:
            s = rng.integers(n_sites)
            sxy = site["scatterer_xy"][s]
            su, sv = _bs_direction(sxy, site["scatterer_height"][s], cfg)
            sv = float(sv)
            c_el[c] = math.asin(sv)
            c_az[c] = math.asin(float(np.clip(su / math.cos(c_el[c]), -1, 1)))
            excess = (np.hypot(*sxy) + np.hypot(*(sxy - xy)) - d2) / SPEED_OF_LIGHT
            c_delay[c] = float(excess)
            c_world_aoa[c] = math.atan2(*(sxy - xy))
        else:
            c_az[c] = az0 + rng.laplace(0.0, math.radians(cfg.azimuth_spread_deg))
            c_el[c] = el0 + rng.laplace(0.0, math.radians(cfg.elevation_spread_deg))
            c_delay[c] = rng.exponential(cfg.delay_spread) if cfg.delay_spread > 0 else 0.0
            c_world_aoa[c] = rng.uniform(-math.pi, math.pi)
        c_power_db[c] = (-10 * math.log10(math.e) * c_delay[c] * (r_tau - 1) / (r_tau * ds)
                         + rng.normal(0.0, 3.0))

    az = np.repeat(c_az, n_p) + rng.laplace(0.0, math.radians(cfg.subpath_azimuth_spread_deg), n_c * n_p)
    el = np.repeat(c_el, n_p) + rng.laplace(0.0, math.radians(cfg.subpath_elevation_spread_deg), n_c * n_p)
    az = np.clip(az, -math.pi / 2, math.pi / 2)
    el = np.clip(el, -math.pi / 2, math.pi / 2)
    world_aoa = np.repeat(c_world_aoa, n_p) + rng.laplace(0.0, math.radians(10.0), n_c * n_p)
    delays = np.repeat(c_delay, n_p)
    tap = cfg.tap_duration
    max_delay = (cfg.n_subcarriers - 1) * tap
    delays = np.minimum(delays, max_delay)
    if cfg.integer_delays:
        delays = np.round(delays / tap) * tap
    power = np.repeat(10 ** (c_power_db / 10), n_p)
    power /= power.sum()
    phases = rng.uniform(0, 2 * np.pi, n_c * n_p)

    rx_gain = 10 ** ((cfg.tx_power_dbm - 30 - pl_db) / 10)
    per_entry = rx_gain * cfg.n_subcarriers / (cfg.n_resource_blocks * 12)
    scale = geometry.n_ports * cfg.n_rx * per_entry
    gains = np.sqrt(power * scale) * np.exp(1j * phases)
    dopplers = speed / cfg.wavelength * np.cos(world_aoa - heading)

    meta = {"user": user, "xy": xy, "vehicular": bool(vehicular), "speed": speed,
            "pathloss_db": pl_db, "per_entry_power": per_entry}
    return PathSet(
        gains=gains,
        delays=delays,
        dopplers=dopplers,
        tx_u=np.cos(el) * np.sin(az),
        tx_v=np.sin(el),
        rx_cos=np.cos(world_aoa - ue_orient),
        meta=meta,
    )


class UserPool:
    """Lazily-evaluated population of users for one scenario.

    Paths are drawn per user on first use and cached, so drops that touch a
    few users at a few slots never materialize the full tensor.
    """

    def __init__(self, cfg, geometry):
        self.cfg = cfg
        self.geometry = geometry
        self._site = _site_layout(cfg)
        self._paths = {}

    def __len__(self):
        return self.cfg.n_users

    def paths(self, user):
        if not 0 <= user < self.cfg.n_users:
            raise IndexError(f"user {user} outside pool of {self.cfg.n_users}")
        if user not in self._paths:
            self._paths[user] = draw_user_paths(self.cfg, self.geometry, user, self._site)
        return self._paths[user]

    def channel(self, users, slots=None, subcarriers=None):
        """Channel ``[len(users), T', K', N_R, N_T]`` on the requested grid."""
        times = self.cfg.times() if slots is None else self.cfg.times()[np.asarray(slots)]
        freqs = (self.cfg.frequencies() if subcarriers is None
                 else self.cfg.frequencies()[np.asarray(subcarriers)])
        return np.stack([
            synthesize_channel(self.paths(int(u)), self.geometry, self.cfg.n_rx, freqs, times)
            for u in users
        ])


def generate_channels(cfg, geometry):
    """Full channel tensor ``[U, T, K, N_R, N_T]`` for ``cfg``; deterministic in the seeds."""
    if not isinstance(cfg, ScenarioConfig):
        raise TypeError("cfg must be a ScenarioConfig")
    pool = UserPool(cfg, geometry)
    h = pool.channel(range(cfg.n_users))
    return ChannelTensor(h=h, seed=cfg.rng_seed, config=cfg)
