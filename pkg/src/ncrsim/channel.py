"""Radio channel models: path loss, correlated shadowing, geometric multipath.

Large-scale terms (profile, LOS state, path loss, shadowing) evolve only when
nodes move; small-scale fading is a fixed set of geometric paths whose Doppler
phases rotate every slot and whose per-RB phase factors provide frequency
selectivity. A link is generated once in its downlink orientation
(infrastructure transmitter, mobile receiver) and reused reciprocally.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .antenna import ArrayConfig, GAIN_FLOOR_DB, array_response, element_gain_toward

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299792458.0
THERMAL_NOISE_DBM_HZ = -174.0

N_PATHS = 6
RICIAN_K_DB = 10.0
SCATTER_ELEVATION_SPREAD_RAD = math.radians(10.0)

SHADOW_SIGMA_DB = {
    ("UMa", True): 4.0,
    ("UMa", False): 6.0,
    ("UMi", True): 4.0,
    ("UMi", False): 7.8,
}
SHADOW_CORR_DIST_M = {"UMa": 37.0, "UMi": 13.0}


def assign_profile(tx_kind: str, rx_kind: str) -> str:
    """Propagation profile for a link between two node kinds.

    gNB links (to repeaters and to UEs) use the urban-macro profile, repeater
    access links use urban-micro; the reverse directions share the profile
    (channel reciprocity under TDD).
    """
    pair = {tx_kind.lower(), rx_kind.lower()}
    if pair in ({"gnb", "ncr"}, {"gnb", "ue"}):
        return "UMa"
    if pair == {"ncr", "ue"}:
        return "UMi"
    raise ValueError(f"no link defined between {tx_kind!r} and {rx_kind!r}")


def pathloss_db(profile: str, los: bool, d3d_m: float, fc_ghz: float,
                ue_height_m: float = 1.5) -> float:
    """Distance/frequency path loss in dB for the given profile and LOS state.

    NLOS takes the max of the LOS curve and the NLOS curve, so it can never
    undercut LOS. Distances below 1 m are clamped with a warning.
    """
    if d3d_m < 1.0:
        log.warning("pathloss distance %.3g m clamped to 1 m", d3d_m)
        d3d_m = 1.0
    lg_d = math.log10(d3d_m)
    lg_f = math.log10(fc_ghz)
    if profile == "UMa":
        pl_los = 28.0 + 22.0 * lg_d + 20.0 * lg_f
        if los:
            return pl_los
        pl_nlos = 13.54 + 39.08 * lg_d + 20.0 * lg_f - 0.6 * (ue_height_m - 1.5)
        return max(pl_los, pl_nlos)
    if profile == "UMi":
        pl_los = 32.4 + 21.0 * lg_d + 20.0 * lg_f
        if los:
            return pl_los
        pl_nlos = 22.4 + 35.3 * lg_d + 21.3 * lg_f - 0.3 * (ue_height_m - 1.5)
        return max(pl_los, pl_nlos)
    raise ValueError(f"unknown profile {profile!r}")


def shadowing_sigma_db(profile: str, los: bool) -> float:
    return SHADOW_SIGMA_DB[(profile, bool(los))]


class ShadowingField:
    """Zero-mean, unit-variance Gaussian field with exponential correlation.

    One field is owned by each transmitter; receivers sample it at their own
    position, which makes shadowing deterministic per position (spatially
    consistent) and shared between both link directions. The field is
    synthesized spectrally on a padded FFT grid and interpolated bilinearly.
    """

    def __init__(self, extent_m: float, corr_distance_m: float, rng,
                 grid_m: float = 5.0, origin=(0.0, 0.0)):
        # refine the sampling grid when the correlation distance is short,
        # otherwise bilinear interpolation inflates short-range correlation
        grid_m = min(float(grid_m), corr_distance_m / 8.0)
        self.grid_m = grid_m
        self.origin = (float(origin[0]), float(origin[1]))
        self.corr_distance_m = float(corr_distance_m)
        n_data = int(math.ceil(extent_m / grid_m)) + 1
        # circulant embedding: pad so the torus wrap-around is negligible
        pad = max(2 * n_data, n_data + int(8 * corr_distance_m / grid_m))
        n = 1
        while n < pad:
            n <<= 1
        idx = np.minimum(np.arange(n), n - np.arange(n))
        dist = grid_m * np.hypot(idx[:, None], idx[None, :])
        eig = np.fft.fft2(np.exp(-dist / corr_distance_m)).real
        eig = np.clip(eig, 0.0, None)
        white = rng.standard_normal((n, n))
        grid = np.fft.ifft2(np.sqrt(eig) * np.fft.fft2(white)).real / n
        grid = grid[:n_data, :n_data]
        grid = grid - grid.mean()
        grid = grid / grid.std()
        self.grid = grid
        self.n = n_data

    def sample(self, xy) -> np.ndarray:
        """Bilinear field value(s) at position(s) (…, 2), unit variance."""
        p = np.asarray(xy, dtype=float)
        squeeze = p.ndim == 1
        p = np.atleast_2d(p)
        gx = np.clip((p[:, 0] - self.origin[0]) / self.grid_m, 0, self.n - 1 - 1e-9)
        gy = np.clip((p[:, 1] - self.origin[1]) / self.grid_m, 0, self.n - 1 - 1e-9)
        ix = gx.astype(int)
        iy = gy.astype(int)
        fx = gx - ix
        fy = gy - iy
        g = self.grid
        v = (g[ix, iy] * (1 - fx) * (1 - fy) + g[ix + 1, iy] * fx * (1 - fy)
             + g[ix, iy + 1] * (1 - fx) * fy + g[ix + 1, iy + 1] * fx * fy)
        return float(v[0]) if squeeze else v


def sample_shadowing(fld: ShadowingField, position, sigma_db: float = 1.0) -> float:
    """Shadowing value in dB at a position; deterministic per position."""
    return sigma_db * fld.sample(np.asarray(position, dtype=float)[:2])


@dataclass
class LinkGeometry:
    """Endpoint description used to (re)generate a link's paths."""

    tx_pos: np.ndarray  # (3,)
    rx_pos: np.ndarray  # (3,)
    tx_array: Optional[ArrayConfig]
    rx_array: Optional[ArrayConfig]
    carrier_hz: float
    rb_count: int
    rb_bandwidth_hz: float
    rx_speed_mps: float = 0.0
    rx_heading_az: float = 0.0


@dataclass
class LinkState:
    """Large-scale state plus the geometric path set of one node pair."""

    profile: str
    los: bool = False
    pathloss_db: float = 0.0
    shadowing_db: float = 0.0
    d3d_m: float = 0.0
    n_paths: int = N_PATHS
    rician_k_db: float = RICIAN_K_DB
    # per-path arrays, filled by generate_paths
    amp: np.ndarray = None            # (L,) complex, sum |amp|^2 == 1
    dep_az: np.ndarray = None
    dep_el: np.ndarray = None
    arr_az: np.ndarray = None
    arr_el: np.ndarray = None
    doppler_hz: np.ndarray = None
    doppler_phase: np.ndarray = None  # (L,) complex, advanced each slot
    rb_phase: np.ndarray = None       # (L, K) complex
    a_tx: np.ndarray = None           # (L, E_tx) element-weighted steering
    a_rx: np.ndarray = None           # (L, E_rx)
    version: int = 0
    steer_version: int = 0  # bumped whenever a steering row is rewritten
    _scatter: dict = field(default_factory=dict, repr=False)
    _row0_is_geo: bool = field(default=False, repr=False)

    @property
    def large_scale_lin(self) -> float:
        return 10.0 ** (-(self.pathloss_db + self.shadowing_db) / 10.0)


def _steering(arr: Optional[ArrayConfig], az: float, el: float) -> np.ndarray:
    if arr is None:
        return np.ones(1, dtype=complex)
    g = 10.0 ** (element_gain_toward(arr, az, el) / 20.0)
    return g * array_response(arr, az, el)


def _draw_scatter(link: LinkState, geom: LinkGeometry, rng) -> None:
    L = link.n_paths
    K = geom.rb_count
    sc = {
        "dep_az": rng.uniform(-math.pi, math.pi, L),
        "arr_az": rng.uniform(-math.pi, math.pi, L),
        "dep_el_off": rng.uniform(-1.0, 1.0, L) * SCATTER_ELEVATION_SPREAD_RAD,
        "arr_el_off": rng.uniform(-1.0, 1.0, L) * SCATTER_ELEVATION_SPREAD_RAD,
        "phase": np.exp(2j * math.pi * rng.uniform(0.0, 1.0, L)),
        "power": rng.exponential(1.0, L),
        "rb_phase": np.exp(2j * math.pi * rng.uniform(0.0, 1.0, (L, K))),
    }
    link._scatter = sc


def generate_paths(link: LinkState, geom: LinkGeometry, rng) -> LinkState:
    """(Re)build the path set from the current large-scale state.

    Scatter paths (angles, phases, per-RB factors, relative powers) are drawn
    once per link from `rng` and kept for the lifetime of the link so the
    channel stays consistent in space and time; only the deterministic
    geometric path and the power split react to endpoint movement and LOS
    transitions. Doppler phase accumulators persist across refreshes.
    """
    if not link._scatter:
        _draw_scatter(link, geom, rng)
    sc = link._scatter
    L = link.n_paths
    first = link.amp is None

    dx = geom.rx_pos[0] - geom.tx_pos[0]
    dy = geom.rx_pos[1] - geom.tx_pos[1]
    dz = geom.rx_pos[2] - geom.tx_pos[2]
    dxy = math.hypot(dx, dy)
    link.d3d_m = math.sqrt(dxy * dxy + dz * dz)
    geo_dep_az = math.atan2(dy, dx)
    geo_dep_el = math.atan2(dz, dxy) if dxy > 0 else math.copysign(math.pi / 2, dz)
    geo_arr_az = math.atan2(-dy, -dx)
    geo_arr_el = -geo_dep_el

    if first:
        link.dep_az = sc["dep_az"].copy()
        link.arr_az = sc["arr_az"].copy()
        link.dep_el = geo_dep_el + sc["dep_el_off"]
        link.arr_el = geo_arr_el + sc["arr_el_off"]
        link.rb_phase = sc["rb_phase"].copy()
        link.doppler_phase = np.ones(L, dtype=complex)
        link.a_tx = np.stack([_steering(geom.tx_array, link.dep_az[l], link.dep_el[l])
                              for l in range(L)])
        link.a_rx = np.stack([_steering(geom.rx_array, link.arr_az[l], link.arr_el[l])
                              for l in range(L)])
        link.steer_version += 1

    rel = sc["power"]
    amp = np.empty(L, dtype=complex)
    if link.los:
        k_lin = 10.0 ** (link.rician_k_db / 10.0)
        f_los = k_lin / (k_lin + 1.0)
        tau = link.d3d_m / SPEED_OF_LIGHT
        amp[0] = math.sqrt(f_los) * np.exp(-2j * math.pi * geom.carrier_hz * tau)
        amp[1:] = np.sqrt((1.0 - f_los) * rel[1:] / rel[1:].sum()) * sc["phase"][1:]
        link.dep_az[0], link.dep_el[0] = geo_dep_az, geo_dep_el
        link.arr_az[0], link.arr_el[0] = geo_arr_az, geo_arr_el
        rb = np.arange(geom.rb_count)
        link.rb_phase[0] = np.exp(-2j * math.pi * geom.rb_bandwidth_hz * rb * tau)
        link.a_tx[0] = _steering(geom.tx_array, geo_dep_az, geo_dep_el)
        link.a_rx[0] = _steering(geom.rx_array, geo_arr_az, geo_arr_el)
        link._row0_is_geo = True
        link.steer_version += 1
    else:
        amp[:] = np.sqrt(rel / rel.sum()) * sc["phase"]
        if first or link._row0_is_geo:
            # restore the scatter path that the geometric row replaced
            link.dep_az[0] = sc["dep_az"][0]
            link.dep_el[0] = geo_dep_el + sc["dep_el_off"][0]
            link.arr_az[0] = sc["arr_az"][0]
            link.arr_el[0] = geo_arr_el + sc["arr_el_off"][0]
            link.rb_phase[0] = sc["rb_phase"][0]
            link.a_tx[0] = _steering(geom.tx_array, link.dep_az[0], link.dep_el[0])
            link.a_rx[0] = _steering(geom.rx_array, link.arr_az[0], link.arr_el[0])
            link._row0_is_geo = False
            link.steer_version += 1
    link.amp = amp

    if geom.rx_speed_mps > 0.0:
        v_max = geom.rx_speed_mps * geom.carrier_hz / SPEED_OF_LIGHT
        link.doppler_hz = v_max * np.cos(link.arr_az - geom.rx_heading_az)
    else:
        link.doppler_hz = np.zeros(L)
    link.version += 1
    return link


def advance_slot(link: LinkState, dt_s: float) -> None:
    """Rotate the per-path Doppler phase accumulators by one time step."""
    if link.doppler_hz is not None and np.any(link.doppler_hz != 0.0):
        link.doppler_phase = link.doppler_phase * np.exp(
            2j * math.pi * link.doppler_hz * dt_s)


def path_weights(link: LinkState) -> np.ndarray:
    """(L,) complex per-path amplitudes at the current slot."""
    return link.amp * link.doppler_phase


def rb_channel_matrix(link: LinkState, rb_index: int) -> np.ndarray:
    """Materialized (E_rx, E_tx) channel matrix for one resource block."""
    w = path_weights(link) * link.rb_phase[:, rb_index]
    return np.einsum("l,le,lf->ef", w, link.a_rx, link.a_tx)


def effective_gain_db(link: LinkState, tx_weights, rx_weights, rb_index: int) -> float:
    """Composite link gain in dB: beamformed small-scale gain minus PL+SF.

    Element patterns are part of the per-path steering vectors, so the
    returned value is the full link budget gain between radio connectors.
    """
    tx_w = np.ones(1, dtype=complex) if tx_weights is None else np.asarray(tx_weights)
    rx_w = np.ones(1, dtype=complex) if rx_weights is None else np.asarray(rx_weights)
    if tx_w.shape[0] != link.a_tx.shape[1] or rx_w.shape[0] != link.a_rx.shape[1]:
        raise ValueError("beamforming weight dimensions do not match the link arrays")
    ctx = link.a_tx.conj() @ tx_w       # (L,) a_tx^H w_tx
    crx = link.a_rx @ rx_w.conj()       # (L,) w_rx^H a_rx
    s = np.sum(path_weights(link) * link.rb_phase[:, rb_index] * ctx * crx)
    power = abs(s) ** 2 * link.large_scale_lin
    if power <= 0.0:
        return GAIN_FLOOR_DB
    return max(10.0 * math.log10(power), GAIN_FLOOR_DB)
