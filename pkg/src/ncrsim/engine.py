"""Slot-driven simulation loop, metrics aggregation and result emission.

The loop advances in a fixed per-slot order: mobility, large-scale channel
refresh, beam sweeps and association, traffic arrivals, per-gNB scheduling,
repeater schedule indication, SINR evaluation for every scheduled allocation,
link adaptation and bit delivery, and finally sample recording after warmup.
All randomness comes from purpose-keyed substreams, so two runs with the same
configuration and seed are bit-identical, and enabling or disabling repeaters
does not perturb UE trajectories or the unrelated channel draws.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__, mac, phy
from . import ncr as ncr_mod
from .antenna import ArrayConfig, build_dft_codebook
from .channel import (SHADOW_CORR_DIST_M, LinkGeometry, LinkState, ShadowingField,
                      assign_profile, generate_paths, pathloss_db, shadowing_sigma_db)
from .config import canonical_text
from .rng import substream
from .scenario import (NCR_HEIGHT_M, UE_HEIGHT_M, ScenarioConfig, los_mask,
                       spawn_ues, step_ue)

TRACE_CHOICES = ("links", "alloc")


class RunError(RuntimeError):
    """A module error during the slot loop, annotated with slot and entity."""


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    seed: int = 1
    total_slots: int = 40000
    warmup_slots: int = 4000
    output_dir: Optional[str] = None
    trace_flags: frozenset = frozenset()
    ncr_gain_db: float = 90.0
    ncr_max_output_dbm: float = 33.0
    ncr_force_off: bool = False
    access_sweep_period: int = mac.ACCESS_SWEEP_PERIOD_SLOTS
    refresh_period: int = 80
    n_paths: int = 6
    rician_k_db: float = 10.0
    shadow_grid_m: float = 5.0
    max_ues_per_slot: int = mac.MAX_UES_PER_SLOT
    packet_bits: int = mac.PACKET_BITS
    arrival_period_slots: int = mac.ARRIVAL_PERIOD_SLOTS
    noise_figure_db: float = 9.0
    gnb_power_dbm: float = 35.0
    ue_power_dbm: float = 24.0
    config_items: tuple = ()  # explicit (key, value) pairs, hashed into summary

    def __post_init__(self):
        if not self.total_slots > self.warmup_slots >= 0:
            raise ValueError("total_slots must exceed warmup_slots >= 0")

    def config_sha256(self) -> str:
        base = dict(self.config_items)
        base.setdefault("scenario.id", self.scenario.scenario_id)
        base.setdefault("scenario.ncr", self.scenario.ncr_enabled)
        base.setdefault("run.seed", self.seed)
        base.setdefault("run.total_slots", self.total_slots)
        base.setdefault("run.warmup_slots", self.warmup_slots)
        return hashlib.sha256(canonical_text(base).encode()).hexdigest()


def percentile(samples, p: float) -> float:
    """Empirical quantile with linear interpolation between closest ranks."""
    a = np.sort(np.asarray(samples, dtype=float))
    if a.size == 0:
        raise ValueError("percentile of empty sample set")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentile must be in [0, 100], got {p}")
    h = (a.size - 1) * (p / 100.0)
    lo = int(math.floor(h))
    hi = min(lo + 1, a.size - 1)
    return float(a[lo] + (a[hi] - a[lo]) * (h - lo))


_LINK_TYPE_CODE = {"direct": 0, "forwarded": 1, "outage": 2}
_LINK_TYPE_NAME = {v: k for k, v in _LINK_TYPE_CODE.items()}
_DIR_CODE = {"DL": 0, "UL": 1}


class MetricsStore:
    """Columnar sample store plus per-UE delivery and MCS usage counters."""

    _COLS = ("slot", "dir", "ue", "link_type", "serving_gnb", "serving_ncr",
             "rb_start", "rb_len", "sinr_db", "c_signal", "c_ncr_noise",
             "c_rx_noise", "c_direct_interf", "c_fwd_interf", "c_fwd_noise")

    def __init__(self, meta: dict, n_ues: int, n_mcs: int = 16):
        self.meta = dict(meta)
        self.n_ues = n_ues
        self._chunks = []
        self._arrays = None
        self.delivered_bits = {"DL": np.zeros(n_ues, dtype=np.int64),
                               "UL": np.zeros(n_ues, dtype=np.int64)}
        self.arrived_bits = {"DL": np.zeros(n_ues, dtype=np.int64),
                             "UL": np.zeros(n_ues, dtype=np.int64)}
        # full-run accounting (warmup included) for the conservation identity
        self.delivered_bits_total = {"DL": np.zeros(n_ues, dtype=np.int64),
                                     "UL": np.zeros(n_ues, dtype=np.int64)}
        self.arrived_bits_total = {"DL": np.zeros(n_ues, dtype=np.int64),
                                   "UL": np.zeros(n_ues, dtype=np.int64)}
        self.mcs_usage = {"DL": np.zeros(n_mcs, dtype=np.int64),
                          "UL": np.zeros(n_mcs, dtype=np.int64)}
        self.trajectory_sha256 = None
        self.link_trace = []
        self.alloc_trace = []

    def record_samples(self, samples) -> None:
        if not samples:
            return
        rows = np.empty((len(samples), len(self._COLS)))
        for i, s in enumerate(samples):
            c = s.components
            rows[i] = (s.slot, _DIR_CODE[s.direction], s.ue,
                       _LINK_TYPE_CODE[s.link_type],
                       -1 if s.serving_gnb is None else s.serving_gnb,
                       -1 if s.serving_ncr is None else s.serving_ncr,
                       s.rb_start, s.rb_len, s.sinr_db, c.signal, c.ncr_noise,
                       c.rx_noise, c.direct_interf, c.fwd_interf,
                       c.fwd_noise_interf)
        self._chunks.append(rows)
        self._arrays = None

    def columns(self) -> dict:
        if self._arrays is None:
            data = (np.concatenate(self._chunks, axis=0) if self._chunks
                    else np.empty((0, len(self._COLS))))
            self._arrays = {name: data[:, k] for k, name in enumerate(self._COLS)}
        return self._arrays

    @property
    def n_samples(self) -> int:
        return sum(len(c) for c in self._chunks)

    def sinr_db(self, direction: Optional[str] = None,
                link_type: Optional[str] = None) -> np.ndarray:
        cols = self.columns()
        mask = np.ones(len(cols["slot"]), dtype=bool)
        if direction is not None:
            mask &= cols["dir"] == _DIR_CODE[direction]
        if link_type is not None:
            mask &= cols["link_type"] == _LINK_TYPE_CODE[link_type]
        return cols["sinr_db"][mask]


def per_ue_throughput(store: MetricsStore, direction: str) -> np.ndarray:
    """Per-UE delivered rate in Mbit/s, normalized over the whole measurement
    window (all post-warmup slots, both TDD directions)."""
    window_s = store.meta["post_warmup_slots"] * store.meta["slot_s"]
    return store.delivered_bits[direction] / window_s / 1e6


def _fmt(x) -> str:
    return repr(float(x))


def _preflight_output_dir(output_dir) -> None:
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as exc:
        raise RunError(f"output directory {output_dir!r} is not writable: {exc}") from exc
    if not os.path.isdir(output_dir) or not os.access(output_dir, os.W_OK):
        raise RunError(f"output directory {output_dir!r} is not writable")


def emit(store: MetricsStore, output_dir) -> list:
    """Write sinr_samples.csv, throughput.csv, mcs_usage.csv and summary.json.

    Re-emitting the same store produces byte-identical files.
    """
    _preflight_output_dir(output_dir)
    written = []
    cols = store.columns()

    path = os.path.join(output_dir, "sinr_samples.csv")
    with open(path, "w", newline="") as f:
        f.write("slot,direction,link_type,ue,serving_gnb,serving_ncr,sinr_db\n")
        dirs = cols["dir"].astype(int)
        lts = cols["link_type"].astype(int)
        for i in range(len(dirs)):
            ncr_id = int(cols["serving_ncr"][i])
            f.write(f"{int(cols['slot'][i])},{'DL' if dirs[i] == 0 else 'UL'},"
                    f"{_LINK_TYPE_NAME[lts[i]]},{int(cols['ue'][i])},"
                    f"{int(cols['serving_gnb'][i])},{'' if ncr_id < 0 else ncr_id},"
                    f"{_fmt(cols['sinr_db'][i])}\n")
    written.append(path)

    path = os.path.join(output_dir, "throughput.csv")
    with open(path, "w", newline="") as f:
        f.write("ue,direction,mbit_s\n")
        for direction in ("DL", "UL"):
            thr = per_ue_throughput(store, direction)
            for u in range(store.n_ues):
                f.write(f"{u},{direction},{_fmt(thr[u])}\n")
    written.append(path)

    path = os.path.join(output_dir, "mcs_usage.csv")
    with open(path, "w", newline="") as f:
        f.write("mcs,direction,count\n")
        for direction in ("DL", "UL"):
            for m, count in enumerate(store.mcs_usage[direction]):
                f.write(f"{m},{direction},{int(count)}\n")
    written.append(path)

    summary = {"meta": store.meta, "sinr_db_percentiles": {},
               "throughput_mbit_s_percentiles": {}, "mcs_usage_fraction": {}}
    for direction in ("DL", "UL"):
        part = {}
        for link_type in ("direct", "forwarded"):
            vals = store.sinr_db(direction, link_type)
            if vals.size:
                part[link_type] = {f"p{p}": percentile(vals, p) for p in (10, 50, 90)}
        summary["sinr_db_percentiles"][direction] = part
        thr = per_ue_throughput(store, direction)
        summary["throughput_mbit_s_percentiles"][direction] = {
            f"p{p}": percentile(thr, p) for p in (10, 50, 90)}
        usage = store.mcs_usage[direction]
        total = int(usage.sum())
        summary["mcs_usage_fraction"][direction] = (
            [float(c) / total for c in usage] if total else [0.0] * len(usage))
    path = os.path.join(output_dir, "summary.json")
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(path)

    if store.link_trace:
        path = os.path.join(output_dir, "link_trace.csv")
        with open(path, "w", newline="") as f:
            f.write("slot,ue,pathloss_db,shadowing_db,los,best_beam_gain_db\n")
            for row in store.link_trace:
                f.write(",".join(str(v) for v in row) + "\n")
        written.append(path)
    if store.alloc_trace:
        path = os.path.join(output_dir, "alloc_trace.csv")
        with open(path, "w", newline="") as f:
            f.write("slot,gnb,ue,rb_start,rb_len,direction,path\n")
            for row in store.alloc_trace:
                f.write(",".join(str(v) for v in row) + "\n")
        written.append(path)
    return written


class _Link:
    """Engine-side runtime around a LinkState: couplings and lazy phases."""

    __slots__ = ("state", "geom", "rng", "weights", "tx_coup", "rx_coup",
                 "nu_rad", "has_doppler", "base_phase", "t0", "dt", "_phi",
                 "_phi_slot", "gain_table", "ls_lin", "_steer_seen")

    def __init__(self, state: LinkState, geom: LinkGeometry, rng, weights):
        self.state = state
        self.geom = geom
        self.rng = rng
        self.weights = weights  # shared codebook matrix (n_beams, n_elem)
        self.tx_coup = None
        self.rx_coup = None     # (L,) complex; None means scalar receiver
        self.nu_rad = None      # 2*pi*doppler*dt per path
        self.has_doppler = False
        self.base_phase = None
        self.t0 = 0
        self.dt = 0.0
        self._phi = None
        self._phi_slot = -1
        self.gain_table = None  # (n_beams, K) for static links
        self.ls_lin = 1.0
        self._steer_seen = -1

    def refresh(self, slot: int, los: bool, shadowing_db: float, fc_ghz: float,
                rx_height_m: float) -> None:
        """Large-scale update: LOS, path loss, shadowing, path rebuild."""
        st = self.state
        if self.base_phase is not None:
            self.base_phase = self._phase_at(slot)
        else:
            self.base_phase = np.ones(st.n_paths, dtype=complex)
        st.los = bool(los)
        generate_paths(st, self.geom, self.rng)
        st.pathloss_db = pathloss_db(st.profile, st.los, st.d3d_m, fc_ghz, rx_height_m)
        st.shadowing_db = shadowing_db
        self.ls_lin = st.large_scale_lin
        if st.steer_version != self._steer_seen:
            self.tx_coup = self.weights.conj() @ st.a_tx.T  # (n_beams, L)
            if self.rx_coup is not None:
                self.tx_coup = self.tx_coup * self.rx_coup[None, :]
            self._steer_seen = st.steer_version
        self.nu_rad = 2.0 * math.pi * st.doppler_hz * self.dt
        self.has_doppler = bool(np.any(self.nu_rad))
        self.t0 = slot
        self._phi_slot = -1

    def set_rx_beam(self, rx_beam_weights: np.ndarray) -> None:
        """Fold a fixed receive beam (repeater panel) into the couplings."""
        self.rx_coup = self.state.a_rx @ rx_beam_weights.conj()
        self.tx_coup = (self.weights.conj() @ self.state.a_tx.T) * self.rx_coup[None, :]
        self._steer_seen = self.state.steer_version

    def _phase_at(self, slot: int) -> np.ndarray:
        if not self.has_doppler:
            return self.base_phase
        return self.base_phase * np.exp(1j * (self.nu_rad * (slot - self.t0)))

    def phi_eff(self, slot: int) -> np.ndarray:
        """(L, K) per-path, per-RB complex factors at a slot."""
        if self._phi_slot != slot:
            w = self.state.amp * self._phase_at(slot)
            self._phi = w[:, None] * self.state.rb_phase
            self._phi_slot = slot
        return self._phi

    def build_static_table(self) -> None:
        """Precompute the full per-beam gain table for a static link."""
        m = self.tx_coup @ self.phi_eff(0)
        self.gain_table = (m.real ** 2 + m.imag ** 2) * self.ls_lin

    def row_for_beam(self, beam: int, slot: int) -> np.ndarray:
        """(K,) linear gains for a single transmitter beam."""
        if self.gain_table is not None:
            return self.gain_table[beam]
        m = self.tx_coup[beam] @ self.phi_eff(slot)
        return (m.real ** 2 + m.imag ** 2) * self.ls_lin

    def rows_for_beams(self, beams, slot: int) -> np.ndarray:
        """(len(beams), K) linear gains for explicit transmitter beams."""
        idx = np.asarray(beams, dtype=int)
        if self.gain_table is not None:
            return self.gain_table[idx]
        m = self.tx_coup[idx] @ self.phi_eff(slot)
        return (m.real ** 2 + m.imag ** 2) * self.ls_lin

    def gains_for_map(self, bm: "phy.BeamMap", slot: int) -> np.ndarray:
        """(K,) linear gains where each RB uses its own beam; 0 where idle."""
        k = len(bm.rows)
        if not bm.any_active:
            return np.zeros(k)
        rows = self.rows_for_beams(bm.beams, slot)
        if rows.shape[0] == 1:
            out = np.where(bm.rows >= 0, rows[0], 0.0)
            return out
        out = np.zeros(k)
        act = bm.rows >= 0
        cols = np.flatnonzero(act)
        out[cols] = rows[bm.rows[cols], cols]
        return out

    def sweep(self, slot: int):
        """Exhaustive single-sided beam search; returns (best_beam, mean_gain)."""
        rows = self.rows_for_beams(np.arange(self.weights.shape[0]), slot)
        means = rows.mean(axis=1)
        best = int(np.argmax(means))
        return best, float(means[best])


class _Walkers:
    """Vectorized pedestrian stepping over the sidewalk lane graph.

    Straight-ahead motion is advanced in bulk with the same arithmetic as
    step_ue; UEs within one step of a corner or boundary are delegated to
    step_ue itself (which consumes their per-UE randomness), so trajectories
    are identical to stepping every UE individually.
    """

    _EPS = 1e-9

    def __init__(self, states, layout, rngs, dt_s: float):
        self.layout = layout
        self.rngs = rngs
        self.dt = dt_s
        from .scenario import _cached_lane_offsets
        self.offsets = np.sort(np.asarray(_cached_lane_offsets(layout)))
        self.lo = layout.origin[0]
        self.hi = self.lo + layout.extent_m
        n = len(states)
        self.axis = np.zeros(n, dtype=int)    # index of the moving coordinate
        self.s = np.zeros(n)
        self.fixed = np.zeros(n)
        self.dirn = np.zeros(n)
        self.speed = np.array([st.speed_mps for st in states])
        self.height = np.array([st.height for st in states])
        for u, st in enumerate(states):
            self._ingest(u, st)
        self.t_corner = np.array([self._target(self.s[u], self.dirn[u])
                                  for u in range(n)])

    def _ingest(self, u: int, st) -> None:
        axis = 1 if abs(st.heading[0]) < 0.5 else 0
        self.axis[u] = axis
        self.s[u] = st.position[axis]
        self.fixed[u] = st.position[1 - axis]
        self.dirn[u] = st.heading[axis]

    def _target(self, s: float, d: float) -> float:
        if d > 0:
            i = int(np.searchsorted(self.offsets, s + self._EPS, side="right"))
            return self.offsets[i] if i < len(self.offsets) else self.hi
        i = int(np.searchsorted(self.offsets, s - self._EPS, side="left")) - 1
        return self.offsets[i] if i >= 0 else self.lo

    def state_of(self, u: int):
        from .scenario import UeMobilityState
        axis = self.axis[u]
        pos = np.empty(2)
        pos[axis] = self.s[u]
        pos[1 - axis] = self.fixed[u]
        head = np.zeros(2)
        head[axis] = self.dirn[u]
        return UeMobilityState(pos, head, float(self.speed[u]), float(self.height[u]))

    def step(self) -> None:
        step_len = self.speed * self.dt
        dist = (self.t_corner - self.s) * self.dirn
        fast = step_len < dist - self._EPS
        self.s[fast] = self.s[fast] + self.dirn[fast] * step_len[fast]
        for u in np.flatnonzero(~fast):
            new_state = step_ue(self.state_of(u), self.dt, self.layout, self.rngs[u])
            self._ingest(u, new_state)
            self.t_corner[u] = self._target(self.s[u], self.dirn[u])

    def positions(self) -> np.ndarray:
        out = np.empty((len(self.s), 2))
        ax1 = self.axis == 1
        out[:, 0] = np.where(ax1, self.fixed, self.s)
        out[:, 1] = np.where(ax1, self.s, self.fixed)
        return out

    def heading_az(self) -> np.ndarray:
        # axis 0: east/west -> 0 or pi; axis 1: north/south -> +-pi/2
        return np.where(self.axis == 0,
                        np.where(self.dirn > 0, 0.0, math.pi),
                        np.where(self.dirn > 0, math.pi / 2.0, -math.pi / 2.0))


class _GainAdapter:
    """phy.SinrEvaluator gain provider backed by the engine's link caches."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.slot = 0

    def gnb_ue_rbs(self, g, u, beam_map):
        return self.sim.links_du[g][u].gains_for_map(beam_map, self.slot)

    def gnb_ue_beams(self, g, u, beams):
        return self.sim.links_du[g][u].rows_for_beams(beams, self.slot)

    def ncr_ue(self, n, u, beam):
        return self.sim.links_au[n][u].row_for_beam(beam, self.slot)

    def gnb_ncr_rbs(self, g, n, beam_map):
        return self.sim.links_hn[(g, n)].gains_for_map(beam_map, self.slot)

    def gnb_ncr_beams(self, g, n, beams):
        return self.sim.links_hn[(g, n)].rows_for_beams(beams, self.slot)


class Simulation:
    """One deterministic run of the configured scenario."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        sc = cfg.scenario
        self.sc = sc
        self.fc_ghz = sc.carrier_hz / 1e9
        self.rb_bw_hz = sc.scs_hz * sc.subcarriers_per_rb
        self.n_rb = sc.rb_count
        self.dt = sc.slot_s
        self.n_ue = sc.ue_count
        self.n_gnb = sc.n_gnb
        self.n_ncr = sc.n_ncr

        panel = ArrayConfig()
        self.codebook = build_dft_codebook(panel)
        self.weights = self.codebook.weights
        self.n_beams = self.codebook.n_beams

        self.gnb_panels = [ArrayConfig(boresight_azimuth=p.azimuth_rad)
                           for p in sc.gnb_placements]
        self.gnb_pos = [np.array([p.position[0], p.position[1], p.height_m])
                        for p in sc.gnb_placements]
        self.ncr_gnb_panels = [ArrayConfig(boresight_azimuth=p.gnb_side_azimuth_rad)
                               for p in sc.ncr_placements]
        self.ncr_ue_panels = [ArrayConfig(boresight_azimuth=p.ue_side_azimuth_rad)
                              for p in sc.ncr_placements]
        self.ncr_pos = [np.array([p.position[0], p.position[1], p.height_m])
                        for p in sc.ncr_placements]
        self.ncr_owner = {n: p.controlling_gnb for n, p in enumerate(sc.ncr_placements)}

        self.walk_rngs = [substream(cfg.seed, "ue-walk", u) for u in range(self.n_ue)]
        self.walkers = _Walkers(spawn_ues(sc, substream(cfg.seed, "ue-spawn")),
                                sc.layout, self.walk_rngs, sc.slot_s)

        self.shadow_gnb = [ShadowingField(sc.layout.extent_m, SHADOW_CORR_DIST_M["UMa"],
                                          substream(cfg.seed, "shadow-gnb", g),
                                          grid_m=cfg.shadow_grid_m,
                                          origin=sc.layout.origin)
                           for g in range(self.n_gnb)]
        self.shadow_ncr = [ShadowingField(sc.layout.extent_m, SHADOW_CORR_DIST_M["UMi"],
                                          substream(cfg.seed, "shadow-ncr", n),
                                          grid_m=cfg.shadow_grid_m,
                                          origin=sc.layout.origin)
                           for n in range(self.n_ncr)]

        self.links_du = [[self._make_link("du", g, u) for u in range(self.n_ue)]
                         for g in range(self.n_gnb)]
        self.links_au = [[self._make_link("au", n, u) for u in range(self.n_ue)]
                         for n in range(self.n_ncr)]
        self.links_hn = {(g, n): self._make_link("hn", g, n)
                         for g in range(self.n_gnb) for n in range(self.n_ncr)}

        self.ncr_states = [ncr_mod.NcrState(amp_gain_db=cfg.ncr_gain_db,
                                            max_output_dbm=cfg.ncr_max_output_dbm)
                           for _ in range(self.n_ncr)]
        self.bh_beam = {}  # (g, n) -> gNB-side backhaul beam (controller pairs)

        self.queues = mac.TrafficQueue(self.n_ue, cfg.packet_bits,
                                       cfg.arrival_period_slots)
        self.schedulers = [mac.RoundRobinScheduler(range(self.n_ue), self.n_rb,
                                                   cfg.max_ues_per_slot)
                           for _ in range(self.n_gnb)]
        self.gains = _GainAdapter(self)
        workers = int(os.environ.get("NCR_SIM_THREADS", "1") or "1")
        self.evaluator = phy.SinrEvaluator(self.n_rb, self.rb_bw_hz,
                                           cfg.noise_figure_db, cfg.gnb_power_dbm,
                                           cfg.ue_power_dbm, self.gains,
                                           workers=workers)
        self.mcs_table = phy.McsTable.default()
        self.re_per_carrier = self.n_rb * sc.subcarriers_per_rb
        self.p_re_dbm = cfg.gnb_power_dbm - 10.0 * math.log10(self.re_per_carrier)

        self.associations = [mac.Association(u, None, None, 0) for u in range(self.n_ue)]
        self.direct_beam = np.zeros((self.n_gnb, self.n_ue), dtype=int)
        self.direct_rsrp = np.full((self.n_gnb, self.n_ue), -np.inf)
        self.access_beam = np.zeros((max(self.n_ncr, 1), self.n_ue), dtype=int)
        self.fwd_rsrp = np.full((max(self.n_ncr, 1), self.n_ue), -np.inf)
        self._traj_hash = hashlib.sha256()

    def _make_link(self, kind: str, a: int, b: int) -> _Link:
        sc = self.sc
        cfg = self.cfg
        if kind == "du":
            profile = assign_profile("gnb", "ue")
            geom = LinkGeometry(self.gnb_pos[a], self._ue_pos3(b),
                                self.gnb_panels[a], None, sc.carrier_hz,
                                self.n_rb, self.rb_bw_hz)
        elif kind == "au":
            profile = assign_profile("ncr", "ue")
            geom = LinkGeometry(self.ncr_pos[a], self._ue_pos3(b),
                                self.ncr_ue_panels[a], None, sc.carrier_hz,
                                self.n_rb, self.rb_bw_hz)
        else:
            profile = assign_profile("gnb", "ncr")
            geom = LinkGeometry(self.gnb_pos[a], self.ncr_pos[b],
                                self.gnb_panels[a], self.ncr_gnb_panels[b],
                                sc.carrier_hz, self.n_rb, self.rb_bw_hz)
        state = LinkState(profile=profile, n_paths=cfg.n_paths,
                          rician_k_db=cfg.rician_k_db)
        link = _Link(state, geom, substream(cfg.seed, f"paths-{kind}", a, b),
                     self.weights)
        link.dt = self.dt
        return link

    def _ue_pos3(self, u: int) -> np.ndarray:
        w = self.walkers
        pos3 = np.empty(3)
        ax = w.axis[u]
        pos3[ax] = w.s[u]
        pos3[1 - ax] = w.fixed[u]
        pos3[2] = w.height[u]
        return pos3

    # --- slot phases --------------------------------------------------------

    def _step_mobility(self, slot: int) -> None:
        self.walkers.step()
        self._traj_hash.update(self.walkers.positions().tobytes())

    def _refresh_large_scale(self, slot: int, store: MetricsStore) -> None:
        ue_xy = self.walkers.positions()
        ue_head = self.walkers.heading_az()
        ue_speed = self.walkers.speed
        groups = [(self.links_du, self.gnb_pos, self.shadow_gnb)]
        if self.n_ncr:
            groups.append((self.links_au, self.ncr_pos, self.shadow_ncr))
        for links, tx_pos, fields in groups:
            for a, row in enumerate(links):
                txy = np.broadcast_to(tx_pos[a][:2], (self.n_ue, 2))
                los = los_mask(txy, ue_xy, self.sc.layout)
                shade = fields[a].sample(ue_xy)
                for u, link in enumerate(row):
                    link.geom.rx_pos = self._ue_pos3(u)
                    link.geom.rx_speed_mps = ue_speed[u]
                    link.geom.rx_heading_az = ue_head[u]
                    sigma = shadowing_sigma_db(link.state.profile, bool(los[u]))
                    link.refresh(slot, bool(los[u]), sigma * float(shade[u]),
                                 self.fc_ghz, UE_HEIGHT_M)
        if "links" in self.cfg.trace_flags and slot >= self.cfg.warmup_slots:
            for u, assoc in enumerate(self.associations):
                if assoc.serving_gnb is None:
                    continue
                link = (self.links_du[assoc.serving_gnb][u] if assoc.ncr is None
                        else self.links_au[assoc.ncr][u])
                best, mean_gain = link.sweep(slot)
                store.link_trace.append(
                    (slot, u, _fmt(link.state.pathloss_db), _fmt(link.state.shadowing_db),
                     int(link.state.los), _fmt(10.0 * math.log10(max(mean_gain, 1e-30)))))

    def _setup_static_links(self, slot: int) -> None:
        """Backhaul refresh + joint pair sweep; builds the static gain tables."""
        for (g, n), link in self.links_hn.items():
            xy_g = self.gnb_pos[g][:2]
            xy_n = self.ncr_pos[n][:2]
            los = bool(los_mask(xy_g[None, :], xy_n[None, :], self.sc.layout)[0])
            shade = float(self.shadow_gnb[g].sample(xy_n))
            sigma = shadowing_sigma_db("UMa", los)
            link.refresh(slot, los, sigma * shade, self.fc_ghz, NCR_HEIGHT_M)
        for n in range(self.n_ncr):
            g = self.ncr_owner[n]
            link = self.links_hn[(g, n)]
            st = link.state
            tx_c = self.weights.conj() @ st.a_tx.T   # (n_beams, L)
            rx_c = self.weights.conj() @ st.a_rx.T   # (n_beams, L)
            phi = st.amp[:, None] * st.rb_phase      # static: no Doppler
            m = np.einsum("tl,rl,lk->trk", tx_c, rx_c, phi, optimize=True)
            table = (np.abs(m) ** 2).mean(axis=2) * link.ls_lin
            t_beam, r_beam = mac.run_beam_sweep("backhaul", slot, table)
            self.bh_beam[(g, n)] = t_beam
            self.ncr_states[n] = ncr_mod.NcrState(
                amp_gain_db=self.cfg.ncr_gain_db,
                max_output_dbm=self.cfg.ncr_max_output_dbm,
                backhaul_beam=r_beam)
            rx_w = self.weights[r_beam]
            for g2 in range(self.n_gnb):
                hn = self.links_hn[(g2, n)]
                hn.set_rx_beam(rx_w)
                hn.build_static_table()

    def _run_sweeps(self, slot: int) -> None:
        for g in range(self.n_gnb):
            for u in range(self.n_ue):
                best, mean_gain = self.links_du[g][u].sweep(slot)
                self.direct_beam[g, u] = best
                self.direct_rsrp[g, u] = phy.rsrp_direct_dbm(
                    self.p_re_dbm, 10.0 * math.log10(max(mean_gain, 1e-30)))
        if self.cfg.ncr_force_off:
            self.fwd_rsrp[:] = -np.inf
            return
        for n in range(self.n_ncr):
            g = self.ncr_owner[n]
            bh_gain = self.links_hn[(g, n)].gain_table[self.bh_beam[(g, n)]]
            bh_gain_db = 10.0 * math.log10(max(float(bh_gain.mean()), 1e-30))
            # measurement-slot input: the controller's full-carrier reference
            input_mw = (self.evaluator.gnb_rb_mw * float(bh_gain.sum())
                        + self.evaluator.carrier_noise_mw)
            gain_db, _ = ncr_mod.forward_gain_db(
                self.ncr_states[n], phy.mw_to_dbm(input_mw, -400.0))
            for u in range(self.n_ue):
                best, mean_gain = self.links_au[n][u].sweep(slot)
                self.access_beam[n, u] = best
                self.fwd_rsrp[n, u] = phy.rsrp_forwarded_dbm(
                    self.p_re_dbm, bh_gain_db, gain_db,
                    10.0 * math.log10(max(mean_gain, 1e-30)))

    def _associate_all(self, slot: int) -> None:
        for u in range(self.n_ue):
            fwd = {n: float(self.fwd_rsrp[n, u]) for n in range(self.n_ncr)
                   if not self.cfg.ncr_force_off}
            self.associations[u] = mac.associate(
                u, self.direct_rsrp[:, u], fwd, self.ncr_owner, slot)

    def _schedule(self, slot: int, direction: str):
        backlogged = set(self.queues.backlogged(direction).tolist())
        served = []
        ncr_beams = {}
        for g in range(self.n_gnb):
            cand = [u for u in backlogged
                    if self.associations[u].serving_gnb == g]
            if not cand:
                continue
            path_ncr = {u: self.associations[u].ncr for u in cand}
            beams = {u: int(self.access_beam[self.associations[u].ncr, u])
                     for u in cand if self.associations[u].ncr is not None}
            allocs, nb = self.schedulers[g].schedule(direction, cand, path_ncr, beams)
            ncr_beams.update(nb)
            for al in allocs:
                n = path_ncr[al.ue]
                rx_beam = (int(self.direct_beam[g, al.ue]) if n is None
                           else self.bh_beam[(g, n)])
                served.append(phy.ServedEntry(al.ue, g, n, al.rb_start,
                                              al.rb_len, rx_beam))
        return served, ncr_beams

    def _indicate_ncr(self, slot: int, ncr_beams: dict) -> dict:
        """Issue the slot's dynamic beam indications; returns ON repeaters."""
        active = {}
        if self.cfg.ncr_force_off:
            return active
        for n, beam in ncr_beams.items():
            state = ncr_mod.clear_schedule(self.ncr_states[n])
            sci = ncr_mod.SideControlInfo(
                "dynamic", entries=(ncr_mod.SciEntry(slot, 1, beam),))
            state = ncr_mod.apply_sci(state, sci)
            self.ncr_states[n] = state
            ind = ncr_mod.mt_beam_indication(state, slot)
            if ind is None or ind.direction != mac.tdd_direction(slot):
                raise RunError(f"slot {slot}: repeater {n} indication mismatch")
            active[n] = (state, ind.access_beam)
        return active

    def _beam_map_dl(self, served) -> dict:
        """BeamMap per gNB, built directly from the slot's allocations."""
        per_g = {g: ([], np.full(self.n_rb, -1, dtype=int))
                 for g in range(self.n_gnb)}
        for e in served:
            beams, rows = per_g[e.gnb]
            try:
                row = beams.index(e.rx_beam)
            except ValueError:
                row = len(beams)
                beams.append(e.rx_beam)
            rows[e.rb_start:e.rb_start + e.rb_len] = row
        return {g: phy.BeamMap(beams, rows) for g, (beams, rows) in per_g.items()}

    def run(self) -> MetricsStore:
        cfg = self.cfg
        meta = {
            "scenario": self.sc.scenario_id,
            "ncr_enabled": self.sc.ncr_enabled,
            "ncr_force_off": cfg.ncr_force_off,
            "seed": cfg.seed,
            "total_slots": cfg.total_slots,
            "warmup_slots": cfg.warmup_slots,
            "post_warmup_slots": cfg.total_slots - cfg.warmup_slots,
            "slot_s": self.dt,
            "n_gnb": self.n_gnb,
            "n_ncr": self.n_ncr,
            "n_ue": self.n_ue,
            "config_sha256": cfg.config_sha256(),
            "version": __version__,
        }
        store = MetricsStore(meta, self.n_ue, self.mcs_table.n_entries)
        if cfg.output_dir is not None:
            _preflight_output_dir(cfg.output_dir)
        self._loop(store)
        store.trajectory_sha256 = self._traj_hash.hexdigest()
        store.meta["trajectory_sha256"] = store.trajectory_sha256
        return store

    def _loop(self, store: MetricsStore) -> None:
        cfg = self.cfg
        for slot in range(cfg.total_slots):
            try:
                self._run_slot(slot, store)
            except RunError:
                raise
            except Exception as exc:
                raise RunError(f"slot {slot}: {exc}") from exc

    def _run_slot(self, slot: int, store: MetricsStore) -> None:
        cfg = self.cfg
        direction = mac.tdd_direction(slot)
        self._step_mobility(slot)
        if slot % cfg.refresh_period == 0:
            self._refresh_large_scale(slot, store)
            if slot == 0 and self.n_ncr:
                self._setup_static_links(slot)
        if slot % cfg.access_sweep_period == 0:
            self._run_sweeps(slot)
            self._associate_all(slot)
        if slot == cfg.warmup_slots:
            # the measurement window starts from drained queues so warmup
            # transients cannot inflate per-UE throughput past the offered load
            self.queues.clear()
        self.queues.step_arrivals(slot)
        if slot % cfg.arrival_period_slots == 0:
            store.arrived_bits_total["DL"] += self.queues.packet_bits
            store.arrived_bits_total["UL"] += self.queues.packet_bits
            if slot >= cfg.warmup_slots:
                store.arrived_bits["DL"] += self.queues.packet_bits
                store.arrived_bits["UL"] += self.queues.packet_bits
        served, ncr_beams = self._schedule(slot, direction)
        active = self._indicate_ncr(slot, ncr_beams)
        self.gains.slot = slot
        if direction == "DL":
            beam_per_rb = self._beam_map_dl(served)
            samples, _gains_db = self.evaluator.evaluate_dl(
                slot, served, beam_per_rb, active)
        else:
            cell_of_ue = {e.ue: e.gnb for e in served}
            samples, _gains_db = self.evaluator.evaluate_ul(
                slot, served, cell_of_ue, active)
        record = slot >= cfg.warmup_slots
        for e, s in zip(served, samples):
            mcs = phy.select_mcs(self.mcs_table, s.sinr_db)
            if mcs is None:
                continue
            bits = phy.tb_bits(mcs, e.rb_len, self.mcs_table)
            sent = self.queues.deliver(direction, e.ue, bits)
            store.delivered_bits_total[direction][e.ue] += sent
            if record:
                store.mcs_usage[direction][mcs] += 1
                store.delivered_bits[direction][e.ue] += sent
        if record:
            store.record_samples(samples)
            if "alloc" in cfg.trace_flags:
                for e in served:
                    store.alloc_trace.append(
                        (slot, e.gnb, e.ue, e.rb_start, e.rb_len, direction,
                         "direct" if e.ncr is None else f"ncr{e.ncr}"))


def run(cfg: RunConfig) -> MetricsStore:
    """Run one simulation; deterministic in (config, seed)."""
    sim = Simulation(cfg)
    store = sim.run()
    if cfg.output_dir is not None:
        emit(store, cfg.output_dir)
    return store
