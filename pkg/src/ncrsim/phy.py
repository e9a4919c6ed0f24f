"""Link budgets: RSRP, six-component SINR decomposition, link adaptation.

The SINR evaluator works on linear per-RB quantities supplied by a gain
provider, so the same code path serves the simulation engine and synthetic
budget checks. Downlink components at the receiving UE:

  signal           desired signal via the serving path
  ncr_noise        serving repeater's amplified receiver noise (forwarded path)
  rx_noise         receiver thermal noise over the allocated RBs
  direct_interf    co-RB transmissions of other cells, received directly
  fwd_interf       co-RB transmissions of other cells, forwarded by repeaters
  fwd_noise_interf amplified receiver noise of non-serving repeaters

Uplink mirrors the same decomposition at the serving gNB. Transmissions of a
link's own cell never interfere (orthogonal allocation), and copies of the
serving cell's own signal relayed by other repeaters are excluded as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ncr as ncr_mod
from .channel import THERMAL_NOISE_DBM_HZ

SINR_FLOOR_DB = -200.0
COMPONENT_FLOOR_DBM = -300.0

SUBCARRIERS_PER_RB = 12
SYMBOLS_PER_SLOT = 14


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float, floor_dbm: float = COMPONENT_FLOOR_DBM) -> float:
    if mw <= 0.0:
        return floor_dbm
    return max(10.0 * math.log10(mw), floor_dbm)


def noise_dbm(bandwidth_hz: float, noise_figure_db: float = 0.0) -> float:
    """Thermal noise power over a bandwidth, plus receiver noise figure."""
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def rsrp_direct_dbm(tx_per_re_dbm: float, link_gain_db: float) -> float:
    """Reference-signal power of a direct link, per resource element."""
    return tx_per_re_dbm + link_gain_db


def rsrp_forwarded_dbm(tx_per_re_dbm: float, backhaul_gain_db: float,
                       amp_gain_db: float, access_gain_db: float) -> float:
    """Reference-signal power of a repeater-forwarded link, per RE."""
    return tx_per_re_dbm + backhaul_gain_db + amp_gain_db + access_gain_db


@dataclass(frozen=True)
class SinrComponents:
    """Per-sample power breakdown in dBm (zero components floored)."""

    signal: float
    ncr_noise: float
    rx_noise: float
    direct_interf: float
    fwd_interf: float
    fwd_noise_interf: float


@dataclass(frozen=True)
class SinrSample:
    slot: int
    direction: str  # "DL" | "UL"
    ue: int
    link_type: str  # "direct" | "forwarded" | "outage"
    serving_gnb: Optional[int]
    serving_ncr: Optional[int]
    rb_start: int
    rb_len: int
    sinr_db: float
    components: SinrComponents


def compose_sample(slot, direction, ue, link_type, serving_gnb, serving_ncr,
                   rb_start, rb_len, signal_mw, ncr_noise_mw, rx_noise_mw,
                   direct_interf_mw, fwd_interf_mw, fwd_noise_mw) -> SinrSample:
    """Build a sample from linear component powers (already summed over RBs)."""
    denom = ncr_noise_mw + rx_noise_mw + direct_interf_mw + fwd_interf_mw + fwd_noise_mw
    if signal_mw <= 0.0 or denom <= 0.0:
        sinr = SINR_FLOOR_DB
    else:
        sinr = max(10.0 * math.log10(signal_mw / denom), SINR_FLOOR_DB)
    comp = SinrComponents(
        mw_to_dbm(signal_mw), mw_to_dbm(ncr_noise_mw), mw_to_dbm(rx_noise_mw),
        mw_to_dbm(direct_interf_mw), mw_to_dbm(fwd_interf_mw), mw_to_dbm(fwd_noise_mw))
    return SinrSample(slot, direction, ue, link_type, serving_gnb, serving_ncr,
                      rb_start, rb_len, sinr, comp)


def outage_sample(slot, direction, ue) -> SinrSample:
    """Sample for a UE without any serving path."""
    return compose_sample(slot, direction, ue, "outage", None, None, 0, 0,
                          0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


# --- link adaptation ---------------------------------------------------------

_NR_EFFICIENCY = np.array([
    0.1523, 0.2344, 0.3770, 0.4902, 0.6016, 0.8770, 1.1758, 1.4766,
    1.9141, 2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547,
])
_IMPLEMENTATION_GAP_DB = 3.0


@dataclass(frozen=True)
class McsTable:
    """Monotone SINR-threshold to spectral-efficiency mapping (16 entries)."""

    thresholds_db: np.ndarray
    efficiency: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds_db, dtype=float)
        e = np.asarray(self.efficiency, dtype=float)
        if t.shape != e.shape or t.ndim != 1:
            raise ValueError("thresholds and efficiencies must be 1D and equal length")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(e) <= 0):
            raise ValueError("MCS thresholds and efficiencies must be strictly increasing")
        t.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "thresholds_db", t)
        object.__setattr__(self, "efficiency", e)

    @classmethod
    def default(cls) -> "McsTable":
        """16 NR modulation/coding efficiencies with Shannon-gap thresholds."""
        snr_lin = 2.0 ** _NR_EFFICIENCY - 1.0
        thr = 10.0 * np.log10(snr_lin) + _IMPLEMENTATION_GAP_DB
        return cls(thr, _NR_EFFICIENCY.copy())

    @property
    def n_entries(self) -> int:
        return len(self.efficiency)


def select_mcs(table: McsTable, sinr_db: float) -> Optional[int]:
    """Largest index whose threshold <= sinr_db; None below the lowest."""
    idx = int(np.searchsorted(table.thresholds_db, sinr_db, side="right")) - 1
    return idx if idx >= 0 else None


def tb_bits(mcs: int, n_rb: int, table: Optional[McsTable] = None) -> int:
    """Transport block size in bits for one slot at the given MCS."""
    table = table or _DEFAULT_TABLE
    return int(math.floor(table.efficiency[mcs] * n_rb * SUBCARRIERS_PER_RB
                          * SYMBOLS_PER_SLOT))


_DEFAULT_TABLE = McsTable.default()


# --- slot-level SINR evaluation ---------------------------------------------

@dataclass(frozen=True)
class ServedEntry:
    """One scheduled allocation in a slot."""

    ue: int
    gnb: int
    ncr: Optional[int]  # None for direct service
    rb_start: int
    rb_len: int
    rx_beam: int  # gNB-side beam: the UE's direct beam, or the backhaul beam


class BeamMap:
    """Per-RB beam assignment of one transmitter, resolved once per slot.

    beams: (m,) distinct beam ids; rows: (K,) index into beams per RB, -1
    where the RB is idle.
    """

    __slots__ = ("beams", "rows", "any_active")

    def __init__(self, beams, rows):
        self.beams = np.asarray(beams, dtype=int)
        self.rows = np.asarray(rows, dtype=int)
        self.any_active = bool(self.beams.size)

    @classmethod
    def from_per_rb(cls, beam_per_rb) -> "BeamMap":
        arr = np.asarray(beam_per_rb, dtype=int)
        uniq, inv = np.unique(arr, return_inverse=True)
        if uniq.size and uniq[0] == -1:
            return cls(uniq[1:], inv - 1)
        return cls(uniq, inv)

    def expand(self, n_rb: int) -> np.ndarray:
        """Back to a per-RB beam array (-1 idle); for reference providers."""
        out = np.full(n_rb, -1, dtype=int)
        act = self.rows >= 0
        out[act] = self.beams[self.rows[act]]
        return out


class SinrEvaluator:
    """Assembles per-sample SINR from per-RB linear gains.

    The gain provider must expose:
      gnb_ue_rbs(g, u, beam_map)    -> (K,) linear gain, 0 where idle
      gnb_ue_beams(g, u, beams)     -> (len(beams), K)
      ncr_ue(n, u, beam)            -> (K,)
      gnb_ncr_rbs(g, n, beam_map)   -> (K,)
      gnb_ncr_beams(g, n, beams)    -> (len(beams), K)
    beam_map is a BeamMap; gains are connector-to-connector (beamforming,
    element patterns, path loss, shadowing and fast fading included).
    """

    def __init__(self, n_rb: int, rb_bandwidth_hz: float, noise_figure_db: float,
                 gnb_power_dbm: float, ue_power_dbm: float, gains, workers: int = 1):
        self.n_rb = n_rb
        self.gains = gains
        self.rb_noise_mw = dbm_to_mw(noise_dbm(rb_bandwidth_hz, noise_figure_db))
        self.carrier_noise_mw = dbm_to_mw(
            noise_dbm(rb_bandwidth_hz * n_rb, noise_figure_db))
        self.gnb_rb_mw = dbm_to_mw(gnb_power_dbm - 10.0 * math.log10(n_rb))
        self.ue_power_dbm = ue_power_dbm
        self.workers = max(1, int(workers))
        self._pool = None

    def _map_entries(self, fn, served):
        """Evaluate entries, optionally fanning out across worker threads.

        Entries are independent and results keep the input order, so the
        output is identical to sequential execution.
        """
        if self.workers == 1 or len(served) < 2:
            return [fn(e) for e in served]
        if self._pool is None:
            from concurrent.futures import ThreadPoolExecutor
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        return list(self._pool.map(fn, served))

    def ue_rb_mw(self, rb_len: int) -> float:
        """Uplink per-RB power: the UE concentrates its power in its allocation."""
        return dbm_to_mw(self.ue_power_dbm - 10.0 * math.log10(rb_len))

    def _ncr_forward_gains(self, input_rb_by_src: dict) -> dict:
        """Effective forward gain per ON repeater from its total carrier input.

        input_rb_by_src maps n -> {src: (K,) linear input power}. Returns
        n -> (gain_lin, gain_db, state).
        """
        out = {}
        for n, (state, by_src) in input_rb_by_src.items():
            total_mw = self.carrier_noise_mw + sum(float(v.sum()) for v in by_src.values())
            gain_db, _ = ncr_mod.forward_gain_db(state, mw_to_dbm(total_mw, -400.0))
            out[n] = (10.0 ** (gain_db / 10.0), gain_db)
        return out

    def evaluate_dl(self, slot, served, beam_per_rb, ncr_access):
        """Evaluate all downlink samples of one slot.

        served: list of ServedEntry. beam_per_rb: dict g -> (K,) int array
        (-1 where idle) or BeamMap. ncr_access: dict n -> (NcrState,
        access_beam) for the repeaters that are ON this slot. Returns
        (samples, ncr_gain_db).
        """
        gains = self.gains
        beam_map = {g: bm if isinstance(bm, BeamMap) else BeamMap.from_per_rb(bm)
                    for g, bm in beam_per_rb.items()}
        gnbs = sorted(beam_map)
        active_gnbs = [g for g in gnbs if beam_map[g].any_active]
        # repeater inputs, kept per source gNB for the interference exclusions
        inputs = {}
        for n, (state, _beam) in ncr_access.items():
            by_src = {}
            for g in active_gnbs:
                arr = gains.gnb_ncr_rbs(g, n, beam_map[g]) * self.gnb_rb_mw
                by_src[g] = arr
            inputs[n] = (state, by_src)
        fwd = self._ncr_forward_gains(inputs)

        def entry(e):
            sl = slice(e.rb_start, e.rb_start + e.rb_len)
            access = {n: gains.ncr_ue(n, e.ue, beam)[sl]
                      for n, (_st, beam) in ncr_access.items()}
            if e.ncr is None:
                g_ser = gains.gnb_ue_rbs(e.gnb, e.ue, beam_map[e.gnb])[sl]
                signal = self.gnb_rb_mw * float(g_ser.sum())
                ncr_noise = 0.0
            else:
                amp_lin = fwd[e.ncr][0]
                bh = inputs[e.ncr][1][e.gnb][sl]  # serving signal at repeater input
                signal = amp_lin * float((bh * access[e.ncr]).sum())
                ncr_noise = (self.rb_noise_mw * amp_lin
                             * float(access[e.ncr].sum()))
            rx_noise = self.rb_noise_mw * e.rb_len
            direct_i = 0.0
            for g in active_gnbs:
                if g == e.gnb:
                    continue
                arr = gains.gnb_ue_rbs(g, e.ue, beam_map[g])[sl]
                direct_i += self.gnb_rb_mw * float(arr.sum())
            fwd_i = 0.0
            fwd_noise = 0.0
            for n, (state, _beam) in ncr_access.items():
                amp_lin = fwd[n][0]
                by_src = inputs[n][1]
                other = sum(float((by_src[g][sl] * access[n]).sum())
                            for g in active_gnbs if g != e.gnb)
                fwd_i += amp_lin * other
                if n != e.ncr:
                    fwd_noise += self.rb_noise_mw * amp_lin * float(access[n].sum())
            return compose_sample(
                slot, "DL", e.ue, "direct" if e.ncr is None else "forwarded",
                e.gnb, e.ncr, e.rb_start, e.rb_len, signal, ncr_noise, rx_noise,
                direct_i, fwd_i, fwd_noise)

        samples = self._map_entries(entry, served)
        return samples, {n: v[1] for n, v in fwd.items()}

    def evaluate_ul(self, slot, served, cell_of_ue, ncr_access):
        """Evaluate all uplink samples of one slot.

        served: list of ServedEntry (rx_beam = gNB-side receive beam).
        cell_of_ue: dict ue -> serving gnb for every transmitting UE.
        Returns (samples, ncr_gain_db).
        """
        gains = self.gains
        tx_entries = {e.ue: e for e in served}
        # repeater inputs from every transmitting UE, aggregated per source cell
        inputs = {}
        for n, (state, beam) in ncr_access.items():
            by_src = {}
            for u, e in tx_entries.items():
                sl = slice(e.rb_start, e.rb_start + e.rb_len)
                arr = np.zeros(self.n_rb)
                arr[sl] = gains.ncr_ue(n, u, beam)[sl] * self.ue_rb_mw(e.rb_len)
                src = cell_of_ue[u]
                if src in by_src:
                    by_src[src] = by_src[src] + arr
                else:
                    by_src[src] = arr
            inputs[n] = (state, by_src)
        fwd = self._ncr_forward_gains(inputs)

        # batch the gNB-side gain rows over each receiver's entry beams
        by_gnb = {}
        for j, e in enumerate(served):
            by_gnb.setdefault(e.gnb, []).append(j)
        rowof = {}
        bh_rows = {}
        interf_rows = {}
        for g, idxs in by_gnb.items():
            beams = [served[j].rx_beam for j in idxs]
            for k, j in enumerate(idxs):
                rowof[j] = k
            for n in ncr_access:
                bh_rows[(g, n)] = gains.gnb_ncr_beams(g, n, beams)
            for u2, e2 in tx_entries.items():
                if cell_of_ue[u2] != g:
                    interf_rows[(g, u2)] = gains.gnb_ue_beams(g, u2, beams)

        def entry(job):
            j, e = job
            sl = slice(e.rb_start, e.rb_start + e.rb_len)
            row = rowof[j]
            p_rb = self.ue_rb_mw(e.rb_len)
            bh = {n: bh_rows[(e.gnb, n)][row][sl] for n in ncr_access}
            if e.ncr is None:
                g_ser = gains.gnb_ue_beams(e.gnb, e.ue, [e.rx_beam])[0][sl]
                signal = p_rb * float(g_ser.sum())
                ncr_noise = 0.0
            else:
                amp_lin = fwd[e.ncr][0]
                acc = gains.ncr_ue(e.ncr, e.ue, ncr_access[e.ncr][1])[sl]
                signal = p_rb * amp_lin * float((acc * bh[e.ncr]).sum())
                ncr_noise = self.rb_noise_mw * amp_lin * float(bh[e.ncr].sum())
            rx_noise = self.rb_noise_mw * e.rb_len
            direct_i = 0.0
            for u2, e2 in tx_entries.items():
                if u2 == e.ue or cell_of_ue[u2] == e.gnb:
                    continue
                lo = max(e.rb_start, e2.rb_start)
                hi = min(e.rb_start + e.rb_len, e2.rb_start + e2.rb_len)
                if lo >= hi:
                    continue
                arr = interf_rows[(e.gnb, u2)][row][lo:hi]
                direct_i += self.ue_rb_mw(e2.rb_len) * float(arr.sum())
            fwd_i = 0.0
            fwd_noise = 0.0
            for n, (state, _beam) in ncr_access.items():
                amp_lin = fwd[n][0]
                by_src = inputs[n][1]
                other = np.zeros(e.rb_len)
                for src, arr in by_src.items():
                    if src != e.gnb:
                        other = other + arr[sl]
                fwd_i += amp_lin * float((other * bh[n]).sum())
                if n != e.ncr:
                    fwd_noise += self.rb_noise_mw * amp_lin * float(bh[n].sum())
            return compose_sample(
                slot, "UL", e.ue, "direct" if e.ncr is None else "forwarded",
                e.gnb, e.ncr, e.rb_start, e.rb_len, signal, ncr_noise, rx_noise,
                direct_i, fwd_i, fwd_noise)

        samples = self._map_entries(entry, list(enumerate(served)))
        return samples, {n: v[1] for n, v in fwd.items()}
