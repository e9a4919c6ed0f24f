"""Association, beam management timing, RB scheduling, traffic and TDD."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

TDD_PATTERN = ("DL", "UL")
ACCESS_SWEEP_PERIOD_SLOTS = 80  # 20 ms at 0.25 ms slots; direct links use the same
PACKET_BITS = 3072
ARRIVAL_PERIOD_SLOTS = 4
MAX_UES_PER_SLOT = 8
OUTAGE_RSRP_DBM = -140.0


def tdd_direction(slot: int) -> str:
    """Static network-synchronized TDD pattern: DL, UL, DL, UL, ..."""
    return TDD_PATTERN[slot % len(TDD_PATTERN)]


def sweep_due(link_kind: str, slot: int) -> bool:
    """Whether a beam sweep of the given kind runs in this slot.

    Access and direct links are re-swept periodically; the backhaul between
    static planned nodes is swept once at startup and then kept.
    """
    if link_kind == "backhaul":
        return slot == 0
    if link_kind in ("access", "direct"):
        return slot % ACCESS_SWEEP_PERIOD_SLOTS == 0
    raise ValueError(f"unknown link kind {link_kind!r}")


def run_beam_sweep(link_kind: str, slot: int, gain_table: np.ndarray):
    """Exhaustive beam search over a sweep gain table.

    gain_table holds the sweep metric per beam: (n_beams,) for single-sided
    sweeps (access/direct: transmitter codebook only, the UE has a single
    antenna) or (n_tx_beams, n_rx_beams) for the backhaul pair search.
    Returns the argmax index or index pair.
    """
    if not sweep_due(link_kind, slot):
        raise ValueError(f"slot {slot} is not a sweep slot for {link_kind!r}")
    table = np.asarray(gain_table)
    if table.ndim == 1:
        return int(np.argmax(table))
    i = int(np.argmax(table))
    return tuple(int(v) for v in np.unravel_index(i, table.shape))


@dataclass(frozen=True)
class Association:
    ue: int
    serving_gnb: Optional[int]
    ncr: Optional[int]  # None = direct service
    valid_from_slot: int

    @property
    def in_outage(self) -> bool:
        return self.serving_gnb is None


def associate(ue: int, direct_rsrp_dbm: np.ndarray, fwd_rsrp_dbm: dict,
              ncr_owner: dict, slot: int) -> Association:
    """Pick the serving gNB and path from the latest sweep measurements.

    direct_rsrp_dbm: (B,) best direct-beam RSRP per gNB. fwd_rsrp_dbm maps
    ncr -> RSRP via that repeater; ncr_owner maps ncr -> controlling gNB.
    The serving gNB maximizes its best path; ties break toward direct
    service. Below the outage threshold the UE is unserved for the period.
    """
    b = len(direct_rsrp_dbm)
    best_fwd = np.full(b, -np.inf)
    best_ncr = [None] * b
    for n, rsrp in fwd_rsrp_dbm.items():
        g = ncr_owner[n]
        if rsrp > best_fwd[g]:
            best_fwd[g] = rsrp
            best_ncr[g] = n
    per_gnb = np.maximum(direct_rsrp_dbm, best_fwd)
    g = int(np.argmax(per_gnb))
    if per_gnb[g] < OUTAGE_RSRP_DBM:
        return Association(ue, None, None, slot)
    if direct_rsrp_dbm[g] >= best_fwd[g]:  # tie-break toward direct
        return Association(ue, g, None, slot)
    return Association(ue, g, best_ncr[g], slot)


class TrafficQueue:
    """Per-(UE, direction) constant-bit-rate backlog in bits."""

    def __init__(self, n_ues: int, packet_bits: int = PACKET_BITS,
                 arrival_period_slots: int = ARRIVAL_PERIOD_SLOTS):
        self.packet_bits = packet_bits
        self.arrival_period_slots = arrival_period_slots
        self.backlog = {"DL": np.zeros(n_ues, dtype=np.int64),
                        "UL": np.zeros(n_ues, dtype=np.int64)}

    def step_arrivals(self, slot: int) -> None:
        """Add one packet per UE per direction every arrival period."""
        if slot % self.arrival_period_slots == 0:
            self.backlog["DL"] += self.packet_bits
            self.backlog["UL"] += self.packet_bits

    def clear(self) -> None:
        """Drop all backlog (measurement-window boundary)."""
        self.backlog["DL"][:] = 0
        self.backlog["UL"][:] = 0

    def deliver(self, direction: str, ue: int, bits: int) -> int:
        """Drain up to `bits` from a queue; returns the bits actually sent."""
        sent = min(int(self.backlog[direction][ue]), int(bits))
        self.backlog[direction][ue] -= sent
        return sent

    def backlogged(self, direction: str) -> np.ndarray:
        return np.flatnonzero(self.backlog[direction] > 0)


@dataclass(frozen=True)
class RbAllocation:
    ue: int
    rb_start: int
    rb_len: int


def split_rbs(n_rb: int, n_ues: int):
    """Contiguous, near-even split of n_rb among n_ues (earlier get the +1)."""
    base, extra = divmod(n_rb, n_ues)
    out = []
    start = 0
    for k in range(n_ues):
        size = base + (1 if k < extra else 0)
        out.append((start, size))
        start += size
    return out


class RoundRobinScheduler:
    """Per-gNB, per-direction round robin over backlogged UEs.

    At most `max_ues` UEs share a slot; unserved backlogged UEs keep their
    place and lead the next slot of the same direction. When a repeater can
    carry only one access beam per slot, forwarded UEs whose beam conflicts
    with the beam already claimed this slot are passed over.
    """

    def __init__(self, ue_ids, n_rb: int, max_ues: int = MAX_UES_PER_SLOT):
        self.order = list(ue_ids)
        self.n_rb = n_rb
        self.max_ues = max_ues
        self.pointer = {"DL": 0, "UL": 0}

    def schedule(self, direction: str, backlogged, path_ncr: dict = None,
                 access_beam: dict = None):
        """Pick UEs and split the RBs.

        backlogged: iterable of this gNB's backlogged UE ids. path_ncr maps
        ue -> ncr id (or None for direct); access_beam maps ue -> the beam its
        repeater would need. Returns (allocations, ncr_beam) where ncr_beam
        maps ncr -> the single beam scheduled on it this slot.
        """
        want = set(backlogged)
        if not want:
            return [], {}
        path_ncr = path_ncr or {}
        access_beam = access_beam or {}
        n = len(self.order)
        ptr = self.pointer[direction]
        picked = []
        ncr_beam = {}
        first_unserved = None
        scanned = 0
        while scanned < n and len(picked) < self.max_ues:
            ue = self.order[(ptr + scanned) % n]
            scanned += 1
            if ue not in want:
                continue
            ncr = path_ncr.get(ue)
            if ncr is not None:
                beam = access_beam[ue]
                if ncr in ncr_beam and ncr_beam[ncr] != beam:
                    if first_unserved is None:
                        first_unserved = (ptr + scanned - 1) % n
                    continue
                ncr_beam[ncr] = beam
            picked.append(ue)
        if first_unserved is not None:
            # a beam-conflicted UE leads the next slot of this direction
            self.pointer[direction] = first_unserved
        else:
            self.pointer[direction] = (ptr + scanned) % n
        allocations = [RbAllocation(ue, start, size)
                       for ue, (start, size) in zip(picked, split_rbs(self.n_rb, len(picked)))]
        return allocations, ncr_beam
