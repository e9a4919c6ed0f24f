"""Repeater node model: control split, ON-OFF schedule and the forward stage.

A repeater has a control terminal (served by its gNB) and an analog forward
stage with one panel toward the gNB and one toward the street. It is OFF by
default and forwards only in slots where its schedule indicates an access
beam; the forward stage applies a fixed amplification gain limited by a
maximum output power evaluated on the total carrier input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from .channel import THERMAL_NOISE_DBM_HZ

DEFAULT_AMP_GAIN_DB = 90.0
DEFAULT_MAX_OUTPUT_DBM = 33.0
DEFAULT_TDD_PATTERN = ("DL", "UL")


class SciError(ValueError):
    """Raised when side-control information is malformed or overlapping."""


class NcrOffError(RuntimeError):
    """Raised when a forward-stage operation is requested while OFF."""


@dataclass(frozen=True)
class SciEntry:
    offset: int
    duration: int
    beam: int


@dataclass(frozen=True)
class SideControlInfo:
    """Beam/time configuration for the forward stage.

    kind "periodic" and "semi_persistent" repeat with `periodicity_slots`;
    "dynamic" entries apply once at their absolute slot offsets.
    """

    kind: str  # periodic | semi_persistent | dynamic
    periodicity_slots: int = 0
    entries: tuple = ()  # of SciEntry

    def __post_init__(self):
        if self.kind not in ("periodic", "semi_persistent", "dynamic"):
            raise SciError(f"unknown sci kind {self.kind!r}")
        if self.kind != "dynamic" and self.periodicity_slots < 1:
            raise SciError("periodic sci requires periodicity_slots >= 1")
        for e in self.entries:
            if e.duration < 1:
                raise SciError(f"sci entry duration must be >= 1 slot, got {e.duration}")
            if self.kind != "dynamic" and e.offset + e.duration > self.periodicity_slots:
                raise SciError("sci entry exceeds its periodicity")
        spans = sorted((e.offset, e.offset + e.duration) for e in self.entries)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise SciError(f"overlapping sci entries at slot {b0}")


@dataclass(frozen=True)
class NcrState:
    """Forward-stage state; immutable, rebuilt by control-plane updates."""

    amp_gain_db: float = DEFAULT_AMP_GAIN_DB
    max_output_dbm: float = DEFAULT_MAX_OUTPUT_DBM
    backhaul_beam: Optional[int] = None
    periodic_sci: tuple = ()             # of SideControlInfo
    dynamic_schedule: dict = field(default_factory=dict)  # slot -> beam
    tdd_pattern: tuple = DEFAULT_TDD_PATTERN
    current_gain_db: Optional[float] = None  # set per slot by the forward stage

    def access_beam(self, slot: int) -> Optional[int]:
        """Scheduled access beam for a slot, or None when OFF."""
        if slot in self.dynamic_schedule:
            return self.dynamic_schedule[slot]
        for sci in self.periodic_sci:
            phase = slot % sci.periodicity_slots
            for e in sci.entries:
                if e.offset <= phase < e.offset + e.duration:
                    return e.beam
        return None

    def is_on(self, slot: int) -> bool:
        return self.access_beam(slot) is not None

    def tdd_direction(self, slot: int) -> str:
        return self.tdd_pattern[slot % len(self.tdd_pattern)]


def apply_sci(state: NcrState, sci: SideControlInfo) -> NcrState:
    """Rebuild the access schedule from side-control information.

    Periodic (and semi-persistent) configurations replace the standing
    periodic schedule; dynamic entries are one-shot additions. Invalid or
    overlapping configurations are rejected and the state is unchanged.
    """
    if sci.kind == "dynamic":
        new_dyn = dict(state.dynamic_schedule)
        for e in sci.entries:
            for s in range(e.offset, e.offset + e.duration):
                if s in new_dyn:
                    raise SciError(f"dynamic sci collides with existing entry at slot {s}")
                new_dyn[s] = e.beam
        return replace(state, dynamic_schedule=new_dyn)
    return replace(state, periodic_sci=(sci,))


def clear_schedule(state: NcrState) -> NcrState:
    return replace(state, periodic_sci=(), dynamic_schedule={})


def forward_gain_db(state: NcrState, input_power_dbm: float, on: bool = True):
    """Effective forward gain and output power for a total-carrier input.

    The configured gain applies until the output would exceed the maximum
    output power; past that point the gain compresses so the output sits
    exactly at the cap. The input is the total received power over the full
    carrier (signal + interference + thermal noise), so compression squeezes
    every component equally.
    """
    if not on:
        raise NcrOffError("forward stage is OFF in this slot")
    candidate = input_power_dbm + state.amp_gain_db
    if candidate <= state.max_output_dbm:
        return state.amp_gain_db, candidate
    return state.max_output_dbm - input_power_dbm, state.max_output_dbm


def amplified_noise_dbm(state: NcrState, noise_figure_db: float, bandwidth_hz: float,
                        on: bool = True) -> float:
    """Repeater receiver noise re-emitted at the output panel, in dBm.

    Uses the slot's effective gain (current_gain_db) when the cap compressed
    it, otherwise the configured gain. The caller attenuates this by the
    outgoing link (access in DL, backhaul in UL).
    """
    if not on:
        raise NcrOffError("forward stage is OFF in this slot")
    gain = state.current_gain_db if state.current_gain_db is not None else state.amp_gain_db
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db + gain


class BeamIndication(NamedTuple):
    access_beam: int
    backhaul_beam: Optional[int]
    direction: str


def mt_beam_indication(state: NcrState, slot: int) -> Optional[BeamIndication]:
    """Active beams and TDD direction for a slot; None while OFF.

    An OFF slot forwards no signal and injects no amplified noise anywhere.
    """
    beam = state.access_beam(slot)
    if beam is None:
        return None
    return BeamIndication(beam, state.backhaul_beam, state.tdd_direction(slot))
