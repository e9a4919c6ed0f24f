"""Urban block-grid layout, node placement and pedestrian mobility.

The playground is a square grid of building blocks separated by street
corridors. Each corridor is structured sidewalk / roadway / sidewalk, and
pedestrians walk along the sidewalk centerlines, crossing at the lane
intersections inside the corridor crossings.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

UE_SPEED_MPS = 3.0 / 3.6  # 3 km/h pedestrian
SLOT_S = 0.25e-3
UE_HEIGHT_M = 1.5
GNB_HEIGHT_M = 25.0
NCR_HEIGHT_M = 10.0

# Base turn weights at a sidewalk corner; re-scaled over available options.
TURN_WEIGHTS = {"straight": 0.6, "left": 0.2, "right": 0.2}

_EPS = 1e-9


class ScenarioError(ValueError):
    """Raised when a scenario configuration is invalid."""


def turn_probabilities(available):
    """Re-scale the straight/left/right weights over the available options.

    Returns a dict option -> probability summing to 1. Empty input returns
    an empty dict (caller must fall back, e.g. reverse at a dead end).
    """
    opts = [o for o in ("straight", "left", "right") if o in set(available)]
    if not opts:
        return {}
    total = sum(TURN_WEIGHTS[o] for o in opts)
    return {o: TURN_WEIGHTS[o] / total for o in opts}


@dataclass(frozen=True)
class GridLayout:
    """Square grid of blocks separated by sidewalk/roadway corridors."""

    block_count_per_side: int = 3
    block_size_m: float = 120.0
    sidewalk_width_m: float = 3.0
    street_width_m: float = 14.0
    origin: tuple = (0.0, 0.0)

    @property
    def gap_m(self) -> float:
        return self.street_width_m + 2.0 * self.sidewalk_width_m

    @property
    def pitch_m(self) -> float:
        return self.block_size_m + self.gap_m

    @property
    def extent_m(self) -> float:
        n = self.block_count_per_side
        return n * self.block_size_m + (n - 1) * self.gap_m

    def block_rects(self) -> np.ndarray:
        """(n^2, 4) array of block rectangles as (x0, y0, x1, y1)."""
        ox, oy = self.origin
        rects = []
        for j in range(self.block_count_per_side):
            for i in range(self.block_count_per_side):
                x0 = ox + i * self.pitch_m
                y0 = oy + j * self.pitch_m
                rects.append((x0, y0, x0 + self.block_size_m, y0 + self.block_size_m))
        return np.asarray(rects)

    def lane_offsets(self) -> np.ndarray:
        """Sidewalk centerline offsets along one axis (same for x and y)."""
        half = self.sidewalk_width_m / 2.0
        offs = []
        for i in range(self.block_count_per_side - 1):
            gap_start = i * self.pitch_m + self.block_size_m
            offs.append(gap_start + half)
            offs.append(gap_start + self.gap_m - half)
        o = self.origin[0]
        return np.asarray([o + v for v in offs])

    def sidewalk_rects(self):
        """Disjoint decomposition of the sidewalk region into rectangles.

        Returns a list of (axis, centerline, x0, y0, x1, y1). Vertical
        corridors run the full extent; horizontal corridors are split at the
        vertical corridors so the crossing squares are counted once.
        """
        ox, oy = self.origin
        ext = self.extent_m
        half = self.sidewalk_width_m / 2.0
        offs = self.lane_offsets()
        rects = []
        for c in offs:
            rects.append(("v", c, c - half, oy, c + half, oy + ext))
        # x-intervals between/outside the vertical corridors
        cuts = [ox]
        for c in offs:
            cuts.extend([c - half, c + half])
        cuts.append(ox + ext)
        segments = [(cuts[k], cuts[k + 1]) for k in range(0, len(cuts) - 1, 2)]
        for c in offs:
            for x0, x1 in segments:
                rects.append(("h", c, x0, c - half, x1, c + half))
        return rects

    def point_kind(self, x: float, y: float) -> str:
        """Classify a point as 'block', 'sidewalk', 'street' or 'outside'."""
        ox, oy = self.origin
        ext = self.extent_m
        if not (ox <= x <= ox + ext and oy <= y <= oy + ext):
            return "outside"
        for x0, y0, x1, y1 in self.block_rects():
            if x0 < x < x1 and y0 < y < y1:
                return "block"
        half = self.sidewalk_width_m / 2.0
        for c in self.lane_offsets():
            if abs(x - c) <= half or abs(y - c) <= half:
                return "sidewalk"
        return "street"

    def contains(self, x: float, y: float) -> bool:
        ox, oy = self.origin
        return ox <= x <= ox + self.extent_m and oy <= y <= oy + self.extent_m

    def distance_to_sidewalk(self, x: float, y: float) -> float:
        """Distance from a point to the nearest sidewalk rectangle."""
        best = math.inf
        for _, _, x0, y0, x1, y1 in self.sidewalk_rects():
            dx = max(x0 - x, 0.0, x - x1)
            dy = max(y0 - y, 0.0, y - y1)
            best = min(best, math.hypot(dx, dy))
        return best

    def export_layout_csv(self, path) -> None:
        """Dump the layout rectangles for plotting: kind, x0, y0, x1, y1."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["kind", "x0", "y0", "x1", "y1"])
            for x0, y0, x1, y1 in self.block_rects():
                w.writerow(["block", repr(x0), repr(y0), repr(x1), repr(y1)])
            for _, _, x0, y0, x1, y1 in self.sidewalk_rects():
                w.writerow(["sidewalk", repr(x0), repr(y0), repr(x1), repr(y1)])


@functools.lru_cache(maxsize=8)
def _cached_lane_offsets(layout: GridLayout) -> np.ndarray:
    offs = layout.lane_offsets()
    offs.setflags(write=False)
    return offs


@functools.lru_cache(maxsize=8)
def _cached_block_rects(layout: GridLayout) -> np.ndarray:
    rects = layout.block_rects()
    rects.setflags(write=False)
    return rects


def segment_blocked(p1, p2, layout: GridLayout) -> bool:
    """True iff the 2D projection of segment p1-p2 crosses a block interior.

    Blocks are treated as occluders of unlimited height, so only the x/y
    components of the endpoints matter. Touching a block boundary does not
    count as blocked.
    """
    x1, y1 = float(p1[0]), float(p1[1])
    x2, y2 = float(p2[0]), float(p2[1])
    dx, dy = x2 - x1, y2 - y1
    for x0, y0, xr, yr in _cached_block_rects(layout):
        t0, t1 = 0.0, 1.0
        ok = True
        for p, q0, q1 in ((dx, x0 - x1, xr - x1), (dy, y0 - y1, yr - y1)):
            if abs(p) < _EPS:
                if q0 > 0 or q1 < 0:
                    ok = False
                    break
                continue
            ta, tb = q0 / p, q1 / p
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 >= t1:
                ok = False
                break
        if not ok or t1 - t0 <= 1e-12:
            continue
        tm = 0.5 * (t0 + t1)
        xm, ym = x1 + tm * dx, y1 + tm * dy
        if x0 + _EPS < xm < xr - _EPS and y0 + _EPS < ym < yr - _EPS:
            return True
    return False


def los_mask(points_a: np.ndarray, points_b: np.ndarray, layout: GridLayout) -> np.ndarray:
    """Vectorized line-of-sight test for paired 2D points.

    points_a, points_b: (P, 2) arrays. Returns a boolean (P,) array that is
    True where the segment does NOT cross any block interior.
    """
    a = np.atleast_2d(np.asarray(points_a, dtype=float))[:, :2]
    b = np.atleast_2d(np.asarray(points_b, dtype=float))[:, :2]
    d = b - a
    blocked = np.zeros(len(a), dtype=bool)
    for x0, y0, x1, y1 in _cached_block_rects(layout):
        t0 = np.zeros(len(a))
        t1 = np.ones(len(a))
        valid = np.ones(len(a), dtype=bool)
        for axis, (lo, hi) in enumerate(((x0, x1), (y0, y1))):
            p = d[:, axis]
            q0 = lo - a[:, axis]
            q1 = hi - a[:, axis]
            par = np.abs(p) < _EPS
            valid &= ~(par & ((q0 > 0) | (q1 < 0)))
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = np.where(par, 0.0, q0 / np.where(par, 1.0, p))
                tb = np.where(par, 1.0, q1 / np.where(par, 1.0, p))
            lo_t = np.minimum(ta, tb)
            hi_t = np.maximum(ta, tb)
            t0 = np.where(par, t0, np.maximum(t0, lo_t))
            t1 = np.where(par, t1, np.minimum(t1, hi_t))
        hit = valid & (t1 - t0 > 1e-12)
        if np.any(hit):
            tm = 0.5 * (t0 + t1)
            xm = a[:, 0] + tm * d[:, 0]
            ym = a[:, 1] + tm * d[:, 1]
            hit &= (xm > x0 + _EPS) & (xm < x1 - _EPS) & (ym > y0 + _EPS) & (ym < y1 - _EPS)
            blocked |= hit
    return ~blocked


@dataclass(frozen=True)
class GnbPlacement:
    position: tuple  # (x, y)
    height_m: float
    azimuth_rad: float


@dataclass(frozen=True)
class NcrPlacement:
    position: tuple  # (x, y)
    height_m: float
    gnb_side_azimuth_rad: float
    ue_side_azimuth_rad: float
    controlling_gnb: int


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str  # "A" or "B"
    ncr_enabled: bool
    layout: GridLayout
    gnb_placements: tuple
    ncr_placements: tuple
    ue_count: int = 72
    rb_count: int = 66
    carrier_hz: float = 28e9
    scs_hz: float = 60e3
    slot_s: float = SLOT_S
    symbols_per_slot: int = 14
    subcarriers_per_rb: int = 12

    @property
    def n_gnb(self) -> int:
        return len(self.gnb_placements)

    @property
    def n_ncr(self) -> int:
        return len(self.ncr_placements)


def _bearing(src, dst) -> float:
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def _default_placements(scenario_id: str, layout: GridLayout):
    """Default node positions for scenarios A and B.

    gNBs sit at the perimeter midpoints of the central block facing outward
    across the adjacent street; repeaters sit at the sidewalk-lane crossings
    of the adjacent corridors, redirecting into the perpendicular street
    that the gNBs cannot see. Both choices keep every repeater in direct
    line of sight of its controlling gNB along a street canyon.
    """
    c = layout.origin[0] + layout.extent_m / 2.0  # grid center coordinate
    half_block = layout.block_size_m / 2.0
    east_edge = c + half_block
    west_edge = c - half_block
    offs = sorted(layout.lane_offsets())
    # lane offsets bracketing the central block: [inner_low, outer_low, ...]
    lo_in, lo_out = offs[1], offs[0]   # e.g. 138.5, 121.5 on a 400 m grid
    hi_in, hi_out = offs[-2], offs[-1]  # e.g. 261.5, 278.5

    gnb_e = GnbPlacement((east_edge, c), GNB_HEIGHT_M, 0.0)
    gnb_w = GnbPlacement((west_edge, c), GNB_HEIGHT_M, math.pi)
    gnb_n = GnbPlacement((c, east_edge), GNB_HEIGHT_M, math.pi / 2.0)
    gnb_s = GnbPlacement((c, west_edge), GNB_HEIGHT_M, -math.pi / 2.0)

    def ncr(pos, ctrl, ctrl_pos, ue_az):
        return NcrPlacement(pos, NCR_HEIGHT_M, _bearing(pos, ctrl_pos), ue_az, ctrl)

    if scenario_id == "A":
        gnbs = (gnb_e, gnb_w)
        ncrs = (
            ncr((hi_in, lo_in), 0, gnb_e.position, math.pi),      # SE crossing -> west road
            ncr((lo_in, hi_in), 1, gnb_w.position, 0.0),          # NW crossing -> east road
        )
    else:
        gnbs = (gnb_e, gnb_n, gnb_w, gnb_s)
        ncrs = (
            ncr((hi_in, lo_in), 0, gnb_e.position, 0.0),           # SE crossing -> east
            ncr((hi_in, hi_in), 1, gnb_n.position, math.pi / 2.0),  # NE crossing -> north
            ncr((lo_in, hi_in), 2, gnb_w.position, math.pi),       # NW crossing -> west
            ncr((lo_in, lo_in), 3, gnb_s.position, -math.pi / 2.0),  # SW crossing -> south
        )
    return gnbs, ncrs


def _apply_overrides(gnbs, ncrs, overrides):
    """Apply a flat override table (keys like 'gnb.0.x') to the placements."""
    gnbs = list(gnbs)
    ncrs = list(ncrs)
    for key, value in overrides.items():
        parts = key.split(".")
        if len(parts) != 3 or parts[0] not in ("gnb", "ncr"):
            raise ScenarioError(f"unknown placement override key: {key!r}")
        kind, idx_s, attr = parts
        try:
            idx = int(idx_s)
        except ValueError:
            raise ScenarioError(f"bad node index in override key: {key!r}") from None
        table = gnbs if kind == "gnb" else ncrs
        if not 0 <= idx < len(table):
            raise ScenarioError(f"override {key!r}: node index out of range")
        node = table[idx]
        if attr == "x":
            node = replace(node, position=(float(value), node.position[1]))
        elif attr == "y":
            node = replace(node, position=(node.position[0], float(value)))
        elif kind == "gnb" and attr == "azimuth_deg":
            node = replace(node, azimuth_rad=math.radians(float(value)))
        elif kind == "ncr" and attr == "gnb_side_azimuth_deg":
            node = replace(node, gnb_side_azimuth_rad=math.radians(float(value)))
        elif kind == "ncr" and attr == "ue_side_azimuth_deg":
            node = replace(node, ue_side_azimuth_rad=math.radians(float(value)))
        elif kind == "ncr" and attr == "controlling_gnb":
            node = replace(node, controlling_gnb=int(value))
        else:
            raise ScenarioError(f"unknown placement override key: {key!r}")
        table[idx] = node
    return tuple(gnbs), tuple(ncrs)


def build_scenario(scenario_id: str, ncr_enabled: bool, overrides: Optional[dict] = None,
                   layout: Optional[GridLayout] = None) -> ScenarioConfig:
    """Build a validated scenario configuration.

    scenario_id "A" deploys 2 gNBs + 2 repeaters, "B" deploys 4 + 4.
    With ncr_enabled False the same gNB layout is kept and the repeater
    list is empty (macro-only variant). The optional override table
    replaces default placement fields key by key.
    """
    sid = str(scenario_id).upper()
    if sid not in ("A", "B"):
        raise ScenarioError(f"scenario_id must be 'A' or 'B', got {scenario_id!r}")
    layout = layout or GridLayout()
    gnbs, ncrs = _default_placements(sid, layout)
    if overrides:
        gnbs, ncrs = _apply_overrides(gnbs, ncrs, overrides)
    if not ncr_enabled:
        ncrs = ()
    for i, g in enumerate(gnbs):
        if not layout.contains(*g.position):
            raise ScenarioError(f"gnb {i} placed outside the grid extent: {g.position}")
    for i, n in enumerate(ncrs):
        if not layout.contains(*n.position):
            raise ScenarioError(f"ncr {i} placed outside the grid extent: {n.position}")
        if not 0 <= n.controlling_gnb < len(gnbs):
            raise ScenarioError(f"ncr {i} references missing controlling gnb {n.controlling_gnb}")
        ctrl = gnbs[n.controlling_gnb]
        if segment_blocked(n.position, ctrl.position, layout):
            raise ScenarioError(
                f"ncr {i} has no line of sight to controlling gnb {n.controlling_gnb} "
                f"({n.position} -> {ctrl.position})")
    return ScenarioConfig(sid, bool(ncr_enabled), layout, tuple(gnbs), tuple(ncrs))


@dataclass
class UeMobilityState:
    """A pedestrian walking along the sidewalk lane centerlines."""

    position: np.ndarray          # (2,)
    heading: np.ndarray           # axis-aligned unit vector (2,)
    speed_mps: float = UE_SPEED_MPS
    height: float = UE_HEIGHT_M


def spawn_ues(config: ScenarioConfig, rng) -> list:
    """Spawn the configured number of UEs on the sidewalks.

    Corridors are picked with probability proportional to their area and
    positions are uniform along the corridor; headings are uniform over the
    two directions of the lane.
    """
    rects = config.layout.sidewalk_rects()
    areas = np.array([(r[4] - r[2]) * (r[5] - r[3]) for r in rects])
    usable = areas > 0
    if not np.any(usable):
        raise ScenarioError("sidewalk region is empty")
    probs = np.where(usable, areas, 0.0)
    probs = probs / probs.sum()
    states = []
    for _ in range(config.ue_count):
        k = int(rng.choice(len(rects), p=probs))
        axis, center, x0, y0, x1, y1 = rects[k]
        u = rng.uniform()
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        if axis == "v":
            pos = np.array([center, y0 + u * (y1 - y0)])
            head = np.array([0.0, sign])
        else:
            pos = np.array([x0 + u * (x1 - x0), center])
            head = np.array([sign, 0.0])
        states.append(UeMobilityState(pos, head))
    return states


def _next_corner(s: float, direction: float, offsets: np.ndarray, lo: float, hi: float):
    """Distance along the lane to the next decision point (corner or end)."""
    if direction > 0:
        ahead = offsets[offsets > s + _EPS]
        target = ahead.min() if ahead.size else hi
        return target - s, (target >= hi - _EPS)
    ahead = offsets[offsets < s - _EPS]
    target = ahead.max() if ahead.size else lo
    return s - target, (target <= lo + _EPS)


def step_ue(state: UeMobilityState, dt_s: float, layout: GridLayout, rng) -> UeMobilityState:
    """Advance a UE by one time step along its sidewalk lane.

    At a lane intersection the new heading is drawn with base probabilities
    0.6 straight / 0.2 left / 0.2 right, re-scaled over the directions that
    exist there; at the grid boundary the walker reverses. Any residual step
    after a corner is taken along the new heading.
    """
    offsets = _cached_lane_offsets(layout)
    lo = layout.origin[0]
    hi = lo + layout.extent_m
    pos = state.position.astype(float).copy()
    head = state.heading.astype(float).copy()
    remaining = state.speed_mps * dt_s
    for _ in range(64):  # corners per step is tiny at pedestrian speeds
        if remaining <= _EPS:
            break
        axis = 1 if abs(head[0]) < 0.5 else 0  # index of the moving coordinate
        s = pos[axis]
        direction = head[axis]
        dist, at_boundary = _next_corner(s, direction, offsets, lo, hi)
        if remaining < dist - _EPS:
            pos[axis] = s + direction * remaining
            remaining = 0.0
            break
        pos[axis] = s + direction * dist
        remaining -= dist
        if at_boundary:
            head = -head
            continue
        probs = turn_probabilities(("straight", "left", "right"))
        r = rng.uniform()
        acc = 0.0
        choice = "straight"
        for opt in ("straight", "left", "right"):
            acc += probs.get(opt, 0.0)
            if r < acc:
                choice = opt
                break
        if choice == "left":
            head = np.array([-head[1], head[0]])
        elif choice == "right":
            head = np.array([head[1], -head[0]])
    return UeMobilityState(pos, head, state.speed_mps, state.height)
