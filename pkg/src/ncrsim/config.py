"""Flat key-value run configuration with a strict key registry.

The file format is one `key = value` per line with `#` comments. Keys use
dotted sections (e.g. `scenario.id`, `ncr.gain_db`). Unknown keys are hard
errors so misspelled parameters can never silently fall back to defaults.
"""

from __future__ import annotations

import re


class ConfigError(ValueError):
    """Raised for unparseable files, unknown keys or bad values."""


def _parse_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("true", "on", "yes", "1"):
        return True
    if s in ("false", "off", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_scenario_id(v: str) -> str:
    s = v.strip().upper()
    if s not in ("A", "B"):
        raise ConfigError(f"scenario.id must be 'a' or 'b', got {v!r}")
    return s


KNOWN_KEYS = {
    "scenario.id": _parse_scenario_id,
    "scenario.ncr": _parse_bool,
    "run.seed": int,
    "run.total_slots": int,
    "run.warmup_slots": int,
    "ue.count": int,
    "ncr.gain_db": float,
    "ncr.max_output_dbm": float,
    "ncr.force_off": _parse_bool,
    "sweep.access_period_slots": int,
    "channel.refresh_period_slots": int,
    "channel.paths": int,
    "channel.rician_k_db": float,
    "channel.shadow_grid_m": float,
    "mac.max_ues_per_slot": int,
    "traffic.packet_bits": int,
    "traffic.arrival_period_slots": int,
    "phy.noise_figure_db": float,
    "power.gnb_dbm": float,
    "power.ue_dbm": float,
}

# placement.gnb.0.x = 260.0 etc.; validated structurally here, range-checked
# against the actual node tables when the scenario is built
_PLACEMENT_RE = re.compile(
    r"^placement\.(gnb\.\d+\.(x|y|azimuth_deg)"
    r"|ncr\.\d+\.(x|y|gnb_side_azimuth_deg|ue_side_azimuth_deg|controlling_gnb))$")


def parse_config_text(text: str) -> dict:
    """Parse config text into a {key: typed value} dict; unknown keys raise."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in KNOWN_KEYS:
            try:
                out[key] = KNOWN_KEYS[key](value)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
        elif _PLACEMENT_RE.match(key):
            if key.endswith(".controlling_gnb"):
                try:
                    out[key] = int(value)
                except ValueError as exc:
                    raise ConfigError(f"line {lineno}: bad value for {key!r}") from exc
            else:
                try:
                    out[key] = float(value)
                except ValueError as exc:
                    raise ConfigError(f"line {lineno}: bad value for {key!r}") from exc
        else:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
    return out


def parse_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def placement_overrides(cfg: dict) -> dict:
    """Extract placement.* keys as the override table for the scenario builder."""
    prefix = "placement."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


def canonical_text(cfg: dict) -> str:
    """Stable one-line-per-key rendering used for the run's config hash."""
    return "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg)) + "\n"
