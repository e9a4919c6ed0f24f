"""Command line interface: `ncr-sim run` and `ncr-sim validate`.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import engine, mac
from .config import ConfigError, parse_config_file, placement_overrides
from .scenario import ScenarioError, build_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncr-sim",
                                description="Repeater-assisted mmWave network simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a simulation and emit result files")
    run_p.add_argument("--scenario", choices=["a", "b"], help="scenario id")
    run_p.add_argument("--ncr", choices=["on", "off"], help="deploy repeaters or not")
    run_p.add_argument("--seed", type=int, help="run seed")
    run_p.add_argument("--slots", type=int, help="total slots to simulate")
    run_p.add_argument("--config", help="path to a key=value config file")
    run_p.add_argument("--out", help="output directory for result files")
    run_p.add_argument("--trace", help="comma-separated extra traces: links,alloc")

    val_p = sub.add_parser("validate", help="validate a config file and scenario")
    val_p.add_argument("--config", required=True, help="path to a key=value config file")
    return p


def make_run_config(cfg_items: dict, output_dir=None, trace=None) -> engine.RunConfig:
    """Assemble a RunConfig from merged config items (file + CLI overrides)."""
    scenario_id = cfg_items.get("scenario.id", "A")
    ncr_on = cfg_items.get("scenario.ncr", True)
    scenario = build_scenario(scenario_id, ncr_on, placement_overrides(cfg_items))
    if "ue.count" in cfg_items:
        scenario = replace(scenario, ue_count=int(cfg_items["ue.count"]))
    trace_flags = frozenset(t for t in (trace or "").split(",") if t)
    unknown = trace_flags - set(engine.TRACE_CHOICES)
    if unknown:
        raise ConfigError(f"unknown trace flags: {sorted(unknown)}")
    kw = {}
    mapping = {
        "run.seed": "seed",
        "run.total_slots": "total_slots",
        "run.warmup_slots": "warmup_slots",
        "ncr.gain_db": "ncr_gain_db",
        "ncr.max_output_dbm": "ncr_max_output_dbm",
        "ncr.force_off": "ncr_force_off",
        "sweep.access_period_slots": "access_sweep_period",
        "channel.refresh_period_slots": "refresh_period",
        "channel.paths": "n_paths",
        "channel.rician_k_db": "rician_k_db",
        "channel.shadow_grid_m": "shadow_grid_m",
        "mac.max_ues_per_slot": "max_ues_per_slot",
        "traffic.packet_bits": "packet_bits",
        "traffic.arrival_period_slots": "arrival_period_slots",
        "phy.noise_figure_db": "noise_figure_db",
        "power.gnb_dbm": "gnb_power_dbm",
        "power.ue_dbm": "ue_power_dbm",
    }
    for key, attr in mapping.items():
        if key in cfg_items:
            kw[attr] = cfg_items[key]
    try:
        return engine.RunConfig(scenario=scenario, output_dir=output_dir,
                                trace_flags=trace_flags,
                                config_items=tuple(sorted(cfg_items.items())), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _merged_items(args) -> dict:
    items = parse_config_file(args.config) if args.config else {}
    if getattr(args, "scenario", None):
        items["scenario.id"] = args.scenario.upper()
    if getattr(args, "ncr", None):
        items["scenario.ncr"] = args.ncr == "on"
    if getattr(args, "seed", None) is not None:
        items["run.seed"] = args.seed
    if getattr(args, "slots", None) is not None:
        items["run.total_slots"] = args.slots
    return items


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        items = _merged_items(args)
        if args.command == "validate":
            make_run_config(items)
            print("configuration ok")
            return EXIT_OK
        cfg = make_run_config(items, output_dir=args.out, trace=args.trace)
    except (ConfigError, ScenarioError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = os.environ.get("NCR_SIM_THREADS")
    if threads is not None:
        try:
            if int(threads) < 1:
                raise ValueError
        except ValueError:
            print(f"configuration error: bad NCR_SIM_THREADS={threads!r}",
                  file=sys.stderr)
            return EXIT_CONFIG
    try:
        store = engine.run(cfg)
    except engine.RunError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    dl = engine.per_ue_throughput(store, "DL")
    ul = engine.per_ue_throughput(store, "UL")
    print(f"completed {cfg.total_slots} slots, {store.n_samples} samples; "
          f"median throughput DL {engine.percentile(dl, 50):.3f} / "
          f"UL {engine.percentile(ul, 50):.3f} Mbit/s")
    if cfg.output_dir:
        print(f"results written to {cfg.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
