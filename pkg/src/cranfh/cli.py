"""Command-line entry point: config parsing, experiment orchestration and
result emission.

Subcommands:
  run                 single experiment point with per-slot trace output
  sweep-arrival       mean-delay curve versus mean arrival rate
  sweep-capacity      mean-delay curve versus total fronthaul budget
  oracle-gap          desk-scale dynamic-programming benchmark report
  calibration-report  per-flow priority-function calibration constants

Configuration is flat ``key = value`` text with dotted namespaces; any key
can be overridden on the command line with ``--set key=value``.  All dB
quantities are converted to linear units here and nowhere else.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from cranfh import __version__
from cranfh.allocator import AllocatorConfig
from cranfh.channel import PathGains, compute_path_gains, generate_topology, path_loss_db
from cranfh.mdp_oracle import (OracleGrids, build_discrete_mdp, evaluate_policy,
                               policy_iteration)
from cranfh.params import SystemParams, dbm_to_watt
from cranfh.priority import calibrate_flows
from cranfh.sim import (SCHEMES, CalibrationTargetError, EpisodeConfig,
                        aggregate_metrics, calibrate_price_to_budget,
                        prepare_topology, run_episode)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3
EXIT_IO = 4

_MODES = ("single_run", "sweep_arrival", "sweep_capacity", "oracle_gap",
          "unit_report")


class ConfigError(ValueError):
    """A configuration key is malformed or out of range."""


# Every recognized key with its default value.  Values are stored as the
# parsed Python type; list-valued keys hold comma-separated floats.
CONFIG_DEFAULTS: dict = {
    "seed": 0,
    "phy.power_dbm": 23.0,
    "phy.noise_dbm_hz": -174.0,
    "phy.bandwidth_hz": 10e6,
    "phy.slot_s": 10e-3,
    "cost.beta": 1.0,
    "cost.gamma": 1.0,
    "topology.num_cells": 7,
    "topology.cell_radius_m": 500.0,
    "topology.cross_scale": 0.1,
    "sim.num_topologies": 20,
    "sim.num_slots": 100,
    "sim.warmup_slots": 0,
    "sim.mean_arrival_mbps": 30.0,
    "sim.total_capacity_mbps": 350.0,
    "sim.arrival_packet_bits": 5000.0,
    "sim.calib_topologies": 6,
    "sim.calib_slots": 100,
    "schemes": "delay_aware,throughput_optimal,queue_weighted",
    "sweep.arrival_mbps": "20,25,30,35",
    "sweep.capacity_mbps": "250,300,350,400,450",
    "oracle.num_flows": 1,
    "oracle.distance_m": 300.0,
    "oracle.mean_arrival_mbps": 46.0,
    "oracle.gamma": 0.2,
    "oracle.cross_scales": "0.0",
    "oracle.num_queue_levels": 200,
    "oracle.channel_bins": 8,
    "oracle.cross_bins": 2,
    "oracle.capacity_levels": 32,
    "oracle.c_max": 24.0,
}

_INT_KEYS = {"seed", "topology.num_cells", "sim.num_topologies",
             "sim.num_slots", "sim.warmup_slots", "sim.calib_topologies",
             "sim.calib_slots", "oracle.num_flows", "oracle.num_queue_levels",
             "oracle.channel_bins", "oracle.cross_bins",
             "oracle.capacity_levels"}
_LIST_KEYS = {"sweep.arrival_mbps", "sweep.capacity_mbps",
              "oracle.cross_scales"}
_STR_KEYS = {"schemes"}

_POSITIVE_KEYS = {"phy.bandwidth_hz", "phy.slot_s", "cost.beta", "cost.gamma",
                  "topology.num_cells", "topology.cell_radius_m",
                  "sim.num_topologies", "sim.num_slots",
                  "sim.mean_arrival_mbps", "sim.total_capacity_mbps",
                  "sim.arrival_packet_bits", "sim.calib_topologies",
                  "sim.calib_slots", "oracle.distance_m",
                  "oracle.mean_arrival_mbps", "oracle.gamma",
                  "oracle.num_flows", "oracle.num_queue_levels",
                  "oracle.channel_bins", "oracle.cross_bins",
                  "oracle.capacity_levels", "oracle.c_max"}


@dataclass
class ExperimentSpec:
    """Resolved experiment description: mode, sweep axis and plumbing."""

    mode: str
    sweep_values: list[float]
    schemes: list[str]
    output_dir: str
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode in ("sweep_arrival", "sweep_capacity"):
            if not self.sweep_values:
                raise ConfigError("sweep values must be nonempty")
            if np.any(np.diff(self.sweep_values) <= 0):
                raise ConfigError("sweep values must be strictly increasing")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r} in 'schemes'")


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key not in CONFIG_DEFAULTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    if key in _STR_KEYS or key in _LIST_KEYS:
        return raw
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r}") from exc


def _validate(config: dict) -> None:
    for key in _POSITIVE_KEYS:
        value = config[key]
        if key in _LIST_KEYS:
            continue
        if not (np.isfinite(value) and value > 0):
            raise ConfigError(f"key {key!r} must be positive, got {value!r}")
    if config["sim.warmup_slots"] < 0:
        raise ConfigError("key 'sim.warmup_slots' must be nonnegative")
    if not 0.0 <= config["topology.cross_scale"] <= 1.0:
        raise ConfigError("key 'topology.cross_scale' must lie in [0, 1]")
    if config["oracle.num_flows"] not in (1, 2):
        raise ConfigError("key 'oracle.num_flows' must be 1 or 2")


def _float_list(raw: str, key: str) -> list[float]:
    try:
        values = [float(tok) for tok in str(raw).split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse list {raw!r}") from exc
    if not values:
        raise ConfigError(f"key {key!r}: list is empty")
    return values


def parse_config(path: str | None, overrides: list[str], mode: str,
                 output_dir: str, seed: int | None) -> tuple[ExperimentSpec, SystemParams]:
    """Resolve defaults, an optional config file and --set overrides into an
    ExperimentSpec plus the base SystemParams (dB converted here)."""
    config = dict(CONFIG_DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in text.split("=", 1))
            config[key] = _parse_value(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        config[key] = _parse_value(key, raw)
    if seed is not None:
        config["seed"] = int(seed)
    _validate(config)

    schemes = [s.strip() for s in config["schemes"].split(",") if s.strip()]
    if mode == "sweep_arrival":
        sweep = _float_list(config["sweep.arrival_mbps"], "sweep.arrival_mbps")
    elif mode == "sweep_capacity":
        sweep = _float_list(config["sweep.capacity_mbps"], "sweep.capacity_mbps")
    else:
        sweep = []
    spec = ExperimentSpec(mode=mode, sweep_values=sweep, schemes=schemes,
                          output_dir=output_dir, seed=int(config["seed"]),
                          config=config)

    k_n = config["topology.num_cells"]
    bandwidth = config["phy.bandwidth_hz"]
    params = SystemParams(
        power_w=dbm_to_watt(config["phy.power_dbm"]),
        noise_w=dbm_to_watt(config["phy.noise_dbm_hz"]) * bandwidth,
        bandwidth_hz=bandwidth,
        slot_s=config["phy.slot_s"],
        beta=np.full(k_n, config["cost.beta"]),
        gamma=np.full(k_n, config["cost.gamma"]),
        lam=np.full(k_n, config["sim.mean_arrival_mbps"] * 1e6 / bandwidth),
    )
    return spec, params


# -- result emission --------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
    except OSError as exc:
        raise IOError(f"cannot write {path!r}: {exc}") from exc


def provenance_record(spec: ExperimentSpec, params: SystemParams,
                      extra: dict | None = None) -> dict:
    """Full resolved configuration plus the unit audit trail."""
    record = {
        "version": __version__,
        "mode": spec.mode,
        "seed": spec.seed,
        "schemes": spec.schemes,
        "sweep_values": spec.sweep_values,
        "config": {k: spec.config[k] for k in sorted(spec.config)},
        "units": {
            "power_dbm": spec.config["phy.power_dbm"],
            "power_w": params.power_w,
            "noise_dbm_hz": spec.config["phy.noise_dbm_hz"],
            "noise_w": params.noise_w,
            "bandwidth_hz": params.bandwidth_hz,
            "lambda_normalization": "arrival rates in bit/s divided by "
                                    "bandwidth_hz to bit/s/Hz",
        },
    }
    if extra:
        record.update(extra)
    return record


def write_json(path: str, payload: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IOError(f"cannot write {path!r}: {exc}") from exc


# -- experiment orchestration -----------------------------------------------


def _episode_config(spec: ExperimentSpec, mean_arrival_bps: float,
                    target_bps: float, scheme: str) -> EpisodeConfig:
    c = spec.config
    return EpisodeConfig(
        num_slots=c["sim.num_slots"],
        num_topologies=c["sim.num_topologies"],
        mean_arrival_bps=mean_arrival_bps,
        arrival_packet_bits=c["sim.arrival_packet_bits"],
        scheme=scheme,
        seed=spec.seed,
        target_total_capacity_bps=target_bps,
        warmup_slots=c["sim.warmup_slots"],
        num_cells=c["topology.num_cells"],
        cell_radius_m=c["topology.cell_radius_m"],
        cross_scale=c["topology.cross_scale"],
        calib_topologies=c["sim.calib_topologies"],
        calib_slots=c["sim.calib_slots"],
    )


def run_sweep(spec: ExperimentSpec, params: SystemParams,
              trace_rows: list | None = None) -> tuple[list, list, list, int]:
    """Run every (sweep point, scheme) pair with common random numbers.

    Returns (summary_rows, timing_rows, skipped, clip_count).  Calibration
    multipliers are warm-started across sweep points per scheme.
    """
    c = spec.config
    if spec.mode == "sweep_arrival":
        points = [(v, v * 1e6, c["sim.total_capacity_mbps"] * 1e6)
                  for v in spec.sweep_values]
    elif spec.mode == "sweep_capacity":
        points = [(v, c["sim.mean_arrival_mbps"] * 1e6, v * 1e6)
                  for v in spec.sweep_values]
    else:
        points = [(c["sim.mean_arrival_mbps"],
                   c["sim.mean_arrival_mbps"] * 1e6,
                   c["sim.total_capacity_mbps"] * 1e6)]

    alloc_cfg = AllocatorConfig()
    summary_rows: list[tuple] = []
    timing_rows: list[tuple] = []
    skipped: list[dict] = []
    clip_count = 0
    warm: dict[str, float] = {}
    for point, lam_bps, target_bps in points:
        base_cfg = _episode_config(spec, lam_bps, target_bps, spec.schemes[0])
        setups = [prepare_topology(params, base_cfg, t)
                  for t in range(base_cfg.num_topologies)]
        clip_count += sum(s.lambda_clip_count for s in setups)
        for scheme in spec.schemes:
            cfg = replace(base_cfg, scheme=scheme)
            try:
                scale = calibrate_price_to_budget(
                    setups, scheme, cfg, target_bps, alloc_cfg,
                    init_scale=warm.get(scheme, 1.0))
            except CalibrationTargetError as exc:
                print(f"skipping point {point:g} scheme {scheme}: {exc}",
                      file=sys.stderr)
                skipped.append({"point": point, "scheme": scheme,
                                "reason": str(exc)})
                continue
            warm[scheme] = scale
            runs = []
            slot_times: list[float] = []
            for setup in setups:
                runs.append(run_episode(setup, scheme, cfg, scale, alloc_cfg,
                                        trace=trace_rows,
                                        slot_times=slot_times))
            agg = aggregate_metrics(runs, params.beta, params.gamma)
            median_ms = 1e3 * statistics.median(slot_times)
            summary_rows.append((
                point, scheme,
                agg.mean.avg_delay_s * 1e3, agg.stderr_delay_s * 1e3,
                agg.mean.avg_total_capacity_bps / 1e6,
                agg.stderr_total_capacity_bps / 1e6,
                scale, agg.mean.objective_l,
                agg.mean.convergence_failures, agg.num_runs))
            timing_rows.append((point, scheme, median_ms, len(slot_times)))
    return summary_rows, timing_rows, skipped, clip_count


SUMMARY_HEADER = ["point", "scheme", "delay_ms", "delay_stderr_ms",
                  "capacity_mbps", "capacity_stderr_mbps", "gamma_scale",
                  "objective", "convergence_failures", "num_topologies"]
TIMING_HEADER = ["point", "scheme", "median_slot_ms", "num_slots"]
TRACE_HEADER = ["topology", "slot", "flow", "q_bits", "c_bit_s_hz",
                "rate_bps", "arrivals_bits"]


def _run_experiment(spec: ExperimentSpec, params: SystemParams) -> int:
    import os
    os.makedirs(spec.output_dir, exist_ok=True)
    trace_rows: list | None = [] if spec.mode == "single_run" else None
    summary, timing, skipped, clips = run_sweep(spec, params, trace_rows)
    if not summary:
        print("all sweep points failed calibration", file=sys.stderr)
        return EXIT_CALIBRATION
    out = spec.output_dir
    write_csv(f"{out}/summary.csv", SUMMARY_HEADER, summary)
    write_csv(f"{out}/timing.csv", TIMING_HEADER, timing)
    if trace_rows is not None:
        write_csv(f"{out}/trace.csv", TRACE_HEADER, trace_rows)
    write_json(f"{out}/provenance.json",
               provenance_record(spec, params,
                                 {"skipped_points": skipped,
                                  "lambda_clip_count": clips}))
    print(f"wrote {len(summary)} summary rows to {out}/summary.csv")
    return EXIT_OK


# -- oracle report ----------------------------------------------------------


def _oracle_gains(spec: ExperimentSpec, cross_scale: float) -> PathGains:
    c = spec.config
    k_n = c["oracle.num_flows"]
    g = float(10.0 ** (-path_loss_db(np.array(c["oracle.distance_m"])) / 10.0))
    gains = np.full((k_n, k_n), cross_scale * g)
    np.fill_diagonal(gains, g)
    return PathGains(gains=gains, cross_scale=cross_scale)


def run_oracle_report(spec: ExperimentSpec, params: SystemParams) -> dict:
    """Solve the discretized control problem and report each scheme's gap."""
    from cranfh.allocator import (allocate_delay_aware, allocate_queue_weighted,
                                  allocate_throughput_optimal)
    c = spec.config
    k_n = c["oracle.num_flows"]
    base = SystemParams(
        power_w=params.power_w, noise_w=params.noise_w,
        bandwidth_hz=params.bandwidth_hz, slot_s=params.slot_s,
        beta=np.ones(k_n), gamma=np.full(k_n, c["oracle.gamma"]),
        lam=np.full(k_n, c["oracle.mean_arrival_mbps"] * 1e6 / params.bandwidth_hz))
    grids = OracleGrids(
        num_queue_levels=c["oracle.num_queue_levels"],
        channel_bins=c["oracle.channel_bins"],
        cross_bins=c["oracle.cross_bins"],
        capacity_levels=c["oracle.capacity_levels"],
        c_max=c["oracle.c_max"])
    alloc_cfg = AllocatorConfig()
    report = {"grids": {"num_queue_levels": grids.num_queue_levels,
                        "q_max_bits": grids.q_max_bits,
                        "q_min_bits": grids.q_min_bits,
                        "channel_bins": grids.channel_bins,
                        "cross_bins": grids.cross_bins,
                        "capacity_levels": grids.capacity_levels,
                        "c_max": grids.c_max},
              "num_flows": k_n,
              "points": []}
    for cs in _float_list(c["oracle.cross_scales"], "oracle.cross_scales"):
        gains = _oracle_gains(spec, cs)
        mdp = build_discrete_mdp(base, gains, grids)
        t0 = time.perf_counter()
        sol = policy_iteration(mdp)
        solve_s = time.perf_counter() - t0
        priorities = calibrate_flows(base, gains)

        def delay_aware(q_bits, csi):
            return allocate_delay_aware(csi, q_bits / base.bandwidth_hz,
                                        priorities, gains, base,
                                        alloc_cfg).capacities

        def throughput_optimal(q_bits, csi):
            return allocate_throughput_optimal(csi, base, alloc_cfg).capacities

        def queue_weighted(q_bits, csi):
            return allocate_queue_weighted(csi, q_bits / 1e6, base,
                                           alloc_cfg).capacities

        entry = {"cross_scale": cs, "theta_star": sol.theta_star,
                 "bellman_residual": sol.bellman_residual,
                 "solver_iterations": sol.iterations,
                 "solver_seconds": solve_s, "schemes": {}}
        for name, fn in (("delay_aware", delay_aware),
                         ("throughput_optimal", throughput_optimal),
                         ("queue_weighted", queue_weighted)):
            cost = evaluate_policy(mdp, fn)
            entry["schemes"][name] = {
                "cost": cost,
                "gap": cost - sol.theta_star,
                "relative_gap": (cost - sol.theta_star) / sol.theta_star,
            }
        report["points"].append(entry)
    return report


def run_calibration_report(spec: ExperimentSpec, params: SystemParams) -> dict:
    """Per-flow priority calibration constants on one random topology.

    Nominal arrival rates are clipped into the per-flow stability region the
    same way the simulator clips its random draws, so the report succeeds for
    far-out user placements too; clipped flows are marked.
    """
    from cranfh.priority import base_system_capacity
    from cranfh.sim import _STABILITY_CLIP
    c = spec.config
    topo = generate_topology(c["topology.num_cells"],
                             c["topology.cell_radius_m"], spec.seed)
    gains = compute_path_gains(topo, c["topology.cross_scale"])
    diag = np.diag(gains.gains)
    lam = params.lam.copy()
    clipped = []
    for k in range(params.num_flows):
        a_k = params.n0_norm / (params.p_norm * diag[k])
        cap = _STABILITY_CLIP * base_system_capacity(a_k)
        if lam[k] > cap:
            lam[k] = cap
            clipped.append(k)
    priorities = calibrate_flows(params.with_lam(lam), gains)
    return {"seed": spec.seed,
            "cross_scale": c["topology.cross_scale"],
            "clipped_flows": clipped,
            "flows": [pf.report() for pf in priorities]}


# -- entry point --------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cranfh",
        description="Delay-aware uplink fronthaul capacity allocation: "
                    "simulator, sweeps and dynamic-programming benchmark.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "single experiment point with per-slot trace"),
            ("sweep-arrival", "delay versus mean arrival rate"),
            ("sweep-capacity", "delay versus total fronthaul budget"),
            ("oracle-gap", "dynamic-programming benchmark report"),
            ("calibration-report", "per-flow calibration constants")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--output", "-o", default="results",
                       help="output directory (default: results)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the 'seed' config key")
    return parser


_COMMAND_MODES = {"run": "single_run", "sweep-arrival": "sweep_arrival",
                  "sweep-capacity": "sweep_capacity",
                  "oracle-gap": "oracle_gap",
                  "calibration-report": "unit_report"}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        spec, params = parse_config(args.config, args.set,
                                    _COMMAND_MODES[args.command],
                                    args.output, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        import os
        if spec.mode in ("single_run", "sweep_arrival", "sweep_capacity"):
            return _run_experiment(spec, params)
        os.makedirs(spec.output_dir, exist_ok=True)
        if spec.mode == "oracle_gap":
            report = run_oracle_report(spec, params)
            path = f"{spec.output_dir}/oracle_report.json"
        else:
            report = run_calibration_report(spec, params)
            path = f"{spec.output_dir}/calibration_report.json"
        write_json(path, report)
        write_json(f"{spec.output_dir}/provenance.json",
                   provenance_record(spec, params))
        print(f"wrote {path}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationTargetError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except IOError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
