"""Episode simulator: bursty arrivals, queue evolution, price calibration and
metric aggregation.

One experiment run is a set of random topologies; on each, every scheme sees
the same fading and arrival draws (common random numbers), so scheme
comparisons are paired.  Mean arrival rates are drawn once per topology and
shared across schemes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from cranfh.allocator import (AllocationResult, AllocatorConfig,
                              allocate_delay_aware, allocate_queue_weighted,
                              allocate_throughput_optimal)
from cranfh.channel import (PathGains, Topology, compute_path_gains, csi_stream,
                            generate_topology, sample_csi)
from cranfh.params import SystemParams
from cranfh.priority import (CalibrationError, base_system_capacity,
                             calibrate_flows)
from cranfh.uplink_phy import user_rate

SCHEMES = ("delay_aware", "throughput_optimal", "queue_weighted")

# Fraction of the base-system capacity at which per-topology arrival draws
# are clipped.  Draws above capacity make the per-flow calibration infeasible
# outright; draws just inside need near-unbounded fronthaul to stabilize,
# which would put the smallest capacity budgets out of reach, so a margin is
# kept.
_STABILITY_CLIP = 0.7


class CalibrationTargetError(RuntimeError):
    """The capacity budget is outside the range achievable by scaling gamma."""


@dataclass
class QueueState:
    backlog_bits: np.ndarray

    def __post_init__(self):
        self.backlog_bits = np.asarray(self.backlog_bits, dtype=float)
        if np.any(~np.isfinite(self.backlog_bits)) or np.any(self.backlog_bits < 0):
            raise ValueError("backlogs must be finite and nonnegative")


@dataclass(frozen=True)
class EpisodeConfig:
    num_slots: int = 100
    num_topologies: int = 20
    mean_arrival_bps: float = 30e6
    arrival_packet_bits: float = 5000.0
    scheme: str = "delay_aware"
    seed: int = 0
    target_total_capacity_bps: float | None = None
    warmup_slots: int = 0
    num_cells: int = 7
    cell_radius_m: float = 500.0
    # Default cross-gain scale for experiments.  The budget-calibration
    # protocol needs the delay-aware scheme's stability floor (~ sum of the
    # mean arrival rates) to sit below the smallest capacity budget; at full
    # cross gains the ZF coupling overhead pushes that floor above the usual
    # budget range, so the experiment default operates in the weak-coupling
    # regime (which is also where the allocator's convergence is certified).
    cross_scale: float = 0.1
    redraw_lambda_per_topology: bool = True
    calib_topologies: int = 6
    calib_slots: int = 100

    def __post_init__(self):
        if self.num_slots < 1:
            raise ValueError("num_slots must be >= 1")
        if not self.arrival_packet_bits > 0:
            raise ValueError("arrival_packet_bits must be positive")
        if not self.mean_arrival_bps > 0:
            raise ValueError("mean_arrival_bps must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 <= self.warmup_slots < self.num_slots:
            raise ValueError("warmup_slots must lie in [0, num_slots)")


@dataclass(frozen=True)
class RunMetrics:
    avg_delay_s: float
    avg_total_capacity_bps: float
    per_flow_delay_s: np.ndarray
    objective_l: float
    convergence_failures: int


@dataclass(frozen=True)
class TopologySetup:
    """Everything tied to one random drop (shared by all schemes)."""

    index: int
    topology: Topology
    gains: PathGains
    params: SystemParams  # base params with this topology's arrival rates
    lambda_clip_count: int


# -- randomness plumbing ----------------------------------------------------


def _derived_seed(seed: int, topology_index: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(topology_index),
                                       int(tag)]).generate_state(1)[0])


def arrival_stream(seed: int, topology_index: int) -> np.random.SeedSequence:
    """Root sequence for one topology's arrival draws (scheme-independent)."""
    return np.random.SeedSequence([int(seed), int(topology_index), 0xA22])


def sample_arrivals(params: SystemParams, cfg: EpisodeConfig, slot: int,
                    stream: np.random.SeedSequence) -> np.ndarray:
    """Arrival bits per flow for one slot: packet counts are Poisson with
    mean lambda_k * tau / packet_bits, scaled back to bits."""
    slot_seq = np.random.SeedSequence(entropy=stream.entropy,
                                      spawn_key=(int(slot),))
    rng = np.random.default_rng(slot_seq)
    lam_bps = params.lam * params.bandwidth_hz
    mean_packets = lam_bps * params.slot_s / cfg.arrival_packet_bits
    return rng.poisson(mean_packets).astype(float) * cfg.arrival_packet_bits


def draw_topology_arrival_rates(base: SystemParams, gains: PathGains,
                                cfg: EpisodeConfig,
                                topology_index: int) -> tuple[np.ndarray, int]:
    """Per-flow mean rates (bit/s/Hz), uniform on [0, 2*mean], clipped into
    the base-system stability region.  Returns (rates, clip count)."""
    t = topology_index if cfg.redraw_lambda_per_topology else 0
    rng = np.random.default_rng(
        np.random.SeedSequence([int(cfg.seed), int(t), 0xA12]))
    k_n = base.num_flows
    draw_bps = rng.uniform(0.0, 2.0 * cfg.mean_arrival_bps, size=k_n)
    lam = draw_bps / base.bandwidth_hz
    diag = np.diag(gains.gains)
    clipped = 0
    for k in range(k_n):
        a_k = base.n0_norm / (base.p_norm * diag[k])
        cap = _STABILITY_CLIP * base_system_capacity(a_k)
        if lam[k] > cap:
            lam[k] = cap
            clipped += 1
        lam[k] = max(lam[k], 1e-6)  # strictly positive mean
    return lam, clipped


def prepare_topology(base: SystemParams, cfg: EpisodeConfig,
                     topology_index: int) -> TopologySetup:
    topo_seed = _derived_seed(cfg.seed, topology_index, 0x70)
    topo = generate_topology(cfg.num_cells, cfg.cell_radius_m, topo_seed)
    gains = compute_path_gains(topo, cfg.cross_scale)
    lam, clipped = draw_topology_arrival_rates(base, gains, cfg, topology_index)
    return TopologySetup(index=topology_index, topology=topo, gains=gains,
                         params=base.with_lam(lam), lambda_clip_count=clipped)


# -- dynamics ---------------------------------------------------------------


def step_queues(q: QueueState, rates_bps: np.ndarray, arrivals_bits: np.ndarray,
                tau_s: float) -> QueueState:
    """Q' = max(Q - R*tau, 0) + A, exactly."""
    rates_bps = np.asarray(rates_bps, dtype=float)
    arrivals_bits = np.asarray(arrivals_bits, dtype=float)
    if np.any(rates_bps < 0) or np.any(arrivals_bits < 0):
        raise ValueError("rates and arrivals must be nonnegative")
    drained = np.maximum(q.backlog_bits - rates_bps * tau_s, 0.0)
    return QueueState(drained + arrivals_bits)


def run_episode(setup: TopologySetup, scheme: str, cfg: EpisodeConfig,
                gamma_scale: float = 1.0,
                alloc_cfg: AllocatorConfig = AllocatorConfig(),
                trace: list | None = None,
                slot_times: list | None = None) -> RunMetrics:
    """Simulate one topology under one scheme.

    ``trace`` (if given) collects per-slot rows
    (slot, k, q_bits, c_bit_s_hz, rate_bps, arrivals_bits); ``slot_times``
    collects the wall-clock seconds spent in the allocator per slot.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    params = setup.params.with_gamma(gamma_scale * setup.params.gamma)
    priorities = None
    if scheme == "delay_aware":
        priorities = calibrate_flows(params, setup.gains)

    k_n = params.num_flows
    bw = params.bandwidth_hz
    tau = params.slot_s
    csi_str = csi_stream(cfg.seed, setup.index)
    arr_str = arrival_stream(cfg.seed, setup.index)
    q = QueueState(np.zeros(k_n))

    q_sum = np.zeros(k_n)
    c_sum = np.zeros(k_n)
    kept = 0
    failures = 0

    for slot in range(cfg.num_slots):
        csi = sample_csi(setup.gains, slot, csi_str)
        t0 = time.perf_counter()
        if scheme == "delay_aware":
            result: AllocationResult = allocate_delay_aware(
                csi, q.backlog_bits / bw, priorities, setup.gains, params,
                alloc_cfg)
        elif scheme == "throughput_optimal":
            result = allocate_throughput_optimal(csi, params, alloc_cfg)
        else:
            result = allocate_queue_weighted(csi, q.backlog_bits / 1e6,
                                             params, alloc_cfg)
        if slot_times is not None:
            slot_times.append(time.perf_counter() - t0)
        if not result.converged:
            failures += 1
        capacities = result.capacities
        rates_bps = user_rate(csi, capacities, params) * bw

        if slot >= cfg.warmup_slots:
            q_sum += q.backlog_bits
            c_sum += capacities
            kept += 1
        arrivals = sample_arrivals(params, cfg, slot, arr_str)
        if trace is not None:
            for k in range(k_n):
                trace.append((setup.index, slot, k, q.backlog_bits[k],
                              capacities[k], rates_bps[k], arrivals[k]))
        q = step_queues(q, rates_bps, arrivals, tau)

    q_mean = q_sum / kept
    c_mean = c_sum / kept  # bit/s/Hz
    lam_bps = params.lam * bw
    per_flow_delay = q_mean / lam_bps
    beta = params.beta
    avg_delay = float(np.sum(beta * per_flow_delay) / np.sum(beta))
    objective = float(np.sum(beta * per_flow_delay + params.gamma * c_mean))
    return RunMetrics(avg_delay_s=avg_delay,
                      avg_total_capacity_bps=float(np.sum(c_mean) * bw),
                      per_flow_delay_s=per_flow_delay,
                      objective_l=objective,
                      convergence_failures=failures)


# -- price calibration ------------------------------------------------------


def _achieved_capacity(setups: list[TopologySetup], scheme: str,
                       cfg: EpisodeConfig, gamma_scale: float,
                       alloc_cfg: AllocatorConfig) -> float:
    total = 0.0
    for setup in setups:
        m = run_episode(setup, scheme, cfg, gamma_scale, alloc_cfg)
        total += m.avg_total_capacity_bps
    return total / len(setups)


def calibrate_price_to_budget(setups: list[TopologySetup], scheme: str,
                              cfg: EpisodeConfig,
                              target_total_capacity_bps: float,
                              alloc_cfg: AllocatorConfig = AllocatorConfig(),
                              rel_tol: float = 0.01,
                              init_scale: float = 1.0) -> float:
    """Common multiplicative factor on gamma so the Monte-Carlo average total
    fronthaul capacity hits the target within ``rel_tol`` relative.

    Uses a reduced calibration sample (first ``calib_topologies`` topologies,
    ``calib_slots`` slots) with the same common random numbers, so achieved
    capacity is a deterministic nonincreasing function of the multiplier.
    ``init_scale`` warm-starts the search (useful across sweep points).
    """
    sub = setups[:max(1, cfg.calib_topologies)]
    slots = min(cfg.num_slots, cfg.calib_slots)
    calib_cfg = replace(cfg, num_slots=slots,
                        warmup_slots=min(cfg.warmup_slots, slots - 1))
    evals: dict[float, float] = {}

    def achieved(scale: float) -> float:
        if scale not in evals:
            try:
                evals[scale] = _achieved_capacity(sub, scheme, calib_cfg,
                                                  scale, alloc_cfg)
            except CalibrationError as exc:
                # Extreme multipliers can push the per-flow calibration out of
                # its numerically valid range; the target is unreachable.
                raise CalibrationTargetError(
                    f"multiplier {scale:.3g} outside the calibrable range "
                    f"(scheme {scheme}): {exc}") from exc
        return evals[scale]

    target = float(target_total_capacity_bps)

    def close(value: float) -> bool:
        return abs(value - target) <= rel_tol * target

    # Bracket the target between a low and a high multiplier.
    m = max(init_scale, 1e-8)
    f_m = achieved(m)
    if close(f_m):
        return m
    lo, f_lo, hi, f_hi = None, None, None, None
    if f_m > target:
        lo, f_lo = m, f_m
        step = m
        for _ in range(30):
            step *= 8.0
            f = achieved(step)
            if f <= target:
                hi, f_hi = step, f
                break
            if f >= f_lo * (1.0 - 1e-9):  # saturated: scaling has no effect
                raise CalibrationTargetError(
                    f"target {target:.4g} bps below achievable min {f:.4g} bps "
                    f"(scheme {scheme}, multiplier {step:.3g})")
            lo, f_lo = step, f
    else:
        hi, f_hi = m, f_m
        step = m
        for _ in range(30):
            step /= 8.0
            f = achieved(step)
            if f >= target:
                lo, f_lo = step, f
                break
            if f <= f_hi * (1.0 + 1e-9):
                raise CalibrationTargetError(
                    f"target {target:.4g} bps above achievable max {f:.4g} bps "
                    f"(scheme {scheme}, multiplier {step:.3g})")
            hi, f_hi = step, f
    if lo is None or hi is None:
        raise CalibrationTargetError(
            f"could not bracket target {target:.4g} bps (scheme {scheme})")
    if close(f_lo):
        return lo
    if close(f_hi):
        return hi

    # Secant steps on log(multiplier), clamped into the bracket; fall back to
    # geometric bisection when the secant proposal leaves it.
    for _ in range(60):
        u_lo, u_hi = math.log(lo), math.log(hi)
        if f_lo > f_hi:
            u = u_lo + (f_lo - target) * (u_hi - u_lo) / (f_lo - f_hi)
        else:
            u = 0.5 * (u_lo + u_hi)
        span = u_hi - u_lo
        if not (u_lo + 0.05 * span <= u <= u_hi - 0.05 * span):
            u = 0.5 * (u_lo + u_hi)
        mid = math.exp(u)
        f_mid = achieved(mid)
        if close(f_mid):
            return mid
        if f_mid > target:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if hi / lo < 1.0 + 1e-9:
            break
    raise CalibrationTargetError(
        f"search stalled in [{f_hi:.4g}, {f_lo:.4g}] bps vs target "
        f"{target:.4g} bps (scheme {scheme})")


# -- aggregation ------------------------------------------------------------


@dataclass(frozen=True)
class AggregateMetrics:
    mean: RunMetrics
    stderr_delay_s: float
    stderr_total_capacity_bps: float
    stderr_objective_l: float
    num_runs: int


def aggregate_metrics(runs: list[RunMetrics], betas: np.ndarray,
                      gammas: np.ndarray) -> AggregateMetrics:
    """Topology-average of RunMetrics with standard errors of the means."""
    if not runs:
        raise ValueError("no runs to aggregate")
    n = len(runs)
    delays = np.array([r.avg_delay_s for r in runs])
    caps = np.array([r.avg_total_capacity_bps for r in runs])
    objs = np.array([r.objective_l for r in runs])
    per_flow = np.mean([r.per_flow_delay_s for r in runs], axis=0)
    fails = sum(r.convergence_failures for r in runs)

    def sem(x: np.ndarray) -> float:
        if n == 1:
            return 0.0
        return float(np.std(x, ddof=1) / math.sqrt(n))

    mean = RunMetrics(avg_delay_s=float(delays.mean()),
                      avg_total_capacity_bps=float(caps.mean()),
                      per_flow_delay_s=per_flow,
                      objective_l=float(objs.mean()),
                      convergence_failures=fails)
    return AggregateMetrics(mean=mean, stderr_delay_s=sem(delays),
                            stderr_total_capacity_bps=sem(caps),
                            stderr_objective_l=sem(objs), num_runs=n)
