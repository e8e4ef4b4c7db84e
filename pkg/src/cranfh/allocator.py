"""Per-slot fronthaul allocation: the delay-aware iterative algorithm with its
closed-form local update, plus the throughput-optimal and queue-weighted
baselines and the per-stage objective diagnostics.

The local update maximizes, for one link, the weighted sum rate minus price
after linearizing the effect of C_k on the other flows via the marginal
utilities pi_ik; the stationary point of that surrogate has the closed form
implemented in :func:`local_capacity_update`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cranfh.channel import CsiSample, PathGains
from cranfh.params import SystemParams
from cranfh.priority import PerFlowPriority, v_tilde_gradient
from cranfh.uplink_phy import C_MAX_DEFAULT, received_powers, user_rate

LN2 = math.log(2.0)


_SCHEMES = ("safeguarded", "jacobi", "gauss_seidel")


@dataclass(frozen=True)
class AllocatorConfig:
    """Iteration controls.

    ``scheme`` selects the sweep rule.  "jacobi" and "gauss_seidel" apply the
    closed-form local update directly from the floored zero vector; they are
    the literal best-response dynamics and can oscillate between extreme
    allocations when the cross gains are not small.  "safeguarded" (default)
    starts from the decoupled single-link optimum and accepts a closed-form
    candidate only when it does not decrease the true per-stage objective,
    falling back to an exact one-dimensional line maximization otherwise;
    the resulting ascent is monotone and cannot cycle, and it has the same
    fixed points (the closed form is exact at any stationary allocation).
    """

    convergence_tol: float = 1e-4
    max_iters: int = 200
    c_floor: float = 1e-6
    c_max: float = C_MAX_DEFAULT
    scheme: str = "safeguarded"

    def __post_init__(self):
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if not 0 < self.c_floor < self.c_max:
            raise ValueError("require 0 < c_floor < c_max")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}")


@dataclass(frozen=True)
class AllocationResult:
    capacities: np.ndarray
    converged: bool
    iterations: int

    def __iter__(self):  # allow tuple-style unpacking in the simulator
        return iter((self.capacities, self.converged, self.iterations))


def per_stage_objective(csi: CsiSample, capacities: np.ndarray,
                        weights: np.ndarray, gamma: np.ndarray,
                        params: SystemParams) -> float:
    """sum_k (w_k R_k(H, C) - gamma_k C_k)."""
    rates = user_rate(csi, capacities, params)
    return float(np.sum(np.asarray(weights) * rates - np.asarray(gamma) * capacities))


def _csi_cache(csi: CsiSample, params: SystemParams):
    """Capacity-independent per-slot quantities (|S|^2 and received powers)."""
    return np.abs(csi.s) ** 2, received_powers(csi, params)


def _link_quantities(csi: CsiSample, capacities: np.ndarray, params: SystemParams,
                     c_floor: float, cache=None):
    """Common per-sweep quantities on the floored capacity vector.

    Returns (s_abs2, y, n, z, t) where n_j is the quantization noise,
    z_i = sum_j |S_ij|^2 (N0 + n_j) and t_k = 2^C_k/(2^C_k - 1)^2.
    """
    c = np.maximum(np.asarray(capacities, dtype=float), c_floor)
    s_abs2, y = cache if cache is not None else _csi_cache(csi, params)
    expm = np.expm1(c * LN2)
    n = y / expm
    z = s_abs2 @ (params.n0_norm + n)
    t = (expm + 1.0) / (expm * expm)
    return c, s_abs2, y, n, z, t


def marginal_prices(csi: CsiSample, capacities: np.ndarray, weights: np.ndarray,
                    params: SystemParams, c_floor: float = 1e-6,
                    cache=None) -> np.ndarray:
    """Matrix pi[i, k] of marginal utility of flow i per unit capacity on link k.

    pi_ik = w_i P |S_ik|^2 Y_k 2^C_k/(2^C_k-1)^2 / (Z_i (Z_i + P)), using
    Z_i = I_ik + |S_ik|^2 (N0 + N_k); the diagonal holds the own-link
    marginal (the i = k term of the stationarity condition).
    """
    _, s_abs2, y, _, z, t = _link_quantities(csi, capacities, params, c_floor,
                                             cache)
    p = params.p_norm
    w = np.asarray(weights, dtype=float)
    return (w / (z * (z + p)))[:, None] * p * s_abs2 * (y * t)[None, :]


def marginal_price_pi(csi: CsiSample, capacities: np.ndarray, weights: np.ndarray,
                      params: SystemParams, i: int, k: int,
                      c_floor: float = 1e-6) -> float:
    if i == k:
        raise ValueError("pi_ik is defined for i != k")
    return float(marginal_prices(csi, capacities, weights, params, c_floor)[i, k])


def kkt_residual(csi: CsiSample, capacities: np.ndarray, weights: np.ndarray,
                 gamma: np.ndarray, params: SystemParams, k: int,
                 c_floor: float = 1e-6) -> float:
    """LHS - gamma_k of the stationarity condition at the current capacities."""
    pi = marginal_prices(csi, capacities, weights, params, c_floor)
    return float(pi[:, k].sum() - np.asarray(gamma, dtype=float)[k])


def _closed_form_capacity(s: float, y_k: float, i_kk: float, w_k: float,
                          price: float, p: float, n0: float, c_max: float) -> float:
    """Stationary point of the linearized single-link subproblem, clamped."""
    if price <= 0.0:
        return c_max
    if w_k <= 0.0 or s <= 0.0:
        return 0.0
    a_lim = i_kk + s * n0  # interference+noise aggregate at unbounded C_k
    eta = w_k * p * s * y_k / price
    zeta = (2.0 * i_kk * i_kk
            + 2.0 * i_kk * (p + 2.0 * s * n0 - s * y_k)
            + s * (2.0 * s * n0 * n0 - p * y_k + 2.0 * p * n0 - 2.0 * s * n0 * y_k))
    disc = eta * eta + 2.0 * eta * zeta + (p * s * y_k) ** 2
    numer = eta + zeta + math.sqrt(max(disc, 0.0))
    denom = 2.0 * (p + a_lim) * a_lim
    if numer <= denom:  # stationary point at or below C_k = 0
        return 0.0
    return min(math.log2(numer / denom), c_max)


def local_capacity_update(csi: CsiSample, capacities: np.ndarray,
                          weights: np.ndarray, gamma_k: float, k: int,
                          cfg: AllocatorConfig, params: SystemParams,
                          pi: np.ndarray | None = None, cache=None) -> float:
    """Closed-form best response for link k given the other capacities."""
    c, s_abs2, y, n, z, t = _link_quantities(csi, capacities, params,
                                             cfg.c_floor, cache)
    if pi is None:
        pi = marginal_prices(csi, c, weights, params, cfg.c_floor,
                             (s_abs2, y))
    s = s_abs2[k, k]
    w_k = float(np.asarray(weights, dtype=float)[k])
    price = gamma_k - (pi[:, k].sum() - pi[k, k])
    i_kk = z[k] - s * (params.n0_norm + n[k])
    return _closed_form_capacity(s, y[k], i_kk, w_k, price,
                                 params.p_norm, params.n0_norm, cfg.c_max)


# A near-zero link capacity makes every flow's post-combining noise blow up,
# so iterates must stay strictly interior until the ascent itself decides to
# shut a link down; this is the smallest capacity the initializer will emit.
_INIT_MIN_CAPACITY = 1.0


def _decoupled_init(csi: CsiSample, weights: np.ndarray, gamma: np.ndarray,
                    params: SystemParams, cfg: AllocatorConfig,
                    cache=None) -> np.ndarray:
    """Each link's optimum with the cross-link quantization noise ignored.

    Links whose standalone rate is not worth their price still start at
    _INIT_MIN_CAPACITY: a dead link injects unbounded quantization noise into
    every other flow's combiner, so the all-zero point is a spurious
    coordinate-wise maximum that a strictly interior start avoids.
    """
    s_abs2, y = cache if cache is not None else _csi_cache(csi, params)
    w = np.asarray(weights, dtype=float)
    g = np.asarray(gamma, dtype=float)
    c0 = np.array([
        _closed_form_capacity(s_abs2[k, k], y[k], 0.0, w[k], g[k],
                              params.p_norm, params.n0_norm, cfg.c_max)
        for k in range(csi.h.shape[0])
    ])
    return np.maximum(c0, min(_INIT_MIN_CAPACITY, cfg.c_max))


def _coordinate_objective(csi: CsiSample, capacities: np.ndarray,
                          weights: np.ndarray, gamma: np.ndarray,
                          params: SystemParams, k: int, cache=None):
    """Vectorized map x -> per_stage_objective with C_k = x, others fixed."""
    c = np.asarray(capacities, dtype=float)
    s_abs2, y = cache if cache is not None else _csi_cache(csi, params)
    p = params.p_norm
    n0 = params.n0_norm
    w = np.asarray(weights, dtype=float)
    g = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        n = np.where(c > 0.0, y / np.expm1(c * LN2), np.inf)
    n_masked = np.where(np.isinf(n), 0.0, n)
    dead = np.isinf(n)
    dead[k] = False
    # Contribution of the other links to each flow's combiner noise.
    rest = s_abs2 @ (n0 + n_masked) - s_abs2[:, k] * (n0 + n_masked[k])
    rest_inf = (s_abs2[:, dead] > 0.0).any(axis=1)
    const = -float(np.sum(g * c)) + g[k] * c[k]

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            n_k = np.where(x > 0.0, y[k] / np.expm1(x * LN2), np.inf)
        z = rest[:, None] + s_abs2[:, k:k + 1] * (n0 + np.where(
            np.isinf(n_k), 0.0, n_k))[None, :]
        blocked = (rest_inf[:, None]
                   | (np.isinf(n_k)[None, :] & (s_abs2[:, k:k + 1] > 0.0)))
        rates = np.where(blocked, 0.0, np.log2(1.0 + p / z))
        return w @ rates + const - g[k] * x

    return evaluate


def _line_max(csi: CsiSample, capacities: np.ndarray, weights: np.ndarray,
              gamma: np.ndarray, params: SystemParams, k: int,
              c_max: float) -> float:
    """Exact coordinate maximization of the per-stage objective in C_k.

    Coarse grid (the surface can be multimodal in one coordinate) followed by
    nested grid refinement around the running best point.
    """
    g = _coordinate_objective(csi, capacities, weights, gamma, params, k)
    return _line_max_with(g, float(capacities[k]), c_max)


def _line_max_with(g, incumbent: float, c_max: float,
                   grid_points: int = 49, levels: int = 4) -> float:
    xs = np.linspace(0.0, c_max, grid_points)
    step = xs[1] - xs[0]
    vals = g(xs)
    i = int(np.argmax(vals))
    best, f_best = float(xs[i]), float(vals[i])
    for _ in range(levels):
        xs = np.linspace(max(best - step, 0.0), min(best + step, c_max), 33)
        step = xs[1] - xs[0]
        vals = g(xs)
        i = int(np.argmax(vals))
        best, f_best = float(xs[i]), float(vals[i])
    # Never move downhill relative to the incumbent coordinate value.
    if f_best < float(g(np.array([incumbent]))[0]):
        return incumbent
    return best


def _iterate(csi: CsiSample, weights: np.ndarray, gamma: np.ndarray,
             params: SystemParams, cfg: AllocatorConfig) -> AllocationResult:
    k_n = csi.h.shape[0]
    weights = np.asarray(weights, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    safeguarded = cfg.scheme == "safeguarded"
    cache = _csi_cache(csi, params)
    if safeguarded:
        c = _decoupled_init(csi, weights, gamma, params, cfg, cache)
    else:
        c = np.full(k_n, cfg.c_floor)
    for it in range(1, cfg.max_iters + 1):
        if cfg.scheme == "jacobi":
            pi = marginal_prices(csi, c, weights, params, cfg.c_floor, cache)
            c_new = np.array([
                local_capacity_update(csi, c, weights, float(gamma[k]), k,
                                      cfg, params, pi=pi, cache=cache)
                for k in range(k_n)
            ])
        else:
            c_new = c.copy()
            for k in range(k_n):
                cand = local_capacity_update(csi, c_new, weights,
                                             float(gamma[k]), k, cfg, params,
                                             cache=cache)
                if safeguarded:
                    g_k = _coordinate_objective(csi, c_new, weights, gamma,
                                                params, k, cache)
                    vals = g_k(np.array([c_new[k], cand]))
                    if vals[1] < vals[0]:
                        cand = _line_max_with(g_k, float(c_new[k]), cfg.c_max)
                c_new[k] = cand
        delta = np.abs(c_new - c).max()
        c = c_new
        if delta < cfg.convergence_tol:
            return AllocationResult(np.maximum(c, 0.0), True, it)
    return AllocationResult(np.maximum(c, 0.0), False, cfg.max_iters)


def allocate_delay_aware(csi: CsiSample, q_bits_per_hz: np.ndarray,
                         priorities: list[PerFlowPriority], gains: PathGains,
                         params: SystemParams,
                         cfg: AllocatorConfig = AllocatorConfig()) -> AllocationResult:
    """Weights = gradient of the approximate priority function at the QSI."""
    weights = v_tilde_gradient(priorities, gains, q_bits_per_hz, params.n0_norm)
    return _iterate(csi, weights, params.gamma, params, cfg)


def allocate_throughput_optimal(csi: CsiSample, params: SystemParams,
                                cfg: AllocatorConfig = AllocatorConfig()) -> AllocationResult:
    """Baseline 1: unit weights, blind to the queue state."""
    k_n = csi.h.shape[0]
    return _iterate(csi, np.ones(k_n), params.gamma, params, cfg)


def allocate_queue_weighted(csi: CsiSample, q_weights: np.ndarray,
                            params: SystemParams,
                            cfg: AllocatorConfig = AllocatorConfig()) -> AllocationResult:
    """Baseline 2: weights are the raw backlogs (caller chooses the unit;
    the simulator passes Mbits to keep magnitudes near the priority range)."""
    return _iterate(csi, np.asarray(q_weights, dtype=float), params.gamma, params, cfg)


def convexity_probe(csi_samples: list[tuple[CsiSample, PathGains]],
                    weights: np.ndarray, gamma: np.ndarray, params: SystemParams,
                    num_pairs: int, rng: np.random.Generator,
                    c_max: float = 10.0, tol: float = 1e-9) -> float:
    """Fraction of sampled (C1, C2) pairs violating midpoint concavity of the
    per-stage objective.  Diagnostic only; violations vanish as the cross
    gains shrink."""
    violations = 0
    total = 0
    for csi, _ in csi_samples:
        k_n = csi.h.shape[0]
        for _ in range(num_pairs):
            c1 = rng.uniform(0.05, c_max, size=k_n)
            c2 = rng.uniform(0.05, c_max, size=k_n)
            f1 = per_stage_objective(csi, c1, weights, gamma, params)
            f2 = per_stage_objective(csi, c2, weights, gamma, params)
            fm = per_stage_objective(csi, 0.5 * (c1 + c2), weights, gamma, params)
            scale = max(1.0, abs(f1), abs(f2))
            if fm < 0.5 * (f1 + f2) - tol * scale:
                violations += 1
            total += 1
    return violations / total if total else 0.0
