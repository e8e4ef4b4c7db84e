"""Desk-scale ground truth: relative value iteration on a discretized
average-cost model of the queue system, for one or two flows.

The continuous model is discretized three ways: queue levels (a geometric
bit grid with a reflecting cap), per-entry channel magnitudes
(equal-probability exponential bins with conditional-mean representatives),
and per-link capacity actions (finite grid including 0).  Off-grid queue
values are projected with mean-preserving two-point interpolation (mass split
between the bracketing levels), which keeps every drain and every arrival
moving probability mass and so keeps the chain unichain even where the grid
is coarse.  Arrivals enter the kernel as a Poisson packet-count distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cranfh.channel import CsiSample, PathGains
from cranfh.numerics import ConvergenceError, SingularMatrixError, invert_complex_matrix
from cranfh.params import SystemParams
from cranfh.uplink_phy import user_rate

_MAX_QUEUE_LEVELS = 200
_MAX_CHANNEL_BINS = 8
_MAX_CAPACITY_LEVELS = 32


@dataclass(frozen=True)
class OracleGrids:
    """Discretization knobs for the desk-scale model.

    The queue grid is {0} followed by a geometric ladder from q_min_bits to
    q_max_bits: resolution is finest where the interesting dynamics happen
    and the cap sits far enough out that parking a queue at the reflecting
    boundary is never cheaper than serving it.
    """

    num_queue_levels: int = 200
    q_max_bits: float = 2.4e8
    q_min_bits: float = 5000.0
    channel_bins: int = 8
    cross_bins: int = 2
    capacity_levels: int = 32
    c_max: float = 24.0
    arrival_packet_bits: float = 5000.0
    arrival_tail_mass: float = 1e-12

    def __post_init__(self):
        if not 2 <= self.num_queue_levels <= _MAX_QUEUE_LEVELS:
            raise ValueError(
                f"num_queue_levels must lie in [2, {_MAX_QUEUE_LEVELS}]")
        if not 1 <= self.channel_bins <= _MAX_CHANNEL_BINS:
            raise ValueError(f"channel_bins must lie in [1, {_MAX_CHANNEL_BINS}]")
        if not 1 <= self.cross_bins <= _MAX_CHANNEL_BINS:
            raise ValueError(f"cross_bins must lie in [1, {_MAX_CHANNEL_BINS}]")
        if not 2 <= self.capacity_levels <= _MAX_CAPACITY_LEVELS:
            raise ValueError(
                f"capacity_levels must lie in [2, {_MAX_CAPACITY_LEVELS}]")
        if not self.q_max_bits > 0 or not self.c_max > 0:
            raise ValueError("q_max_bits and c_max must be positive")
        if not 0.0 < self.q_min_bits < self.q_max_bits:
            raise ValueError("q_min_bits must lie in (0, q_max_bits)")


def exponential_bin_representatives(num_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-probability bins of the unit exponential and their conditional
    means: int_a^b x e^-x dx = (a+1)e^-a - (b+1)e^-b, normalized by the bin
    mass 1/num_bins."""
    edges = np.concatenate([-np.log(1.0 - np.arange(num_bins) / num_bins),
                            [np.inf]])
    a, b = edges[:-1], edges[1:]
    upper = np.where(np.isinf(b), 0.0, np.where(np.isinf(b), 1.0, b + 1.0) * np.exp(-b))
    reps = num_bins * ((a + 1.0) * np.exp(-a) - upper)
    probs = np.full(num_bins, 1.0 / num_bins)
    return reps, probs


@dataclass(frozen=True)
class DiscreteMdp:
    """Finite model: queue grid x channel states x capacity actions."""

    params: SystemParams
    gains: PathGains
    queue_levels: np.ndarray           # (n_q,) bits, shared by all flows
    channel_states: list[CsiSample]    # representative H (and ZF S) per state
    channel_probs: np.ndarray          # (n_s,)
    actions: np.ndarray                # (n_a, K) capacities, bit/s/Hz
    rates: np.ndarray                  # (n_s, n_a, K) bit/s/Hz
    arrival_pmf: list[np.ndarray]      # per flow, over the bit-increment support
    arrival_target: list[np.ndarray]   # per flow, (n_q, n_m) lower level index
    arrival_weight: list[np.ndarray]   # per flow, (n_q, n_m) mass on the lower level
    drain_index: np.ndarray            # (n_s, n_a, K, n_q) post-drain lower level
    drain_weight: np.ndarray           # (n_s, n_a, K, n_q) mass on the lower level

    @property
    def num_flows(self) -> int:
        return self.actions.shape[1]

    @property
    def num_queue_levels(self) -> int:
        return self.queue_levels.shape[0]

    def stage_cost(self, q_bits: np.ndarray, action: np.ndarray) -> float:
        """beta_k Q_k / lambda_k + gamma_k C_k summed over flows (delay in
        seconds, capacity in bit/s/Hz)."""
        p = self.params
        lam_bps = p.lam * p.bandwidth_hz
        return float(np.sum(p.beta * np.asarray(q_bits) / lam_bps
                            + p.gamma * np.asarray(action)))

    def transition_row(self, q_idx: tuple, s_idx: int, a_idx: int) -> np.ndarray:
        """Joint next-queue distribution as a flat row over the q grid
        (product over flows); sums to 1 by construction."""
        n_q = self.num_queue_levels
        row = np.ones(1)
        for k in range(self.num_flows):
            pmf = self.arrival_pmf[k]
            base = int(self.drain_index[s_idx, a_idx, k, q_idx[k]])
            wd = float(self.drain_weight[s_idx, a_idx, k, q_idx[k]])
            flow_row = np.zeros(n_q)
            for b, wb in ((base, wd), (base + 1, 1.0 - wd)):
                if wb == 0.0:
                    continue
                ta = self.arrival_target[k][b]
                wa = self.arrival_weight[k][b]
                np.add.at(flow_row, ta, wb * wa * pmf)
                np.add.at(flow_row, ta + 1, wb * (1.0 - wa) * pmf)
            row = np.kron(row, flow_row)
        return row


def _arrival_support(mean_packets: float, packet_bits: float,
                     tail_mass: float) -> tuple[np.ndarray, np.ndarray]:
    """Poisson packet-count support (as bit increments) and its pmf,
    truncated at tail_mass and renormalized."""
    if mean_packets <= 0.0:
        return np.array([0.0]), np.array([1.0])
    m_max = int(mean_packets + 12.0 * math.sqrt(mean_packets) + 20.0)
    m = np.arange(m_max + 1)
    log_p = m * math.log(mean_packets) - mean_packets - np.array(
        [math.lgamma(i + 1.0) for i in m])
    p = np.exp(log_p)
    keep = np.cumsum(p) <= 1.0 - tail_mass
    keep[:max(1, int(mean_packets))] = True
    p, m = p[keep], m[keep]
    return m * packet_bits, p / p.sum()


def level_interpolation(levels: np.ndarray,
                        values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-preserving two-point projection onto a sorted grid.

    Returns (idx, w) with idx in [0, n-2] and w in [0, 1] such that the
    clipped value equals w * levels[idx] + (1 - w) * levels[idx + 1].
    """
    x = np.clip(np.asarray(values, dtype=float), levels[0], levels[-1])
    idx = np.clip(np.searchsorted(levels, x, side="right") - 1, 0,
                  levels.shape[0] - 2).astype(np.int64)
    lo = levels[idx]
    hi = levels[idx + 1]
    w = (hi - x) / (hi - lo)
    return idx, w


def build_discrete_mdp(params: SystemParams, gains: PathGains,
                       grids: OracleGrids = OracleGrids()) -> DiscreteMdp:
    """Discretize the system for params.num_flows <= 2."""
    k_n = params.num_flows
    if k_n > 2:
        raise ValueError("the discrete model is limited to 1 or 2 flows")
    if gains.gains.shape[0] != k_n:
        raise ValueError("gains shape does not match params.num_flows")

    n_q = grids.num_queue_levels
    queue_levels = np.concatenate(
        [[0.0], np.geomspace(grids.q_min_bits, grids.q_max_bits, n_q - 1)])

    # Channel states: product of per-entry equal-probability magnitude bins
    # over the entries with nonzero large-scale gain.  Rates depend on the
    # entries only through magnitudes and the relative phase of the cross
    # product (row/column phase rotations leave |S| unchanged), so the
    # diagonal is taken real positive and, when cross links exist, one cross
    # entry carries a +/- sign bin: all-positive representatives would
    # overweight destructive alignment of the ZF determinant.
    entries = [(i, j) for i in range(k_n) for j in range(k_n)
               if gains.gains[i, j] > 0.0]
    has_cross = any(i != j for i, j in entries)
    # Rates depend on the cross entries only through the relative phase of
    # the cross product, so the phase lives on one entry; the four-point
    # grid {1, i, -1, -i} stands in for the uniform phase, with i and -i
    # merged (they give mirror-image determinants, hence equal rates).
    if has_cross:
        phases = ((1.0, 0.25), (-1.0, 0.25), (1.0j, 0.5))
    else:
        phases = ((1.0, 1.0),)
    entry_bins = [grids.channel_bins if i == j else grids.cross_bins
                  for i, j in entries]
    entry_reps = [exponential_bin_representatives(nb)[0] for nb in entry_bins]
    states: list[CsiSample] = []
    probs = []
    sqrt_l = np.sqrt(gains.gains)
    state_prob = 1.0 / np.prod(entry_bins)
    for combo in np.ndindex(*entry_bins):
        for phase, weight in phases:
            h = np.zeros((k_n, k_n), dtype=complex)
            for (i, j), b, reps in zip(entries, combo, entry_reps):
                h[i, j] = sqrt_l[i, j] * math.sqrt(reps[b])
            if np.any(np.abs(np.diag(h)) == 0.0):
                raise ValueError("zero diagonal gain in channel representative")
            if has_cross:
                h[0, 1] *= phase
            try:
                if not has_cross:
                    s = np.zeros_like(h)
                    np.fill_diagonal(s, 1.0 / np.diag(h))
                else:
                    s = invert_complex_matrix(h)
            except SingularMatrixError:
                # Representatives can still align exactly; skip the state and
                # renormalize below.
                continue
            states.append(CsiSample(h=h, s=s, slot_index=-1))
            probs.append(state_prob * weight)
    channel_probs = np.asarray(probs)
    channel_probs = channel_probs / channel_probs.sum()

    # Capacity actions: per-link levels {0} + linear grid, K-fold product.
    per_link = np.concatenate([[0.0], np.linspace(
        grids.c_max / (grids.capacity_levels - 1), grids.c_max,
        grids.capacity_levels - 1)])
    mesh = np.meshgrid(*([per_link] * k_n), indexing="ij")
    actions = np.stack([g.ravel() for g in mesh], axis=1)

    n_s, n_a = len(states), actions.shape[0]
    rates = np.empty((n_s, n_a, k_n))
    for s_i, csi in enumerate(states):
        for a_i in range(n_a):
            rates[s_i, a_i] = user_rate(csi, actions[a_i], params)

    drain_bits = rates * params.bandwidth_hz * params.slot_s
    after = np.maximum(queue_levels[None, None, None, :] - drain_bits[..., None],
                       0.0)
    drain_index, drain_weight = level_interpolation(queue_levels, after)

    lam_bps = params.lam * params.bandwidth_hz
    arrival_pmf = []
    arrival_target = []
    arrival_weight = []
    for k in range(k_n):
        bits, pmf = _arrival_support(
            lam_bps[k] * params.slot_s / grids.arrival_packet_bits,
            grids.arrival_packet_bits, grids.arrival_tail_mass)
        ta, wa = level_interpolation(queue_levels,
                                     queue_levels[:, None] + bits[None, :])
        arrival_pmf.append(pmf)
        arrival_target.append(ta)
        arrival_weight.append(wa)
    return DiscreteMdp(params=params, gains=gains, queue_levels=queue_levels,
                       channel_states=states, channel_probs=channel_probs,
                       actions=actions, rates=rates, arrival_pmf=arrival_pmf,
                       arrival_target=arrival_target,
                       arrival_weight=arrival_weight, drain_index=drain_index,
                       drain_weight=drain_weight)


@dataclass(frozen=True)
class OracleSolution:
    theta_star: float
    v_star: np.ndarray       # (n_q,) or (n_q, n_q)
    policy: np.ndarray       # action index per (channel state, queue state)
    iterations: int
    bellman_residual: float


def _arrival_mixed_value(mdp: DiscreteMdp, v: np.ndarray) -> np.ndarray:
    """Arrival expectation of V as a function of the post-drain level(s).

    Arrivals are independent of (s, a), so this mixing is done once; the
    (s, a) dependence enters only through the post-drain level gather.
    """
    if mdp.num_flows == 1:
        ta, wa = mdp.arrival_target[0], mdp.arrival_weight[0]
        return (wa * v[ta] + (1.0 - wa) * v[ta + 1]) @ mdp.arrival_pmf[0]
    (ta1, ta2), (wa1, wa2) = mdp.arrival_target, mdp.arrival_weight
    pmf1, pmf2 = mdp.arrival_pmf
    # mix flow 1 arrivals on axis 0, then flow 2 arrivals on axis 1
    w = np.einsum("imj,m->ij",
                  wa1[:, :, None] * v[ta1, :]
                  + (1.0 - wa1)[:, :, None] * v[ta1 + 1, :], pmf1)
    return np.einsum("ijm,m->ij",
                     wa2[None, :, :] * w[:, ta2]
                     + (1.0 - wa2)[None, :, :] * w[:, ta2 + 1], pmf2)


def _gather_expected(mdp: DiscreteMdp, mixed: np.ndarray,
                     s_idx) -> np.ndarray:
    """E[V(Q')] over (a, q[, q2]) for channel state(s) s_idx, from the
    arrival-mixed value table."""
    if mdp.num_flows == 1:
        d = mdp.drain_index[s_idx, :, 0, :]
        wd = mdp.drain_weight[s_idx, :, 0, :]
        return wd * mixed[d] + (1.0 - wd) * mixed[d + 1]
    d1 = mdp.drain_index[s_idx, :, 0, :][..., :, None]
    wd1 = mdp.drain_weight[s_idx, :, 0, :][..., :, None]
    d2 = mdp.drain_index[s_idx, :, 1, :][..., None, :]
    wd2 = mdp.drain_weight[s_idx, :, 1, :][..., None, :]
    return (wd1 * wd2 * mixed[d1, d2]
            + wd1 * (1.0 - wd2) * mixed[d1, d2 + 1]
            + (1.0 - wd1) * wd2 * mixed[d1 + 1, d2]
            + (1.0 - wd1) * (1.0 - wd2) * mixed[d1 + 1, d2 + 1])


def _expected_next_value(mdp: DiscreteMdp, v: np.ndarray) -> np.ndarray:
    """E[V(Q') | s, a, q] for all (s, a, q[, q2]) at once."""
    mixed = _arrival_mixed_value(mdp, v)
    return _gather_expected(mdp, mixed, slice(None))


def _stage_costs(mdp: DiscreteMdp) -> np.ndarray:
    """g[a, q...] broadcast over the joint queue grid."""
    p = mdp.params
    lam_bps = p.lam * p.bandwidth_hz
    cap_cost = mdp.actions @ p.gamma  # (n_a,)
    if mdp.num_flows == 1:
        delay = p.beta[0] * mdp.queue_levels / lam_bps[0]
        return cap_cost[:, None] + delay[None, :]
    d1 = p.beta[0] * mdp.queue_levels / lam_bps[0]
    d2 = p.beta[1] * mdp.queue_levels / lam_bps[1]
    return cap_cost[:, None, None] + d1[None, :, None] + d2[None, None, :]


def relative_value_iteration(mdp: DiscreteMdp, tol: float = 1e-6,
                             max_iters: int = 100000) -> OracleSolution:
    """Average-cost value iteration anchored at the all-empty queue state."""
    n_q = mdp.num_queue_levels
    shape = (n_q,) if mdp.num_flows == 1 else (n_q, n_q)
    v = np.zeros(shape)
    g = _stage_costs(mdp)
    probs = mdp.channel_probs
    theta = 0.0
    for it in range(1, max_iters + 1):
        ev = _expected_next_value(mdp, v)
        q_sa = g[None, ...] + ev            # (n_s, n_a, ...)
        best = q_sa.min(axis=1)             # (n_s, ...)
        tv = np.tensordot(probs, best, axes=1)
        diff = tv - v
        span = float(diff.max() - diff.min())
        anchor = tv.flat[0]
        theta = float(anchor)
        v = tv - anchor
        if span < tol:
            residual = span
            policy = np.argmin(g[None, ...] + _expected_next_value(mdp, v),
                               axis=1)
            return OracleSolution(theta_star=theta, v_star=v, policy=policy,
                                  iterations=it, bellman_residual=residual)
    raise ConvergenceError(
        f"value iteration did not reach span {tol:g} in {max_iters} sweeps")


def bellman_residual(mdp: DiscreteMdp, sol: OracleSolution) -> float:
    """max |theta + V - T V| over the queue grid."""
    g = _stage_costs(mdp)
    mixed = _arrival_mixed_value(mdp, sol.v_star)
    tv = sum(p_s * (g + _gather_expected(mdp, mixed, s_i)).min(axis=0)
             for s_i, p_s in enumerate(mdp.channel_probs))
    return float(np.abs(sol.theta_star + sol.v_star - tv).max())


def _joint_states(mdp: DiscreteMdp) -> list[tuple]:
    n_q = mdp.num_queue_levels
    if mdp.num_flows == 1:
        return [(i,) for i in range(n_q)]
    return [(i, j) for i in range(n_q) for j in range(n_q)]


def _arrival_matrix(mdp: DiscreteMdp, k: int) -> np.ndarray:
    """One-step arrival kernel of flow k: row i is the next-level
    distribution when starting from post-drain level i."""
    n_q = mdp.num_queue_levels
    ta, wa = mdp.arrival_target[k], mdp.arrival_weight[k]
    pmf = mdp.arrival_pmf[k]
    rows = np.broadcast_to(np.arange(n_q)[:, None], ta.shape)
    a = np.zeros((n_q, n_q))
    np.add.at(a, (rows, ta), wa * pmf)
    np.add.at(a, (rows, ta + 1), (1.0 - wa) * pmf)
    return a


def _flow_step_rows(mdp: DiscreteMdp, arr: np.ndarray, s_i: int,
                    a_vec: np.ndarray, q_vec: np.ndarray,
                    k: int) -> np.ndarray:
    """Per-state one-step row of flow k under per-state actions a_vec."""
    d = mdp.drain_index[s_i, a_vec, k, q_vec]
    wd = mdp.drain_weight[s_i, a_vec, k, q_vec]
    return wd[:, None] * arr[d] + (1.0 - wd)[:, None] * arr[d + 1]


def _policy_chain(mdp: DiscreteMdp,
                  policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Channel-averaged transition matrix and stage cost of a fixed policy
    over the joint queue grid."""
    g = _stage_costs(mdp)
    probs = mdp.channel_probs
    n_q = mdp.num_queue_levels
    arrs = [_arrival_matrix(mdp, k) for k in range(mdp.num_flows)]
    if mdp.num_flows == 1:
        q_vec = np.arange(n_q)
        p_chain = np.zeros((n_q, n_q))
        cost = np.zeros(n_q)
        for s_i, p_s in enumerate(probs):
            a_vec = policy[s_i]
            p_chain += p_s * _flow_step_rows(mdp, arrs[0], s_i, a_vec, q_vec, 0)
            cost += p_s * g[a_vec, q_vec]
        return p_chain, cost
    q1 = np.repeat(np.arange(n_q), n_q)
    q2 = np.tile(np.arange(n_q), n_q)
    n = n_q * n_q
    p_chain = np.zeros((n, n))
    cost = np.zeros(n)
    for s_i, p_s in enumerate(probs):
        a_vec = policy[s_i].reshape(-1)
        t1 = _flow_step_rows(mdp, arrs[0], s_i, a_vec, q1, 0)
        t2 = _flow_step_rows(mdp, arrs[1], s_i, a_vec, q2, 1)
        p_chain += p_s * (t1[:, :, None] * t2[:, None, :]).reshape(n, n)
        cost += p_s * g[a_vec, q1, q2]
    return p_chain, cost


def _average_cost_of_chain(p_chain: np.ndarray, cost: np.ndarray) -> float:
    """Average cost via the stationary distribution of the chain."""
    n = p_chain.shape[0]
    a = p_chain.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        mu = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        a_ls = np.vstack([p_chain.T - np.eye(n), np.ones(n)])
        b_ls = np.zeros(n + 1)
        b_ls[-1] = 1.0
        mu, *_ = np.linalg.lstsq(a_ls, b_ls, rcond=None)
    mu = np.maximum(mu, 0.0)
    mu = mu / mu.sum()
    return float(mu @ cost)


def policy_iteration(mdp: DiscreteMdp, max_iters: int = 200) -> OracleSolution:
    """Howard policy iteration for the average-cost problem.

    Converges in finitely many steps on these finite unichain models and is
    much faster than value iteration when the chain mixes slowly; the result
    satisfies the same Bellman equation (checked via bellman_residual).
    """
    n_q = mdp.num_queue_levels
    shape = (n_q,) if mdp.num_flows == 1 else (n_q, n_q)
    g = _stage_costs(mdp)
    policy = np.argmin(g, axis=0)[None, ...].repeat(
        len(mdp.channel_states), axis=0)
    theta = math.inf
    for it in range(1, max_iters + 1):
        p_chain, cost = _policy_chain(mdp, policy)
        n = p_chain.shape[0]
        # solve h + theta - P h = g with h(anchor) = 0
        a = np.zeros((n + 1, n + 1))
        a[:n, :n] = np.eye(n) - p_chain
        a[:n, n] = 1.0
        a[n, 0] = 1.0
        b = np.concatenate([cost, [0.0]])
        sol = np.linalg.solve(a, b)
        h = sol[:n].reshape(shape)
        theta_prev, theta = theta, float(sol[n])
        mixed = _arrival_mixed_value(mdp, h)
        new_policy = np.stack([
            np.argmin(g + _gather_expected(mdp, mixed, s_i), axis=0)
            for s_i in range(len(mdp.channel_states))
        ])
        # stop on policy fixed point, or on a cost plateau (ties between
        # equally good policies can cycle without improving theta)
        if (np.array_equal(new_policy, policy)
                or theta_prev - theta <= 1e-10 * max(1.0, abs(theta))):
            v = h - h.flat[0]
            res = bellman_residual(mdp, OracleSolution(
                theta_star=theta, v_star=v, policy=policy, iterations=it,
                bellman_residual=0.0))
            return OracleSolution(theta_star=theta, v_star=v, policy=policy,
                                  iterations=it, bellman_residual=res)
        policy = new_policy
    raise ConvergenceError(
        f"policy iteration did not stabilize in {max_iters} rounds")


def _project_action(mdp: DiscreteMdp, capacities: np.ndarray) -> int:
    """Nearest action-grid point (independent per link on the product grid)."""
    d = np.abs(mdp.actions - np.asarray(capacities)[None, :]).sum(axis=1)
    return int(np.argmin(d))


def policy_table(mdp: DiscreteMdp, policy_fn) -> np.ndarray:
    """Tabulate an external policy (q_bits, csi) -> capacities on the grid."""
    n_q = mdp.num_queue_levels
    n_s = len(mdp.channel_states)
    if mdp.num_flows == 1:
        table = np.empty((n_s, n_q), dtype=np.int64)
        for s_i, csi in enumerate(mdp.channel_states):
            for q_i, q in enumerate(mdp.queue_levels):
                table[s_i, q_i] = _project_action(
                    mdp, policy_fn(np.array([q]), csi))
        return table
    table = np.empty((n_s, n_q, n_q), dtype=np.int64)
    for s_i, csi in enumerate(mdp.channel_states):
        for q1, qa in enumerate(mdp.queue_levels):
            for q2, qb in enumerate(mdp.queue_levels):
                table[s_i, q1, q2] = _project_action(
                    mdp, policy_fn(np.array([qa, qb]), csi))
    return table


def evaluate_policy(mdp: DiscreteMdp, policy) -> float:
    """Long-run average cost of a tabulated (or callable) policy.

    Builds the channel-averaged chain over the joint queue grid, solves for
    its stationary distribution and averages the stage cost.  Callable
    policies are projected onto the capacity action grid first; use
    :func:`evaluate_policy_exact` to keep their continuous capacities.
    """
    if callable(policy):
        policy = policy_table(mdp, policy)
    p_chain, cost = _policy_chain(mdp, policy)
    return _average_cost_of_chain(p_chain, cost)


def evaluate_policy_exact(mdp: DiscreteMdp, policy_fn) -> float:
    """Average cost of a callable policy at its exact capacities.

    Unlike :func:`evaluate_policy` the continuous allocation is not snapped
    to the capacity action grid: rates and stage costs use the capacities the
    policy actually emits, and only the post-drain queue positions are placed
    on the queue grid (same mean-preserving two-point rule as the oracle's
    own transitions).
    """
    p = mdp.params
    bw_tau = p.bandwidth_hz * p.slot_s
    lam_bps = p.lam * p.bandwidth_hz
    n_q = mdp.num_queue_levels
    levels = mdp.queue_levels
    arrs = [_arrival_matrix(mdp, k) for k in range(mdp.num_flows)]
    if mdp.num_flows == 1:
        q_states = levels[:, None]
    else:
        q_states = np.stack([np.repeat(levels, n_q),
                             np.tile(levels, n_q)], axis=1)
    n = q_states.shape[0]
    delay_cost = (q_states / lam_bps[None, :]) @ p.beta
    p_chain = np.zeros((n, n))
    cost = np.zeros(n)
    for s_i, (csi, p_s) in enumerate(zip(mdp.channel_states,
                                         mdp.channel_probs)):
        caps = np.array([policy_fn(q, csi) for q in q_states])
        rates = np.array([user_rate(csi, c, p) for c in caps])
        drained = np.maximum(q_states - rates * bw_tau, 0.0)
        rows = np.ones((n, 1))
        for k in range(mdp.num_flows):
            idx, w = level_interpolation(levels, drained[:, k])
            flow = w[:, None] * arrs[k][idx] + (1.0 - w)[:, None] * arrs[k][idx + 1]
            rows = (rows[:, :, None] * flow[:, None, :]).reshape(n, -1)
        p_chain += p_s * rows
        cost += p_s * (delay_cost + caps @ p.gamma)
    return _average_cost_of_chain(p_chain, cost)
