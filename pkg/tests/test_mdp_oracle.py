"""Unit tests for the desk-scale dynamic-programming benchmark."""

import numpy as np
import pytest

from cranfh.channel import PathGains, path_loss_db
from cranfh.mdp_oracle import (DiscreteMdp, OracleGrids, bellman_residual,
                               build_discrete_mdp, evaluate_policy,
                               evaluate_policy_exact,
                               exponential_bin_representatives,
                               level_interpolation, policy_iteration,
                               relative_value_iteration)
from cranfh.params import default_params

GAIN_300M = float(10.0 ** (-path_loss_db(np.array(300.0)) / 10.0))


def k1_setup(lam_mbps=30.0, gamma=0.2, **grid_kw):
    params = default_params(1, mean_arrival_bps=lam_mbps * 1e6).with_gamma(
        np.array([gamma]))
    gains = PathGains(gains=np.array([[GAIN_300M]]), cross_scale=0.0)
    defaults = dict(num_queue_levels=40, capacity_levels=12, c_max=16.0)
    defaults.update(grid_kw)
    return params, gains, OracleGrids(**defaults)


@pytest.fixture(scope="module")
def small_mdp():
    params, gains, grids = k1_setup()
    return build_discrete_mdp(params, gains, grids)


@pytest.fixture(scope="module")
def small_solution(small_mdp):
    return policy_iteration(small_mdp)


class TestBinRepresentatives:
    def test_equal_probability_mean_one(self):
        for n in (1, 2, 4, 8):
            reps, probs = exponential_bin_representatives(n)
            assert probs == pytest.approx(np.full(n, 1.0 / n))
            assert float(reps @ probs) == pytest.approx(1.0, rel=1e-12)

    def test_representatives_increasing(self):
        reps, _ = exponential_bin_representatives(6)
        assert np.all(np.diff(reps) > 0)


class TestLevelInterpolation:
    def test_mean_preserving(self):
        levels = np.array([0.0, 1.0, 4.0, 10.0])
        x = np.array([0.5, 2.0, 9.0, 10.0])
        idx, w = level_interpolation(levels, x)
        recon = w * levels[idx] + (1.0 - w) * levels[idx + 1]
        assert recon == pytest.approx(x)

    def test_clipping(self):
        levels = np.array([0.0, 1.0])
        idx, w = level_interpolation(levels, np.array([-5.0, 7.0]))
        assert (w * levels[idx] + (1.0 - w) * levels[idx + 1]
                == pytest.approx([0.0, 1.0]))


class TestBuildDiscreteMdp:
    def test_row_sums(self, small_mdp):
        rng = np.random.default_rng(0)
        n_s = len(small_mdp.channel_states)
        n_a = small_mdp.actions.shape[0]
        n_q = small_mdp.num_queue_levels
        for _ in range(200):
            row = small_mdp.transition_row(
                (int(rng.integers(n_q)),), int(rng.integers(n_s)),
                int(rng.integers(n_a)))
            assert abs(row.sum() - 1.0) < 1e-12

    def test_zero_arrivals_only_downward(self):
        # Negligible arrival rate: all transition mass sits at or below the
        # current level.
        params, gains, grids = k1_setup(lam_mbps=1e-7)
        mdp = build_discrete_mdp(params, gains, grids)
        for q_i in (5, 20, 39):
            row = mdp.transition_row((q_i,), 0, mdp.actions.shape[0] - 1)
            assert row[q_i + 1:].sum() < 1e-9

    def test_zero_capacity_pure_arrival_shift(self, small_mdp):
        # Action 0 allocates nothing, so the mean next queue equals the
        # current level plus the mean arrival (away from the grid cap).
        a0 = int(np.argmin(small_mdp.actions.sum(axis=1)))
        assert small_mdp.actions[a0].sum() == 0.0
        mean_arrival = float(small_mdp.arrival_pmf[0]
                             @ np.arange(len(small_mdp.arrival_pmf[0])))
        params = small_mdp.params
        bits = params.lam[0] * params.bandwidth_hz * params.slot_s
        q_i = 20
        row = small_mdp.transition_row((q_i,), 0, a0)
        next_mean = float(row @ small_mdp.queue_levels)
        assert next_mean == pytest.approx(
            small_mdp.queue_levels[q_i] + bits, rel=1e-6)

    def test_grid_bounds_enforced(self):
        with pytest.raises(ValueError):
            OracleGrids(num_queue_levels=300)
        with pytest.raises(ValueError):
            OracleGrids(channel_bins=16)
        with pytest.raises(ValueError):
            OracleGrids(capacity_levels=64)

    def test_k3_rejected(self):
        params = default_params(3)
        gains = PathGains(gains=np.eye(3) * GAIN_300M, cross_scale=0.0)
        with pytest.raises(ValueError):
            build_discrete_mdp(params, gains, OracleGrids())


class TestSolvers:
    def test_policy_iteration_residual(self, small_solution):
        assert small_solution.bellman_residual < 1e-6

    def test_value_anchored_and_monotone(self, small_solution):
        assert small_solution.v_star.flat[0] == 0.0
        assert np.all(np.diff(small_solution.v_star) >= -1e-9)

    def test_agrees_with_value_iteration(self, small_mdp, small_solution):
        vi = relative_value_iteration(small_mdp, tol=1e-7)
        assert vi.theta_star == pytest.approx(small_solution.theta_star,
                                              rel=1e-5)
        assert np.array_equal(vi.policy, small_solution.policy)

    def test_greedy_self_evaluation(self, small_mdp, small_solution):
        cost = evaluate_policy(small_mdp, small_solution.policy)
        assert cost == pytest.approx(small_solution.theta_star, rel=1e-9)

    def test_theta_lower_bounds_other_policies(self, small_mdp, small_solution):
        n_a = small_mdp.actions.shape[0]
        rng = np.random.default_rng(1)
        for _ in range(3):
            policy = rng.integers(0, n_a, size=small_solution.policy.shape)
            cost = evaluate_policy(small_mdp, policy)
            assert cost >= small_solution.theta_star - 1e-9

    def test_empty_system_limit(self):
        # Tiny arrivals: the queue is almost always empty, nothing is
        # allocated there, and each rare packet waits about one slot, so the
        # average cost approaches the one-slot delay cost beta * tau.
        params, gains, grids = k1_setup(lam_mbps=1e-4, gamma=5.0)
        mdp = build_discrete_mdp(params, gains, grids)
        sol = policy_iteration(mdp)
        empty_actions = mdp.actions[sol.policy[:, 0]]
        assert np.all(empty_actions == 0.0)
        one_slot_cost = float(params.beta.sum()) * params.slot_s
        assert sol.theta_star == pytest.approx(one_slot_cost, rel=0.25)

    def test_exact_evaluation_matches_gridded_policy(self, small_mdp,
                                                     small_solution):
        states = small_mdp.channel_states
        levels = small_mdp.queue_levels

        def greedy(q_bits, csi):
            s_i = next(i for i, c in enumerate(states) if c is csi)
            q_i = int(np.searchsorted(levels, q_bits[0]))
            return small_mdp.actions[small_solution.policy[s_i, q_i]]

        cost = evaluate_policy_exact(small_mdp, greedy)
        assert cost == pytest.approx(small_solution.theta_star, rel=1e-9)
