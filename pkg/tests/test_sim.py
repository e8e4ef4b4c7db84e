"""Unit tests for the episode simulator and calibration machinery."""

import numpy as np
import pytest

from cranfh.params import default_params
from cranfh.sim import (EpisodeConfig, QueueState, aggregate_metrics,
                        arrival_stream, calibrate_price_to_budget,
                        prepare_topology, run_episode, sample_arrivals,
                        step_queues)


def small_cfg(scheme="delay_aware", **kw):
    base = dict(num_slots=20, num_topologies=2, mean_arrival_bps=20e6,
                scheme=scheme, seed=3, num_cells=3, calib_topologies=2,
                calib_slots=20)
    base.update(kw)
    return EpisodeConfig(**base)


class TestStepQueues:
    def test_drain_and_arrive(self):
        q = step_queues(QueueState(np.array([10.0])), np.array([4.0]),
                        np.array([2.0]), tau_s=1.0)
        assert q.backlog_bits[0] == 8.0

    def test_truncation_at_zero(self):
        q = step_queues(QueueState(np.array([3.0])), np.array([5.0]),
                        np.array([1.0]), tau_s=1.0)
        assert q.backlog_bits[0] == 1.0

    def test_identity(self):
        q = step_queues(QueueState(np.array([7.0])), np.zeros(1), np.zeros(1),
                        tau_s=1.0)
        assert q.backlog_bits[0] == 7.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            step_queues(QueueState(np.array([1.0])), np.array([-1.0]),
                        np.zeros(1), 1.0)
        with pytest.raises(ValueError):
            QueueState(np.array([-2.0]))


class TestSampleArrivals:
    def test_mean_matches(self):
        params = default_params(2, mean_arrival_bps=30e6)
        cfg = small_cfg()
        stream = arrival_stream(cfg.seed, 0)
        n = 20000
        total = np.zeros(2)
        for slot in range(n):
            total += sample_arrivals(params, cfg, slot, stream)
        expect = params.lam * params.bandwidth_hz * params.slot_s
        assert np.all(np.abs(total / n - expect) < 0.02 * expect)

    def test_independent_across_flows(self):
        params = default_params(2, mean_arrival_bps=30e6)
        cfg = small_cfg()
        stream = arrival_stream(cfg.seed, 1)
        draws = np.array([sample_arrivals(params, cfg, s, stream)
                          for s in range(20000)])
        corr = np.corrcoef(draws.T)[0, 1]
        assert abs(corr) < 0.02

    def test_scheme_independent(self):
        # Arrival streams depend only on (seed, topology), never the scheme.
        params = default_params(2)
        cfg_a = small_cfg(scheme="delay_aware")
        cfg_b = small_cfg(scheme="queue_weighted")
        s_a = arrival_stream(cfg_a.seed, 0)
        s_b = arrival_stream(cfg_b.seed, 0)
        for slot in range(5):
            assert np.array_equal(sample_arrivals(params, cfg_a, slot, s_a),
                                  sample_arrivals(params, cfg_b, slot, s_b))


class TestRunEpisode:
    def test_determinism(self):
        params = default_params(3, mean_arrival_bps=20e6)
        cfg = small_cfg()
        setup = prepare_topology(params, cfg, 0)
        a = run_episode(setup, "delay_aware", cfg)
        b = run_episode(setup, "delay_aware", cfg)
        assert a.avg_delay_s == b.avg_delay_s
        assert a.avg_total_capacity_bps == b.avg_total_capacity_bps

    def test_near_zero_arrivals_drain(self):
        params = default_params(3, mean_arrival_bps=20e6)
        cfg = small_cfg(mean_arrival_bps=1.0)  # ~0 packets per slot
        setup = prepare_topology(params, cfg, 0)
        m = run_episode(setup, "throughput_optimal", cfg)
        assert m.avg_delay_s < 1e-6

    def test_trace_schema(self):
        params = default_params(2, mean_arrival_bps=20e6)
        cfg = small_cfg(num_cells=2)
        setup = prepare_topology(params, cfg, 0)
        trace = []
        run_episode(setup, "queue_weighted", cfg, trace=trace)
        assert len(trace) == cfg.num_slots * 2
        topo, slot, k, q_bits, c, r, a = trace[0]
        assert slot == 0 and k in (0, 1) and q_bits >= 0.0

    def test_load_monotone_delay(self):
        params = default_params(3, mean_arrival_bps=20e6)
        delays = []
        for lam in (15e6, 35e6):
            cfg = small_cfg(mean_arrival_bps=lam, num_slots=60,
                            redraw_lambda_per_topology=False)
            ms = []
            for t in range(3):
                setup = prepare_topology(params, cfg, t)
                ms.append(run_episode(setup, "delay_aware", cfg).avg_delay_s)
            delays.append(np.mean(ms))
        assert delays[1] >= delays[0]


class TestCalibration:
    def test_budget_hit(self):
        params = default_params(3, mean_arrival_bps=20e6)
        cfg = small_cfg(num_slots=40, calib_slots=40)
        setups = [prepare_topology(params, cfg, t) for t in range(2)]
        target = 150e6
        scale = calibrate_price_to_budget(setups, "delay_aware", cfg, target)
        total = np.mean([run_episode(s, "delay_aware", cfg, scale)
                         .avg_total_capacity_bps for s in setups])
        assert abs(total - target) <= 0.01 * target

    def test_monotone_in_multiplier(self):
        params = default_params(3, mean_arrival_bps=20e6)
        cfg = small_cfg()
        setup = prepare_topology(params, cfg, 0)
        lo = run_episode(setup, "delay_aware", cfg, gamma_scale=0.1)
        hi = run_episode(setup, "delay_aware", cfg, gamma_scale=10.0)
        assert lo.avg_total_capacity_bps >= hi.avg_total_capacity_bps


class TestAggregation:
    def _metrics(self, delay):
        from cranfh.sim import RunMetrics
        return RunMetrics(avg_delay_s=delay, avg_total_capacity_bps=1e8,
                          per_flow_delay_s=np.array([delay]),
                          objective_l=delay + 1.0, convergence_failures=0)

    def test_single_run_passthrough(self):
        agg = aggregate_metrics([self._metrics(0.5)], np.ones(1), np.ones(1))
        assert agg.mean.avg_delay_s == 0.5
        assert agg.stderr_delay_s == 0.0
        assert agg.num_runs == 1

    def test_identical_runs_zero_variance(self):
        agg = aggregate_metrics([self._metrics(0.2), self._metrics(0.2)],
                                np.ones(1), np.ones(1))
        assert agg.mean.avg_delay_s == pytest.approx(0.2)
        assert agg.stderr_delay_s == 0.0

    def test_objective_recomputation(self):
        params = default_params(2, mean_arrival_bps=20e6)
        cfg = small_cfg(num_cells=2)
        setup = prepare_topology(params, cfg, 0)
        m = run_episode(setup, "delay_aware", cfg)
        trace = []
        run_episode(setup, "delay_aware", cfg, trace=trace)
        rows = np.array([(r[2], r[3], r[4]) for r in trace])
        bw = params.bandwidth_hz
        lam_bps = setup.params.lam * bw
        q_mean = np.array([rows[rows[:, 0] == k, 1].mean() for k in range(2)])
        c_mean = np.array([rows[rows[:, 0] == k, 2].mean() for k in range(2)])
        expect = float(np.sum(setup.params.beta * q_mean / lam_bps
                              + setup.params.gamma * c_mean))
        assert m.objective_l == pytest.approx(expect, rel=1e-9)

    def test_empty_error(self):
        with pytest.raises(ValueError):
            aggregate_metrics([], np.ones(1), np.ones(1))
