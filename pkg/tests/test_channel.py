"""Unit tests for topology generation, path gains and fading samples."""

import math

import numpy as np
import pytest

from cranfh.channel import (DegenerateGeometryError, MIN_UE_RU_DISTANCE_M,
                            PathGains, Topology, compute_path_gains, csi_stream,
                            generate_topology, hex_grid, path_loss_db,
                            sample_csi)


class TestHexGrid:
    def test_seven_cells(self):
        pts = hex_grid(7, 1000.0)
        # Center site plus six first-ring neighbors at distance 1000 m, hand
        # computed from axial coordinates: angles 60 degrees apart.
        assert np.allclose(pts[0], [0.0, 0.0])
        d = np.linalg.norm(pts[1:] - pts[0], axis=1)
        assert np.allclose(d, 1000.0)
        angles = np.sort(np.mod(np.degrees(np.arctan2(pts[1:, 1], pts[1:, 0])), 360.0))
        assert np.allclose(angles, [0.0, 60.0, 120.0, 180.0, 240.0, 300.0])

    def test_single_cell(self):
        assert np.allclose(hex_grid(1, 1000.0), [[0.0, 0.0]])


class TestGenerateTopology:
    def test_single_cell(self):
        topo = generate_topology(1, 500.0, seed=7)
        assert np.allclose(topo.ru_positions, [[0.0, 0.0]])
        d = np.linalg.norm(topo.ue_positions[0] - topo.ru_positions[0])
        assert MIN_UE_RU_DISTANCE_M <= d <= 500.0

    def test_ue_within_own_cell(self):
        topo = generate_topology(7, 500.0, seed=3)
        d = np.linalg.norm(topo.ue_positions - topo.ru_positions, axis=1)
        assert np.all(d <= 500.0)
        assert np.all(d >= MIN_UE_RU_DISTANCE_M)

    def test_determinism(self):
        a = generate_topology(7, 500.0, seed=11)
        b = generate_topology(7, 500.0, seed=11)
        assert np.array_equal(a.ue_positions, b.ue_positions)
        assert np.array_equal(a.ru_positions, b.ru_positions)

    def test_record_round_trip(self):
        topo = generate_topology(4, 500.0, seed=5)
        back = Topology.from_record(topo.to_record())
        assert np.allclose(back.ue_positions, topo.ue_positions)
        assert back.seed == topo.seed

    def test_validation(self):
        with pytest.raises(ValueError):
            generate_topology(0, 500.0, 1)
        with pytest.raises(ValueError):
            generate_topology(1, -5.0, 1)


class TestComputePathGains:
    def test_path_loss_at_one_meter(self):
        # 15.3 dB at 1 m, hand evaluated: linear gain 10^-1.53.
        gain = 10.0 ** (-path_loss_db(np.array(1.0)) / 10.0)
        assert gain == pytest.approx(10.0 ** -1.53, rel=1e-12)

    def test_cross_scale_zero(self):
        topo = generate_topology(3, 500.0, seed=2)
        g = compute_path_gains(topo, 0.0)
        off = ~np.eye(3, dtype=bool)
        assert np.all(g.gains[off] == 0.0)
        assert g.delta == 0.0
        assert np.all(np.diag(g.gains) > 0.0)

    def test_off_diagonal_linearity(self):
        topo = generate_topology(5, 500.0, seed=9)
        full = compute_path_gains(topo, 1.0)
        half = compute_path_gains(topo, 0.5)
        off = ~np.eye(5, dtype=bool)
        assert np.allclose(half.gains[off], 0.5 * full.gains[off])
        assert np.allclose(np.diag(half.gains), np.diag(full.gains))

    def test_delta_below_diagonal(self):
        topo = generate_topology(7, 500.0, seed=4)
        g = compute_path_gains(topo, 1.0)
        assert g.delta < np.min(np.diag(g.gains))

    def test_degenerate_geometry(self):
        topo = generate_topology(2, 500.0, seed=1)
        bad = Topology(2, 500.0, topo.ru_positions,
                       topo.ru_positions.copy(), 1)
        with pytest.raises(DegenerateGeometryError):
            compute_path_gains(bad, 1.0)


class TestSampleCsi:
    def _gains(self, k=2, cross=1.0, seed=0):
        topo = generate_topology(k, 500.0, seed=seed)
        return compute_path_gains(topo, cross)

    def test_diagonal_when_decoupled(self):
        g = self._gains(cross=0.0)
        csi = sample_csi(g, 0, csi_stream(1))
        off = ~np.eye(2, dtype=bool)
        assert np.all(np.abs(csi.s[off]) < 1e-12)
        assert np.allclose(np.diag(csi.s), 1.0 / np.diag(csi.h))

    def test_zf_residual(self):
        g = self._gains(k=7)
        for slot in range(5):
            csi = sample_csi(g, slot, csi_stream(2))
            assert np.abs(csi.s @ csi.h - np.eye(7)).max() < 1e-8

    def test_moment_match(self):
        g = self._gains(k=2, cross=1.0, seed=3)
        stream = csi_stream(3)
        n = 20000
        acc = np.zeros((2, 2))
        for slot in range(n):
            acc += np.abs(sample_csi(g, slot, stream).h) ** 2
        assert np.all(np.abs(acc / n - g.gains) < 0.03 * g.gains)

    def test_slots_differ(self):
        g = self._gains()
        stream = csi_stream(4)
        a = sample_csi(g, 0, stream)
        b = sample_csi(g, 1, stream)
        assert not np.allclose(a.h, b.h)

    def test_reproducible(self):
        g = self._gains()
        a = sample_csi(g, 5, csi_stream(6))
        b = sample_csi(g, 5, csi_stream(6))
        assert np.array_equal(a.h, b.h)
