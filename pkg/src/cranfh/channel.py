"""Topology generation, large-scale path gains and per-slot fading samples.

RUs sit on a hexagonal grid (inter-site distance = 2 x cell radius); one UE is
dropped uniformly in each cell's disk outside a 35 m exclusion radius.  Path
loss follows 15.3 + 37.6 log10(d[m]) dB; short-term fading is i.i.d. unit
complex Gaussian per slot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from cranfh.numerics import SingularMatrixError, invert_complex_matrix

MIN_UE_RU_DISTANCE_M = 35.0
_ZF_RESIDUAL_TOL = 1e-8


class DegenerateGeometryError(ValueError):
    """UE/RU placement produced a zero pairwise distance."""


@dataclass(frozen=True)
class Topology:
    """Fixed RU/UE geometry for one random drop."""

    num_cells: int
    cell_radius_m: float
    ru_positions: np.ndarray  # (K, 2) meters
    ue_positions: np.ndarray  # (K, 2) meters
    seed: int

    def to_record(self) -> str:
        """Serialize to a JSON text record for experiment provenance."""
        return json.dumps({
            "num_cells": self.num_cells,
            "cell_radius_m": self.cell_radius_m,
            "ru_positions": self.ru_positions.tolist(),
            "ue_positions": self.ue_positions.tolist(),
            "seed": self.seed,
        }, sort_keys=True)

    @staticmethod
    def from_record(text: str) -> "Topology":
        raw = json.loads(text)
        return Topology(
            num_cells=int(raw["num_cells"]),
            cell_radius_m=float(raw["cell_radius_m"]),
            ru_positions=np.asarray(raw["ru_positions"], dtype=float),
            ue_positions=np.asarray(raw["ue_positions"], dtype=float),
            seed=int(raw["seed"]),
        )


@dataclass(frozen=True)
class PathGains:
    """Linear large-scale gains L_kj (row k: receiving RU, column j: UE)."""

    gains: np.ndarray
    cross_scale: float

    @property
    def num_cells(self) -> int:
        return self.gains.shape[0]

    @property
    def delta(self) -> float:
        """Worst-case cross-link gain, recomputed from the matrix."""
        k = self.num_cells
        if k == 1:
            return 0.0
        off = self.gains[~np.eye(k, dtype=bool)]
        return float(off.max())


@dataclass(frozen=True)
class CsiSample:
    """One slot's channel matrix and its zero-forcing inverse."""

    h: np.ndarray
    s: np.ndarray
    slot_index: int


def hex_grid(num_cells: int, inter_site_m: float) -> np.ndarray:
    """Positions of ``num_cells`` sites on a hex lattice, center-out spiral."""
    # Axial hex coordinates, ring by ring.
    coords = [(0, 0)]
    ring = 1
    while len(coords) < num_cells:
        q, r = ring, 0
        directions = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)]
        for dq, dr in directions:
            for _ in range(ring):
                coords.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    pts = np.empty((num_cells, 2))
    for i, (q, r) in enumerate(coords[:num_cells]):
        pts[i, 0] = inter_site_m * (q + 0.5 * r)
        pts[i, 1] = inter_site_m * (math.sqrt(3.0) / 2.0) * r
    return pts


def generate_topology(num_cells: int, cell_radius_m: float, seed: int) -> Topology:
    """Hex-grid RUs plus one uniformly dropped UE per cell, deterministic in seed."""
    if num_cells < 1:
        raise ValueError("num_cells must be >= 1")
    if not cell_radius_m > 0:
        raise ValueError("cell_radius_m must be positive")
    ru = hex_grid(num_cells, 2.0 * cell_radius_m)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7090]))
    # Uniform in the annulus [MIN_UE_RU_DISTANCE_M, cell_radius_m].
    r_min = min(MIN_UE_RU_DISTANCE_M, 0.9 * cell_radius_m)
    u = rng.uniform(size=num_cells)
    radius = np.sqrt(r_min ** 2 + u * (cell_radius_m ** 2 - r_min ** 2))
    angle = rng.uniform(0.0, 2.0 * math.pi, size=num_cells)
    ue = ru + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return Topology(num_cells, float(cell_radius_m), ru, ue, int(seed))


def path_loss_db(distance_m: np.ndarray) -> np.ndarray:
    return 15.3 + 37.6 * np.log10(distance_m)


def compute_path_gains(topo: Topology, cross_scale: float = 1.0) -> PathGains:
    """Linear gains 10^(-PL_dB/10) with off-diagonals scaled by ``cross_scale``."""
    if not 0.0 <= cross_scale <= 1.0:
        raise ValueError("cross_scale must lie in [0, 1]")
    diff = topo.ru_positions[:, None, :] - topo.ue_positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if np.any(dist <= 0.0):
        raise DegenerateGeometryError("coincident UE/RU positions")
    dist = np.maximum(dist, 1.0)  # 1 m reference floor
    gains = 10.0 ** (-path_loss_db(dist) / 10.0)
    k = topo.num_cells
    off = ~np.eye(k, dtype=bool)
    gains[off] *= cross_scale
    return PathGains(gains=gains, cross_scale=float(cross_scale))


def csi_stream(seed: int, topology_index: int = 0) -> np.random.SeedSequence:
    """Root seed sequence for the fading draws of one (run, topology) pair."""
    return np.random.SeedSequence([int(seed), int(topology_index), 0xC51])


def sample_csi(gains: PathGains, slot_index: int,
               stream: np.random.SeedSequence) -> CsiSample:
    """Slot CSI: H_kj = sqrt(L_kj) * CN(0,1), S = H^-1; i.i.d. across slots."""
    k = gains.num_cells
    sqrt_l = np.sqrt(gains.gains)
    for attempt in range(2):
        slot_seq = np.random.SeedSequence(entropy=stream.entropy,
                                          spawn_key=(int(slot_index), attempt))
        rng = np.random.default_rng(slot_seq)
        tilde = (rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))) / math.sqrt(2.0)
        h = sqrt_l * tilde
        if gains.cross_scale == 0.0:
            s = np.zeros_like(h)
            np.fill_diagonal(s, 1.0 / np.diag(h))
            return CsiSample(h=h, s=s, slot_index=int(slot_index))
        try:
            s = invert_complex_matrix(h)
        except SingularMatrixError:
            continue
        if np.abs(s @ h - np.eye(k)).max() < _ZF_RESIDUAL_TOL:
            return CsiSample(h=h, s=s, slot_index=int(slot_index))
    raise SingularMatrixError(f"singular channel draw at slot {slot_index} after resample")
