"""System-level physical constants and cost weights.

All powers are stored in linear Watts; the rate/priority formulas consume the
noise-normalized pair (P/N0, 1).  Working with noise-normalized powers leaves
every rate expression invariant (they depend only on ratios) and pins the
N0 factor inside the perturbation coefficient to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


@dataclass
class SystemParams:
    """Physical constants and Problem-1 weights for a K-flow cluster.

    ``lam`` holds per-flow mean arrival rates in bit/s/Hz (bit/s divided by
    the system bandwidth), matching the unit of the spectral-efficiency rates.
    """

    power_w: float
    noise_w: float
    bandwidth_hz: float
    slot_s: float
    beta: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        for name in ("power_w", "noise_w", "bandwidth_hz", "slot_s"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if not (self.beta.shape == self.gamma.shape == self.lam.shape):
            raise ValueError("beta, gamma and lam must have identical shapes")
        if np.any(self.beta <= 0) or np.any(self.gamma <= 0) or np.any(self.lam <= 0):
            raise ValueError("beta, gamma and lam must be strictly positive")

    @property
    def num_flows(self) -> int:
        return self.beta.shape[0]

    @property
    def p_norm(self) -> float:
        """Transmit power in noise-normalized units (P/N0)."""
        return self.power_w / self.noise_w

    @property
    def n0_norm(self) -> float:
        """Noise power in noise-normalized units (always 1)."""
        return 1.0

    def with_gamma(self, gamma: np.ndarray) -> "SystemParams":
        return SystemParams(self.power_w, self.noise_w, self.bandwidth_hz,
                            self.slot_s, self.beta.copy(), np.asarray(gamma, float),
                            self.lam.copy())

    def with_lam(self, lam: np.ndarray) -> "SystemParams":
        return SystemParams(self.power_w, self.noise_w, self.bandwidth_hz,
                            self.slot_s, self.beta.copy(), self.gamma.copy(),
                            np.asarray(lam, float))


def default_params(num_flows: int = 7, mean_arrival_bps: float = 30e6) -> SystemParams:
    """Simulation defaults: 23 dBm transmit power, -174 dBm/Hz noise density,
    10 MHz bandwidth, 10 ms slots, unit delay weights and equal fronthaul
    prices."""
    bandwidth = 10e6
    return SystemParams(
        power_w=dbm_to_watt(23.0),
        noise_w=dbm_to_watt(-174.0) * bandwidth,
        bandwidth_hz=bandwidth,
        slot_s=10e-3,
        beta=np.ones(num_flows),
        gamma=np.ones(num_flows),
        lam=np.full(num_flows, mean_arrival_bps / bandwidth),
    )
