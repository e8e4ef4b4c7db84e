"""Fronthaul quantization noise, ZF post-processing rate, and the decoupled
single-link rate.

Capacities and rates are spectral efficiencies (bit/s/Hz); conversion to bit/s
happens in the simulator by multiplying with the bandwidth.  A zero capacity
carries nothing: its quantization noise is the +inf sentinel.
"""

from __future__ import annotations

import numpy as np

from cranfh.channel import CsiSample
from cranfh.params import SystemParams

# Numerical guard on per-link spectral efficiency.
C_MAX_DEFAULT = 30.0


def validate_alloc(capacities: np.ndarray, c_max: float = C_MAX_DEFAULT) -> np.ndarray:
    c = np.asarray(capacities, dtype=float)
    if np.any(~np.isfinite(c)) or np.any(c < 0.0):
        raise ValueError("capacities must be finite and nonnegative")
    if np.any(c > c_max + 1e-9):
        raise ValueError(f"capacities exceed the {c_max} bit/s/Hz cap")
    return c


def received_powers(csi: CsiSample, params: SystemParams) -> np.ndarray:
    """Y_j = P * sum_l |H_jl|^2 + N0 per receiving RU, noise-normalized."""
    return params.p_norm * np.sum(np.abs(csi.h) ** 2, axis=1) + params.n0_norm


def quantization_noise(csi: CsiSample, capacities: np.ndarray,
                       params: SystemParams) -> np.ndarray:
    """N_k = Y_k / (2^C_k - 1); +inf where C_k = 0."""
    c = validate_alloc(capacities)
    y = received_powers(csi, params)
    with np.errstate(divide="ignore"):
        return np.where(c > 0.0, y / np.expm1(c * np.log(2.0)), np.inf)


def user_rate(csi: CsiSample, capacities: np.ndarray, params: SystemParams,
              k: int | None = None):
    """Post-ZF uplink spectral efficiency per flow.

    R_k = log2(1 + P / sum_j |S_kj|^2 (N0 + N_j)); any flow whose combiner
    touches an infinite-noise link gets rate 0.  Returns the full vector, or a
    scalar when ``k`` is given.
    """
    noise = quantization_noise(csi, capacities, params)
    s_abs2 = np.abs(csi.s) ** 2
    total = noise + params.n0_norm
    rows = s_abs2 if k is None else s_abs2[k:k + 1]
    denom = np.where((rows > 0.0) & np.isinf(total)[None, :], np.inf, rows * np.where(np.isinf(total), 0.0, total))
    z = np.sum(denom, axis=1)
    with np.errstate(divide="ignore"):
        rate = np.log2(1.0 + params.p_norm / z)
    rate = np.where(np.isinf(z), 0.0, rate)
    return float(rate[0]) if k is not None else rate


def base_rate(h_kk_sq: float, c_k: float, params: SystemParams) -> float:
    """Interference-free rate of the decoupled single-link system."""
    if not h_kk_sq > 0:
        raise ValueError("h_kk_sq must be positive")
    if c_k <= 0.0:
        return 0.0
    signal = params.p_norm * h_kk_sq
    noise = (signal + params.n0_norm) / np.expm1(c_k * np.log(2.0))
    return float(np.log2(1.0 + signal / (params.n0_norm + noise)))
