"""Delay-aware uplink fronthaul capacity allocation for C-RAN clusters.

Subpackages cover the numerical kernel (exponential integral, root finding,
complex matrix inversion), channel/topology generation, the uplink PHY rate
model with fronthaul quantization noise, the calibrated approximate priority
function, the per-slot allocation algorithms, the discrete-event queue
simulator, and a desk-scale MDP oracle for validation.
"""

from cranfh.params import SystemParams

__all__ = ["SystemParams"]
__version__ = "0.1.0"
