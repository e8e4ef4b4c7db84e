"""Closed-form approximate priority function for the coupled queue system.

The base (decoupled) system admits a parametric per-flow solution
(Q_k(nu), J_k(nu)); the first-order coupling correction is quadratic in the
backlogs with coefficient phi_k.  Calibration pins, per flow:

  a_k     = N0 / (P L_kk)
  d_k     : e^{a_k} E1(a_k d/(d - gamma_k)) / ln2 = lambda_k
  c_k^inf = gamma_k/ln2 * E1(a_k gamma_k / (d_k - gamma_k))
  nu0     : Q_k(nu0) = 0  (analytically nu0 = d_k; found by search anyway)
  b_k     : J_k(0) = 0

The antiderivative J_k(nu) is implemented with the coefficient
gamma_k^2 (a_k - 1) on the E1(a_k gamma_k/(nu - gamma_k)) term, which is the
unique choice making dJ_k/dnu = nu * dQ_k/dnu hold identically (so that
J_k'(Q_k) = nu(Q_k)); see the repository notes for the derivation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cranfh.channel import PathGains
from cranfh.numerics import Bracket, BracketError, exp_integral_e1, find_root_bracketed
from cranfh.params import SystemParams

LN2 = math.log(2.0)


class CalibrationError(RuntimeError):
    """Per-flow calibration failed (typically: arrival rate outside the
    base-system stability region)."""


class DegeneratePerturbationError(ArithmeticError):
    """phi_k denominator is numerically zero for this flow."""


def base_system_capacity(a_k: float) -> float:
    """Mean decoupled spectral efficiency e^a E1(a)/ln2 at unbounded fronthaul."""
    return math.exp(a_k) * exp_integral_e1(a_k) / LN2


def phi_coefficient(a_k: float, beta_k: float, lambda_k: float,
                    noise: float = 1.0) -> float:
    """First-order perturbation coefficient phi_k."""
    e1a = math.exp(a_k) * exp_integral_e1(a_k)
    den = e1a - lambda_k * LN2
    if abs(den) < 1e-12:
        raise DegeneratePerturbationError(
            f"phi denominator {den:.3g} is numerically zero (a={a_k:.3g}, lambda={lambda_k:.3g})")
    return (beta_k / lambda_k) * (1.0 - a_k * e1a / noise) / den


@dataclass
class PerFlowPriority:
    """Calibrated per-flow priority function and its evaluators."""

    a_k: float
    d_k: float
    c_inf: float
    nu0: float
    b_k: float
    phi_k: float
    beta_k: float
    gamma_k: float
    lambda_k: float

    # -- parametric forward maps -------------------------------------------

    def q_of_nu(self, nu: float) -> float:
        """Backlog Q_k as a function of the parameter nu > gamma_k."""
        a, g, lam, beta = self.a_k, self.gamma_k, self.lambda_k, self.beta_k
        if nu <= g:
            raise ValueError(f"nu must exceed gamma_k={g}, got {nu}")
        u = a * nu / (nu - g)
        v = a * g / (nu - g)
        return (lam / beta) * (
            nu * math.exp(a) * exp_integral_e1(u) / LN2
            - lam * nu
            - g * exp_integral_e1(v) / LN2
            + self.c_inf
        )

    def j_of_nu(self, nu: float) -> float:
        """Priority value J_k as a function of the parameter nu > gamma_k."""
        a, g, lam, beta = self.a_k, self.gamma_k, self.lambda_k, self.beta_k
        if nu <= g:
            raise ValueError(f"nu must exceed gamma_k={g}, got {nu}")
        u = a * nu / (nu - g)
        v = a * g / (nu - g)
        raw = (lam / (2.0 * beta * LN2)) * (
            g * (g - nu) * math.exp(-v)
            + math.exp(a) * nu * nu * exp_integral_e1(u)
            + g * g * (a - 1.0) * exp_integral_e1(v)
            - lam * nu * nu * LN2
        )
        return raw + self.b_k

    # -- inverse-map evaluators --------------------------------------------

    def derivative(self, q_k: float) -> float:
        """J_k'(q_k) = nu(q_k), the inverse of the strictly increasing
        forward map on [nu0, inf)."""
        if not (math.isfinite(q_k) and q_k >= 0.0):
            raise ValueError(f"q_k must be finite and nonnegative, got {q_k!r}")
        if q_k <= max(self.q_of_nu(self.nu0), 0.0):
            return self.nu0
        lo = self.nu0
        hi = max(2.0 * self.nu0, self.nu0 + 1.0)
        for _ in range(200):
            if self.q_of_nu(hi) >= q_k:
                break
            lo = hi
            hi *= 2.0
        else:
            raise CalibrationError(f"could not bracket nu for q={q_k:.3g}")
        tol = 1e-14 * max(1.0, hi)
        return find_root_bracketed(lambda nu: self.q_of_nu(nu) - q_k,
                                   Bracket(lo, hi, tol))

    def value(self, q_k: float) -> float:
        """J_k evaluated at the backlog q_k (J_k(0) = 0 by calibration)."""
        if q_k == 0.0:
            return 0.0
        return self.j_of_nu(self.derivative(q_k))

    def report(self) -> dict:
        return {
            "a_k": self.a_k, "d_k": self.d_k, "c_inf": self.c_inf,
            "nu0": self.nu0, "b_k": self.b_k, "phi_k": self.phi_k,
            "beta_k": self.beta_k, "gamma_k": self.gamma_k,
            "lambda_k": self.lambda_k,
        }


def calibrate_per_flow(params: SystemParams, l_kk: float, k: int) -> PerFlowPriority:
    """Calibrate the per-flow priority function for flow ``k``.

    Raises CalibrationError when lambda_k is not strictly inside the
    base-system stability region (the defining equation for d_k then has no
    root).
    """
    beta_k = float(params.beta[k])
    gamma_k = float(params.gamma[k])
    lambda_k = float(params.lam[k])
    a_k = params.n0_norm / (params.p_norm * float(l_kk))

    cap = base_system_capacity(a_k)
    if not lambda_k < cap:
        raise CalibrationError(
            f"flow {k}: lambda={lambda_k:.4g} bit/s/Hz is outside the base-system "
            f"stability region (capacity {cap:.4g} bit/s/Hz)")

    def d_residual(d: float) -> float:
        return math.exp(a_k) * exp_integral_e1(a_k * d / (d - gamma_k)) / LN2 - lambda_k

    lo = gamma_k * (1.0 + 1e-9)
    hi = gamma_k * 2.0
    for _ in range(200):
        if d_residual(hi) > 0.0:
            break
        hi *= 2.0
    else:
        raise CalibrationError(f"flow {k}: no sign change while bracketing d_k")
    try:
        d_k = find_root_bracketed(d_residual, Bracket(lo, hi, 1e-14 * max(1.0, hi)))
    except BracketError as exc:
        raise CalibrationError(f"flow {k}: {exc}") from exc

    c_inf = gamma_k / LN2 * exp_integral_e1(a_k * gamma_k / (d_k - gamma_k))

    pf = PerFlowPriority(a_k=a_k, d_k=d_k, c_inf=c_inf, nu0=d_k, b_k=0.0,
                         phi_k=0.0, beta_k=beta_k, gamma_k=gamma_k,
                         lambda_k=lambda_k)

    # nu0 solves Q_k(nu) = 0 on the increasing branch; analytically nu0 = d_k,
    # the search refines it against the same forward map used later.  The
    # residual at d_k is roundoff; a root above d_k only exists when it is
    # negative (the map is increasing there).
    q_at_d = pf.q_of_nu(d_k)
    if q_at_d < -1e-9 * max(1.0, d_k):
        hi = 2.0 * d_k
        for _ in range(200):
            if pf.q_of_nu(hi) > 0.0:
                break
            hi *= 2.0
        pf.nu0 = find_root_bracketed(pf.q_of_nu, Bracket(d_k, hi, 1e-14 * max(1.0, hi)))
    else:
        pf.nu0 = d_k

    # Verify monotonicity of the forward map over the working range.
    samples = np.geomspace(1.0, 1e4, 24)
    q_samples = [pf.q_of_nu(pf.nu0 * (1.0 + s * 1e-4)) for s in samples]
    if np.any(np.diff(q_samples) <= 0.0):
        raise CalibrationError(f"flow {k}: forward map Q(nu) is not increasing")

    pf.b_k = -pf.j_of_nu(pf.nu0)
    pf.phi_k = phi_coefficient(a_k, beta_k, lambda_k, params.n0_norm)
    return pf


def calibrate_flows(params: SystemParams, gains: PathGains) -> list[PerFlowPriority]:
    """Calibrate every flow of a topology (done once per episode)."""
    diag = np.diag(gains.gains)
    return [calibrate_per_flow(params, diag[k], k) for k in range(params.num_flows)]


def per_flow_ode_residual(pf: PerFlowPriority, q_k: float) -> float:
    """Residual of the per-flow optimality ODE at backlog q_k.

    beta q/lambda + gamma/ln2 E1(a g/(J'-g)) + J' lambda
      - J' e^a/ln2 E1(a J'/(J'-g)) - c_inf
    must vanish on the calibrated solution.
    """
    nu = pf.derivative(q_k)
    a, g = pf.a_k, pf.gamma_k
    return (pf.beta_k * q_k / pf.lambda_k
            + g / LN2 * exp_integral_e1(a * g / (nu - g))
            + nu * pf.lambda_k
            - nu * math.exp(a) / LN2 * exp_integral_e1(a * nu / (nu - g))
            - pf.c_inf)


# -- aggregate approximate priority function -------------------------------


def _coupling_coefficients(priorities: list[PerFlowPriority],
                           gains: PathGains, noise: float = 1.0) -> np.ndarray:
    """Per-flow coefficient of Q_k^2 in the quadratic perturbation term:
    phi_k * (sum_{j!=k} L_kj sum_{l!=k} N0/L_ll
             + sum_{i!=k} sum_{j!=i,k} L_ij N0/L_jj).
    """
    l = gains.gains
    k_n = l.shape[0]
    inv_diag = noise / np.diag(l)
    coeff = np.zeros(k_n)
    off = l.copy()
    np.fill_diagonal(off, 0.0)
    for k in range(k_n):
        term1 = off[k, :].sum() * (inv_diag.sum() - inv_diag[k])
        term2 = 0.0
        for i in range(k_n):
            if i == k:
                continue
            for j in range(k_n):
                if j == i or j == k:
                    continue
                term2 += l[i, j] * inv_diag[j]
        coeff[k] = priorities[k].phi_k * (term1 + term2)
    return coeff


def v_tilde_gradient(priorities: list[PerFlowPriority], gains: PathGains,
                     q: np.ndarray, noise: float = 1.0) -> np.ndarray:
    """Gradient of the approximate priority function:
    dV/dQ_k = J_k'(Q_k) + 2 * coupling_k * Q_k."""
    q = np.asarray(q, dtype=float)
    coeff = _coupling_coefficients(priorities, gains, noise)
    grad = np.array([pf.derivative(qk) for pf, qk in zip(priorities, q)])
    return grad + 2.0 * coeff * q


def v_tilde_value(priorities: list[PerFlowPriority], gains: PathGains,
                  q: np.ndarray, noise: float = 1.0) -> float:
    """Approximate priority function: base per-flow sum plus the quadratic
    first-order coupling correction."""
    q = np.asarray(q, dtype=float)
    coeff = _coupling_coefficients(priorities, gains, noise)
    base = sum(pf.value(qk) for pf, qk in zip(priorities, q))
    return float(base + np.sum(coeff * q * q))
