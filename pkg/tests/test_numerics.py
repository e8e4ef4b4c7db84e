"""Unit tests for special functions, root finding and complex inversion."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from cranfh.numerics import (Bracket, BracketError, EULER_GAMMA,
                             SingularMatrixError, exp_integral_e1,
                             find_root_bracketed, invert_complex_matrix)


def e1_quadrature(z: float) -> float:
    """Independent oracle: adaptive quadrature of int_z^inf e^-t / t dt."""
    # Integrate in two pieces (the 1/t factor varies fast near small z) and
    # truncate the tail beyond z + 80, which is below e^-80.
    split = max(z, 1.0)
    v1, e1 = quad(lambda t: math.exp(-t) / t, z, split,
                  epsabs=1e-14, epsrel=1e-13, limit=800)
    v2, e2 = quad(lambda t: math.exp(-t) / t, split, z + 80.0,
                  epsabs=1e-14, epsrel=1e-13, limit=800)
    assert e1 + e2 < 1e-12
    return v1 + v2


class TestExpIntegralE1:
    def test_value_at_one(self):
        assert exp_integral_e1(1.0) == pytest.approx(e1_quadrature(1.0), abs=1e-12)

    def test_strictly_decreasing(self):
        zs = np.geomspace(1e-3, 50.0, 64)
        vals = [exp_integral_e1(z) for z in zs]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert all(v > 0 for v in vals)

    def test_small_z_series_limit(self):
        z = 1e-3
        assert exp_integral_e1(z) == pytest.approx(-EULER_GAMMA - math.log(z),
                                                   abs=1e-3)

    def test_against_quadrature_grid(self):
        for z in np.geomspace(1e-3, 50.0, 40):
            assert abs(exp_integral_e1(z) - e1_quadrature(z)) < 1e-10

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
    def test_domain_errors(self, bad):
        with pytest.raises(ValueError):
            exp_integral_e1(bad)


class TestFindRootBracketed:
    def test_linear_root(self):
        x = find_root_bracketed(lambda x: x - 2.0, Bracket(0.0, 5.0, 1e-10))
        assert x == pytest.approx(2.0, abs=1e-9)

    def test_sqrt_two(self):
        x = find_root_bracketed(lambda x: x * x - 2.0, Bracket(0.0, 2.0, 1e-12))
        assert abs(x - math.sqrt(2.0)) < 1e-12

    def test_no_sign_change(self):
        with pytest.raises(BracketError):
            find_root_bracketed(lambda x: x + 1.0, Bracket(0.0, 1.0))

    def test_result_inside_bracket(self):
        x = find_root_bracketed(math.cos, Bracket(1.0, 2.0, 1e-8))
        assert 1.0 <= x <= 2.0

    def test_invalid_bracket(self):
        with pytest.raises(ValueError):
            Bracket(2.0, 1.0)
        with pytest.raises(ValueError):
            Bracket(0.0, 1.0, tolerance=0.0)


class TestInvertComplexMatrix:
    def test_identity(self):
        eye = np.eye(3, dtype=complex)
        assert np.allclose(invert_complex_matrix(eye), eye)

    def test_diagonal(self):
        s = invert_complex_matrix(np.diag([2.0, 4.0]).astype(complex))
        assert np.allclose(s, np.diag([0.5, 0.25]))

    def test_random_residual(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            k = rng.integers(2, 9)
            h = (rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k)))
            h /= math.sqrt(2.0)
            s = invert_complex_matrix(h)
            assert np.max(np.abs(s @ h - np.eye(k))) < 1e-9

    def test_singular(self):
        h = np.array([[1.0, 2.0], [2.0, 4.0]], dtype=complex)
        with pytest.raises(SingularMatrixError):
            invert_complex_matrix(h)

    def test_condition_cap(self):
        h = np.diag([1.0, 1e-10]).astype(complex)
        with pytest.raises(SingularMatrixError):
            invert_complex_matrix(h, cond_cap=1e8)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            invert_complex_matrix(np.ones((2, 3), dtype=complex))
        with pytest.raises(ValueError):
            invert_complex_matrix(np.array([[np.nan, 0], [0, 1]], dtype=complex))
