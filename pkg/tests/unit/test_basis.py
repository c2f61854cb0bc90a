"""Unit tests for basis evaluation."""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate

from tubeband.models.specs import BasisFamily, BasisSpec
from tubeband.services.basis import (
    basis_matrix,
    bspline_scalar,
    bspline_values,
    eval_basis,
    eval_basis_deriv,
)
from tubeband.utils.exceptions import DomainError, UnsupportedError


class TestCardinalBSpline:
    """Test B_d from the truncated power expansion."""

    def test_quadratic_peak(self):
        assert bspline_scalar(2, 1.5) == pytest.approx(0.75, abs=1e-15)

    def test_linear_knot(self):
        assert bspline_scalar(1, 1.0) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("t", [-0.5, 0.0, 3.0, 4.2])
    def test_zero_outside_open_support(self, t):
        assert bspline_scalar(2, t) == 0.0

    def test_cubic_integrates_to_one(self):
        t = np.linspace(0.0, 4.0, 40001)
        values = bspline_values(3, t)
        assert integrate.trapezoid(values, t) == pytest.approx(1.0, abs=1e-8)

    def test_derivative_matches_finite_difference(self):
        t = np.array([0.3, 1.25, 2.6])
        h = 1e-6
        numeric = (bspline_values(3, t + h) - bspline_values(3, t - h)) / (2 * h)
        assert np.allclose(bspline_values(3, t, order=1), numeric, atol=1e-8)

    def test_second_derivative_of_quadratic_is_piecewise_constant(self):
        values = bspline_values(2, np.array([0.5, 1.5, 2.5]), order=2)
        assert np.allclose(values, [1.0, -2.0, 1.0])

    def test_order_above_degree_unsupported(self):
        with pytest.raises(UnsupportedError):
            bspline_values(1, 0.5, order=2)

    def test_degree_limit(self):
        with pytest.raises(DomainError):
            bspline_values(21, 0.5)

    def test_negative_degree(self):
        with pytest.raises(DomainError):
            bspline_values(-1, 0.5)


class TestBasisMatrix:
    """Test f(x) and its derivatives for every family."""

    def test_bspline_partition_of_unity(self):
        spec = BasisSpec.bspline(2, 5, 0.0, 1.0)
        xs = np.linspace(0.0, 1.0, 101)
        assert np.allclose(basis_matrix(spec, xs).sum(axis=1), 1.0, atol=1e-12)

    def test_bspline_derivative_rows_sum_to_zero(self):
        spec = BasisSpec.bspline(3, 7, 2.0, 20.0)
        xs = np.linspace(2.0, 20.0, 37)
        assert np.allclose(basis_matrix(spec, xs, 1).sum(axis=1), 0.0, atol=1e-10)

    def test_bspline_chain_rule(self):
        spec = BasisSpec.bspline(2, 5, 2.0, 20.0)
        x, h = 7.3, 1e-6
        numeric = (eval_basis(spec, x + h) - eval_basis(spec, x - h)) / (2 * h)
        assert np.allclose(eval_basis_deriv(spec, x, 1), numeric, atol=1e-8)

    def test_bspline_outside_domain(self):
        spec = BasisSpec.bspline(2, 5, 0.0, 1.0)
        with pytest.raises(DomainError):
            basis_matrix(spec, [1.5])

    def test_right_end_derivatives_use_last_piece(self):
        spec = BasisSpec.bspline(2, 5, 0.0, 1.0)

        at_end = eval_basis_deriv(spec, 1.0, 2)

        assert np.allclose(at_end, [0.0, 0.0, 9.0, -18.0, 9.0])
        assert np.allclose(at_end, eval_basis_deriv(spec, 1.0 - 1e-9, 2))
        slope = eval_basis_deriv(spec, 1.0, 1)
        assert np.allclose(slope, eval_basis_deriv(spec, 1.0 - 1e-9, 1), atol=1e-7)

    def test_left_end_derivatives_use_first_piece(self):
        spec = BasisSpec.bspline(2, 5, 0.0, 1.0)
        assert np.allclose(eval_basis_deriv(spec, 0.0, 2), eval_basis_deriv(spec, 1e-9, 2))

    def test_polynomial_values_and_derivatives(self):
        spec = BasisSpec.polynomial(3)
        assert np.allclose(eval_basis(spec, 0.5), [1.0, 0.5, 0.25])
        assert np.allclose(eval_basis_deriv(spec, 0.5, 1), [0.0, 1.0, 1.0])
        assert np.allclose(eval_basis_deriv(spec, 0.5, 2), [0.0, 0.0, 2.0])

    def test_trigonometric_values(self):
        spec = BasisSpec.trigonometric(2)
        assert spec.p == 5
        expected = [1.0, math.sqrt(2), 0.0, math.sqrt(2), 0.0]
        assert np.allclose(eval_basis(spec, 0.0), expected)

    def test_trigonometric_second_derivative(self):
        spec = BasisSpec.trigonometric(1)
        x = 0.7
        value = eval_basis(spec, x)
        assert np.allclose(eval_basis_deriv(spec, x, 2)[1:], -value[1:])

    def test_deriv_order_must_be_one_or_two(self):
        with pytest.raises(DomainError):
            eval_basis_deriv(BasisSpec.polynomial(2), 0.0, 0)

    def test_shape(self):
        spec = BasisSpec.bspline(2, 6, 0.0, 1.0)
        assert basis_matrix(spec, np.linspace(0, 1, 9)).shape == (9, 6)


class TestBasisSpec:
    """Test basis specification validation."""

    def test_bspline_needs_enough_functions(self):
        with pytest.raises(ValidationError):
            BasisSpec.bspline(3, 3, 0.0, 1.0)

    def test_bspline_needs_ordered_domain(self):
        with pytest.raises(ValidationError):
            BasisSpec.bspline(2, 5, 1.0, 1.0)

    def test_trigonometric_dimension(self):
        with pytest.raises(ValidationError):
            BasisSpec(family=BasisFamily.TRIGONOMETRIC, p=4, harmonics=2)

    def test_knots(self):
        spec = BasisSpec.bspline(2, 5, 2.0, 20.0)
        assert spec.knot_spacing == pytest.approx(6.0)
        assert spec.knots() == pytest.approx([8.0, 14.0])

    def test_hashable(self):
        assert hash(BasisSpec.polynomial(3)) == hash(BasisSpec.polynomial(3))
