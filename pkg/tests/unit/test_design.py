"""Unit tests for the design layer and the spherical curve."""

import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from tubeband.models.specs import BasisSpec
from tubeband.services.basis import basis_matrix
from tubeband.services.design import (
    DesignInfo,
    SphericalCurve,
    check_injective,
    design_info,
    information_matrix,
    refactor,
    spherical_curve,
    sqrt_factor,
)
from tubeband.utils.exceptions import (
    DegenerateCurveError,
    DomainError,
    FactorizationError,
    SingularDesignError,
)


class TestInformationMatrix:
    """Test Sigma from design points and variances."""

    def test_matches_direct_inverse(self):
        spec = BasisSpec.bspline(2, 5, 0.0, 1.0)
        points = np.arange(11) / 11
        variance = 0.5 + points
        X = basis_matrix(spec, points)
        expected = np.linalg.inv(X.T @ (X / variance[:, None]))

        sigma = information_matrix(spec, points, variance)

        assert np.allclose(sigma, expected, rtol=1e-10, atol=1e-12)
        assert np.array_equal(sigma, sigma.T)

    def test_singular_design(self):
        with pytest.raises(SingularDesignError) as exc:
            information_matrix(BasisSpec.polynomial(3), [0.0, 1.0], [1.0, 1.0])

        assert exc.value.rank == 2
        assert exc.value.expected == 3
        assert "rank 2 < 3" in str(exc.value)

    def test_nonpositive_variance(self):
        with pytest.raises(DomainError):
            information_matrix(BasisSpec.polynomial(2), [0.0, 1.0], [1.0, 0.0])

    def test_points_must_increase(self):
        with pytest.raises(DomainError):
            design_info(BasisSpec.polynomial(2), [0.0, 1.0, 0.5], 1.0)


class TestSqrtFactor:
    """Test the upper Cholesky factor."""

    def test_worked_example(self, quad_info: DesignInfo):
        expected = np.array(
            [
                [1.0, 0.0, 2.0 / 3.0],
                [0.0, math.sqrt(2.0 / 3.0), 0.0],
                [0.0, 0.0, math.sqrt(5.0) / 3.0],
            ]
        )
        assert np.allclose(quad_info.sigma_sqrt, expected, atol=1e-15)
        assert np.allclose(quad_info.sigma_sqrt.T @ quad_info.sigma_sqrt, quad_info.sigma)

    def test_not_positive_definite(self):
        with pytest.raises(FactorizationError):
            sqrt_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_not_symmetric(self):
        with pytest.raises(FactorizationError):
            sqrt_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_not_square(self):
        with pytest.raises(FactorizationError):
            sqrt_factor(np.ones((2, 3)))


class TestSphericalCurve:
    """Test psi and its exact derivatives."""

    def test_unit_norm(self, quad_curve: SphericalCurve):
        psi = quad_curve.psi(np.linspace(-1, 1, 21))
        assert np.allclose(np.linalg.norm(psi, axis=1), 1.0, atol=1e-14)

    def test_velocity_is_tangent(self, quad_curve: SphericalCurve):
        psi, psi_x, _ = quad_curve.derivatives(np.linspace(-1, 1, 21))
        assert np.allclose(np.einsum("ij,ij->i", psi, psi_x), 0.0, atol=1e-13)

    def test_derivatives_match_finite_differences(self, quad_curve: SphericalCurve):
        x, h = np.array([0.37]), 1e-5
        psi_x = quad_curve.psi_x(x)
        psi_xx = quad_curve.psi_xx(x)
        numeric_x = (quad_curve.psi(x + h) - quad_curve.psi(x - h)) / (2 * h)
        numeric_xx = (quad_curve.psi(x + h) - 2 * quad_curve.psi(x) + quad_curve.psi(x - h)) / h**2

        assert np.allclose(psi_x, numeric_x, atol=1e-8)
        assert np.allclose(psi_xx, numeric_xx, atol=1e-4)

    def test_second_derivative_identity(self, quad_curve: SphericalCurve):
        """psi . psi_xx = -||psi_x||^2 on the sphere."""
        psi, psi_x, psi_xx = quad_curve.derivatives(np.linspace(-1, 1, 11))
        lhs = np.einsum("ij,ij->i", psi, psi_xx)
        rhs = -np.einsum("ij,ij->i", psi_x, psi_x)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_refactor_rotates_psi(self, quad_spec, quad_info, quad_curve):
        Q = ortho_group.rvs(3, random_state=7)
        rotated = spherical_curve(quad_spec, refactor(quad_info, Q), [(-1.0, 1.0)])
        xs = np.linspace(-1, 1, 9)

        assert np.allclose(rotated.psi(xs), quad_curve.psi(xs) @ Q.T, atol=1e-14)

    def test_vanishing_vector(self):
        curve = SphericalCurve(
            vector_map=lambda xs, order: np.column_stack(
                [np.asarray(xs) if order == 0 else np.ones_like(xs), np.zeros_like(xs)]
            ),
            domain=((-1.0, 1.0),),
        )
        with pytest.raises(DegenerateCurveError):
            curve.psi(np.array([0.0]))

    def test_overlapping_intervals(self, circle_map):
        with pytest.raises(DomainError):
            SphericalCurve(vector_map=circle_map, domain=((0.0, 1.0), (0.5, 2.0)))

    def test_closed_needs_single_interval(self, circle_map):
        with pytest.raises(DomainError):
            SphericalCurve(
                vector_map=circle_map, domain=((0.0, 1.0), (2.0, 3.0)), closed_curve=True
            )

    def test_grid_covers_every_interval(self, circle_map):
        curve = SphericalCurve(vector_map=circle_map, domain=((2.0, 3.0), (0.0, 1.0)))
        xs = curve.grid(101)

        assert curve.domain == ((0.0, 1.0), (2.0, 3.0))
        assert xs[0] == 0.0 and xs[-1] == 3.0
        assert np.all((xs <= 1.0) | (xs >= 2.0))

    def test_endpoints(self, quarter_circle, full_circle):
        assert quarter_circle.endpoints() == [(0.0, 1), (math.pi / 2, -1)]
        assert full_circle.endpoints() == []


class TestCurveValidation:
    """Test closedness and injectivity checks."""

    def test_trigonometric_curve_is_closed(self):
        spec = BasisSpec.trigonometric(1)
        info = DesignInfo.from_sigma(np.eye(3))
        curve = spherical_curve(spec, info, [(0.0, 2 * math.pi)], closed_curve=True)

        assert curve.is_closable()
        assert curve.closed_curve

    def test_declared_closed_but_open(self, quad_spec, quad_info):
        with pytest.raises(DegenerateCurveError):
            spherical_curve(quad_spec, quad_info, [(-1.0, 1.0)], closed_curve=True)

    def test_self_intersection(self, circle_map):
        curve = SphericalCurve(vector_map=circle_map, domain=((0.0, 3 * math.pi),))
        with pytest.raises(DegenerateCurveError):
            check_injective(curve)

    def test_injective_curve_reports_gap(self, quad_curve):
        assert check_injective(quad_curve, grid_n=201) > 0.0

    def test_factor_shape_mismatch(self, quad_info):
        with pytest.raises(DomainError):
            spherical_curve(BasisSpec.polynomial(2), quad_info, [(-1.0, 1.0)])
