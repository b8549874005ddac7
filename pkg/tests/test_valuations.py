import math
from unittest.mock import patch

import numpy as np
import pytest

from src.errors import SpecError, UnsupportedError
from src.geometry import box, cube, geodesic_sphere, random_polytope, scale, segment, transform
from src.sphereint import CapPolynomial, SphericalRegion
from src.symtensor import Rotation, metric_tensor, rotate, vector_power
from src.valuations import (
    Full,
    LocalTensorSpec,
    ProductIndicator,
    basis_specs,
    constant_C,
    constant_c,
    curvature_weight,
    global_tensor,
    intrinsic_volumes,
    local_steiner_check,
    local_tensor,
    moment_tensor,
    reduce_phi_top,
    reduced_top_tensor,
    rotate_test_function,
    scale_test_function,
    steiner_moment_check,
    support_measure_eval,
    theta_measure,
    translation_defect,
    translation_expand,
)

E1 = np.eye(3)[0]


@pytest.fixture
def unit_cube():
    return cube(3)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


class TestSpecs:
    def test_rank_and_degree(self):
        spec = LocalTensorSpec(k=1, r=2, s=1, j=1, m=1)
        assert spec.rank == 7
        assert spec.degree == 3
        assert spec.label == "Q^1 phi_1^{2,1,1}"

    def test_invalid_indices(self):
        with pytest.raises(SpecError):
            LocalTensorSpec(k=0, j=1).validate_for(3)
        with pytest.raises(SpecError):
            LocalTensorSpec(k=3).validate_for(3)

    def test_basis_counts(self):
        assert len(basis_specs(0, 3)) == 3
        assert len(basis_specs(2, 3)) == 13
        assert len(basis_specs(3, 3)) == 20
        assert all(spec.rank == 2 for spec in basis_specs(2, 3))

    def test_constants(self):
        assert constant_C(3, 1, 0, 0) == pytest.approx(1 / (2 * math.pi))
        assert constant_C(3, 1, 0, 2) == pytest.approx(1 / (4 * math.pi ** 2))
        assert constant_c(3, 1, 0, 0) == pytest.approx(1.0)

    @pytest.mark.parametrize("region", [
        SphericalRegion.great_circle([1, 0, 0], [0, 1, 0]),
        SphericalRegion.arc([1, 0, 0], [0, 1, 0]),
        SphericalRegion.point([0, 0, 1]),
    ], ids=["circle", "arc", "point"])
    def test_product_indicator_needs_cap(self, region):
        with pytest.raises(UnsupportedError):
            ProductIndicator(None, region)

    def test_product_indicator_accepts_caps(self):
        assert ProductIndicator(None, SphericalRegion.full_sphere(3)).omega.kind == "cap"
        assert ProductIndicator(None, SphericalRegion.empty(3, 2)).omega.kind == "empty"


class TestClosedForms:
    def test_unit_cube_intrinsic_volumes(self, unit_cube):
        assert intrinsic_volumes(unit_cube) == pytest.approx([1.0, 3.0, 3.0, 1.0], rel=1e-10)

    def test_box_intrinsic_volumes(self):
        a, b, c = 0.5, 1.5, 2.0
        values = intrinsic_volumes(box([0, 0, 0], [a, b, c]))
        assert values == pytest.approx([1.0, a + b + c, a * b + b * c + c * a, a * b * c], rel=1e-10)

    def test_segment_length(self):
        seg = segment([0, 0, 0], [2, 0, 0])
        assert local_tensor(seg, LocalTensorSpec(k=1)).tensor.coefficients[0] == pytest.approx(2.0)

    def test_segment_second_moment(self):
        L = 2.0
        value = global_tensor(segment([0, 0, 0], [L, 0, 0]), 1, 0, 2)
        expected = (metric_tensor(3) - vector_power(E1, 2)) * (L / (4 * math.pi))
        assert value.allclose(expected, atol=1e-12)

    def test_cube_tensors(self, unit_cube):
        assert global_tensor(unit_cube, 1, 0, 2).allclose(metric_tensor(3) / (2 * math.pi), atol=1e-12)
        generalized = local_tensor(unit_cube, LocalTensorSpec(k=1, j=1)).tensor
        assert generalized.allclose(metric_tensor(3), atol=1e-12)

    def test_moment_tensor(self, unit_cube):
        assert moment_tensor(unit_cube, 0).coefficients[0] == pytest.approx(1.0)
        assert moment_tensor(unit_cube, 1).coefficients.tolist() == pytest.approx([0.5, 0.5, 0.5])
        assert global_tensor(unit_cube, 3, 1, 0).allclose(moment_tensor(unit_cube, 1))

    def test_euler_characteristic(self, rng):
        P = random_polytope(3, 10, rng)
        assert local_tensor(P, LocalTensorSpec(k=0)).tensor.coefficients[0] == pytest.approx(1.0, rel=1e-10)

    def test_support_measures(self, unit_cube):
        assert support_measure_eval(unit_cube, 1) == pytest.approx(3.0)
        # Theta_2 of a polytope in R^3 is its surface area
        assert theta_measure(unit_cube, 2) == pytest.approx(6.0)
        assert curvature_weight(unit_cube, 1) == pytest.approx(12 * math.pi / 2)

    def test_geodesic_spheres_approach_the_ball(self):
        target = metric_tensor(3) * (4.0 / 3.0)
        errors = [
            (local_tensor(geodesic_sphere(1.0, level), LocalTensorSpec(k=1, j=1)).tensor - target).max_abs()
            for level in range(3)
        ]
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] < 1e-2


class TestLocalization:
    def test_box_localizes_faces(self, unit_cube):
        half = ProductIndicator(box([-1, -1, -1], [0.5, 2, 2]), None)
        value = local_tensor(unit_cube, LocalTensorSpec(k=2), half).tensor.coefficients[0]
        # facets: x=0 fully, four side facets halved
        assert value == pytest.approx(0.5 * (1.0 + 4 * 0.5))

    def test_cap_localizes_normals(self, unit_cube):
        cap = ProductIndicator(None, SphericalRegion.cap([1, 0, 0], 0.5))
        value = local_tensor(unit_cube, LocalTensorSpec(k=2), cap).tensor.coefficients[0]
        assert value == pytest.approx(0.5)

    def test_weight(self, unit_cube):
        f = CapPolynomial(E1, None, (2.0,))
        value = local_tensor(unit_cube, LocalTensorSpec(k=1), f).tensor.coefficients[0]
        assert value == pytest.approx(6.0)


class TestCovariance:
    def test_homogeneity(self, rng):
        P = random_polytope(3, 8, rng)
        eta = ProductIndicator(box([-0.5, -0.5, -0.5], [0.4, 0.6, 0.5]), SphericalRegion.cap([0.2, 0.1, 1.0], 0.8))
        spec = LocalTensorSpec(k=1, r=1, s=1)
        base = local_tensor(P, spec, eta).tensor
        scaled = local_tensor(scale(P, 1.7), spec, scale_test_function(eta, 1.7)).tensor
        assert scaled.allclose(base * 1.7 ** spec.degree, atol=1e-9)

    def test_rotation(self, rng):
        P = random_polytope(3, 8, rng)
        f = CapPolynomial(np.array([0.0, 0.6, 0.8]), None, (1.0, 0.5, 0.25))
        R = Rotation.random(3, rng)
        spec = LocalTensorSpec(k=1, r=1, s=1, j=1)
        moved = local_tensor(transform(P, R), spec, rotate_test_function(f, R)).tensor
        assert moved.allclose(rotate(local_tensor(P, spec, f).tensor, R), atol=1e-7)

    def test_translation(self, rng):
        P = random_polytope(3, 8, rng)
        eta = ProductIndicator(box([-0.5, -0.5, -0.5], [0.4, 0.6, 0.5]), None)
        defect = translation_defect(P, LocalTensorSpec(k=1, r=2, s=1), eta, [0.3, -0.2, 0.5])
        assert defect.max_abs() < 1e-9

    @patch("src.valuations.logger")
    def test_translation_expand_checks_the_shift(self, mock_logger, unit_cube):
        spec = LocalTensorSpec(k=1, r=1)
        parts = translation_expand(unit_cube, spec, Full(), [0.2, 0.0, -0.4])
        assert [part.rank for part in parts] == [1, 0]
        assert parts[1].coefficients[0] == pytest.approx(3.0)
        assert parts[0].coefficients.tolist() == pytest.approx([1.5, 1.5, 1.5])
        mock_logger.warning.assert_not_called()

        with patch("src.valuations.translate", side_effect=lambda P, t: P):
            translation_expand(unit_cube, spec, Full(), [0.2, 0.0, -0.4])
        mock_logger.warning.assert_called_once()
        assert "phi_1^{1,0,0}" in mock_logger.warning.call_args.args[0]


class TestTopReduction:
    def test_coefficients(self):
        assert reduce_phi_top(0, 0, 0) == [(1.0, 0, 0)]
        terms = reduce_phi_top(0, 0, 1)
        assert [t[1:] for t in terms] == [(1, 0), (0, 2)]
        # 2! omega_3 / omega_1 = 2 * 4 pi / 2
        assert terms[1][0] == pytest.approx(-4 * math.pi)

    @pytest.mark.parametrize("r,s,j", [(0, 0, 1), (1, 1, 1), (0, 2, 2)])
    def test_identity(self, rng, r, s, j):
        P = random_polytope(3, 8, rng)
        direct = local_tensor(P, LocalTensorSpec(k=2, r=r, s=s, j=j)).tensor
        assert direct.allclose(reduced_top_tensor(P, r, s, j), atol=1e-10 * max(1.0, direct.max_abs()))


class TestSteiner:
    @pytest.mark.slow
    def test_global_parallel_volume(self, unit_cube):
        report = steiner_moment_check(unit_cube, 0.3, 0, samples=400_000, seed=5)
        assert report.passed

    @pytest.mark.slow
    def test_local_parallel_volume(self, unit_cube):
        eta = ProductIndicator(box([-1, -1, -1], [0.6, 2, 2]), SphericalRegion.cap([1.0, 0.3, 0.2], 1.2))
        report = local_steiner_check(unit_cube, 0.3, eta, samples=400_000, seed=6)
        assert report.passed

    def test_rejects_nonpositive_distance(self, unit_cube):
        with pytest.raises(ValueError):
            steiner_moment_check(unit_cube, 0.0)
