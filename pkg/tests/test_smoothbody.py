import math

import numpy as np
import pytest

from src.errors import ConfigError, UnsupportedError
from src.smoothbody import (
    SURFACE_NAMES,
    Ball,
    Ellipsoid,
    Paraboloid,
    _j1_matrix,
    phi_general_curvature,
    phi_j1_smooth,
    principal_at,
    richardson_check,
    surface_from_name,
)
from src.sphereint import CapPolynomial, cap_indicator
from src.symtensor import Rotation, metric_tensor, rotate


@pytest.fixture
def cap_down():
    return cap_indicator([0.0, 0.0, -1.0], 0.981)


@pytest.fixture
def upward_weight():
    return CapPolynomial(np.array([0.0, 0.0, 1.0]), None, (1.0, 0.5, 0.25))


class TestSurfaces:
    def test_names(self):
        assert set(SURFACE_NAMES) == {"ball", "paraboloid", "ellipsoid"}
        assert isinstance(surface_from_name("ball:R=2"), Ball)
        assert surface_from_name("paraboloid:h=0.05").h == pytest.approx(0.05)
        assert surface_from_name("ellipsoid:a=1,b=2,c=3").axes.tolist() == [1.0, 2.0, 3.0]

    def test_bad_names(self):
        with pytest.raises(ConfigError):
            surface_from_name("torus:R=1")
        with pytest.raises(ConfigError):
            surface_from_name("ball")
        with pytest.raises(ConfigError):
            surface_from_name("ball:R=big")
        with pytest.raises(ConfigError):
            Paraboloid(-1.0)

    def test_ball_curvatures(self):
        data = principal_at(Ball(2.0), [0.7, 1.9], [0.2, 4.0])
        assert data.k1 == pytest.approx([0.5, 0.5])
        assert data.k2 == pytest.approx([0.5, 0.5])
        assert np.allclose(data.normal, data.point / 2.0)

    def test_paraboloid_curvatures(self):
        data = principal_at(Paraboloid(0.05), [0.1], [0.3])
        assert data.k1[0] == pytest.approx(2.0 / 1.04 ** 1.5)
        assert data.k2[0] == pytest.approx(2.0 / 1.04 ** 0.5)
        assert data.normal[0, 2] < 0


class TestSupport:
    def test_cap_radius(self, cap_down):
        radius = Paraboloid(0.05).support_radius(cap_down)
        assert radius == pytest.approx(0.5 * math.sqrt(0.981 ** -2 - 1.0))

    def test_cap_reaches_rim(self, cap_down):
        with pytest.raises(UnsupportedError):
            Paraboloid(0.005).support_radius(cap_down)

    def test_constant_weight_reaches_rim(self):
        with pytest.raises(UnsupportedError):
            Paraboloid(0.05).support_radius(None)


class TestCurvatureTensors:
    @pytest.mark.parametrize("radius", [0.5, 1.0, 2.0])
    def test_ball(self, radius):
        value = phi_j1_smooth(Ball(radius))
        assert value.converged
        assert value.tensor.allclose(metric_tensor(3) * (4.0 * radius / 3.0), atol=1e-9)

    def test_centred_ball_has_no_first_moment(self):
        value = phi_j1_smooth(Ball(1.0), r=1)
        assert value.tensor.max_abs() < 1e-10

    def test_spheroid_symmetry(self):
        dense = phi_j1_smooth(Ellipsoid(1.0, 1.0, 2.0)).tensor.to_dense()
        assert dense[0, 0] == pytest.approx(dense[1, 1], rel=1e-9)
        assert abs(dense[0, 1]) < 1e-10 and abs(dense[0, 2]) < 1e-10

    def test_paraboloid_cap(self, cap_down):
        dense = phi_j1_smooth(Paraboloid(0.05), f=cap_down).tensor.to_dense()
        assert dense[0, 0] == pytest.approx(dense[1, 1], rel=1e-8)
        assert dense[0, 0] > 0
        # tangent directions near the apex are horizontal
        assert dense[2, 2] < 0.1 * dense[0, 0]

    @pytest.mark.parametrize("surface", [Ball(1.5), Ellipsoid(1.0, 1.5, 2.0)], ids=["ball", "ellipsoid"])
    @pytest.mark.parametrize("r, s", [(0, 0), (0, 1), (1, 0)])
    def test_general_form_matches_j1(self, surface, upward_weight, r, s):
        j1 = phi_j1_smooth(surface, r, s, upward_weight)
        general = phi_general_curvature(surface, 1, r, s, upward_weight)
        assert j1.converged and general.converged
        assert j1.tensor.allclose(general.tensor, atol=1e-9)

    def test_j1_matrix_orientation(self):
        data = principal_at(Ellipsoid(1.0, 2.0, 3.0), [0.4], [1.1])
        matrix = _j1_matrix(data)[0]
        assert matrix @ data.b1[0] == pytest.approx(data.k2[0] * data.b1[0])
        assert matrix @ data.b2[0] == pytest.approx(data.k1[0] * data.b2[0])
        assert matrix @ data.normal[0] == pytest.approx(np.zeros(3), abs=1e-12)

    def test_only_k_one(self):
        with pytest.raises(UnsupportedError):
            phi_general_curvature(Ball(1.0), 2, 0, 0)


class TestRichardson:
    def test_ball_target(self):
        target = metric_tensor(3) * (4.0 / 3.0)
        report = richardson_check(Ball(1.0), target=target)
        assert report.difference < 1e-4
        assert report.target_error < 1e-6

    def test_without_target(self):
        assert richardson_check(Ball(1.0)).target_error is None


class TestRotationCovariance:
    @pytest.mark.parametrize("r", [0, 1])
    def test_spheroid_about_its_axis(self, upward_weight, r):
        value = phi_j1_smooth(Ellipsoid(1.0, 1.0, 2.0), r=r, f=upward_weight).tensor
        assert value.max_abs() > 1e-3
        for angle in (0.7, 2.0):
            assert rotate(value, Rotation.plane(3, 0, 1, angle)).allclose(value, atol=1e-8)

    @pytest.mark.parametrize("r, s", [(0, 0), (1, 0), (1, 1)])
    def test_quarter_turn_swaps_axes(self, upward_weight, r, s):
        before = phi_j1_smooth(Ellipsoid(1.0, 1.5, 2.0), r, s, upward_weight).tensor
        after = phi_j1_smooth(Ellipsoid(1.5, 1.0, 2.0), r, s, upward_weight).tensor
        quarter = Rotation.plane(3, 0, 1, math.pi / 2.0)
        assert rotate(before, quarter).allclose(after, atol=1e-8)
        assert not before.allclose(after, atol=1e-4)
