import json
import math

import numpy as np
import pytest

from src.errors import (
    BasisError,
    ConfigError,
    EmptyIntersectionError,
    RegimeError,
    UnsupportedError,
    WindowTooSmallError,
)
from src.geometry import (
    Face,
    Halfspace,
    box,
    cap_radius_in_plane,
    complex_circumradius,
    cube,
    cut_lifted,
    face_measure,
    filter_faces,
    geodesic_sphere,
    hull,
    intersect_halfspace,
    lift,
    lift_complex,
    lifted_facet_normal,
    minkowski_sum,
    nearest_point,
    normal_cone_region,
    point,
    polytope_from_file,
    polytope_from_name,
    random_polytope,
    scale,
    section,
    segment,
    simplex,
    support_function,
    translate,
    truncate_and_filter,
)
from src.sphereint import SphericalRegion


@pytest.fixture
def unit_cube():
    return cube(3)


@pytest.fixture
def cap_down():
    # mu = 0.019 gives the threshold 0.981
    return SphericalRegion.cap([0.0, 0.0, -1.0], 0.019)


class TestHull:
    def test_cube_lattice(self, unit_cube):
        assert unit_cube.f_vector() == [8, 12, 6, 1]
        assert unit_cube.volume == pytest.approx(1.0)
        assert unit_cube.euler_characteristic() == 2

    def test_lower_dimensional(self):
        seg = segment([0.0, 0.0, 0.0], [0.0, 3.0, 0.0])
        assert seg.affine_dim == 1
        assert seg.f_vector() == [2, 1]
        assert seg.volume == 0.0
        assert seg.face_list(1)[0].measure == pytest.approx(3.0)
        assert point([1.0, 2.0, 3.0]).f_vector() == [1]

    def test_square_in_space(self):
        square = hull([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [0.5, 0.5, 1.0]])
        assert square.f_vector() == [4, 4, 1]
        assert square.face_list(2)[0].measure == pytest.approx(1.0)

    def test_simplex_volume(self):
        assert simplex([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]).volume == pytest.approx(1.0 / 6.0)

    def test_box_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            box([0.0, 0.0, 0.0], [1.0, -1.0, 1.0])

    def test_facet_normals_support_the_vertices(self):
        P = random_polytope(3, 12, np.random.default_rng(4))
        assert np.all(P.vertices @ P.facet_normals.T <= P.facet_offsets + 1e-9)
        assert P.euler_characteristic() == 2

    def test_maps(self, unit_cube):
        assert translate(unit_cube, [1.0, 0.0, 0.0]).vertices[:, 0].min() == pytest.approx(1.0)
        assert scale(unit_cube, 2.0).volume == pytest.approx(8.0)


class TestSupportAndSums:
    def test_support_function(self, unit_cube):
        values = support_function(unit_cube, [[1, 0, 0], [-1, 0, 0], [1, 1, 1]])
        assert values.tolist() == pytest.approx([1.0, 0.0, 3.0])

    def test_minkowski_sum_with_segment(self, unit_cube):
        total = minkowski_sum(unit_cube, segment([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]))
        assert total.volume == pytest.approx(2.0)
        assert total.f_vector() == [8, 12, 6, 1]


class TestCuts:
    def test_halfspace(self):
        H = Halfspace.from_normal([2.0, 0.0, 0.0], 1.0)
        assert H.offset == pytest.approx(0.5)
        assert H.complement().contains([[1.0, 0.0, 0.0]])[0]
        with pytest.raises(BasisError):
            Halfspace([1.0, 1.0, 0.0], 0.0)

    def test_intersect(self, unit_cube):
        half = intersect_halfspace(unit_cube, Halfspace([1.0, 0.0, 0.0], 0.5))
        assert half.volume == pytest.approx(0.5)
        assert intersect_halfspace(unit_cube, Halfspace([1.0, 0.0, 0.0], 2.0)) is unit_cube
        with pytest.raises(EmptyIntersectionError):
            intersect_halfspace(unit_cube, Halfspace([1.0, 0.0, 0.0], -1.0))

    def test_section(self, unit_cube):
        cut = section(unit_cube, Halfspace([1.0, 0.0, 0.0], 0.5))
        assert cut.affine_dim == 2
        assert cut.face_list(2)[0].measure == pytest.approx(1.0)
        assert section(unit_cube, Halfspace([1.0, 0.0, 0.0], 5.0)) is None


class TestNearestPoint:
    def test_classification(self, unit_cube):
        X = [[2.0, 0.5, 0.5], [2.0, 2.0, 0.5], [0.5, 0.5, 0.5], [2.0, 2.0, 2.0]]
        p, u, dist, face = nearest_point(unit_cube, X)
        assert np.allclose(p[0], [1.0, 0.5, 0.5])
        assert np.allclose(u[0], [1.0, 0.0, 0.0])
        assert dist[1] == pytest.approx(math.sqrt(2.0))
        assert dist[2] == 0.0 and np.allclose(u[2], 0.0)
        assert face[:, 0].tolist() == [2, 1, 3, 0]


class TestFiles:
    def test_load(self, tmp_path):
        path = tmp_path / "tetra.json"
        path.write_text(json.dumps({"dimension": 3, "vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]}))
        assert polytope_from_file(path).volume == pytest.approx(1.0 / 6.0)

    def test_face_lattice_file(self, tmp_path):
        path = tmp_path / "square.json"
        path.write_text(json.dumps({
            "dimension": 2,
            "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]],
            "faces": {"0": [[0], [1], [2], [3]], "1": [[0, 1], [1, 2], [2, 3], [3, 0]]},
        }))
        P = polytope_from_file(path)
        assert P.volume == pytest.approx(1.0)
        assert all(len(face.normal_generators) == 2 for face in P.face_list(0))

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"dimension": 3, "vertices": [[0, 0], [1, 0, 0]]}))
        with pytest.raises(ConfigError):
            polytope_from_file(path)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            polytope_from_file(tmp_path / "nothing.json")


class TestBuiltinBodies:
    def test_names(self):
        assert polytope_from_name("cube").volume == pytest.approx(1.0)
        assert polytope_from_name("box:a=1,b=2,c=0.5").volume == pytest.approx(1.0)
        assert polytope_from_name("segment:L=2").face_list(1)[0].measure == pytest.approx(2.0)
        assert polytope_from_name("simplex").volume == pytest.approx(1.0 / 6.0)
        assert polytope_from_name("point").f_vector() == [1]

    def test_unknown(self):
        with pytest.raises(ConfigError):
            polytope_from_name("pyramid")
        with pytest.raises(ConfigError):
            polytope_from_name("cube:q=1")
        with pytest.raises(ConfigError):
            polytope_from_name("segment:L=two")

    def test_geodesic_sphere(self):
        P = geodesic_sphere(2.0, 1)
        assert len(P.vertices) == 42
        assert np.allclose(np.linalg.norm(P.vertices, axis=1), 2.0)
        assert P.volume < 4.0 / 3.0 * math.pi * 8.0


class TestLiftedComplex:
    def test_lift(self):
        assert lift([1.0, 2.0]).tolist() == [[1.0, 2.0, 5.0]]
        assert np.allclose(lifted_facet_normal([0.0, 0.0]), [[0.0, 0.0, -1.0]])

    def test_circumradius(self):
        assert complex_circumradius(3, 0.1, "cube") == pytest.approx(0.1 * math.sqrt(2.0))
        assert complex_circumradius(4, 0.1, "cube") == pytest.approx(0.1 * math.sqrt(3.0))

    def test_cap_radius(self):
        assert cap_radius_in_plane(0.0) == math.inf
        assert cap_radius_in_plane(1.0 / math.sqrt(2.0)) == pytest.approx(0.5)

    def test_analytic_measures(self):
        lifted = lift_complex(3, 0.05, "cube", window_radius=0.3)
        for face in lifted.face_list(2)[:10]:
            rebuilt = Face(2, face.vertex_ids, face.points)
            assert face.measure == pytest.approx(rebuilt.measure, rel=1e-10)

    def test_cell_normals(self):
        lifted = lift_complex(3, 0.05, "triangle", window_radius=0.2, d=3)
        for face in lifted.face_list(2)[:10]:
            assert np.allclose(face.normal_generators, lifted_facet_normal(face.cell_centres))

    def test_requested_dimensions(self):
        lifted = lift_complex(3, 0.05, "cube", window_radius=0.2, dims=[1])
        assert sorted(lifted.faces) == [1]
        assert lifted.partial

    def test_triangle_needs_d(self):
        with pytest.raises(UnsupportedError):
            lift_complex(3, 0.1, "triangle")

    def test_truncation(self, cap_down):
        lifted = lift_complex(3, 0.01, "cube", window_radius=0.2)
        P = truncate_and_filter(lifted, 0.05, cap_down)
        assert len(P.face_list(2)) > 0
        for face in P.face_list(2):
            assert float(face.normal_generators[0] @ np.array([0.0, 0.0, -1.0])) > 0.981
            assert face.points[:, -1].max() < 0.05
        assert len(filter_faces(P, 2, cap_down)) == len(P.face_list(2))

    def test_window_too_small(self, cap_down):
        lifted = lift_complex(3, 0.2, "cube", window_radius=0.5)
        with pytest.raises(WindowTooSmallError):
            truncate_and_filter(lifted, 0.5, cap_down)

    def test_coarse_lattice(self, cap_down):
        lifted = lift_complex(3, 0.2, "cube", window_radius=2.0)
        with pytest.raises(RegimeError):
            truncate_and_filter(lifted, 0.01, cap_down)

    def test_cut_lifted(self):
        P = cut_lifted(0.05, 0.05)
        assert P.is_full_dimensional
        assert P.vertices[:, -1].max() <= 0.05 + 1e-12
        assert P.contains([[0.0, 0.0, 0.01]])[0]
        with pytest.raises(UnsupportedError):
            cut_lifted(0.05, 0.05, n=4)


class TestFaces:
    def test_measures(self, unit_cube):
        assert face_measure(unit_cube.face_list(2)[0]) == pytest.approx(1.0)
        assert face_measure(unit_cube.face_list(1)[0]) == pytest.approx(1.0)
        triangle = hull([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, math.sqrt(3.0), 0.0]])
        assert face_measure(triangle.face_list(2)[0]) == pytest.approx(math.sqrt(3.0))

    def test_facet_cone(self, unit_cube):
        top = next(F for F in unit_cube.face_list(2) if np.allclose(F.normal_generators[0], [0.0, 0.0, 1.0]))
        region = normal_cone_region(unit_cube, top)
        assert region.kind == "point"
        assert np.allclose(region.points[0], [0.0, 0.0, 1.0])

    def test_edge_cone(self, unit_cube):
        edge = next(F for F in unit_cube.face_list(1) if np.allclose(F.points[:, :2], 1.0))
        region = normal_cone_region(unit_cube, edge)
        assert region.kind == "arc"
        assert region.arc_angles.sum() == pytest.approx(math.pi / 2)

    def test_segment_cone(self):
        seg = segment([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        region = normal_cone_region(seg, seg.face_list(1)[0])
        assert region.is_full_circle
