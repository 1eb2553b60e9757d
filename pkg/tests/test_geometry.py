import numpy as np
import pytest

from viewsynth.errors import FormatError, ParameterError
from viewsynth.geometry import (PROCEDURAL_KINDS, edge_use_counts, load_obj,
                                make_camera, make_procedural_object,
                                rotation_about_y)


class TestMakeCamera:
    def test_axis_convention_and_principal_point(self):
        cam = make_camera(0, 0, 2.5, 64)
        # azimuth 0 puts the camera at distance 2.5 on the +x axis (the
        # mirror-symmetry pairing fixes the axis; "up to axis convention")
        assert np.allclose(cam.center, [2.5, 0, 0], atol=1e-12)
        h, w, d = cam.project(np.zeros(3))
        assert np.allclose([h, w], [31.5, 31.5], atol=1e-9)
        assert np.isclose(d, 2.5)

    def test_54_distinct_cameras(self):
        cams = [make_camera(20 * k, e, 2.5, 64)
                for e in (0, 10, 20) for k in range(18)]
        assert len(cams) == 54
        centers = {tuple(np.round(c.center, 9)) for c in cams}
        assert len(centers) == 54

    def test_azimuth_360_wraps(self):
        a = make_camera(0, 10, 2.5, 64)
        b = make_camera(360, 10, 2.5, 64)
        assert np.abs(a.world_to_cam - b.world_to_cam).max() < 1e-9
        assert np.abs(a.center - b.center).max() < 1e-9

    def test_azimuth_advance_equals_object_rotation(self, car_mesh):
        # advancing the camera by theta == rotating the object by R(-theta)
        theta = 50.0
        cam = make_camera(30, 10, 2.5, 64)
        cam2 = make_camera(30 + theta, 10, 2.5, 64)
        pts = car_mesh.vertices[::37]
        h1, w1, d1 = cam2.project(pts)
        h2, w2, d2 = cam.project(pts @ rotation_about_y(-theta).T)
        assert np.abs(h1 - h2).max() < 1e-9
        assert np.abs(w1 - w2).max() < 1e-9
        assert np.abs(d1 - d2).max() < 1e-12

    def test_behind_camera_flagged(self):
        cam = make_camera(0, 0, 2.5, 64)
        h, w, d = cam.project(np.array([10.0, 0, 0]))  # beyond the camera
        assert d <= 0 and np.isnan(h) and np.isnan(w)

    @pytest.mark.parametrize("bad", [
        dict(azimuth=np.nan), dict(elevation=np.inf), dict(radius=-1.0),
        dict(radius=0.0), dict(size=4), dict(elevation=90),
    ])
    def test_parameter_errors(self, bad):
        kwargs = dict(azimuth=0, elevation=0, radius=2.5, size=64)
        kwargs.update(bad)
        with pytest.raises(ParameterError):
            make_camera(**kwargs)


class TestProceduralObjects:
    def test_deterministic_bitwise(self):
        a = make_procedural_object(7, "car-like")
        b = make_procedural_object(7, "car-like")
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.triangles, b.triangles)
        assert np.array_equal(a.colors, b.colors)

    @pytest.mark.parametrize("kind", PROCEDURAL_KINDS)
    def test_z_mirror_symmetry(self, kind):
        m = make_procedural_object(4, kind)
        flipped = m.vertices * np.array([1.0, 1.0, -1.0])
        a = {tuple(p) for p in np.round(m.vertices, 6)}
        b = {tuple(p) for p in np.round(flipped, 6)}
        assert a == b

    def test_chair_bboxes_inside_unit_cube(self):
        for seed in range(1, 21):
            m = make_procedural_object(seed, "chair-like")
            assert np.abs(m.vertices).max() <= 1.0

    @pytest.mark.parametrize("kind", PROCEDURAL_KINDS)
    def test_watertight(self, kind):
        m = make_procedural_object(9, kind)
        counts = edge_use_counts(m)
        assert all(v == 2 for v in counts.values())

    @pytest.mark.parametrize("kind", PROCEDURAL_KINDS)
    def test_textured_distinct_colors(self, kind):
        m = make_procedural_object(5, kind)
        assert len({tuple(np.round(c, 6)) for c in m.colors}) >= 2

    def test_unit_normals(self):
        m = make_procedural_object(2, "car-like")
        assert np.abs(np.linalg.norm(m.normals, axis=1) - 1).max() < 1e-6

    def test_unknown_kind(self):
        with pytest.raises(ParameterError, match="kind"):
            make_procedural_object(1, "boat-like")


class TestLoadObj:
    def test_single_triangle_normal(self, tmp_path):
        p = tmp_path / "tri.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_obj(p)
        assert len(mesh.triangles) == 1
        # computed normal matches the cross-product direction (+z here)
        assert np.allclose(mesh.normals, [[0, 0, 1]] * 3)

    def test_quad_fan_triangulation(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        mesh = load_obj(p)
        assert len(mesh.triangles) == 2
        assert [tuple(t) for t in mesh.triangles] == [(0, 1, 2), (0, 2, 3)]

    def test_index_out_of_range_names_index(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(FormatError, match="9"):
            load_obj(p)

    def test_malformed_line_names_lineno(self, tmp_path):
        p = tmp_path / "bad2.obj"
        p.write_text("v 0 0 0\nv oops 0 0\n")
        with pytest.raises(FormatError, match=":2"):
            load_obj(p)

    def test_explicit_normals_used(self, tmp_path):
        p = tmp_path / "n.obj"
        p.write_text(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 -1\nf 1//1 2//1 3//1\n"
        )
        mesh = load_obj(p)
        assert np.allclose(mesh.normals, [[0, 0, -1]] * 3)
