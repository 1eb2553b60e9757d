import numpy as np
import pytest

from oracle_raycast import nonsilhouette_mask, visible_points
from viewsynth import flowmaps as fm
from viewsynth.errors import ConsistencyError, ShapeError
from viewsynth.geometry import Mesh, make_camera, make_procedural_object
from viewsynth.rasterize import rasterize

RADIUS = 2.5
DEPTH_TOL = 1e-3 * RADIUS


def _homogeneous_oracle(x, cam, theta):
    """Independent 4x4 matrix pipeline: K [I|0] V Rot(-theta)."""
    a = np.deg2rad(-theta)
    rot = np.eye(4)
    rot[:3, :3] = np.array([
        [np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]
    ])
    cam_to_world = np.eye(4)
    cam_to_world[:3, :3] = cam.world_to_cam.T  # columns: right, down, forward
    cam_to_world[:3, 3] = cam.center
    view = np.linalg.inv(cam_to_world)
    k = np.array([
        [cam.focal, 0, (cam.size - 1) / 2, 0],
        [0, cam.focal, (cam.size - 1) / 2, 0],
        [0, 0, 1, 0],
    ])
    xh = np.append(np.asarray(x, float), 1.0)
    proj = k @ view @ rot @ xh
    return proj[1] / proj[2], proj[0] / proj[2], proj[2]  # (h, w, depth)


def _one_sided_square():
    h = 0.5
    verts = np.array([[0, -h, -h], [0, -h, h], [0, h, h], [0, h, -h]], float)
    return Mesh(
        vertices=verts, triangles=np.array([[0, 1, 2], [0, 2, 3]], np.int32),
        normals=np.tile([1.0, 0, 0], (4, 1)),
        colors=np.array([[0.7, 0.3, 0.3], [0.3, 0.7, 0.3]]),
    )


class TestProject:
    def test_origin_any_theta_hits_center(self):
        cam = make_camera(77, 10, RADIUS, 64)
        for theta in (0, 45, 180, 300):
            h, w, d = fm.project(np.zeros(3), cam, theta)
            assert np.allclose([h, w], [31.5, 31.5], atol=1e-9)
            assert np.isclose(d, RADIUS)

    def test_y_axis_points_fixed_under_theta(self):
        cam = make_camera(25, 15, RADIUS, 64)
        p = np.array([0.0, 0.6, 0.0])
        ref = fm.project(p, cam, 0)
        for theta in (30, 140, 270):
            got = fm.project(p, cam, theta)
            assert np.allclose(got, ref, atol=1e-12)

    def test_matches_homogeneous_matrix_oracle(self):
        cam = make_camera(0, 0, RADIUS, 64)
        x = np.array([0.5, 0.0, 0.0])
        h, w, d = fm.project(x, cam, 90)
        oh, ow, od = _homogeneous_oracle(x, cam, 90)
        assert abs(h - oh) < 1e-6 and abs(w - ow) < 1e-6 and abs(d - od) < 1e-9

    def test_oracle_agreement_random(self, rng):
        cam = make_camera(33, 12, RADIUS, 64)
        for _ in range(20):
            x = rng.uniform(-0.9, 0.9, 3)
            theta = rng.uniform(0, 360)
            got = np.array(fm.project(x, cam, theta))
            want = np.array(_homogeneous_oracle(x, cam, theta))
            assert np.abs(got - want).max() < 1e-6


class TestVisibility:
    def test_theta_zero_equals_fg_exactly(self):
        for kind, seed in (("car-like", 7), ("chair-like", 2), ("block-stack", 5)):
            mesh = make_procedural_object(seed, kind)
            cam = make_camera(80, 10, RADIUS, 64)
            gb = rasterize(mesh, cam)
            assert np.array_equal(fm.visibility_map(gb, gb, 0, cam), gb.fg)

    def test_one_sided_square_theta_180(self):
        mesh = _one_sided_square()
        cam_s = make_camera(0, 0, RADIUS, 64)
        cam_t = make_camera(180, 0, RADIUS, 64)
        src, tgt = rasterize(mesh, cam_s), rasterize(mesh, cam_t)
        assert tgt.fg.sum() > 0  # two-sided rasterization sees the back
        assert fm.visibility_map(src, tgt, 180, cam_t).sum() == 0

    def test_matches_raycast_oracle(self, block_mesh):
        theta = 90
        cam_s = make_camera(20, 10, RADIUS, 64)
        cam_t = make_camera(20 + theta, 10, RADIUS, 64)
        src, tgt = rasterize(block_mesh, cam_s), rasterize(block_mesh, cam_t)
        m = fm.visibility_map(src, tgt, theta, cam_t)
        ok = nonsilhouette_mask(src, tgt, cam_s, RADIUS)
        pts = tgt.objcoord[ok].astype(np.float64)
        oracle = visible_points(block_mesh, cam_s, pts, DEPTH_TOL)
        assert np.mean(m[ok].astype(bool) == oracle) == 1.0

    def test_size_mismatch_raises(self, car_mesh):
        cam64 = make_camera(0, 0, RADIUS, 64)
        cam32 = make_camera(40, 0, RADIUS, 32)
        a, b = rasterize(car_mesh, cam64), rasterize(car_mesh, cam32)
        with pytest.raises(ShapeError):
            fm.visibility_map(a, b, 40, cam32)


class TestSymmetryVisibility:
    def test_theta_zero_is_fg(self, rendered_pair):
        src, tgt, theta, cam = rendered_pair
        assert np.array_equal(fm.symmetry_visibility_map(tgt, tgt, 0, cam), tgt.fg)

    def test_contains_plain_visibility(self, car_mesh):
        for theta in (40, 120, 200, 320):
            cam_s = make_camera(60, 10, RADIUS, 64)
            cam_t = make_camera(60 + theta, 10, RADIUS, 64)
            src, tgt = rasterize(car_mesh, cam_s), rasterize(car_mesh, cam_t)
            mv = fm.visibility_map(src, tgt, theta, cam_t)
            ms = fm.symmetry_visibility_map(src, tgt, theta, cam_t)
            assert np.all(ms >= mv)

    def test_opposite_side_assumed_visible_theta_200(self, car_mesh):
        theta = 200
        cam_s = make_camera(20, 0, RADIUS, 64)
        cam_t = make_camera(20 + theta, 0, RADIUS, 64)
        src, tgt = rasterize(car_mesh, cam_s), rasterize(car_mesh, cam_t)
        mv = fm.visibility_map(src, tgt, theta, cam_t)
        ms = fm.symmetry_visibility_map(src, tgt, theta, cam_t)
        assert ms.sum() > mv.sum()
        # mirrored ray-casting oracle: z-flip the points, test in source view
        ok = nonsilhouette_mask(src, tgt, cam_s, RADIUS)
        pts = tgt.objcoord[ok].astype(np.float64)
        mirrored = visible_points(car_mesh, cam_s, pts * [1, 1, -1], DEPTH_TOL)
        plain = visible_points(car_mesh, cam_s, pts, DEPTH_TOL)
        oracle = mirrored | plain
        agree = np.mean(ms[ok].astype(bool) == oracle)
        assert agree >= 0.995

    def test_zflip_involution(self, car_mesh):
        """Mirroring a z-symmetric mesh leaves the map unchanged."""
        mirrored = Mesh(
            vertices=car_mesh.vertices * [1, 1, -1],
            triangles=car_mesh.triangles[:, ::-1].copy(),
            normals=car_mesh.normals * [1, 1, -1],
            colors=car_mesh.colors,
        )
        theta = 120
        cam_s = make_camera(40, 10, RADIUS, 64)
        cam_t = make_camera(40 + theta, 10, RADIUS, 64)
        a = fm.symmetry_visibility_map(rasterize(car_mesh, cam_s),
                                       rasterize(car_mesh, cam_t), theta, cam_t)
        b = fm.symmetry_visibility_map(rasterize(mirrored, cam_s),
                                       rasterize(mirrored, cam_t), theta, cam_t)
        assert np.mean(a == b) > 0.999


class TestBackgroundMask:
    def test_all_background(self):
        z = np.zeros((8, 8), np.uint8)
        assert np.all(fm.background_mask(z, z) == 1)

    def test_full_source_foreground(self):
        ones = np.ones((8, 8), np.uint8)
        z = np.zeros((8, 8), np.uint8)
        assert np.all(fm.background_mask(ones, z) == 0)

    def test_disjoint_rectangles_complement_of_union(self):
        fg_s = np.zeros((16, 16), np.uint8)
        fg_t = np.zeros((16, 16), np.uint8)
        fg_s[2:6, 2:6] = 1
        fg_t[9:14, 9:14] = 1
        got = fm.background_mask(fg_s, fg_t)
        assert np.array_equal(got, 1 - ((fg_s | fg_t)))


class TestGtFlow:
    def test_identity_at_theta_zero(self, rendered_pair):
        _, tgt, _, cam = rendered_pair
        flow = fm.gt_flow(tgt, tgt, 0, cam)
        ii, jj = np.mgrid[0:64, 0:64]
        v = flow.valid.astype(bool)
        assert np.array_equal(flow.valid, tgt.fg)
        assert np.hypot(flow.fy[v] - ii[v], flow.fx[v] - jj[v]).max() < 0.51

    def test_invalid_pixels_carry_nan(self, rendered_pair):
        src, tgt, theta, cam = rendered_pair
        flow = fm.gt_flow(src, tgt, theta, cam)
        bad = flow.valid == 0
        assert np.isnan(flow.fy[bad]).all() and np.isnan(flow.fx[bad]).all()
        good = flow.valid == 1
        assert np.isfinite(flow.fy[good]).all()

    def test_warp_consistency(self, rendered_pair):
        src, tgt, theta, cam = rendered_pair
        flow = fm.gt_flow(src, tgt, theta, cam)
        warped = fm.warp_image(src.rgb.astype(np.float64), flow)
        target = fm.mat_visibility(tgt.rgb.astype(np.float64), flow.valid)
        assert np.abs(warped - target).mean() < 0.02

    def test_roundtrip_composition(self, car_mesh):
        theta = 80
        cam_s = make_camera(30, 10, RADIUS, 64)
        cam_t = make_camera(30 + theta, 10, RADIUS, 64)
        src, tgt = rasterize(car_mesh, cam_s), rasterize(car_mesh, cam_t)
        fwd = fm.gt_flow(src, tgt, theta, cam_t)        # target -> source coords
        bwd = fm.gt_flow(tgt, src, -theta, cam_s)        # source -> target coords
        # follow fwd then sample bwd's coordinate maps at those source coords
        v = fwd.valid.astype(bool)
        ys, xs = fwd.fy[v], fwd.fx[v]
        by = fm.warp_image(np.nan_to_num(bwd.fy), _as_flow(ys, xs))
        bx = fm.warp_image(np.nan_to_num(bwd.fx), _as_flow(ys, xs))
        ii, jj = np.mgrid[0:64, 0:64]
        # mutually visible: the source pixel we landed on is valid too
        src_valid = fm.warp_image(bwd.valid.astype(np.float64), _as_flow(ys, xs))
        mutual = src_valid > 0.999
        err = np.hypot(by[mutual] - ii[v][mutual[:, 0], 0] if False else 0, 0)
        # compute straightforwardly instead
        got_y, got_x = by[:, 0], bx[:, 0]
        want_y, want_x = ii[v], jj[v]
        m = mutual[:, 0]
        err = np.hypot(got_y[m] - want_y[m], got_x[m] - want_x[m])
        assert m.sum() > 100
        assert np.quantile(err, 0.99) < 0.6


def _as_flow(ys, xs):
    """Wrap coordinate lists as a (N,1)-shaped FlowField for warp_image."""
    n = len(ys)
    return fm.FlowField(
        fy=ys.reshape(n, 1).astype(np.float32),
        fx=xs.reshape(n, 1).astype(np.float32),
        valid=np.ones((n, 1), np.uint8),
    )


class TestCompositing:
    def test_mat_visibility_identity_and_zero(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        assert np.array_equal(fm.mat_visibility(img, np.ones((8, 8))), img)
        assert np.array_equal(fm.mat_visibility(img, np.zeros((8, 8))),
                              np.zeros_like(img))

    def test_mat_visibility_checkerboard(self, rng):
        img = rng.uniform(0.1, 1, (8, 8, 3))
        m = np.indices((8, 8)).sum(axis=0) % 2
        out = fm.mat_visibility(img, m)
        assert np.array_equal(out[m == 0], np.zeros_like(out[m == 0]))
        assert np.array_equal(out[m == 1], img[m == 1])

    def test_mat_visibility_size_mismatch(self, rng):
        with pytest.raises(ShapeError):
            fm.mat_visibility(rng.uniform(size=(8, 8, 3)), np.ones((4, 4)))

    def test_composite_background_only_returns_source(self, rng):
        i_s = rng.uniform(0, 1, (8, 8, 3))
        i_afn = rng.uniform(0, 1, (8, 8, 3))
        out = fm.composite_doafn(i_s, i_afn, np.ones((8, 8)), np.zeros((8, 8)))
        assert np.allclose(out, i_s)

    def test_composite_visibility_only_returns_warp(self, rng):
        i_s = rng.uniform(0, 1, (8, 8, 3))
        i_afn = rng.uniform(0, 1, (8, 8, 3))
        out = fm.composite_doafn(i_s, i_afn, np.zeros((8, 8)), np.ones((8, 8)))
        assert np.allclose(out, i_afn)

    def test_composite_holes_are_exact_zero(self, rng):
        i_s = rng.uniform(0.2, 1, (8, 8, 3))
        i_afn = rng.uniform(0.2, 1, (8, 8, 3))
        m_bg = np.zeros((8, 8))
        m_sv = np.zeros((8, 8))
        m_bg[:2] = 1
        m_sv[6:] = 1
        out = fm.composite_doafn(i_s, i_afn, m_bg, m_sv)
        holes = (m_bg == 0) & (m_sv == 0)
        assert np.all(out[holes] == 0.0)

    def test_composite_overlap_rejected(self, rng):
        i = rng.uniform(size=(8, 8, 3))
        m = np.ones((8, 8))
        with pytest.raises(ConsistencyError, match="overlap"):
            fm.composite_doafn(i, i, m, m)

    def test_dataset_masks_disjoint_and_hole_stats(self, geo_data):
        for pair in geo_data.pairs[::7]:
            m_bg = geo_data.pair_mask(pair, "m_bg")[0]
            m_sv = geo_data.pair_mask(pair, "m_svis")[0]
            assert np.all(m_bg * m_sv == 0)
            hole = 1.0 - float((m_bg + m_sv).mean())
            assert abs(hole - pair["hole_fraction"]) < 1e-5


class TestDatasetWideGeometry:
    def test_warp_consistency_over_dataset(self, geo_data):
        """Mean masked warp error below 0.02 for every pair in the set."""
        worst = 0.0
        for pair in geo_data.pairs:
            src = geo_data.view_gbuffer(pair["src"])
            tgt = geo_data.view_gbuffer(pair["tgt"])
            cam_t = geo_data.view_camera(pair["tgt"])
            flow = fm.gt_flow(src, tgt, pair["theta"], cam_t)
            warped = fm.warp_image(src.rgb.astype(np.float64), flow)
            target = fm.mat_visibility(tgt.rgb.astype(np.float64), flow.valid)
            worst = max(worst, float(np.abs(warped - target).mean()))
        assert worst < 0.02

    def test_mvis_bounded_by_fg(self, geo_data):
        for pair in geo_data.pairs[::11]:
            tgt = geo_data.view_gbuffer(pair["tgt"])
            m_vis = geo_data.pair_mask(pair, "m_vis")[0]
            assert np.all(m_vis <= tgt.fg)

    def test_bg_mask_clears_either_foreground(self, geo_data):
        for pair in geo_data.pairs[::11]:
            src = geo_data.view_gbuffer(pair["src"])
            tgt = geo_data.view_gbuffer(pair["tgt"])
            m_bg = geo_data.pair_mask(pair, "m_bg")[0]
            union = (src.fg.astype(bool)) | (tgt.fg.astype(bool))
            assert np.all(m_bg[union] == 0)
