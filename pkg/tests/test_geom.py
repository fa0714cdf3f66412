import math

import numpy as np
import pytest

from planardyn import geom
from planardyn.geom import (
    GeomError,
    Mesh,
    ObjectState,
    QUAT_IDENTITY,
    compose_rotation,
    mass_properties,
    normalize_to_unit_cube,
    quat_exp,
    quat_log,
    quat_multiply,
    quat_normalize,
    read_point_cloud,
    relative_rotvec,
    sample_surface,
    up_axis_tilt,
    write_point_cloud,
)
from planardyn.shapegen import make_box


def random_quats(n, seed=0):
    rng = np.random.default_rng(seed)
    return [quat_normalize(q) for q in rng.normal(size=(n, 4))]


class TestQuaternions:
    def test_identity_compose_zero(self):
        q = compose_rotation(QUAT_IDENTITY, np.zeros(3))
        assert np.allclose(q, QUAT_IDENTITY)

    def test_half_angle_z90(self):
        q = compose_rotation(QUAT_IDENTITY, [0, 0, math.pi / 2])
        assert np.allclose(q, [0.70710678118654757, 0, 0, 0.70710678118654757], atol=1e-9)

    def test_compose_then_invert_returns_start(self):
        rng = np.random.default_rng(3)
        for q in random_quats(20, seed=5):
            d = rng.normal(size=3)
            back = compose_rotation(compose_rotation(q, d), -d)
            assert np.allclose(back, q, atol=1e-9)

    def test_compose_matches_quaternion_product(self):
        # associativity with the quaternion product on random inputs
        rng = np.random.default_rng(8)
        for q in random_quats(20, seed=9):
            d = rng.normal(size=3) * 0.8
            expected = quat_normalize(quat_multiply(quat_exp(d), q))
            assert np.allclose(compose_rotation(q, d), expected, atol=1e-9)

    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.normal(size=3)
            v = v / np.linalg.norm(v) * rng.uniform(0, math.pi - 1e-6)
            assert np.allclose(quat_log(quat_exp(v)), v, atol=1e-9)

    def test_log_zero_rotation_is_zero_vector(self):
        assert np.array_equal(quat_log(QUAT_IDENTITY), np.zeros(3))

    def test_canonical_hemisphere(self):
        for q in random_quats(20, seed=13):
            assert q[0] >= 0.0
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12

    def test_relative_rotvec_recovers_delta(self):
        rng = np.random.default_rng(17)
        for q in random_quats(20, seed=19):
            d = rng.normal(size=3)
            d = d / np.linalg.norm(d) * rng.uniform(0.01, 3.0)
            q2 = compose_rotation(q, d)
            assert np.allclose(relative_rotvec(q, q2), d, atol=1e-9)


class TestUpAxisTilt:
    def test_identity_zero(self):
        assert up_axis_tilt(QUAT_IDENTITY) == 0.0

    def test_x_rotation_30deg(self):
        q = quat_exp([math.pi / 6, 0, 0])
        assert abs(up_axis_tilt(q) - 30.0) < 1e-9

    def test_spin_about_up_axis_keeps_zero(self):
        q = quat_exp([0, 0, math.pi / 2])
        assert abs(up_axis_tilt(q)) < 1e-9

    def test_tilt_equals_angle_for_x_rotations(self):
        for theta in np.linspace(-math.pi, math.pi, 17):
            q = compose_rotation(QUAT_IDENTITY, [theta, 0, 0])
            assert abs(up_axis_tilt(q) - abs(math.degrees(theta))) < 1e-6


class TestNormalize:
    def test_2x2x2_box_scales_to_half(self):
        out, scale = normalize_to_unit_cube(make_box(2, 2, 2))
        ext = out.vertices.max(axis=0) - out.vertices.min(axis=0)
        assert scale == pytest.approx(0.5)
        assert np.allclose(ext, [1, 1, 1], atol=1e-12)

    def test_unit_box_unchanged(self):
        out, scale = normalize_to_unit_cube(make_box(1, 1, 1))
        assert scale == pytest.approx(1.0)
        assert np.allclose(out.vertices, make_box(1, 1, 1).vertices, atol=1e-12)

    def test_longest_side_maps_to_one(self):
        out, scale = normalize_to_unit_cube(make_box(0.2, 0.4, 1.6))
        ext = out.vertices.max(axis=0) - out.vertices.min(axis=0)
        assert scale == pytest.approx(0.625)
        assert np.allclose(ext, [0.125, 0.25, 1.0], atol=1e-12)
        assert np.allclose(out.vertices.mean(axis=0), 0.0, atol=1e-12)

    def test_degenerate_mesh_rejected(self):
        with pytest.raises(GeomError):
            normalize_to_unit_cube(Mesh(np.zeros((3, 3)), [[0, 1, 2]]))


class TestSampleSurface:
    def test_points_on_cube_surface(self):
        pc = sample_surface(make_box(1, 1, 1), 1024, seed=7)
        assert len(pc) == 1024
        assert np.allclose(np.abs(pc.points).max(axis=1), 0.5, atol=1e-9)

    def test_face_fractions_area_weighted(self):
        pc = sample_surface(make_box(1, 1, 1), 6000, seed=1)
        p = pc.points
        fractions = []
        for axis in range(3):
            for side in (-0.5, 0.5):
                on = np.isclose(p[:, axis], side, atol=1e-12)
                fractions.append(on.mean())
        assert np.allclose(fractions, 1 / 6, atol=0.02)

    def test_deterministic(self):
        m = make_box(1, 2, 3)
        a = sample_surface(m, 256, seed=42)
        b = sample_surface(m, 256, seed=42)
        assert np.array_equal(a.points, b.points)

    def test_per_triangle_counts_proportional_to_area(self):
        # disjoint planes: area 2.0 at z=0, area 0.5 at z=1 -> 80/20 split
        mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 4, 0],
                              [0, 0, 1], [1, 0, 1], [0, 1, 1]]),
                    [[0, 1, 2], [3, 4, 5]])
        pc = sample_surface(mesh, 8000, seed=3)
        frac_small = np.mean(pc.points[:, 2] > 0.5)
        assert frac_small == pytest.approx(0.2, abs=0.02)


class TestMassProperties:
    def test_unit_cube_inertia(self):
        mp = mass_properties(make_box(1, 1, 1), density=1.0)
        assert mp.volume == pytest.approx(1.0, abs=1e-12)
        assert mp.mass == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(mp.center_of_mass, 0.0, atol=1e-12)
        assert np.allclose(mp.inertia_body, np.eye(3) / 6.0, atol=1e-9)

    def test_box_closed_form(self):
        mp = mass_properties(make_box(0.5, 1.0, 1.5), density=1.0)
        assert mp.mass == pytest.approx(0.75, abs=1e-12)
        assert mp.inertia_body[0, 0] == pytest.approx((0.75 / 12) * (1.0 ** 2 + 1.5 ** 2), abs=1e-9)
        assert mp.inertia_body[1, 1] == pytest.approx((0.75 / 12) * (0.5 ** 2 + 1.5 ** 2), abs=1e-9)
        assert mp.inertia_body[2, 2] == pytest.approx((0.75 / 12) * (0.5 ** 2 + 1.0 ** 2), abs=1e-9)

    def test_translation_moves_com_only(self):
        base = make_box(1, 1, 1)
        moved = base.transformed(offset=[1, 2, 3])
        a = mass_properties(base, 2.0)
        b = mass_properties(moved, 2.0)
        assert b.mass == pytest.approx(a.mass, abs=1e-12)
        assert np.allclose(b.center_of_mass, [1, 2, 3], atol=1e-9)
        assert np.allclose(b.inertia_body, a.inertia_body, atol=1e-9)

    def test_triangle_permutation_exact(self):
        mesh = make_box(0.3, 0.9, 1.2).transformed(offset=[0.2, -0.1, 0.4])
        rng = np.random.default_rng(5)
        perm = rng.permutation(len(mesh.triangles))
        shuffled = Mesh(mesh.vertices, mesh.triangles[perm])
        a = mass_properties(mesh, 700.0)
        b = mass_properties(shuffled, 700.0)
        assert a.mass == b.mass
        assert np.array_equal(a.center_of_mass, b.center_of_mass)
        assert np.array_equal(a.inertia_body, b.inertia_body)

    def test_open_mesh_rejected(self):
        open_mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]]), [[0, 1, 2]])
        assert not open_mesh.closed
        with pytest.raises(GeomError):
            mass_properties(open_mesh, 1.0)


class TestObjectState:
    def test_non_finite_rejected(self):
        with pytest.raises(GeomError):
            ObjectState([np.nan, 0, 0], QUAT_IDENTITY, np.zeros(3), np.zeros(3))

    def test_orientation_normalized(self):
        st = ObjectState(np.zeros(3), [2, 0, 0, 0], np.zeros(3), np.zeros(3))
        assert np.allclose(st.orientation, QUAT_IDENTITY)

    def test_immutable_arrays(self):
        st = ObjectState(np.zeros(3), QUAT_IDENTITY, np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            st.position[0] = 1.0


class TestPointCloudIO:
    def test_round_trip_bit_exact(self, tmp_path):
        pc = sample_surface(make_box(1, 1, 1), 100, seed=0)
        path = tmp_path / "c.pts"
        write_point_cloud(pc, path)
        back = read_point_cloud(path)
        assert np.array_equal(pc.points, back.points)

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "bad.pts"
        path.write_text("1.0 2.0\n")
        with pytest.raises(GeomError):
            read_point_cloud(path)
