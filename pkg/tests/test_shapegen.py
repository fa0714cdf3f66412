import math

import numpy as np
import pytest

from planardyn.geom import GeomError, mass_properties, normalize_to_unit_cube
from planardyn.shapegen import (
    ShapeSpec,
    generate_object,
    make_box,
    make_composite,
    make_cylinder,
    random_scaled,
)


class TestMakeBox:
    def test_unit_cube(self):
        m = make_box(1, 1, 1)
        assert len(m.triangles) == 12
        assert m.closed
        assert mass_properties(m, 1.0).volume == pytest.approx(1.0, abs=1e-12)

    def test_volume_is_product_of_dims(self):
        m = make_box(0.5, 1.0, 1.5)
        assert mass_properties(m, 1.0).volume == pytest.approx(0.75, abs=1e-12)

    def test_unit_cube_already_normalized(self):
        m = make_box(1, 1, 1)
        out, scale = normalize_to_unit_cube(m)
        assert scale == pytest.approx(1.0)
        assert np.allclose(out.vertices, m.vertices, atol=1e-12)

    def test_nonpositive_dim_rejected(self):
        with pytest.raises(GeomError):
            make_box(0.0, 1, 1)


class TestMakeCylinder:
    def test_volume_approaches_closed_form(self):
        m = make_cylinder(0.5, 1.0, segments=256)
        vol = mass_properties(m, 1.0).volume
        assert abs(vol / (math.pi * 0.25) - 1.0) < 1e-3

    def test_bounding_box(self):
        for segs in (8, 32, 256):
            m = make_cylinder(0.5, 1.0, segments=segs)
            ext = m.vertices.max(axis=0) - m.vertices.min(axis=0)
            assert ext[2] == pytest.approx(1.0, abs=1e-12)
            assert ext[0] == pytest.approx(1.0, abs=0.05)  # polygon flat spots

    def test_axial_inertia_near_solid_cylinder(self):
        m = make_cylinder(0.5, 1.0, segments=256)
        mp = mass_properties(m, 1.0)
        expected = 0.5 * mp.mass * 0.25
        assert abs(mp.inertia_body[2, 2] / expected - 1.0) < 5e-3

    def test_too_few_segments_rejected(self):
        with pytest.raises(GeomError):
            make_cylinder(0.5, 1.0, segments=4)

    def test_closed_for_any_segment_count(self):
        for segs in (8, 9, 17, 32):
            assert make_cylinder(0.3, 0.7, segments=segs).closed


class TestMakeComposite:
    def test_valid_and_closed(self):
        for seed in range(8):
            m = make_composite(seed)
            assert m.closed
            assert mass_properties(m, 1000.0).mass > 0

    def test_deterministic(self):
        a, b = make_composite(123), make_composite(123)
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.triangles, b.triangles)

    def test_configuration_variety(self):
        # over 100 seeds the generator table must produce >= 3 distinct
        # configurations (distinguished by mesh size signature)
        sigs = {(len(make_composite(s).vertices), len(make_composite(s).triangles))
                for s in range(100)}
        assert len(sigs) >= 3


class TestRandomScaled:
    def test_output_normalized(self):
        for seed in range(5):
            m = random_scaled(make_box(1, 2, 3), seed)
            ext = m.vertices.max(axis=0) - m.vertices.min(axis=0)
            assert ext.max() == pytest.approx(1.0, abs=1e-9)

    def test_reproducible(self):
        a = random_scaled(make_cylinder(0.5, 1.0, 16), 77)
        b = random_scaled(make_cylinder(0.5, 1.0, 16), 77)
        assert np.array_equal(a.vertices, b.vertices)

    def test_scale_distribution_mean(self):
        # scales are drawn from U[0.5, 1.5]; check via the aspect ratio of
        # many scaled boxes is centered (mean scale 1.0 +- 3 sigma)
        draws = []
        base = make_box(1, 1, 1)
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            draws.extend(rng.uniform(0.5, 1.5, size=3))
        assert np.mean(draws) == pytest.approx(1.0, abs=0.03)


class TestShapeSpec:
    def test_scale_bounds_enforced(self):
        with pytest.raises(GeomError):
            ShapeSpec(kind="box", base_params=(1.0,), scale=(0.4, 1.0, 1.0))

    def test_unknown_kind_rejected(self):
        with pytest.raises(GeomError):
            ShapeSpec(kind="sphere", base_params=(1.0,), scale=(1.0, 1.0, 1.0))


class TestGenerateObject:
    def test_all_categories_closed_and_normalized(self):
        for kind in ("box", "cylinder", "composite"):
            m = generate_object(kind, 5)
            assert m.closed
            ext = m.vertices.max(axis=0) - m.vertices.min(axis=0)
            assert ext.max() == pytest.approx(1.0, abs=1e-9)
            assert mass_properties(m, 1000.0).mass > 0
