import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brushfit.errors import ConfigError
from brushfit.geometry import (Brushstroke, StrokeSet, bezier_point,
                               orientation, sample_stroke, stroke_distance)
from oracles import de_casteljau, dense_curve_distance


def make_stroke(location=(0, 0), p0=(0, 0), p1=(0, 0), p2=(0, 0),
                width=1.0, color=(0.5, 0.5, 0.5)):
    return Brushstroke(np.array(location, float), np.array(p0, float),
                       np.array(p1, float), np.array(p2, float), width,
                       np.array(color, float))


finite_coord = st.floats(-50, 50, allow_nan=False)
vec2 = st.tuples(finite_coord, finite_coord)


class TestBezierPoint:
    def test_endpoints(self):
        s = make_stroke(location=(3, 4), p0=(1, -1), p1=(0, 5), p2=(-2, 2))
        np.testing.assert_allclose(bezier_point(s, 0.0), [4, 3])
        np.testing.assert_allclose(bezier_point(s, 1.0), [1, 6])

    def test_midpoint_matches_de_casteljau(self):
        # Straight horizontal control polygon: midpoint halves the span.
        s = make_stroke(p0=(0, 0), p1=(2, 0), p2=(4, 0))
        expected = de_casteljau((0, 0), (2, 0), (4, 0), 0.5)
        np.testing.assert_allclose(bezier_point(s, 0.5), expected)
        np.testing.assert_allclose(bezier_point(s, 0.5), [2, 0])

    def test_random_strokes_match_de_casteljau(self, rng):
        for _ in range(20):
            s = make_stroke(location=rng.uniform(-5, 5, 2),
                            p0=rng.uniform(-5, 5, 2),
                            p1=rng.uniform(-5, 5, 2),
                            p2=rng.uniform(-5, 5, 2))
            for t in (0.0, 0.13, 0.5, 0.74, 1.0):
                expected = s.location + de_casteljau(s.p0_off, s.p1_off,
                                                     s.p2_off, t)
                np.testing.assert_allclose(bezier_point(s, t), expected,
                                           atol=1e-12)

    def test_t_out_of_domain(self):
        s = make_stroke()
        with pytest.raises(ValueError):
            bezier_point(s, -0.01)
        with pytest.raises(ValueError):
            bezier_point(s, 1.01)

    @given(v=vec2, t=st.floats(0, 1))
    @settings(max_examples=50, deadline=None)
    def test_translation_equivariance(self, v, t):
        s = make_stroke(location=(1, 2), p0=(0, 1), p1=(2, -1), p2=(1, 3))
        moved = make_stroke(location=(1 + v[0], 2 + v[1]),
                            p0=(0, 1), p1=(2, -1), p2=(1, 3))
        np.testing.assert_allclose(bezier_point(moved, t),
                                   bezier_point(s, t) + np.array(v),
                                   atol=1e-9)


class TestSampleStroke:
    def test_two_samples_are_endpoints(self):
        s = make_stroke(location=(1, 1), p0=(0, 0), p1=(9, 9), p2=(2, 4))
        pts = sample_stroke(s, 2)
        np.testing.assert_allclose(pts[0], [1, 1])
        np.testing.assert_allclose(pts[1], [3, 5])

    @pytest.mark.parametrize("s_count", [2, 3, 10, 17])
    def test_count_and_grid(self, s_count):
        s = make_stroke(p0=(0, 0), p1=(1, 3), p2=(5, 2))
        pts = sample_stroke(s, s_count)
        assert pts.shape == (s_count, 2)
        for j in range(s_count):
            t = j / (s_count - 1)
            np.testing.assert_allclose(pts[j], bezier_point(s, t), atol=1e-12)

    def test_too_few_samples(self):
        with pytest.raises(ConfigError):
            sample_stroke(make_stroke(), 1)


class TestStrokeDistance:
    def test_zero_at_sampled_point(self):
        s = make_stroke(location=(5, 5), p0=(-1, 0), p1=(0, 0), p2=(1, 0))
        p = s.location + s.p0_off
        assert stroke_distance(p, s, 10) == 0.0

    def test_perpendicular_drop(self):
        # Collinear control points along x: the t=0.5 sample is at (5, 0).
        s = make_stroke(p0=(0, 0), p1=(5, 0), p2=(10, 0))
        assert stroke_distance((5, 3), s, 11) == pytest.approx(3.0)

    def test_upper_bounds_dense_oracle(self, rng):
        for _ in range(5):
            s = make_stroke(location=rng.uniform(0, 10, 2),
                            p0=rng.uniform(-4, 4, 2),
                            p1=rng.uniform(-4, 4, 2),
                            p2=rng.uniform(-4, 4, 2))
            p = rng.uniform(-5, 15, 2)
            coarse = stroke_distance(p, s, 10)
            fine = dense_curve_distance(p, s, samples=10000)
            assert coarse >= fine - 1e-9
            assert coarse - fine < 0.5  # sampled approximation stays close

    @given(p=vec2, q=vec2)
    @settings(max_examples=50, deadline=None)
    def test_lipschitz_in_query_point(self, p, q):
        s = make_stroke(location=(3, 3), p0=(-2, 1), p1=(0, 4), p2=(2, -1))
        dp = stroke_distance(p, s, 7)
        dq = stroke_distance(q, s, 7)
        assert abs(dp - dq) <= np.hypot(p[0] - q[0], p[1] - q[1]) + 1e-9

    @pytest.mark.parametrize("s_count", [2, 3, 5])
    def test_refinement_never_increases(self, rng, s_count):
        # t-grid of 2S-1 samples contains the S-sample grid as a subset.
        for _ in range(10):
            s = make_stroke(location=rng.uniform(0, 8, 2),
                            p0=rng.uniform(-3, 3, 2),
                            p1=rng.uniform(-3, 3, 2),
                            p2=rng.uniform(-3, 3, 2))
            p = rng.uniform(-2, 10, 2)
            assert stroke_distance(p, s, 2 * s_count - 1) <= \
                stroke_distance(p, s, s_count) + 1e-12


class TestStrokeTypes:
    def test_twelve_degrees_of_freedom(self):
        s = make_stroke(location=(1, 2), p0=(3, 4), p1=(5, 6), p2=(7, 8),
                        width=9, color=(0.1, 0.2, 0.3))
        v = s.as_vector()
        assert v.shape == (12,)
        back = Brushstroke.from_vector(v)
        np.testing.assert_allclose(back.as_vector(), v)

    def test_width_must_be_positive(self):
        with pytest.raises(ValueError):
            make_stroke(width=0.0)

    def test_orientation_is_recomputed(self):
        s = make_stroke(p0=(1, 1), p2=(4, 5))
        np.testing.assert_allclose(orientation(s), [3, 4])
        s.p2_off = np.array([2.0, 2.0])
        np.testing.assert_allclose(orientation(s), [1, 1])

    def test_strokeset_roundtrip(self, rng):
        strokes = [make_stroke(location=rng.uniform(0, 10, 2),
                               p0=rng.uniform(-2, 2, 2),
                               p1=rng.uniform(-2, 2, 2),
                               p2=rng.uniform(-2, 2, 2),
                               width=rng.uniform(1, 3),
                               color=rng.uniform(0, 1, 3))
                   for _ in range(4)]
        ss = StrokeSet.from_strokes(strokes, 16, 16)
        params = ss.as_parameters()
        assert params.shape == (4, 12)
        again = ss.with_parameters(params)
        np.testing.assert_allclose(again.as_parameters(), params)
        for orig, view in zip(strokes, again.strokes):
            np.testing.assert_allclose(view.as_vector(), orig.as_vector())

    def test_clamping_bounds(self):
        ss = StrokeSet(
            locations=[[-5.0, 99.0], [3.0, 3.0]],
            offsets=np.zeros((2, 3, 2)),
            widths=[0.01, 1000.0],
            colors=[[2.0, -1.0, 0.5], [0.2, 0.4, 0.9]],
            canvas_h=16, canvas_w=16)
        c = ss.clamped()
        assert c.locations[0, 0] == 0.0
        assert c.locations[0, 1] == 15.0
        assert c.widths[0] == 0.5
        assert c.widths[1] == 4.0  # 0.25 * 16
        assert c.colors[0, 0] == 1.0 and c.colors[0, 1] == 0.0
        # Locations stay inside [0, H) x [0, W).
        assert (c.locations[:, 0] < 16).all() and (c.locations >= 0).all()
