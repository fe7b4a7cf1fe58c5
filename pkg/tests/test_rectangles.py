"""Rectangles: label-set algebra, Moebius component maps, fibers and
holonomy.

Oracles: the interval algebra against pointwise membership on dense
samples, Moebius fits against closed-form maps, and holonomy component
maps against direct chart location of transported points.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markovflow import psl2, quotient as qt, rectangles as rc, sections as sc
from markovflow.rectangles import LabelSet, Mobius1D


@pytest.fixture(scope="module")
def G():
    return qt.bolza_group()


@pytest.fixture(scope="module")
def z(G):
    return qt.reduce(G, psl2.GroupElement(
        psl2.exp_traceless(np.array([[0.1, 0.5], [-0.3, -0.1]]))))


intervals = st.lists(
    st.tuples(st.floats(-1.0, 1.0), st.floats(0.01, 0.5)).map(
        lambda p: (p[0], p[0] + p[1])),
    min_size=0, max_size=4)


def member(ls, xs):
    out = np.zeros(len(xs), dtype=bool)
    for lo, hi in ls.intervals:
        out |= (xs >= lo) & (xs <= hi)
    return out


class TestLabelSets:
    grid = np.linspace(-2.0, 2.0, 2001)

    @given(intervals, intervals)
    @settings(max_examples=60, deadline=None)
    def test_union_matches_membership(self, a, b):
        A, B = LabelSet(a), LabelSet(b)
        got = member(A.union(B), self.grid)
        assert np.array_equal(got, member(A, self.grid) | member(B, self.grid))

    @given(intervals, intervals)
    @settings(max_examples=60, deadline=None)
    def test_intersect_matches_membership(self, a, b):
        A, B = LabelSet(a), LabelSet(b)
        got = member(A.intersect(B), self.grid)
        assert np.array_equal(got, member(A, self.grid) & member(B, self.grid))

    @given(intervals, intervals)
    @settings(max_examples=60, deadline=None)
    def test_diff_measure(self, a, b):
        # m(A \ B) = m(A) - m(A meet B); closed-set boundary effects vanish
        A, B = LabelSet(a), LabelSet(b)
        lhs = A.diff(B).measure()
        rhs = A.measure() - A.intersect(B).measure()
        assert abs(lhs - rhs) < 1e-9

    @given(intervals)
    @settings(max_examples=40, deadline=None)
    def test_dilate_grows_measure(self, a):
        A = LabelSet(a)
        if A.is_empty():
            return
        D = A.dilate(0.05)
        assert D.measure() >= A.measure()
        assert np.all(member(D, self.grid) | ~member(A, self.grid))

    def test_merge_overlapping(self):
        A = LabelSet([(0.0, 1.0), (0.5, 2.0), (3.0, 4.0)])
        assert A.intervals == ((0.0, 2.0), (3.0, 4.0))

    def test_hausdorff(self):
        A = LabelSet([(0.0, 1.0)])
        B = LabelSet([(0.5, 1.5)])
        assert abs(A.hausdorff(B) - 0.5) < 1e-12
        assert A.hausdorff(A) == 0.0

    def test_sample_inside(self, rng):
        A = LabelSet([(-0.5, -0.2), (0.3, 0.4)])
        xs = A.sample(50, rng)
        assert np.all(member(A, np.asarray(xs)))


class TestMobius:
    def test_fit_recovers_affine(self):
        x = np.linspace(-1, 1, 7)
        m = Mobius1D.fit(x, 2.0 * x + 0.3)
        xs = np.linspace(-0.9, 0.9, 13)
        assert np.allclose(m(xs), 2.0 * xs + 0.3, atol=1e-9)

    def test_fit_recovers_inversion_like(self):
        f = lambda x: x / (1.0 + 0.4 * x)
        x = np.linspace(-0.5, 0.5, 9)
        m = Mobius1D.fit(x, f(x))
        xs = np.linspace(-0.45, 0.45, 21)
        assert np.allclose(m(xs), f(xs), atol=1e-9)

    def test_compose_and_inverse(self):
        a = Mobius1D.normalized(1.0, 0.2, 0.1, 1.0)
        b = Mobius1D.scaling(1.7)
        xs = np.linspace(-0.3, 0.3, 11)
        assert np.allclose(a.compose(b)(xs), a(b(xs)), atol=1e-12)
        assert np.allclose(a.inverse()(a(xs)), xs, atol=1e-12)

    def test_monotone_on(self):
        assert Mobius1D.scaling(2.0).monotone_on(-1.0, 1.0)
        m = Mobius1D.normalized(1.0, 0.0, -1.0, 1.0)   # pole at x = 1
        assert not m.monotone_on(0.0, 2.0)

    @given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
    @settings(max_examples=40, deadline=None)
    def test_label_coordinate_roundtrip(self, u, s):
        assert abs(rc.label_from_s(u, rc.s_from_label(u, s)) - s) < 1e-10


@pytest.fixture(scope="module")
def R(G, z):
    return rc.rect_S(G, z, 0.1, alpha=0.3)


@pytest.fixture(scope="module")
def charts(G, z):
    src = sc.make_section(G, z, 0.02, "CB", alpha=0.3)
    zt = qt.reduce(G, z.rep @ psl2.one_param("A", 0.25))
    tgt = sc.make_section(G, zt, 0.06, "CB", alpha=0.3)
    return src, tgt


class TestRectangles:
    def test_symmetric_radii(self, R):
        assert R.plain_labels.hull() == (-0.1, 0.1)
        assert R.primed_labels.hull() == (-0.1, 0.1)

    def test_too_large_rejected(self, G, z):
        with pytest.raises(rc.RectangleTooLarge):
            rc.rect_asym(G, z, 2.0, 2.0, "CB")

    def test_point_label_roundtrip(self, R, rng):
        pl, pr = R.sample_points(10, rng)
        for a, b in zip(pl, pr):
            x = R.point_at_labels(a, b)
            a2, b2 = rc.leaf_labels(R, x)
            assert abs(a2 - a) < 1e-9 and abs(b2 - b) < 1e-9

    def test_fibers_through_point(self, R):
        x = R.point_at_labels(0.03, -0.04)
        f_s = rc.stable_fiber(R, x)
        f_u = rc.unstable_fiber(R, x)
        lo, hi = f_s.plain_labels.hull()
        assert lo == pytest.approx(0.03) and hi == pytest.approx(0.03)
        assert f_u.primed_labels.hull()[0] == pytest.approx(-0.04)

    def test_fiber_outside_rejected(self, R):
        x = R.point_at_labels(0.08, 0.0)
        sub = rc.Rectangle(R.chart, rc.LabelSet.interval(-0.02, 0.02),
                           R.primed_labels)
        with pytest.raises(rc.NotInRectangle):
            rc.stable_fiber(sub, x)

    def test_rect_bracket_mixes_axes(self, R):
        S = rc.Rectangle(R.chart, LabelSet.interval(0.0, 0.05),
                         LabelSet.interval(-0.02, 0.02))
        B = rc.rect_bracket(S, R)
        assert B.plain_labels == S.plain_labels
        assert B.primed_labels == R.primed_labels

    def test_convert_version_preserves_labels(self, R, rng):
        # the leaf transition between paired chart kinds is the identity:
        # a point carries the same labels (axes swapped) on the converted
        # chart, up to a small flow offset absorbed by the t-coordinate
        C = rc.convert_version(R)
        assert C.chart.kind == "BC"
        pl, pr = R.sample_points(8, rng)
        for a, b in zip(pl, pr):
            x = R.point_at_labels(a, b)
            got_p, got_q, t = rc._labels_on(C.chart, x.rep.m[None])
            assert abs(got_p[0] - b) < 1e-9
            assert abs(got_q[0] - a) < 1e-9
            # the flow offset is -2 ln(1 + u s) = O(2 u s)
            assert abs(t[0]) <= 2.2 * abs(a * b) + 1e-9


class TestHolonomy:
    def test_components_match_direct_location(self, G, charts, rng):
        src, tgt = charts
        h = rc.holonomy(src, tgt)
        pl = rng.uniform(-0.015, 0.015, 20)
        pr = rng.uniform(-0.015, 0.015, 20)
        rep = rc._rep_of_labels(src, pl, pr)
        op, opr, _ = rc._labels_on(tgt, rep)
        mp, mq = h.apply_labels(pl, pr)
        assert np.max(np.abs(mp - op)) < 1e-6
        assert np.max(np.abs(mq - opr)) < 1e-6

    def test_time_offset_is_flow_distance(self, charts):
        src, tgt = charts
        h = rc.holonomy(src, tgt)
        assert abs(abs(h.time_offset) - 0.25) < 1e-9

    def test_inverse_roundtrip(self, charts, rng):
        src, tgt = charts
        h = rc.holonomy(src, tgt)
        g = h.inverse()
        pl = rng.uniform(-0.01, 0.01, 10)
        pr = rng.uniform(-0.01, 0.01, 10)
        bp, bq = g.apply_labels(*h.apply_labels(pl, pr))
        assert np.max(np.abs(bp - pl)) < 1e-8
        assert np.max(np.abs(bq - pr)) < 1e-8

    def test_apply_rect_contains_image(self, charts, rng):
        src, tgt = charts
        h = rc.holonomy(src, tgt)
        R = rc.Rectangle(src, LabelSet.interval(-0.01, 0.01),
                         LabelSet.interval(-0.01, 0.01))
        out = h.apply_rect(R)
        pl, pr = R.sample_points(15, rng)
        mp, mq = h.apply_labels(pl, pr)
        assert np.all(out.plain_labels.contains(mp, 1e-12))
        assert np.all(out.primed_labels.contains(mq, 1e-12))

    def test_chart_mismatch(self, charts):
        src, tgt = charts
        h = rc.holonomy(src, tgt)
        R = rc.Rectangle(tgt, LabelSet.interval(-0.01, 0.01),
                         LabelSet.interval(-0.01, 0.01))
        with pytest.raises(rc.ChartMismatch):
            h.apply_rect(R)
