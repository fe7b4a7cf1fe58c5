"""Local product structure: the global bracket and its on-section form.

Oracles: the bracket point must lie on the stable leaf of the flowed
first point and the unstable leaf of the second (checked as exact group
identities), and the closed on-section formula must agree with the
global bracket projected back to the section.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markovflow import bracket as br, psl2, quotient as qt, sections as sc


@pytest.fixture(scope="module")
def G():
    return qt.bolza_group()


@pytest.fixture(scope="module")
def x0(G):
    return qt.reduce(G, psl2.GroupElement(
        psl2.exp_traceless(np.array([[0.2, -0.4], [0.6, -0.2]]))))


small = st.floats(-0.01, 0.01)


class TestGlobalBracket:
    def test_self_bracket_is_identity(self, G, x0):
        got = br.bracket(G, x0, x0, 0.1)
        assert abs(got.v) < 1e-12 and abs(got.s) < 1e-12
        assert abs(got.u) < 1e-12
        assert qt.quotient_dist(G, got.point, x0) < 1e-10

    @given(small, small, small)
    @settings(max_examples=50, deadline=None)
    def test_recovers_planted_offsets(self, G, x0, t, s, u):
        y = qt.reduce(G, x0.rep @ psl2.one_param("A", t)
                      @ psl2.one_param("B", s) @ psl2.one_param("C", u))
        got = br.bracket(G, x0, y, 0.2)
        assert abs(got.v - t) < 1e-9
        assert abs(got.s - s) < 1e-9
        assert abs(got.u - u) < 1e-9

    @given(small, small, small)
    @settings(max_examples=50, deadline=None)
    def test_point_on_both_leaves(self, G, x0, t, s, u):
        # w = phi_v(x) b_s lies on W^s(phi_v x); w = y c_{-u} on W^u(y)
        y = qt.reduce(G, x0.rep @ psl2.one_param("A", t)
                      @ psl2.one_param("B", s) @ psl2.one_param("C", u))
        got = br.bracket(G, x0, y, 0.2)
        stable = qt.reduce(G, x0.rep @ psl2.one_param("A", got.v)
                           @ psl2.one_param("B", got.s))
        unstable = qt.reduce(G, y.rep @ psl2.one_param("C", -got.u))
        assert qt.quotient_dist(G, got.point, stable) < 1e-9
        assert qt.quotient_dist(G, got.point, unstable) < 1e-9

    def test_across_fundamental_domain(self, G, x0):
        # the same pair presented through a deck translate brackets alike
        y = qt.reduce(G, x0.rep @ psl2.one_param("B", 0.004))
        gam = G.generators[2]
        y2 = qt.reduce(G, gam @ y.rep)
        a = br.bracket(G, x0, y, 0.2)
        b = br.bracket(G, x0, y2, 0.2)
        assert abs(a.v - b.v) < 1e-9
        assert abs(a.s - b.s) < 1e-9
        assert abs(a.u - b.u) < 1e-9

    def test_too_far_apart(self, G, x0):
        y = qt.reduce(G, x0.rep @ psl2.one_param("A", 1.0))
        with pytest.raises(br.TooFarApart):
            br.bracket(G, x0, y, 0.2)

    def test_threshold_is_quarter_eps(self, G, x0):
        y = qt.reduce(G, x0.rep @ psl2.one_param("A", 0.09))
        br.bracket(G, x0, y, 0.4)                  # d ~ 0.064 < 0.1
        with pytest.raises(br.TooFarApart):
            br.bracket(G, x0, y, 0.2)              # d ~ 0.064 >= 0.05


@pytest.fixture(scope="module")
def D(G, x0):
    return sc.make_section(G, x0, 0.15, "CB", alpha=0.4)


class TestSectionBracket:
    @given(st.floats(-0.01, 0.01), st.floats(-0.01, 0.01),
           st.floats(-0.01, 0.01), st.floats(-0.01, 0.01))
    @settings(max_examples=40, deadline=None)
    def test_matches_global_bracket(self, G, D, ux, sx, uy, sy):
        # dual route: project the global bracket back onto the section
        cx = sc.SectionCoords(ux, sx)
        cy = sc.SectionCoords(uy, sy)
        x = sc.point_at(D, cx)
        y = sc.point_at(D, cy)
        sb = br.bracket_in_section(D, cx, cy)
        w = br.bracket(G, x, y, 0.3).point
        back, tau = sc.project_to_section(D, w, t_window=0.3)
        cw = sc.coords_of(D, back)
        assert abs(cw.u - sb.coords.u) < 1e-9
        assert abs(cw.s - sb.coords.s) < 1e-9

    def test_plain_u_is_first_point_u(self, D):
        sb = br.bracket_in_section(D, sc.SectionCoords(0.03, -0.02),
                                   sc.SectionCoords(-0.04, 0.05))
        assert sb.coords.u == 0.03

    def test_denominator_guard(self, D):
        with pytest.raises(br.DenominatorNearZero):
            br.bracket_in_section(D, sc.SectionCoords(0.0, 0.0),
                                  sc.SectionCoords(5.0, -0.2))

    def test_scale_guard(self, D):
        with pytest.raises(br.TooFarApart):
            br.bracket_in_section(D, sc.SectionCoords(0.0, 0.0),
                                  sc.SectionCoords(4.0, 0.9))

    @given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
    @settings(max_examples=30, deadline=None)
    def test_vectorized_consistent(self, ux, sy):
        uw, s_w, s, u, v = br.bracket_in_section_uv(
            np.array([ux]), np.array([0.01]), np.array([-0.02]),
            np.array([sy]))
        den = 1.0 + (-0.02 - ux) * sy
        assert abs(v[0] + 2.0 * np.log(den)) < 1e-12
        assert abs(u[0] - (ux + 0.02) / den) < 1e-12
