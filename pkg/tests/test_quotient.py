"""The octagon group and its quotient: word balls, Dirichlet reduction,
quotient distance, injectivity radius.

Closed-form oracles: the octagon systole is 2 arccosh(1 + sqrt 2) and the
Dirichlet circumradius about the center is arccosh(cot^2(pi/8)).
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markovflow import psl2, quotient as qt

SYSTOLE = 2.0 * np.arccosh(1.0 + np.sqrt(2.0))
CIRCUMRADIUS = np.arccosh(1.0 / np.tan(np.pi / 8.0) ** 2)


class TestGroupConstruction:
    def test_generators_hyperbolic(self, bolza):
        for g in bolza.generators:
            assert abs(g.trace()) > 2.0

    def test_generator_traces(self, bolza):
        # side pairings of the octagon all have trace 2(1 + sqrt 2)
        for g in bolza.generators:
            assert abs(abs(g.trace()) - 2.0 * (1.0 + np.sqrt(2.0))) < 1e-9

    def test_closed_under_inverse(self, bolza):
        mats = np.stack([g.m for g in bolza.generators])
        for g in bolza.generators:
            d = np.min(np.max(np.abs(mats - g.inv().m), axis=(1, 2)))
            assert d < 1e-9

    def test_relation_holds(self, bolza):
        rel = psl2.GroupElement.identity()
        for idx in bolza.relation:
            g = bolza.generators[abs(idx) - 1]
            rel = rel @ (g if idx > 0 else g.inv())
        assert rel.close_to(psl2.GroupElement.identity(), 1e-9)

    def test_bad_relation_rejected(self):
        gens = qt.octagon_generators()
        gens = gens + [g.inv() for g in gens]
        with pytest.raises(ValueError):
            qt.FuchsianGroup(gens, (1, 2, 3))


class TestWordBalls:
    def test_ball_one_size(self, bolza):
        # the 8 side pairings are already closed under inverses
        assert len(qt.ball(bolza, 1)) == 8

    def test_ball_growth_and_nesting(self, bolza):
        b1 = bolza.ball_array(1)
        b2 = bolza.ball_array(2)
        assert len(b2) > len(b1)
        for m in b1:
            assert np.min(np.max(np.abs(b2 - m), axis=(1, 2))) < 1e-9

    def test_ball_elements_distinct(self, bolza):
        b2 = bolza.ball_array(2)
        flat = b2.reshape(len(b2), 4)
        d = np.max(np.abs(flat[:, None] - flat[None, :]), axis=2)
        np.fill_diagonal(d, 1.0)
        assert np.min(d) > 1e-6

    def test_cap_enforced(self, bolza):
        with pytest.raises(qt.BallTooLarge):
            bolza.ball_array(qt.BALL_CAP + 1)


class TestReduction:
    def test_reduction_stays_in_coset(self, bolza, rng):
        m = psl2.random_elements(rng, 50, scale=1.2)
        for k in range(len(m)):
            p, word = qt.reduce_many(bolza, m[k], return_words=True)
            gamma = psl2.GroupElement.identity()
            for w in word:
                gamma = bolza.generators[w - 1] @ gamma
            assert np.allclose(psl2.canonicalize_many(gamma.m @ m[k]), p,
                               atol=1e-8)

    def test_reduced_locally_minimal(self, bolza, rng):
        # no single generator move brings the base point closer to i
        m = qt.reduce_many(bolza, psl2.random_elements(rng, 200, scale=1.5))
        d0 = qt.hyp_dist_i_many(qt.mobius_i_many(m))
        gens = bolza._gen_arr
        cand = np.einsum("gij,njk->ngik", gens, m)
        d1 = qt.hyp_dist_i_many(qt.mobius_i_many(cand))
        assert np.all(np.min(d1, axis=1) >= d0 - 1e-9)

    def test_reduced_base_point_bounded(self, bolza, rng):
        m = qt.reduce_many(bolza, psl2.random_elements(rng, 500, scale=1.5))
        d = qt.hyp_dist_i_many(qt.mobius_i_many(m))
        assert np.max(d) <= CIRCUMRADIUS + 0.1

    def test_idempotent(self, bolza, rng):
        m = qt.reduce_many(bolza, psl2.random_elements(rng, 100, scale=1.2))
        assert np.allclose(qt.reduce_many(bolza, m), m, atol=1e-10)


class TestQuotientDistance:
    def test_zero_on_same_coset(self, bolza, rng):
        m = psl2.random_elements(rng, 30, scale=1.0)
        b2 = bolza.ball_array(2)
        for k in range(len(m)):
            x = qt.reduce(bolza, psl2.GroupElement(m[k]))
            y = qt.reduce(bolza, psl2.GroupElement(
                b2[k % len(b2)] @ m[k]))
            assert qt.quotient_dist(bolza, x, y) < 1e-8

    def test_symmetric(self, bolza, rng):
        m = psl2.random_elements(rng, 40, scale=1.0)
        a = qt.reduce_many(bolza, m[:20])
        b = qt.reduce_many(bolza, m[20:])
        dab = qt.quotient_dist_many(bolza, a, b)
        dba = qt.quotient_dist_many(bolza, b, a)
        assert np.allclose(dab, dba, atol=1e-9)

    def test_dominated_by_group_distance(self, bolza, rng):
        m = psl2.random_elements(rng, 40, scale=1.0)
        a = qt.reduce_many(bolza, m[:20])
        b = qt.reduce_many(bolza, m[20:])
        dq = qt.quotient_dist_many(bolza, a, b)
        dg = psl2.dist_many(a, b)
        assert np.all(dq <= dg + 1e-9)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 2 * np.pi))
    @settings(max_examples=25, deadline=None)
    def test_small_flow_distance(self, bolza, r, th):
        # moving along the flow by small t moves the point by |t|/sqrt(2)
        x = np.array([[np.exp(r * np.cos(th)), r * np.sin(th)],
                      [0.0, np.exp(-r * np.cos(th))]])
        x = qt.reduce_many(bolza, psl2.canonicalize_many(x))
        t = 0.2
        y = qt.reduce_many(bolza, x @ psl2.one_param("A", t).m)
        d = float(qt.quotient_dist_many(bolza, x, y)[0])
        assert abs(d - t / np.sqrt(2.0)) < 1e-9


class TestInvariants:
    def test_injectivity_radius_value(self, bolza):
        assert abs(qt.injectivity_radius(bolza)
                   - SYSTOLE / np.sqrt(2.0)) < 1e-9

    def test_systole_from_traces(self, bolza):
        ball = bolza.ball_array(3)
        tr = np.abs(ball[:, 0, 0] + ball[:, 1, 1])
        lengths = 2.0 * np.arccosh(np.maximum(tr, 2.0) / 2.0)
        assert abs(np.min(lengths[lengths > 1e-9]) - SYSTOLE) < 1e-9

    def test_circumradius_estimate(self, bolza):
        # measured estimate brackets the closed-form vertex distance
        c = bolza.circumradius()
        assert CIRCUMRADIUS - 0.02 <= c <= CIRCUMRADIUS + 0.15

    def test_near_translate_table(self, bolza):
        near = bolza.near_translates()
        assert len(near) > 1
        disp = qt.hyp_dist_i_many(qt.mobius_i_many(near))
        reach = 2.0 * bolza.circumradius() + 1.45 * bolza.sigma_star()
        assert np.max(disp) <= reach + 1e-9
