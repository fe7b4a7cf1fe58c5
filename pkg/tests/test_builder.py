"""Covering-family construction, its validity conditions, and the
first-return machinery.

Oracles: planted flow-translate pairs with known crossing-time ranges
drive the disjointness screen; coverage marks are cross-checked against
independently located samples; the return map is checked against scalar
projection on random member points.
"""

import numpy as np
import pytest

from markovflow import builder as bd, psl2, quotient as qt, sections as sc
from markovflow.rectangles import s_from_label


@pytest.fixture(scope="module")
def P(small_family):
    return bd.proper_from_pre(small_family)


class TestBuildReport:
    def test_reaches_configured_target(self, small_family):
        rep = small_family.build_report
        assert rep["reached_target"]
        assert rep["coverage_net"] >= rep["coverage_target"]

    def test_report_schema(self, small_family):
        rep = small_family.build_report
        for key in ("n_sections", "epsilon", "alpha", "d_factor", "seed",
                    "rounds", "offsets", "build_seconds", "repair_dropped",
                    "blocked_net_points"):
            assert key in rep
        assert rep["n_sections"] == small_family.n > 0

    def test_offsets_within_ladder(self, small_family):
        a = small_family.alpha
        for v in small_family.build_report["offsets"]:
            assert abs(v) < 2.0 * a

    def test_deterministic(self, bolza, small_family):
        again = bd.build_pre_markov(bolza, 0.9, seed=11, epsilon=0.135,
                                    d_factor=2.2, coverage_target=0.02,
                                    net_points=40000, max_sections=200,
                                    time_budget=120, strict=False)
        assert np.array_equal(again.lifts, small_family.lifts)


class TestFamilyApi:
    def test_core_nesting_radii(self, small_family):
        F = small_family
        k = F.rect_K(0).plain_labels.hull()
        b = F.rect_B(0).plain_labels.hull()
        d = F.rect_D(0).plain_labels.hull()
        assert -k[0] == k[1] == 0.5 * F.epsilon
        assert -b[0] == b[1] == F.epsilon
        assert -d[0] == d[1] == F.d_radius == F.d_factor * F.epsilon

    def test_chart_matches_lift(self, small_family):
        ch = small_family.chart(3)
        assert ch.kind == "CB"
        assert np.allclose(ch.lift.m, small_family.lifts[3])
        assert ch.u_radius == small_family.d_radius

    def test_covered_marks_core_points(self, small_family, rng):
        F = small_family
        i = 5
        u = rng.uniform(-0.4, 0.4, 20) * F.epsilon
        s = rng.uniform(-0.4, 0.4, 20) * F.epsilon
        t = rng.uniform(-0.9 * F.alpha, -0.01, 20)
        reps = []
        for k in range(20):
            x = sc.point_at(F.chart(i), sc.SectionCoords(u[k], s[k]))
            reps.append(sc.flow(F.group, x, t[k]).rep.m)
        got = F.covered(np.array(reps), core="K")
        assert np.all(got)

    def test_far_points_not_covered(self, small_family):
        # probing with the carrier base frames flowed far outside the
        # covering window
        F = small_family
        reps = qt.reduce_many(F.group,
                              F.lifts @ psl2.one_param("A", 0.5 * F.alpha).m)
        got = F.covered(reps, core="K")
        assert not np.all(got)


@pytest.fixture(scope="module")
def report(small_family):
    return bd.validate_pre_markov(small_family, samples=4000,
                                  rng=np.random.default_rng(5))


class TestValidation:
    def test_nesting_and_diameter(self, report):
        assert report["a_nesting"]["passed"]
        assert report["b_diameter"]["passed"]
        assert report["b_diameter"]["diam_D"] < report["b_diameter"]["alpha"]

    def test_flow_disjointness_enforced(self, report):
        assert report["c_flow_disjoint"]["passed"]
        assert report["c_flow_disjoint"]["n_violations"] == 0
        assert report["c_flow_disjoint"]["overlapping_pairs"] > 0

    def test_coverage_matches_build_estimate(self, small_family, report):
        net = small_family.build_report["coverage_net"]
        assert abs(report["d_coverage"]["fraction"] - net) < 0.02


class TestConflictScreen:
    def test_coincident_sections_conflict(self, bolza, small_family):
        F = small_family
        z = F.lifts[:1]
        idx = bd.SectionIndex(bolza, z, 2 * F.d_radius, 2 * F.d_radius,
                              -2 * F.alpha - 0.1, 2 * F.alpha + 0.1)
        conflict = bd._offset_conflicts(idx, z, F.d_radius, F.alpha)
        assert conflict[0]

    def test_flow_shifted_section_is_one_sided(self, bolza, small_family):
        # a copy shifted by 0.5 alpha crosses only at times near -0.5 alpha
        F = small_family
        z = F.lifts[:1]
        probe = qt.reduce_many(bolza,
                               z @ psl2.one_param("A", 0.5 * F.alpha).m)
        idx = bd.SectionIndex(bolza, z, 2 * F.d_radius, 2 * F.d_radius,
                              -2 * F.alpha - 0.1, 2 * F.alpha + 0.1)
        conflict = bd._offset_conflicts(idx, probe, F.d_radius, F.alpha)
        assert not conflict[0]
        pt, owner, tlo, thi = bd._crossing_ranges(
            idx, probe, F.d_radius, F.d_radius, F.alpha, grid=(9, 5))
        assert len(pt) == 1
        assert tlo[0] <= -0.5 * F.alpha + 0.2 and thi[0] < 0.0

    def test_repair_drops_duplicate(self, bolza, small_family):
        F = small_family
        doubled = np.concatenate([F.lifts[:3], F.lifts[2:3]])
        kept, dropped = bd._repair_two_way(
            bolza, doubled, F.d_radius, F.alpha, 2 * F.alpha + 0.1)
        assert dropped == 1 and len(kept) == 3

    def test_family_free_of_two_way_pairs(self, bolza, small_family):
        F = small_family
        kept, dropped = bd._repair_two_way(
            bolza, F.lifts, F.d_radius, F.alpha, 2 * F.alpha + 0.1)
        assert dropped == 0


class TestHaarSampler:
    def test_samples_are_reduced(self, bolza, rng):
        pts = bd.haar_samples(bolza, 500, rng)
        assert np.allclose(qt.reduce_many(bolza, pts), pts, atol=1e-10)

    def test_samples_spread(self, bolza, rng):
        pts = bd.haar_samples(bolza, 500, rng)
        d = qt.hyp_dist_i_many(qt.mobius_i_many(pts))
        assert np.max(d) > 1.5 * np.median(d) > 0.0


class TestReturnMap:
    def test_returns_land_on_members(self, small_family, P, rng):
        plains, primeds, srcs = [], [], []
        for j in range(0, P.n, 7):
            pl, pr = P.members[j].sample_points(3, rng)
            for a, b in zip(pl, pr):
                srcs.append(j)
                plains.append(a)
                primeds.append(b)
        src = np.array(srcs)
        plain = np.array(plains)
        s = s_from_label(plain, np.array(primeds))
        reps = bd.landing_reps(P, src, plain, s)
        mi, tt, uu, ss, ok = bd.poincare_map_many(P, reps, member_tol=1e-9)
        assert np.mean(ok) > 0.5
        assert np.all(tt[ok] > 0.0)
        assert np.all(P.membership(mi[ok], uu[ok], ss[ok], tol=1e-9))

    def test_scalar_matches_vectorized(self, small_family, P):
        R = P.members[0]
        x = R.point_at_labels(0.01, -0.01)
        pt, t, m = bd.poincare_map(P, x)
        mi, tt, uu, ss, ok = bd.poincare_map_many(P, x.rep.m[None])
        assert ok[0] and mi[0] == m
        assert abs(tt[0] - t) < 1e-9
        assert qt.quotient_dist(P.group, pt,
                                sc.flow(P.group, x, t)) < 1e-8

    def test_short_horizon_raises(self, small_family, P):
        R = P.members[0]
        x = R.point_at_labels(0.012, -0.013)
        with pytest.raises(bd.ReturnNotFound):
            bd.poincare_map(P, x, horizon=1e-4)

    def test_lebesgue_estimate_positive(self, small_family):
        lam, frac = bd.estimate_lebesgue(small_family, samples=2000,
                                         rng=np.random.default_rng(9))
        assert lam > 0.0
        assert 0.0 < frac <= 1.0
