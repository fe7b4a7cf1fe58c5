"""Expansivity and closing estimates: the report-generating verifiers.

Oracles: stable-leaf pairs, whose separation along the flow is known in
closed form (|s| e^{-t} / sqrt 2 infinitesimally), drive the bounds both
into the passing and the failing regime.
"""

import numpy as np
import pytest

from markovflow import expansivity as ex, psl2, quotient as qt, sections as sc


@pytest.fixture(scope="module")
def G():
    return qt.bolza_group()


@pytest.fixture(scope="module")
def x(G):
    return qt.reduce(G, psl2.GroupElement(
        psl2.exp_traceless(np.array([[0.25, -0.1], [0.4, -0.25]]))))


def stable_offset(G, x, s):
    return qt.reduce(G, x.rep @ psl2.one_param("B", s))


class TestOrbitPair:
    def test_default_grid(self, G, x):
        p = ex.OrbitPair(x, x, L=1.0, delta=0.1)
        assert p.grid[0] == -1.0 and p.grid[-1] == 1.0
        assert np.allclose(p.s_of_t, p.grid)

    def test_reparam_must_fix_zero(self, G, x):
        n = 41
        grid = np.linspace(-1, 1, n)
        with pytest.raises(ValueError):
            ex.OrbitPair(x, x, 1.0, 0.1, grid=grid, s_of_t=grid + 0.5)

    def test_reparam_must_be_monotone(self, G, x):
        grid = np.linspace(-1, 1, 41)
        s = grid.copy()
        s[5] = s[7]
        s[6] = s[4]
        with pytest.raises(ValueError):
            ex.OrbitPair(x, x, 1.0, 0.1, grid=grid, s_of_t=s)


class TestReparamBound:
    def test_shadowing_pair_passes(self, G, x):
        y = stable_offset(G, x, 1e-4)
        p = ex.OrbitPair(x, y, L=2.0, delta=0.05)
        rep = ex.check_reparam_bound(G, p, eps=0.01)
        assert rep["passed"] and rep["measured"] == 0.0

    def test_shifted_reparam_measured(self, G, x):
        y = stable_offset(G, x, 1e-4)
        grid = np.linspace(-2, 2, 81)
        s = grid + 0.02 * grid ** 2 / 4.0
        p = ex.OrbitPair(x, y, 2.0, delta=0.2, grid=grid, s_of_t=s)
        rep = ex.check_reparam_bound(G, p, eps=0.005)
        assert abs(rep["measured"] - 0.02) < 1e-12

    def test_hypothesis_violation_raises(self, G, x):
        y = qt.reduce(G, x.rep @ psl2.one_param("A", 0.5))
        p = ex.OrbitPair(x, y, 1.0, delta=0.01)
        with pytest.raises(ex.HypothesisViolated):
            ex.check_reparam_bound(G, p, eps=0.1)


class TestClosingAndWindows:
    def test_exponential_closing_bound(self, G, x):
        L, eps = 3.0, 0.1
        y = stable_offset(G, x, eps * np.exp(-L))
        rep = ex.check_exponential_closing(G, x, y, 0.0, L, eps)
        assert rep["passed"]
        # doubling the offset past the bound flips the verdict
        y2 = stable_offset(G, x, 4.0 * eps * np.exp(-L))
        rep2 = ex.check_exponential_closing(G, x, y2, 0.0, L, eps)
        assert not rep2["passed"]

    def test_closing_accounts_flow_shift(self, G, x):
        L, eps = 3.0, 0.1
        v = 0.37
        y = qt.reduce(G, x.rep @ psl2.one_param("A", v))
        rep = ex.check_exponential_closing(G, x, y, v, L, eps)
        assert rep["passed"] and rep["measured"] < 1e-10

    def test_eps0_backward_window_bounds_s(self, G, x):
        L, eps = 2.5, 0.1
        s = 0.5 * eps * np.exp(-L)
        rep = ex.check_eps0(G, x, 0.0, s, L, rho=eps, eps=eps)
        assert rep["backward_close"] and rep["passed"]

    def test_eps0_large_s_fails_when_close(self, G, x):
        # an s above the bound that still keeps the backward window close
        L, eps = 2.0, 0.5
        s = 3.0 * eps * np.exp(-L)
        rep = ex.check_eps0(G, x, 0.0, s, L, rho=eps, eps=eps)
        assert rep["backward_close"]
        assert not rep["s_passed"]

    def test_bracket_transport_dual_route(self, G, x):
        T = 2.0
        D2 = sc.make_section(
            G, qt.reduce(G, x.rep @ psl2.one_param("A", T)), 0.05, "CB",
            alpha=0.3)
        y = qt.reduce(G, x.rep @ psl2.one_param("C", 0.004)
                      @ psl2.one_param("B", 0.003))
        rep = ex.check_bracket_transport(G, None, D2, x, y, T)
        assert rep["passed"]


class TestSchedules:
    def test_eps1_small_rho_linear(self):
        # (e^{r/2}-1)/(e^{r/2}+1) ~ r/4 for small r
        for r in (1e-3, 1e-2):
            assert abs(ex.eps1_of_rho(r) - r / 4.0) < r * r

    def test_delta_schedule_defaults(self):
        rho = 0.8
        assert ex.delta_schedule(rho) == pytest.approx(rho / 96.0)
        assert ex.delta_schedule(rho, delta1=0.01) == pytest.approx(0.01 / 12)

    def test_write_reports(self, tmp_path):
        path = tmp_path / "reports.jsonl"
        ex.write_reports(path, [{"check": "demo", "passed": True,
                                 "measured": np.float64(0.5)}])
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1 and '"demo"' in lines[0]
