"""Quantitative expansivity and shadowing checks.

Report-generating verifiers for the closing/expansivity estimates: orbits
that stay close over a long reparametrized window force a small flow
shift, with error decaying like e^{-L}.  All checks return structured
records (dicts) so sweeps can aggregate pass rates; nothing here raises
on a failed bound, only on violated hypotheses.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import psl2
from . import quotient as qt
from . import sections as sc
from .bracket import bracket, bracket_in_section

GRID_STEP = 0.05


class HypothesisViolated(ValueError):
    """The closeness hypothesis of a check fails on the input pair."""


@dataclass
class OrbitPair:
    """Two orbits with a sampled monotone reparametrization s(t), s(0)=0."""
    x: qt.QuotientPoint
    y: qt.QuotientPoint
    L: float
    delta: float
    grid: np.ndarray = field(default=None)     # t values
    s_of_t: np.ndarray = field(default=None)   # s(t) values

    def __post_init__(self):
        if self.grid is None:
            n = max(3, int(np.ceil(2 * self.L / GRID_STEP)) + 1)
            self.grid = np.linspace(-self.L, self.L, n)
        if self.s_of_t is None:
            self.s_of_t = self.grid.copy()
        if abs(self.s_of_t[np.argmin(np.abs(self.grid))]) > 1e-12:
            raise ValueError("reparametrization must satisfy s(0) = 0")
        if np.any(np.diff(self.s_of_t) < 0):
            raise ValueError("reparametrization must be monotone")


def _pair_dists(G, p):
    xs = sc.flow_many(G, np.broadcast_to(p.x.rep.m, (len(p.grid), 2, 2)),
                      p.grid)
    ys = sc.flow_many(G, np.broadcast_to(p.y.rep.m, (len(p.grid), 2, 2)),
                      p.s_of_t)
    return qt.quotient_dist_many(G, xs, ys)


def check_reparam_bound(G, p, eps):
    """Verify |s(t) - t| <= eps on the grid, given the closeness hypothesis."""
    d = _pair_dists(G, p)
    if np.max(d) > p.delta + 1e-12:
        raise HypothesisViolated(
            f"orbits are {np.max(d):.4g}-separated, above delta={p.delta}")
    dev = float(np.max(np.abs(p.s_of_t - p.grid)))
    return {
        "check": "reparam_bound",
        "passed": dev <= eps,
        "bound": eps,
        "measured": dev,
        "margin": eps - dev,
        "grid_step": float(p.grid[1] - p.grid[0]),
    }


def check_exponential_closing(G, x, y, v, L, eps):
    """Verify d_X(y, phi_v(x)) < 2 eps e^{-L}."""
    d = qt.quotient_dist(G, y, sc.flow(G, x, v))
    bound = 2.0 * eps * np.exp(-L)
    return {
        "check": "exponential_closing",
        "passed": d < bound,
        "bound": bound,
        "measured": d,
        "ratio": d / bound,
        "L": L,
    }


def check_eps0(G, x, u, s, L, rho, eps):
    """Closeness over one-sided windows forces exponentially small leaf
    parameters: backward 3*rho-closeness bounds |s|, forward bounds |u|.

    z = x-translate by c_u b_s; reports whichever window hypothesis holds."""
    z = qt.reduce(G, x.rep @ psl2.one_param("C", u) @ psl2.one_param("B", s))
    grid_b = np.linspace(-L, 0.0, max(3, int(np.ceil(L / GRID_STEP)) + 1))
    grid_f = -grid_b[::-1]
    xs_b = sc.flow_many(G, np.broadcast_to(x.rep.m, (len(grid_b), 2, 2)), grid_b)
    zs_b = sc.flow_many(G, np.broadcast_to(z.rep.m, (len(grid_b), 2, 2)), grid_b)
    d_b = float(np.max(qt.quotient_dist_many(G, xs_b, zs_b)))
    xs_f = sc.flow_many(G, np.broadcast_to(x.rep.m, (len(grid_f), 2, 2)), grid_f)
    zs_f = sc.flow_many(G, np.broadcast_to(z.rep.m, (len(grid_f), 2, 2)), grid_f)
    d_f = float(np.max(qt.quotient_dist_many(G, xs_f, zs_f)))
    bound = eps * np.exp(-L)
    rep = {
        "check": "eps0",
        "L": L,
        "rho": rho,
        "bound": bound,
        "backward_close": d_b <= 3.0 * rho,
        "forward_close": d_f <= 3.0 * rho,
        "s": s,
        "u": u,
    }
    rep["s_passed"] = (not rep["backward_close"]) or abs(s) < bound
    rep["u_passed"] = (not rep["forward_close"]) or abs(u) < bound
    rep["passed"] = rep["s_passed"] and rep["u_passed"]
    return rep


def check_bracket_transport(G, D, D2, x, y, T, eps=0.2):
    """Dual-route transport: flowing the on-section bracket for time T and
    re-projecting agrees with bracketing the transported points."""
    w = bracket(G, x, y, eps).point
    w1, _ = sc.project_to_section(D2, sc.flow(G, w, T), D2.alpha + 1.0)
    x2, _ = sc.project_to_section(D2, sc.flow(G, x, T), D2.alpha + 1.0)
    y2, tau_y = sc.project_to_section(D2, sc.flow(G, y, T), D2.alpha + 1.0)
    cx2 = sc.coords_of(D2, x2)
    cy2 = sc.coords_of(D2, y2)
    sb = bracket_in_section(D2, cx2, cy2)
    w2 = sc.point_at(D2, sb.coords)
    d = qt.quotient_dist(G, w1, w2)
    return {
        "check": "bracket_transport",
        "passed": d <= 1e-7,
        "bound": 1e-7,
        "measured": d,
        "T": T,
        "s_of_T": T + tau_y,
    }


def eps1_of_rho(rho):
    """Leaf-parameter scale compatible with a rho-ball: (e^{rho/2}-1)/(e^{rho/2}+1)."""
    e = np.exp(rho / 2.0)
    return (e - 1.0) / (e + 1.0)


def delta_schedule(rho, delta1=None, delta2=None):
    """Operational closeness thresholds; conservative defaults
    delta1 = rho/8 and delta2 = delta1/12."""
    if delta1 is None:
        delta1 = rho / 8.0
    if delta2 is None:
        delta2 = delta1 / 12.0
    return min(delta1, delta2)


def write_reports(path, reports):
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep, default=float) + "\n")
