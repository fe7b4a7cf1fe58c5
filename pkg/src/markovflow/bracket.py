"""Local product structure: the bracket of two nearby orbits.

The bracket of x and y is the unique point on the stable leaf of a small
flow translate of x and the unstable leaf of y.  Globally it comes from
the a-b-c decomposition of the translate-corrected relative element; on a
section chart there is a closed coordinate formula, and the projected
result simply exchanges leaf labels: (u_x, s'_y).
"""

from dataclasses import dataclass

import numpy as np

from . import psl2, quotient as qt
from .sections import SectionCoords


class TooFarApart(ValueError):
    """The two points are outside the bracket threshold."""


class DenominatorNearZero(ValueError):
    """The on-section bracket formula degenerates."""


@dataclass(frozen=True)
class BracketResult:
    point: qt.QuotientPoint
    v: float
    s: float
    u: float


def bracket(G, x, y, eps):
    """The intersection of W^s(phi_v(x)) and W^u(y), with leaf parameters.

    Operational threshold: inputs closer than eps/4; output parameters are
    asserted to stay within eps, so correctness is self-certifying.
    """
    near = G.near_translates()
    rel = np.einsum("ij,gjk,kl->gil", psl2.inv_many(x.rep.m), near, y.rep.m)
    rel = psl2.canonicalize_many(rel)
    dists = psl2.norm_log_many(rel)
    k = int(np.argmin(dists))
    if dists[k] >= eps / 4.0:
        raise TooFarApart(f"d_X = {dists[k]:.4f} >= eps/4 = {eps/4:.4f}")
    a = rel[k]
    d = a[1, 1]
    if abs(d) <= 1e-12:
        raise psl2.DegenerateDecomposition("bottom-right entry vanishes")
    t = -2.0 * np.log(abs(d))
    s = a[0, 1] * d
    u = a[1, 0] / d
    if max(abs(t), abs(s), abs(u)) > eps:
        raise TooFarApart(
            f"bracket parameters (v={t:.3g}, s={s:.3g}, u={u:.3g}) exceed {eps}")
    point = qt.reduce(
        G, x.rep @ psl2.one_param("A", t) @ psl2.one_param("B", s))
    return BracketResult(point, float(t), float(s), float(u))


@dataclass(frozen=True)
class SectionBracket:
    coords: SectionCoords    # (u_x, s_w): on-section bracket coordinates
    s: float                 # stable-leaf parameter of the off-section point
    u: float                 # unstable-leaf parameter
    v: float                 # flow shift to the section


def bracket_in_section_uv(ux, sx, uy, sy):
    """Closed-form on-section bracket, vectorized over coordinate arrays.

    Returns (u_w, s_w, s, u, v) with (u_w, s_w) the coordinates of the
    projected bracket point and (s, u, v) the leaf/flow parameters."""
    den = 1.0 + (uy - ux) * sy
    s = (sy - sx - sx * sy * (uy - ux)) * den
    u = (ux - uy) / den
    v = -2.0 * np.log(den)
    s_w = sy / den
    return ux, s_w, s, u, v


def bracket_in_section(D, cx, cy):
    """On-section bracket of two coordinate pairs on the same chart."""
    den = 1.0 + (cy.u - cx.u) * cy.s
    if abs(den) < 1e-10:
        raise DenominatorNearZero(f"1 + (u_y - u_x) s_y = {den:.3e}")
    uw, s_w, s, u, v = bracket_in_section_uv(cx.u, cx.s, cy.u, cy.s)
    lim = 4.0 * max(D.u_radius, D.s_radius)
    if max(abs(s), abs(u), abs(v), abs(s_w)) > lim:
        raise TooFarApart("on-section bracket parameters exceed chart scale")
    return SectionBracket(
        SectionCoords(float(uw), float(s_w), cx.primed),
        float(s), float(u), float(v))
