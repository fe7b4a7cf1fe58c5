"""Poincare sections and their coordinate charts.

A chart of kind "CB" holds the points Gamma g c_u b_s, one of kind "BC"
the points Gamma g b_s c_u, with |u|, |s| bounded by the chart radii.
Flowing an on-section point appends a_t on the right, so locating a point
relative to a chart reduces to a triangular decomposition of the
translate-corrected relative element; the flow time to the section is the
t-component, available in closed form.
"""

from dataclasses import dataclass

import numpy as np

from . import psl2, quotient as qt
from .psl2 import GroupElement

COORD_TOL = 1e-8


class SectionTooLarge(ValueError):
    """Chart radii violate the cross-section validity inequality."""


class NotOnSection(ValueError):
    """The point does not lie on the chart within tolerance."""


class CoordsOutOfRange(ValueError):
    """Requested coordinates exceed the chart radii."""


class NoIntersection(ValueError):
    """No flow translate of the point meets the chart inside the window."""


@dataclass(frozen=True)
class SectionCoords:
    u: float
    s: float
    primed: bool = False


@dataclass(frozen=True)
class SectionChart:
    group: qt.FuchsianGroup
    base: qt.QuotientPoint
    lift: GroupElement
    u_radius: float
    s_radius: float
    kind: str          # "CB" or "BC"
    alpha: float

    @property
    def radius(self):
        return max(self.u_radius, self.s_radius)


def make_section(G, z, eps, kind="CB", alpha=0.0, rect_radii=None):
    """Chart of radius eps at z, declared a local cross section of time alpha."""
    sigma = qt.injectivity_radius(G)
    if rect_radii is None:
        u_rad = s_rad = float(eps)
        if 4.0 * eps + 2.0 * alpha >= sigma:
            raise SectionTooLarge(
                f"4*{eps} + 2*{alpha} >= sigma* = {sigma:.6f}")
    else:
        u_rad, s_rad = map(float, rect_radii)
        if 2.0 * u_rad + 2.0 * s_rad + alpha >= sigma:
            raise SectionTooLarge(
                f"2*{u_rad} + 2*{s_rad} + {alpha} >= sigma* = {sigma:.6f}")
    if kind not in ("CB", "BC"):
        raise ValueError(f"unknown section kind {kind!r}")
    return SectionChart(G, z, z.rep, u_rad, s_rad, kind, float(alpha))


# ---------------------------------------------------------------------------
# coordinate location (vectorized core)
# ---------------------------------------------------------------------------

def locate_many(G, lift_m, kind, pts):
    """Coordinates of points relative to a chart lift, vectorized.

    Returns (u, s, t): for each point the translate-corrected decomposition
    rel = c_u b_s a_t (CB) or b_s c_u a_t (BC) with the smallest
    max(|u|,|s|,|t|) over the near-translate candidates.
    """
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    near = G.near_translates()
    rel = np.einsum("ij,gjk,nkl->ngil", psl2.inv_many(lift_m), near, pts)
    rel = psl2.canonicalize_many(rel)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == "CB":
            piv = rel[..., 0, 0]
            t = 2.0 * np.log(np.abs(piv))
            s = piv * rel[..., 0, 1]
            u = rel[..., 1, 0] / piv
        else:
            piv = rel[..., 1, 1]
            th = -2.0 * np.log(np.abs(piv))
            sh = rel[..., 0, 1] * piv
            uh = rel[..., 1, 0] / piv
            t = th
            s = sh * np.exp(th)
            u = uh * np.exp(-th)
    bad = np.abs(piv) <= 1e-9
    size = np.maximum(np.maximum(np.abs(u), np.abs(s)), np.abs(t))
    size[bad] = np.inf
    pick = np.argmin(size, axis=1)
    ar = np.arange(len(pts))
    u, s, t = u[ar, pick], s[ar, pick], t[ar, pick]
    if single:
        return float(u[0]), float(s[0]), float(t[0])
    return u, s, t


def coords_of(D, y, tol=COORD_TOL):
    """The unique on-section coordinates of y on chart D."""
    u, s, t = locate_many(D.group, D.lift.m, D.kind, y.rep.m)
    if abs(t) > tol:
        raise NotOnSection(f"flow offset {t:.3e} exceeds tolerance")
    if abs(u) > D.u_radius + tol or abs(s) > D.s_radius + tol:
        raise NotOnSection(f"coords ({u:.4f},{s:.4f}) outside chart radii")
    return SectionCoords(float(u), float(s), primed=(D.kind == "BC"))


def point_at(D, c):
    """The quotient point with coordinates c on chart D."""
    if abs(c.u) > D.u_radius + COORD_TOL or abs(c.s) > D.s_radius + COORD_TOL:
        raise CoordsOutOfRange(f"({c.u}, {c.s}) outside radii "
                               f"({D.u_radius}, {D.s_radius})")
    cu = psl2.one_param("C", c.u)
    bs = psl2.one_param("B", c.s)
    g = D.lift @ cu @ bs if D.kind == "CB" else D.lift @ bs @ cu
    return qt.reduce(D.group, g)


def project_to_section(D, x, t_window=None):
    """(pr_D(x), tau) with phi_tau(x) on D; tau is exact in closed form
    because right translation by a_tau shifts only the t-component."""
    if t_window is None:
        t_window = D.alpha if D.alpha > 0 else 0.5 * qt.injectivity_radius(D.group)
    u, s, t = locate_many(D.group, D.lift.m, D.kind, x.rep.m)
    tau = -t
    if abs(tau) > t_window + 1e-12:
        raise NoIntersection(f"flow offset {tau:.4f} outside window {t_window}")
    if abs(u) > D.u_radius + COORD_TOL or abs(s) > D.s_radius + COORD_TOL:
        raise NoIntersection(f"coords ({u:.4f},{s:.4f}) outside chart")
    return point_at(D, SectionCoords(float(u), float(s), D.kind == "BC")), float(tau)


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

def flow(G, x, t):
    return qt.reduce(G, x.rep @ psl2.one_param("A", t))


def hflow_s(G, x, s):
    return qt.reduce(G, x.rep @ psl2.one_param("B", s))


def hflow_u(G, x, u):
    return qt.reduce(G, x.rep @ psl2.one_param("C", u))


def flow_many(G, m, t):
    """phi_t on an (n,2,2) stack; t scalar or (n,)."""
    m = np.asarray(m, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), m.shape[:-2])
    a = np.zeros(m.shape)
    e = np.exp(0.5 * t)
    a[..., 0, 0] = e
    a[..., 1, 1] = 1.0 / e
    return qt.reduce_many(G, m @ a)
