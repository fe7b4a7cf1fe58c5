"""Rectangle calculus on section charts.

Rectangles are products of two one-dimensional label sets attached to a
chart.  On a CB chart the axes are (u, s') where the stable coordinate is
s = s'/(1 - u s'); on a BC chart they are (s, u') with u = u'/(1 - s u').
In these labels the on-section bracket is the exchange (u_x, s'_y), so a
product of label sets is bracket-closed by construction, and holonomies
(flow-induced maps between charts) act componentwise by real Moebius maps.
"""

from dataclasses import dataclass

import numpy as np

from . import psl2, quotient as qt
from . import sections as sc
from .sections import SectionChart, SectionCoords


class RectangleTooLarge(ValueError):
    """Radius violates the rectangle validity bound."""


class NotInRectangle(ValueError):
    """Point is outside the rectangle."""


class ChartMismatch(ValueError):
    """Operation requires rectangles on the same (or paired) chart."""


class HolonomyDegenerate(ValueError):
    """No monotone componentwise Moebius model fits the transition."""


# ---------------------------------------------------------------------------
# label sets: finite unions of closed intervals
# ---------------------------------------------------------------------------

class LabelSet:
    """Sorted disjoint closed intervals of leaf labels."""

    __slots__ = ("intervals",)

    def __init__(self, intervals=()):
        ivs = sorted((float(lo), float(hi)) for lo, hi in intervals
                     if hi >= lo)
        merged = []
        for lo, hi in ivs:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        self.intervals = tuple((lo, hi) for lo, hi in merged)

    @classmethod
    def interval(cls, lo, hi):
        return cls([(lo, hi)])

    @classmethod
    def point(cls, x):
        return cls([(x, x)])

    def is_empty(self):
        return not self.intervals

    def measure(self):
        return sum(hi - lo for lo, hi in self.intervals)

    def hull(self):
        if not self.intervals:
            raise ValueError("empty label set has no hull")
        return self.intervals[0][0], self.intervals[-1][1]

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (x >= lo - tol) & (x <= hi + tol)
        return bool(out) if out.ndim == 0 else out

    def union(self, other):
        return LabelSet(self.intervals + other.intervals)

    def intersect(self, other):
        out = []
        for a0, a1 in self.intervals:
            for b0, b1 in other.intervals:
                lo, hi = max(a0, b0), min(a1, b1)
                if hi >= lo:
                    out.append((lo, hi))
        return LabelSet(out)

    def diff(self, other):
        """Closure of the set difference; degenerate slivers are dropped."""
        pieces = list(self.intervals)
        for b0, b1 in other.intervals:
            nxt = []
            for a0, a1 in pieces:
                if b1 < a0 or b0 > a1:
                    nxt.append((a0, a1))
                    continue
                if a0 < b0:
                    nxt.append((a0, min(b0, a1)))
                if b1 < a1:
                    nxt.append((max(b1, a0), a1))
            pieces = nxt
        return LabelSet([(lo, hi) for lo, hi in pieces if hi > lo]
                        or [(lo, hi) for lo, hi in pieces if hi == lo and
                            (lo, hi) in self.intervals])

    def dilate(self, pad):
        return LabelSet([(lo - pad, hi + pad) for lo, hi in self.intervals])

    def map(self, f):
        """Image under a monotone map f (applied to endpoints)."""
        out = []
        for lo, hi in self.intervals:
            a, b = f(lo), f(hi)
            out.append((min(a, b), max(a, b)))
        return LabelSet(out)

    def sample(self, n, rng=None):
        """Deterministic (or seeded) sample points covering the set."""
        pts = []
        total = self.measure()
        for lo, hi in self.intervals:
            if total == 0:
                pts.append(0.5 * (lo + hi))
                continue
            k = max(2, int(round(n * (hi - lo) / total)))
            if rng is None:
                pts.extend(np.linspace(lo, hi, k))
            else:
                pts.extend(rng.uniform(lo, hi, k))
        return np.array(pts)

    def hausdorff(self, other):
        """Hausdorff distance between two finite interval unions."""
        if self.is_empty() or other.is_empty():
            return 0.0 if self.is_empty() and other.is_empty() else np.inf
        a = self.sample(64)
        b = other.sample(64)
        d1 = np.max(np.min(np.abs(a[:, None] - b[None, :]), axis=1))
        d2 = np.max(np.min(np.abs(b[:, None] - a[None, :]), axis=1))
        return float(max(d1, d2))

    def __eq__(self, other):
        return isinstance(other, LabelSet) and self.intervals == other.intervals

    def __hash__(self):
        return hash(self.intervals)

    def __repr__(self):
        body = ", ".join(f"[{lo:.6g},{hi:.6g}]" for lo, hi in self.intervals)
        return f"LabelSet({body})"


def label_union(a, b):
    return a.union(b)


def label_intersect(a, b):
    return a.intersect(b)


def label_diff(a, b):
    return a.diff(b)


# ---------------------------------------------------------------------------
# one-dimensional Moebius maps (for holonomies)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mobius1D:
    """x -> (a x + b)/(c x + d), normalized to |det| = 1."""
    a: float
    b: float
    c: float
    d: float

    @classmethod
    def normalized(cls, a, b, c, d):
        # the map is projective, so singularity is relative to the
        # coefficient scale; rescaling by a noisy determinant changes the
        # representative, not the map
        scale = max(abs(a), abs(b), abs(c), abs(d))
        det = a * d - b * c
        if scale == 0.0 or abs(det) < 1e-14 * scale * scale:
            raise HolonomyDegenerate("singular coefficient matrix")
        r = np.sqrt(abs(det))
        return cls(a / r, b / r, c / r, d / r)

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def scaling(cls, factor):
        r = np.sqrt(factor)
        return cls(r, 0.0, 0.0, 1.0 / r)

    @classmethod
    def fit(cls, x, y):
        """Least-squares Moebius through sample pairs (>= 3 points)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rows = np.stack([x, np.ones_like(x), -y * x, -y], axis=1)
        _, sv, vt = np.linalg.svd(rows)
        if sv[-2] < 1e-10:
            raise HolonomyDegenerate("Moebius fit is rank-deficient")
        return cls.normalized(*vt[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = (self.a * x + self.b) / (self.c * x + self.d)
        return float(out) if out.ndim == 0 else out

    def inverse(self):
        return Mobius1D.normalized(self.d, -self.b, -self.c, self.a)

    def compose(self, other):
        """self after other."""
        return Mobius1D.normalized(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d)

    def monotone_on(self, lo, hi):
        den = np.array([self.c * lo + self.d, self.c * hi + self.d])
        return bool(np.all(den > 1e-12) or np.all(den < -1e-12))


# ---------------------------------------------------------------------------
# rectangles
# ---------------------------------------------------------------------------

def s_from_label(u, sprime):
    """Stable coordinate from leaf labels: s = s'/(1 - u s')."""
    return sprime / (1.0 - np.asarray(u) * np.asarray(sprime))

def label_from_s(u, s):
    """Inverse: s' = s/(1 + u s)."""
    return s / (1.0 + np.asarray(u) * np.asarray(s))


@dataclass(frozen=True)
class Rectangle:
    """Product of a plain-axis and a primed-axis label set on a chart.

    CB chart: plain = u, primed = s'.  BC chart: plain = s, primed = u'.
    """
    chart: SectionChart
    plain_labels: LabelSet
    primed_labels: LabelSet

    # CB-style accessors
    @property
    def u_labels(self):
        return self.plain_labels

    @property
    def sprime_labels(self):
        return self.primed_labels

    def is_empty(self):
        return self.plain_labels.is_empty() or self.primed_labels.is_empty()

    def contains_labels(self, plain, primed, tol=0.0):
        return (self.plain_labels.contains(plain, tol)
                & self.primed_labels.contains(primed, tol))

    def coords_at(self, plain, primed):
        """Chart coordinates of the point with the given labels."""
        dep = s_from_label(plain, primed)
        if self.chart.kind == "CB":
            return SectionCoords(float(plain), float(dep), False)
        return SectionCoords(float(dep), float(plain), True)

    def point_at_labels(self, plain, primed):
        return sc.point_at(self.chart, self.coords_at(plain, primed))

    def sample_points(self, n, rng=None):
        """Label pairs sampling the rectangle."""
        p = self.plain_labels.sample(n, rng)
        q = self.primed_labels.sample(n, rng)
        k = min(len(p), len(q))
        return p[:k], q[:k]


def leaf_labels(R, x):
    """Leaf labels (plain, primed) of a point on R's chart."""
    c = sc.coords_of(R.chart, x)
    if R.chart.kind == "CB":
        return float(c.u), float(label_from_s(c.u, c.s))
    return float(c.s), float(label_from_s(c.s, c.u))


def rect_S(G, z, eps, alpha=0.0, delta_star=None):
    """The symmetric CB rectangle of radius eps at z."""
    return rect_asym(G, z, eps, eps, "CB", alpha, delta_star)


def rect_T(G, z, eps, alpha=0.0, delta_star=None):
    """The symmetric BC rectangle of radius eps at z."""
    return rect_asym(G, z, eps, eps, "BC", alpha, delta_star)


def rect_asym(G, z, plain_rad, primed_rad, kind="CB", alpha=0.0,
              delta_star=None):
    """Asymmetric rectangle with plain/primed label radii."""
    if delta_star is None:
        delta_star = qt.injectivity_radius(G) / 2.0
    m = max(plain_rad, primed_rad)
    reach = m / (1.0 - plain_rad * primed_rad)
    if plain_rad * primed_rad >= 1.0 or reach >= delta_star / 4.0:
        raise RectangleTooLarge(
            f"label radius {m} reaches {reach:.4f} >= delta*/4 = {delta_star/4:.4f}")
    dep_rad = primed_rad / (1.0 - plain_rad * primed_rad)
    if kind == "CB":
        radii = (plain_rad, dep_rad)
    else:
        radii = (dep_rad, plain_rad)
    chart = sc.make_section(G, z, None, kind, alpha, rect_radii=radii)
    return Rectangle(chart,
                     LabelSet.interval(-plain_rad, plain_rad),
                     LabelSet.interval(-primed_rad, primed_rad))


def stable_fiber(R, x):
    """The stable fiber through x: plain label frozen."""
    plain, primed = leaf_labels(R, x)
    if not R.contains_labels(plain, primed, tol=1e-9):
        raise NotInRectangle(f"labels ({plain:.4g},{primed:.4g}) outside rectangle")
    return Rectangle(R.chart, LabelSet.point(plain), R.primed_labels)


def unstable_fiber(R, x):
    """The unstable fiber through x: primed label frozen."""
    plain, primed = leaf_labels(R, x)
    if not R.contains_labels(plain, primed, tol=1e-9):
        raise NotInRectangle(f"labels ({plain:.4g},{primed:.4g}) outside rectangle")
    return Rectangle(R.chart, R.plain_labels, LabelSet.point(primed))


def rect_bracket(R1, R2):
    """Bracket of two rectangles on the same chart: plain labels of the
    first, primed labels of the second."""
    if R1.chart is not R2.chart and R1.chart != R2.chart:
        raise ChartMismatch("rect_bracket requires a common chart")
    return Rectangle(R1.chart, R1.plain_labels, R2.primed_labels)


def convert_version(R):
    """Project a rectangle to the paired chart of the other kind at the same
    base.  The primed-coordinate transition is the identity, so labels are
    exchanged between the axes unchanged."""
    ch = R.chart
    other = "BC" if ch.kind == "CB" else "CB"
    # swapped roles: the primed labels become the plain axis of the new kind
    plain = R.primed_labels
    primed = R.plain_labels
    pr = max(abs(v) for iv in plain.intervals for v in iv) if plain.intervals else 0.0
    qr = max(abs(v) for iv in primed.intervals for v in iv) if primed.intervals else 0.0
    dep = qr / (1.0 - pr * qr)   # reach of the dependent coordinate
    radii = (pr, dep) if other == "CB" else (dep, pr)
    chart = sc.SectionChart(ch.group, ch.base, ch.lift,
                            radii[0], radii[1], other, ch.alpha)
    return Rectangle(chart, plain, primed)


# ---------------------------------------------------------------------------
# holonomy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HolonomyMap:
    """Componentwise Moebius model of the flow-induced map between charts."""
    source: SectionChart
    target: SectionChart
    plain_map: Mobius1D
    primed_map: Mobius1D
    time_offset: float
    pad: float

    def apply_labels(self, plain, primed):
        return self.plain_map(plain), self.primed_map(primed)

    def apply_rect(self, R):
        if R.chart != self.source:
            raise ChartMismatch("rectangle lives on a different chart")
        lo, hi = (R.plain_labels.hull() if not R.plain_labels.is_empty()
                  else (0.0, 0.0))
        pl = R.plain_labels.map(self.plain_map).dilate(self.pad)
        pr = R.primed_labels.map(self.primed_map).dilate(self.pad)
        return Rectangle(self.target, pl, pr)

    def inverse(self):
        return HolonomyMap(self.target, self.source,
                           self.plain_map.inverse(),
                           self.primed_map.inverse(),
                           -self.time_offset, self.pad)

    def compose(self, other):
        """self after other (other: A->B, self: B->C)."""
        if other.target != self.source:
            raise ChartMismatch("holonomies do not chain")
        return HolonomyMap(other.source, self.target,
                           self.plain_map.compose(other.plain_map),
                           self.primed_map.compose(other.primed_map),
                           self.time_offset + other.time_offset,
                           self.pad + other.pad)


def _labels_on(chart, pts):
    """(plain, primed, t) labels of an (n,2,2) stack relative to a chart."""
    u, s, t = sc.locate_many(chart.group, chart.lift.m, chart.kind, pts)
    if chart.kind == "CB":
        return u, label_from_s(u, s), t
    return s, label_from_s(s, u), t


def _rep_of_labels(chart, plain, primed):
    """(n,2,2) group representatives of label pairs on a chart."""
    plain = np.asarray(plain, dtype=float)
    primed = np.asarray(primed, dtype=float)
    dep = s_from_label(plain, primed)
    n = len(plain)
    cu = np.zeros((n, 2, 2))
    bs = np.zeros((n, 2, 2))
    cu[:, 0, 0] = cu[:, 1, 1] = 1.0
    bs[:, 0, 0] = bs[:, 1, 1] = 1.0
    if chart.kind == "CB":
        cu[:, 1, 0] = plain
        bs[:, 0, 1] = dep
        rel = cu @ bs
    else:
        bs[:, 0, 1] = plain
        cu[:, 1, 0] = dep
        rel = bs @ cu
    return chart.lift.m[None] @ rel


def holonomy(source, target, connector=None, pad=1e-7, check_n=25):
    """Fit the componentwise Moebius model of the transition from source to
    target along the flow; verified on a sample grid, padded by `pad`.

    `connector` is an optional (gamma, t) hint; the translate correction is
    recovered automatically by the chart-location scan, so only the flow
    branch matters and is validated through the fitted time offset.
    """
    pr_u = min(source.u_radius, 0.99 * target.u_radius)
    pr_s = min(source.s_radius, 0.99 * target.s_radius)
    ur = 0.9 * (pr_u if source.kind == "CB" else pr_s)
    sr = 0.9 * (pr_s if source.kind == "CB" else pr_u)
    xs = np.linspace(-ur, ur, 7)
    ys = np.linspace(-sr, sr, 7)
    # plain axis samples along primed = 0, and vice versa
    rep_p = _rep_of_labels(source, xs, np.zeros_like(xs))
    rep_q = _rep_of_labels(source, np.zeros_like(ys), ys)
    p_out, p_cross, t_p = _labels_on(target, rep_p)
    q_cross, q_out, t_q = _labels_on(target, rep_q)
    plain_map = Mobius1D.fit(xs, p_out)
    primed_map = Mobius1D.fit(ys, q_out)
    lo, hi = -ur, ur
    if not plain_map.monotone_on(lo, hi) or not primed_map.monotone_on(-sr, sr):
        raise HolonomyDegenerate("fitted component map is not monotone")
    # grid verification of componentwise behaviour
    rng = np.random.default_rng(0)
    gp = rng.uniform(-ur, ur, check_n)
    gq = rng.uniform(-sr, sr, check_n)
    rep = _rep_of_labels(source, gp, gq)
    op, oq, _ = _labels_on(target, rep)
    err = max(np.max(np.abs(op - plain_map(gp))),
              np.max(np.abs(oq - primed_map(gq))))
    if err > 1e-4:
        raise HolonomyDegenerate(
            f"transition deviates from componentwise model by {err:.2e}")
    # flow time carrying source points onto the target section
    return HolonomyMap(source, target, plain_map, primed_map,
                       float(-np.median(t_p)), pad + err)
