"""Pipeline from a section cover of X to a verified Markov partition.

Stages: build a covering family of small sections with flow offsets
(`build_pre_markov`), refine the cores into bracket-stable rectangles C_i
by a contracting label-set recursion along time-L holonomies (`refine_C`),
cut each C_j by the projections of its successors (`subdivide_E`), group
points by finite symbolic itineraries (`itinerary_classes`), shift the
class closures into a disjoint family with an adjacency matrix
(`finalize_markov`), and verify the Markov property on sampled fibers
(`verify_markov`).  `export_symbolic` emits the subshift data and closes
admissible periodic words into closed orbits whose lengths are checked
against the group length spectrum.

The heavy primitives are batched over (n,2,2) numpy stacks; a frame-space
hash (`SectionIndex`) keeps every locate/return-map query local.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import psl2, quotient as qt, sections as sc
from .psl2 import GroupElement
from .rectangles import (LabelSet, Mobius1D, Rectangle, HolonomyDegenerate,
                         label_from_s, s_from_label)


class CoverFailure(RuntimeError):
    """The covering stage could not reach the coverage target."""


class OffsetExhausted(RuntimeError):
    """No valid flow offset for a new section."""


class ReturnNotFound(RuntimeError):
    """An orbit failed to return to the family within the horizon."""


class ScheduleViolation(RuntimeError):
    """The refinement radius schedule leaves its guaranteed envelope."""


class EmptySubdivision(RuntimeError):
    """A member has no observed transitions; L or alpha is misconfigured."""


class SampleTooSparse(RuntimeError):
    """Class structure is unresolved at the sampling density."""


class ShiftExhausted(RuntimeError):
    """No shift scale makes the members disjoint."""


# ---------------------------------------------------------------------------
# Liouville sampling of X
# ---------------------------------------------------------------------------

def domain_radius(G):
    """Circumradius of the base-point fundamental domain about i (padded)."""
    return G.circumradius() + 0.02


def _dirichlet_sites(G):
    """Orbit points gamma(i) cutting the Dirichlet domain about i."""
    if getattr(G, "_sites", None) is None:
        ball = G.ball_array(2)
        z = qt.mobius_i_many(ball)
        d = qt.hyp_dist_i_many(z)
        keep = (d > 1e-9) & (d <= 2.0 * G.circumradius() + 0.2)
        G._sites = z[keep]
    return G._sites


def _hyp_dist_points(z, w):
    """Hyperbolic distance between half-plane point arrays (broadcast)."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    q = 1.0 + np.abs(z - w) ** 2 / (2.0 * z.imag * w.imag)
    return np.arccosh(np.maximum(q, 1.0))


def _frame_elements(x, y, phi):
    """Elements with base point x+iy and rotation phi about the base."""
    n = len(x)
    sy = np.sqrt(y)
    t = np.zeros((n, 2, 2))
    t[:, 0, 0] = sy
    t[:, 0, 1] = x / sy
    t[:, 1, 1] = 1.0 / sy
    r = np.zeros((n, 2, 2))
    c, s = np.cos(phi), np.sin(phi)
    r[:, 0, 0] = c
    r[:, 0, 1] = s
    r[:, 1, 0] = -s
    r[:, 1, 1] = c
    return psl2.canonicalize_many(t @ r)


def haar_samples(G, n, rng, radius=None):
    """n points of X drawn from the invariant (Liouville) measure.

    Uniform points of a hyperbolic disc about i, kept when they fall in
    the base-point Dirichlet domain (closest to i among its orbit sites),
    paired with a uniform frame angle: exactly uniform on a fundamental
    set, and already in reduced position.
    """
    if radius is None:
        radius = domain_radius(G)
    sites = _dirichlet_sites(G)
    out = []
    got = 0
    cosh_r = np.cosh(radius)
    while got < n:
        k = max(1024, int(2.2 * (n - got)))
        r = np.arccosh(1.0 + rng.random(k) * (cosh_r - 1.0))
        th = rng.uniform(0.0, 2.0 * np.pi, k)
        phi = rng.uniform(0.0, np.pi, k)
        # base point at hyperbolic distance r from i in direction th
        d = np.tanh(0.5 * r) * np.exp(1j * th)      # Poincare disc
        z = 1j * (1.0 + d) / (1.0 - d)              # back to half-plane
        keep = r <= np.min(_hyp_dist_points(z[:, None], sites[None, :]),
                           axis=1) + 1e-12
        g = _frame_elements(z.real[keep], z.imag[keep], phi[keep])
        take = min(len(g), n - got)
        out.append(g[:take])
        got += take
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# frame-space hash over section windows
# ---------------------------------------------------------------------------

def _frame_vec(m):
    """Frame coordinates (v.re, v.im, psi/2): v is the Poincare-disc image
    of the base point in log-radial (exponential-map) scale, so cell
    distances never exceed hyperbolic ones and the hash stays uniform."""
    x, y, psi = qt.frame_many(m)
    z = x + 1j * y
    w = (z - 1j) / (z + 1j)
    r = np.abs(w)
    scale = np.where(r > 1e-12, 2.0 * np.arctanh(np.minimum(r, 1 - 1e-15))
                     / np.maximum(r, 1e-12), 2.0)
    v = w * scale
    return np.stack([v.real, v.imag, 0.5 * psi], axis=-1)


class SectionIndex:
    """Locates points against a family of section windows.

    Each section lift is translated by every near group element whose base
    point can matter, and the translated window is registered in a grid
    over frame space at several probe offsets; a query then only touches
    the sections registered near the query point's own frame cell.
    """

    def __init__(self, G, lifts, u_reach, s_reach, t_lo, t_hi, cell=0.3):
        self.G = G
        self.u_reach = float(u_reach)
        self.s_reach = float(s_reach)
        self.t_lo = float(t_lo)
        self.t_hi = float(t_hi)
        self.cell = float(cell)
        self.psi_mod = max(1, int(round(np.pi / cell)))
        self._build(np.asarray(lifts, dtype=float))

    def _axis(self, reach, step=0.5):
        k = max(2, int(np.ceil(2.0 * reach / step)) + 1)
        return np.linspace(-reach, reach, k)

    def _build(self, lifts):
        G = self.G
        n = len(lifts)
        near = G.near_translates()
        trans = psl2.canonicalize_many(
            np.einsum("gij,njk->gnik", near, lifts)).reshape(-1, 2, 2)
        owner = np.tile(np.arange(n), len(near))
        keep_r = domain_radius(G) + (self.u_reach + self.s_reach
                                     + max(abs(self.t_lo), abs(self.t_hi))) + 0.15
        disp = qt.hyp_dist_i_many(qt.mobius_i_many(trans))
        sel = disp <= keep_r
        self.trans = trans[sel]
        self.trans_inv = psl2.inv_many(self.trans)
        self.owner = owner[sel]
        self.n_sections = n
        # probe frames over the coordinate window of each translated lift,
        # processed one probe at a time to bound memory
        gu = self._axis(self.u_reach)
        gs = self._axis(self.s_reach)
        gt = np.linspace(self.t_lo, self.t_hi,
                         max(2, int(np.ceil((self.t_hi - self.t_lo) / 0.45)) + 1))
        uu, ss, tt = [a.ravel() for a in np.meshgrid(gu, gs, gt)]
        probe = np.zeros((len(uu), 2, 2))
        e = np.exp(0.5 * tt)
        probe[:, 0, 0] = e
        probe[:, 0, 1] = ss * np.exp(0.5 * tt)
        probe[:, 1, 0] = uu * e
        probe[:, 1, 1] = uu * ss * e + 1.0 / e
        all_ids = np.arange(len(self.trans))
        key_parts, id_parts = [], []
        for p in range(len(probe)):
            fv = _frame_vec(self.trans @ probe[p])
            key_parts.append(self._keys(fv))
            id_parts.append(all_ids)
        pair = np.stack([np.concatenate(key_parts),
                         np.concatenate(id_parts)], axis=1)
        pair = np.unique(pair, axis=0)
        order = np.argsort(pair[:, 0], kind="stable")
        self._sorted_keys = pair[order, 0]
        self._sorted_ids = pair[order, 1]
        uniq, start = np.unique(self._sorted_keys, return_index=True)
        self._uniq = uniq
        self._start = np.append(start, len(self._sorted_keys))

    def _keys(self, fv, offset=(0, 0, 0)):
        c = self.cell
        ix = np.floor(fv[:, 0] / c).astype(np.int64) + offset[0]
        iy = np.floor(fv[:, 1] / c).astype(np.int64) + offset[1]
        ip = (np.floor(fv[:, 2] / c).astype(np.int64) + offset[2]) % self.psi_mod
        return ((ix + 512) * 1024 + (iy + 512)) * 1024 + ip

    def query_pairs(self, reps):
        """(point index, translated-lift index) candidate pairs."""
        fv = _frame_vec(reps)
        pi, ti = [], []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dp in (-1, 0, 1):
                    keys = self._keys(fv, (dx, dy, dp))
                    pos = np.searchsorted(self._uniq, keys)
                    pos = np.clip(pos, 0, len(self._uniq) - 1)
                    hp = np.nonzero(self._uniq[pos] == keys)[0]
                    if len(hp) == 0:
                        continue
                    lo = self._start[pos[hp]]
                    ln = self._start[pos[hp] + 1] - lo
                    total = int(np.sum(ln))
                    if total == 0:
                        continue
                    head = np.repeat(np.cumsum(ln) - ln, ln)
                    flat = np.repeat(lo, ln) + np.arange(total) - head
                    pi.append(np.repeat(hp, ln))
                    ti.append(self._sorted_ids[flat])
        if not pi:
            return (np.empty(0, dtype=np.int64),) * 2
        pi = np.concatenate(pi)
        ti = np.concatenate(ti)
        code = pi * len(self.trans) + ti
        code = np.unique(code)
        return code // len(self.trans), code % len(self.trans)

    def locate(self, reps, slop=0.05):
        """All window hits: arrays (point, section, u, s, t).

        A hit is a candidate whose triangular coordinates fall inside the
        index window dilated by `slop`.
        """
        reps = np.asarray(reps, dtype=float)
        pi, ti = self.query_pairs(reps)
        if len(pi) == 0:
            return pi, pi, np.empty(0), np.empty(0), np.empty(0)
        # no canonicalization: u, t and s = piv*rel01 are sign-invariant
        rel = self.trans_inv[ti] @ reps[pi]
        piv = rel[:, 0, 0]
        ok = np.abs(piv) > 1e-9
        with np.errstate(divide="ignore", invalid="ignore"):
            t = 2.0 * np.log(np.abs(piv))
            s = piv * rel[:, 0, 1]
            u = rel[:, 1, 0] / piv
        ok &= (np.abs(u) <= self.u_reach + slop)
        ok &= (np.abs(s) <= self.s_reach + slop)
        ok &= (t >= self.t_lo - slop) & (t <= self.t_hi + slop)
        return pi[ok], self.owner[ti[ok]], u[ok], s[ok], t[ok]


# ---------------------------------------------------------------------------
# the covering family
# ---------------------------------------------------------------------------

@dataclass
class PreMarkovFamily:
    """Covering family: sections D_i = P_{d_factor*eps}(z_i) with outer
    cores B_i = S_eps(z_i) and inner cores K_i = S_{eps/2}(z_i)."""
    group: qt.FuchsianGroup
    lifts: np.ndarray             # (n,2,2) base frames z_i
    epsilon: float
    alpha: float
    d_factor: float = 3.0
    build_report: dict = field(default_factory=dict)
    _charts: dict = field(repr=False, default_factory=dict)
    _index: dict = field(repr=False, default_factory=dict)

    @property
    def n(self):
        return len(self.lifts)

    @property
    def d_radius(self):
        return self.d_factor * self.epsilon

    def chart(self, i):
        """The carrying chart D_i."""
        if i not in self._charts:
            z = qt.QuotientPoint(GroupElement(self.lifts[i]))
            self._charts[i] = sc.make_section(
                self.group, z, None, "CB", self.alpha,
                rect_radii=(self.d_radius, self.d_radius))
        return self._charts[i]

    def rect(self, i, radius):
        r = float(radius)
        return Rectangle(self.chart(i), LabelSet.interval(-r, r),
                         LabelSet.interval(-r, r))

    def rect_D(self, i):
        return self.rect(i, self.d_radius)

    def rect_B(self, i):
        return self.rect(i, self.epsilon)

    def rect_K(self, i):
        return self.rect(i, 0.5 * self.epsilon)

    def index(self, role="D"):
        """Shared locator over the family windows.

        role "D": full sections over the flow window [-alpha, alpha];
        role "cover": core windows over the covering times [-alpha, 0].
        """
        if role not in self._index:
            if role == "D":
                self._index[role] = SectionIndex(
                    self.group, self.lifts, self.d_radius, self.d_radius,
                    -self.alpha, self.alpha)
            else:
                self._index[role] = SectionIndex(
                    self.group, self.lifts, self.epsilon, self.epsilon,
                    -self.alpha, 0.0)
        return self._index[role]

    def covered(self, reps, core="K"):
        """Which of the points lie in phi_[-alpha,0] of the open cores."""
        r = 0.5 * self.epsilon if core == "K" else self.epsilon
        idx = self.index("cover")
        pi, _, u, s, t = idx.locate(reps)
        ok = (np.abs(u) < r) & (np.abs(s) < r) & (t > -self.alpha) & (t <= 1e-9)
        out = np.zeros(len(reps), dtype=bool)
        out[pi[ok]] = True
        return out


def _crossing_ranges(idx, probe, rad_c, rad_e, alpha, grid=(5, 3)):
    """Crossing-time ranges between probe sections and indexed sections.

    For each candidate (probe, owner) pair, sweeps a grid over the probe
    window, keeps the crossings landing inside the owner window, and
    aggregates the crossing times.  Returns (point, owner, tmin, tmax)
    per pair with at least one valid crossing in [-2*alpha, 2*alpha].

    Candidates are gathered by querying the hash at every grid point of
    each probe window, not just its base frame: a crossing grid point
    sits inside the owner window at |t| <= 2*alpha, so it always lands in
    the owner's registered probe region even when the base frame (whose
    chart offsets inflate along the flow) does not."""
    probe = np.asarray(probe, dtype=float)
    empty = np.empty(0, dtype=np.int64)
    qu = np.linspace(-rad_e, rad_e, 5)
    qs = np.linspace(-rad_e, rad_e, 3)
    quu, qss = [a.ravel() for a in np.meshgrid(qu, qs)]
    qw = np.zeros((len(quu), 2, 2))
    qw[:, 0, 0] = 1.0
    qw[:, 0, 1] = qss
    qw[:, 1, 0] = quu
    qw[:, 1, 1] = 1.0 + quu * qss
    def sweep(mats, rad_from, rad_to):
        # crossing times of the rad_from-window grid onto the other plane,
        # kept when the landing falls inside the rad_to window
        gu = np.linspace(-rad_from, rad_from, grid[0])
        gs = np.linspace(-rad_from, rad_from, grid[1])
        uu, ss = [a.ravel() for a in np.meshgrid(gu, gs)]
        col0 = np.stack([np.ones_like(uu), uu], axis=1)
        col1 = np.stack([ss, 1.0 + uu * ss], axis=1)
        m00 = np.einsum("mi,pi->mp", mats[:, 0], col0)
        m10 = np.einsum("mi,pi->mp", mats[:, 1], col0)
        m01 = np.einsum("mi,pi->mp", mats[:, 0], col1)
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = -2.0 * np.log(np.abs(m00))
            u_land = m10 / m00
            s_land = m00 * m01
        ok = (np.abs(m00) > 1e-12) & (np.abs(u_land) <= rad_to + 1e-9) \
            & (np.abs(s_land) <= rad_to + 1e-9) & (np.abs(tau) <= 2.0 * alpha)
        lo = np.min(np.where(ok, tau, np.inf), axis=1)
        hi = np.max(np.where(ok, tau, -np.inf), axis=1)
        return lo, hi

    out_pt, out_ow, out_lo, out_hi = [], [], [], []
    chunk = max(1, 4096 // len(quu))
    for a in range(0, len(probe), chunk):
        reps = np.einsum("nij,pjk->npik", probe[a:a + chunk],
                         qw).reshape(-1, 2, 2)
        qi, ti = idx.query_pairs(reps)
        if len(qi) == 0:
            continue
        code = np.unique((a + qi // len(quu)) * len(idx.trans) + ti)
        pi, ti = code // len(idx.trans), code % len(idx.trans)
        rel = idx.trans_inv[ti] @ probe[pi]
        keep = np.abs(rel[:, 0, 0]) + np.abs(rel[:, 1, 0]) > 1e-12
        pi, ti, rel = pi[keep], ti[keep], rel[keep]
        if len(pi) == 0:
            continue
        inv = np.empty_like(rel)
        inv[:, 0, 0] = rel[:, 1, 1]
        inv[:, 0, 1] = -rel[:, 0, 1]
        inv[:, 1, 0] = -rel[:, 1, 0]
        inv[:, 1, 1] = rel[:, 0, 0]
        lo_f, hi_f = sweep(rel, rad_c, rad_e)
        lo_r, hi_r = sweep(inv, rad_e, rad_c)
        tlo = np.minimum(lo_f, -hi_r)
        thi = np.maximum(hi_f, -lo_r)
        any_ok = tlo <= thi
        tlo, thi, pi, ti = tlo[any_ok], thi[any_ok], pi[any_ok], ti[any_ok]
        if len(pi) == 0:
            continue
        # aggregate over group translates of the same (point, owner) pair
        code = pi * idx.n_sections + idx.owner[ti]
        uniq, pos = np.unique(code, return_inverse=True)
        lo = np.full(len(uniq), np.inf)
        hi = np.full(len(uniq), -np.inf)
        np.minimum.at(lo, pos, tlo)
        np.maximum.at(hi, pos, thi)
        out_pt.append(uniq // idx.n_sections)
        out_ow.append(uniq % idx.n_sections)
        out_lo.append(lo)
        out_hi.append(hi)
    if not out_pt:
        return empty, empty, np.empty(0), np.empty(0)
    return (np.concatenate(out_pt), np.concatenate(out_ow),
            np.concatenate(out_lo), np.concatenate(out_hi))


def _offset_conflicts(idx, probe, rad, alpha, pairs=False, margin=0.05):
    """Probe sections whose crossing-time range against some indexed section
    touches both flow directions (within `margin`), so that both directed
    flow-overlap sets of the pair would be nonempty."""
    pt, owner, tlo, thi = _crossing_ranges(idx, probe, rad, rad, alpha,
                                           grid=(9, 5))
    bad = (tlo <= margin) & (thi >= -margin)
    conflict = np.zeros(len(probe), dtype=bool)
    conflict[pt[bad]] = True
    if pairs:
        return conflict, pt[bad], owner[bad]
    return conflict


def _drop_sibling_conflicts(G, new, d_rad, alpha, t_wide):
    """Greedy pruning of planes that cross a kept earlier plane in the batch."""
    idx = SectionIndex(G, new, 2.0 * d_rad, 2.0 * d_rad, -t_wide, t_wide,
                       cell=0.3)
    _, pi, owner = _offset_conflicts(idx, new, d_rad, alpha, pairs=True)
    keep = np.ones(len(new), dtype=bool)
    edges = {(min(int(a), int(b)), max(int(a), int(b)))
             for a, b in zip(pi, owner) if a != b}
    for lo, hi in sorted(edges, key=lambda e: e[1]):
        if keep[lo] and keep[hi]:
            keep[hi] = False
    return keep


def _repair_two_way(G, lifts, d_rad, alpha, t_wide):
    """Drop one section of each pair whose crossing-time range straddles 0
    (the exact test run by the family validator).  Dropping sections never
    creates new crossings, so a single pass suffices."""
    idx = SectionIndex(G, lifts, 2.0 * d_rad, 2.0 * d_rad,
                       -t_wide, t_wide, cell=0.3)
    pt, owner, tlo, thi = _crossing_ranges(idx, lifts, d_rad, d_rad, alpha,
                                           grid=(9, 5))
    bad = (pt != owner) & (tlo <= 0.0) & (thi >= 0.0)
    edges = {(min(int(a), int(b)), max(int(a), int(b)))
             for a, b in zip(pt[bad], owner[bad])}
    keep = np.ones(len(lifts), dtype=bool)
    for lo, hi in sorted(edges, key=lambda e: e[1]):
        if keep[lo] and keep[hi]:
            keep[hi] = False
    return lifts[keep], int(np.sum(~keep))


def _plant_batch(G, pts, spacing_cell):
    """Greedy spatially-separated subset of candidate base points."""
    fv = _frame_vec(pts)
    key = np.floor(fv / spacing_cell).astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    return np.sort(first)


def build_pre_markov(G, alpha, seed, epsilon=None, d_factor=3.0,
                     coverage_target=0.999, net_points=None,
                     max_sections=20000, time_budget=None, strict=True):
    """Cover X by flow-thickened section cores, with per-section flow
    offsets keeping carrier sections out of each other's short flow window.

    Plants sections at phi_{alpha/2 + v}(x) over uncovered net points x,
    choosing the offset v from a ladder inside (-alpha/2, alpha/2) so that
    no existing overlapping section sits at nearly the same flow time.
    Stops at the coverage target, or raises CoverFailure (strict) when the
    section or time budget is exhausted first.
    """
    t0 = time.time()
    sigma = qt.injectivity_radius(G)
    if epsilon is None:
        epsilon = 0.95 * alpha / 16.0
    d_rad = d_factor * epsilon
    if 4.0 * d_rad + alpha >= sigma:
        raise sc.SectionTooLarge(
            f"4*{d_rad:.4f} + {alpha:.4f} >= sigma* = {sigma:.4f}")
    rng = np.random.default_rng(seed)
    if net_points is None:
        net_points = min(300000, max(40000, 25 * max_sections))
    net = haar_samples(G, net_points, rng)
    covered = np.zeros(len(net), dtype=bool)
    blocked = np.zeros(len(net), dtype=bool)
    lifts = np.empty((0, 2, 2))
    # offsets tried small-first inside the allowed window (-2a, 2a)
    rungs = np.array([0.0, 0.12, 0.24, 0.36, 0.48, 0.65, 0.85,
                      1.1, 1.35, 1.6, 1.85])
    ladder = alpha * np.stack([rungs, -rungs], axis=1).ravel()[1:]
    # crossings anywhere in [-2a, 2a] can pair up into a two-way overlap,
    # so the conflict index must span the whole window
    t_wide = 2.0 * alpha + 0.1
    spacing = 0.35 * min(2.0 * epsilon, alpha)
    offsets_used = []
    rounds = 0
    batch_cap = 600
    while True:
        unc_frac = float(np.mean(~covered))
        if unc_frac <= 1.0 - coverage_target:
            break
        over_budget = (len(lifts) >= max_sections
                       or (time_budget and time.time() - t0 > time_budget))
        if over_budget:
            if strict:
                raise CoverFailure(
                    f"coverage {1-unc_frac:.5f} < {coverage_target} with "
                    f"{len(lifts)} sections (budget exhausted)")
            break
        unc = np.nonzero(~covered & ~blocked)[0]
        if len(unc) == 0:
            if strict:
                raise OffsetExhausted(
                    f"{int(np.sum(blocked))} net points found no valid offset")
            break
        cand = unc[rng.permutation(len(unc))][:20 * batch_cap]
        base = qt.reduce_many(G, net[cand] @ psl2.one_param("A", 0.5 * alpha).m)
        sel = _plant_batch(G, base, spacing)[:batch_cap]
        base = base[sel]
        src = cand[sel]
        # flow-offset assignment against the existing family
        new, offs = [], []
        idx = SectionIndex(G, lifts, 2.0 * d_rad, 2.0 * d_rad,
                           -t_wide, t_wide, cell=0.3) if len(lifts) else None
        alive = np.arange(len(base))
        if idx is None:
            new.append(base)
            offs.append(np.zeros(len(base)))
            alive = alive[:0]
        for v in ladder:
            if len(alive) == 0:
                break
            probe = qt.reduce_many(G, base[alive] @ psl2.one_param("A", v).m)
            conflict = _offset_conflicts(idx, probe, d_rad, alpha)
            good = ~conflict
            if np.any(good):
                new.append(probe[good])
                offs.append(np.full(int(np.sum(good)), float(v)))
            alive = alive[conflict]
        if len(alive):
            if strict:
                raise OffsetExhausted(
                    f"{len(alive)} sections found no valid flow offset")
            blocked[src[alive]] = True
        if not new:
            rounds += 1
            continue
        new = np.concatenate(new)
        offs = np.concatenate(offs)
        keep = _drop_sibling_conflicts(G, new, d_rad, alpha, t_wide)
        new = new[keep]
        offsets_used.extend(offs[keep].tolist())
        if len(new) == 0:
            rounds += 1
            continue
        lifts = np.concatenate([lifts, new]) if len(lifts) else new
        # mark newly covered net points (K-window of the new sections only)
        sub = SectionIndex(G, new, 0.5 * epsilon, 0.5 * epsilon, -alpha, 0.0)
        pts = net[~covered]
        pi, _, u, s, t = sub.locate(pts)
        hit = (np.abs(u) < 0.5 * epsilon) & (np.abs(s) < 0.5 * epsilon) \
            & (t > -alpha) & (t <= 1e-9)
        mark = np.zeros(len(pts), dtype=bool)
        mark[pi[hit]] = True
        covered[np.nonzero(~covered)[0][mark]] = True
        rounds += 1
        batch_cap = min(4 * batch_cap, 5000)
    # final repair: the margin screen above samples crossing windows on a
    # grid, and the two directed entries of a pair sample different grids,
    # so rare straddles can slip past the margin.  Re-test the finished
    # family with the exact straddle criterion and greedily drop one
    # section of each remaining two-way pair.
    dropped = 0
    if len(lifts):
        lifts, dropped = _repair_two_way(G, lifts, d_rad, alpha, t_wide)
    report = {
        "repair_dropped": int(dropped),
        "n_sections": int(len(lifts)),
        "epsilon": float(epsilon),
        "alpha": float(alpha),
        "d_factor": float(d_factor),
        "coverage_net": float(np.mean(covered)),
        "coverage_target": float(coverage_target),
        "net_points": int(len(net)),
        "rounds": rounds,
        "blocked_net_points": int(np.sum(blocked)),
        "seed": int(seed),
        "offsets": sorted(set(round(v, 6) for v in offsets_used)),
        "build_seconds": float(time.time() - t0),
        "reached_target": bool(np.mean(~covered) <= 1.0 - coverage_target),
    }
    return PreMarkovFamily(G, lifts, float(epsilon), float(alpha),
                           float(d_factor), report)


def validate_pre_markov(F, samples=10000, rng=None):
    """Sampled verification of the family conditions, with margins.

    (a) nesting of K in B in D; (b) section diameter below alpha;
    (c) no two carrier sections meet each other's short flow window both
    ways; (d) Monte-Carlo coverage of X by the flow-thickened cores;
    (e) sections whose outer cores are flow-close project into each
    other's carriers.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    G = F.group
    eps, alpha, d_rad = F.epsilon, F.alpha, F.d_radius
    rep = {"n_sections": F.n, "epsilon": eps, "alpha": alpha}
    # (a) nesting margins are exact in labels
    rep["a_nesting"] = {
        "K_in_B_margin": 0.5 * eps,
        "B_in_D_margin": d_rad - eps,
        "passed": 0.5 * eps > 0 and d_rad > eps,
    }
    # (b) diameter of the carrier sections, sampled on one chart
    g = np.linspace(-d_rad, d_rad, 5)
    uu, ss = [a.ravel() for a in np.meshgrid(g, g)]
    corner = np.zeros((len(uu), 2, 2))
    corner[:, 0, 0] = corner[:, 1, 1] = 1.0
    corner[:, 0, 1] = ss
    corner[:, 1, 0] = uu
    corner[:, 1, 1] += uu * ss
    rel = psl2.canonicalize_many(
        np.einsum("nij,mjk->nmik", psl2.inv_many(corner), corner))
    diam = float(np.max(psl2.norm_log_many(rel)))
    rep["b_diameter"] = {"diam_D": diam, "alpha": alpha,
                        "margin": alpha - diam, "passed": diam < alpha}
    # (c) for each overlapping distinct pair the valid crossing times must
    # stay on one side of zero (only one directed flow-overlap nonempty)
    idx = SectionIndex(G, F.lifts, 2.0 * d_rad, 2.0 * d_rad,
                       -2.0 * alpha - 0.1, 2.0 * alpha + 0.1, cell=0.3)
    pt, owner, tlo, thi = _crossing_ranges(
        idx, F.lifts, d_rad, d_rad, alpha, grid=(9, 5))
    other = pt != owner
    straddle = other & (tlo <= 0.0) & (thi >= 0.0)
    one_sided = other & ~straddle
    gaps = np.where(tlo[one_sided] > 0.0, tlo[one_sided], -thi[one_sided])
    both = sorted({(int(min(a, b)), int(max(a, b)))
                   for a, b in zip(pt[straddle], owner[straddle])})
    rep["c_flow_disjoint"] = {
        "overlapping_pairs": int(np.sum(other)),
        "violations": both[:20],
        "n_violations": len(both),
        "min_time_gap": float(np.min(gaps)) if len(gaps) else None,
        "passed": not both,
    }
    # (d) Monte-Carlo coverage of X
    pts = haar_samples(G, samples, rng)
    cov = F.covered(pts, core="K")
    frac = float(np.mean(cov))
    rep["d_coverage"] = {"fraction": frac, "samples": samples,
                        "passed": frac >= 1.0 - 1e-3}
    # (e) if an outer core meets the backward flow tube of another outer
    # core, it must lie inside the backward flow tube of that carrier:
    # every sampled core point projects onto the carrier window with a
    # crossing time in [-2 alpha, 0]
    gb = np.linspace(-eps, eps, 3)
    cu, cs = [a.ravel() for a in np.meshgrid(gb, gb)]
    ncor = len(cu)
    w = np.zeros((ncor, 2, 2))
    w[:, 0, 0] = w[:, 1, 1] = 1.0
    w[:, 0, 1] = cs
    w[:, 1, 0] = cu
    w[:, 1, 1] += cu * cs
    corners = qt.reduce_many(
        G, (F.lifts[:, None] @ w[None]).reshape(-1, 2, 2))
    idxE = SectionIndex(G, F.lifts, d_rad, d_rad, -2.0 * alpha, 0.05)
    cpi, owner, uu, ss, tt = idxE.locate(corners)
    sec = cpi // ncor
    other = sec != owner
    tol = 1e-9
    in_b = other & (np.abs(uu) <= eps + tol) & (np.abs(ss) <= eps + tol) \
        & (tt <= tol) & (tt >= -2.0 * alpha - tol)
    selected = sorted({(int(a), int(b)) for a, b in zip(sec[in_b],
                                                       owner[in_b])})
    in_d = other & (np.abs(uu) <= d_rad + tol) & (np.abs(ss) <= d_rad + tol) \
        & (tt <= tol) & (tt >= -2.0 * alpha - tol)
    ok_corner = {(int(c), int(b)) for c, b in zip(cpi[in_d], owner[in_d])}
    fails = []
    worst = 0.0
    for a, b in selected:
        missing = [c for c in range(a * ncor, (a + 1) * ncor)
                   if (c, b) not in ok_corner]
        if missing:
            sel = np.isin(cpi, missing) & (owner == b)
            exc = None
            if np.any(sel):
                exc = float(np.max(np.maximum(
                    np.abs(uu[sel]), np.abs(ss[sel])) - d_rad))
                worst = max(worst, exc)
            fails.append((a, b, len(missing), exc))
    rep["e_containment"] = {"pairs_checked": len(selected),
                           "violations": fails[:20],
                           "n_violations": len(fails),
                           "worst_excess": worst, "passed": not fails}
    rep["passed"] = all(rep[k]["passed"] for k in
                       ("a_nesting", "b_diameter", "c_flow_disjoint",
                        "d_coverage", "e_containment"))
    return rep


# ---------------------------------------------------------------------------
# proper families and the first-return map
# ---------------------------------------------------------------------------

@dataclass
class ProperFamily:
    """A finite family of rectangles with a shared first-return engine."""
    group: qt.FuchsianGroup
    members: list                 # Rectangle
    alpha: float
    _arr: dict = field(repr=False, default_factory=dict)

    @property
    def n(self):
        return len(self.members)

    def _arrays(self):
        if "lifts" not in self._arr:
            self._arr["lifts"] = np.stack(
                [R.chart.lift.m for R in self.members])
            hull = np.zeros((self.n, 4))
            for i, R in enumerate(self.members):
                pl, pr = R.plain_labels.hull(), R.primed_labels.hull()
                hull[i] = (pl[0], pl[1], pr[0], pr[1])
            self._arr["hull"] = hull
        return self._arr["lifts"], self._arr["hull"]

    def index(self):
        if "index" not in self._arr:
            lifts, hull = self._arrays()
            reach = float(np.max(np.abs(hull))) * 1.6 + 1e-6
            self._arr["index"] = SectionIndex(
                self.group, lifts, reach, reach,
                -0.6 * self.alpha, 0.6 * self.alpha)
        return self._arr["index"]

    def membership(self, mi, u, s, tol=0.0):
        """Exact label membership for located hits (vectorized by member)."""
        lifts, hull = self._arrays()
        plain = u
        primed = label_from_s(u, s)
        out = np.zeros(len(mi), dtype=bool)
        for m in np.unique(mi):
            sel = mi == m
            R = self.members[m]
            out[sel] = (R.plain_labels.contains(plain[sel], tol)
                        & R.primed_labels.contains(primed[sel], tol))
        return out


def proper_from_pre(F, members=None):
    """Wrap a covering family (default: its outer cores) as a proper family."""
    if members is None:
        members = [F.rect_B(i) for i in range(F.n)]
    return ProperFamily(F.group, members, F.alpha)


def poincare_map_many(P, reps, direction=1, horizon=None, tol=1e-9,
                      member_tol=0.0):
    """Batched first-return to the family along the flow.

    Returns (member, t, u, s, ok): the member hit first, the signed return
    time, the landing chart coordinates, and a success mask.  Unreturned
    points (within the horizon) have ok=False.
    """
    reps = np.asarray(reps, dtype=float)
    if reps.ndim == 2:
        reps = reps[None]
    n = len(reps)
    alpha = P.alpha
    if horizon is None:
        horizon = 20.0 * alpha
    idx = P.index()
    step = 0.5 * alpha * direction
    n_probe = int(np.ceil(horizon / abs(step))) + 2
    best_t = np.full(n, np.inf)
    best_m = np.full(n, -1, dtype=np.int64)
    best_u = np.zeros(n)
    best_s = np.zeros(n)
    a_step = psl2.one_param("A", step).m
    cur = qt.reduce_many(P.group, reps)
    for k in range(n_probe):
        T = k * step
        pi, mi, u, s, t = idx.locate(cur)
        if len(pi):
            tc = T - t                       # crossing time from the start
            ok = P.membership(mi, u, s, member_tol)
            if direction > 0:
                ok &= (tc > tol) & (tc <= horizon)
            else:
                ok &= (tc < -tol) & (tc >= -horizon)
            cand = np.abs(tc) < np.abs(best_t[pi]) - 1e-12
            take = ok & cand
            best_t[pi[take]] = tc[take]
            best_m[pi[take]] = mi[take]
            best_u[pi[take]] = u[take]
            best_s[pi[take]] = s[take]
        if k + 1 < n_probe:
            cur = qt.reduce_many(P.group, cur @ a_step)
        found_safe = np.abs(best_t) <= abs(step) * k - 0.7 * alpha
        if np.all(found_safe):
            break
    found = np.isfinite(best_t)
    return best_m, best_t, best_u, best_s, found


def poincare_map(P, x, direction=1, horizon=None):
    """First return of a single point; raises ReturnNotFound."""
    m, t, u, s, ok = poincare_map_many(P, x.rep.m, direction, horizon)
    if not ok[0]:
        raise ReturnNotFound("orbit left the family within the horizon")
    m = int(m[0])
    pt = sc.point_at(P.members[m].chart,
                     sc.SectionCoords(float(u[0]), float(s[0])))
    return pt, float(t[0]), m


def landing_reps(P, m, u, s):
    """(n,2,2) representatives of landing coordinates (vectorized)."""
    lifts, _ = P._arrays()
    rel = np.zeros((len(m), 2, 2))
    rel[:, 0, 0] = rel[:, 1, 1] = 1.0
    rel[:, 0, 1] = s
    rel[:, 1, 0] = u
    rel[:, 1, 1] += u * s
    return psl2.canonicalize_many(lifts[m] @ rel)


# ---------------------------------------------------------------------------
# refinement into bracket-stable cores
# ---------------------------------------------------------------------------

@dataclass
class RefinementState:
    family: PreMarkovFamily
    L: float
    T: float
    lambda_est: float
    eps_schedule: list
    C: list                       # Rectangle per section
    iterations: int
    converged: bool
    edge_count: int


def estimate_lebesgue(F, samples=3000, rng=None):
    """Lebesgue-number estimate: one third of the minimal covering slack
    over a sample, where the slack of a point is its best margin inside a
    flow-thickened core."""
    if rng is None:
        rng = np.random.default_rng(1)
    pts = haar_samples(F.group, samples, rng)
    idx = F.index("cover")
    pi, _, u, s, t = idx.locate(pts)
    r = 0.5 * F.epsilon
    inside = (np.abs(u) < r) & (np.abs(s) < r) & (t > -F.alpha) & (t <= 1e-9)
    slack = np.full(len(pts), 0.0)
    m = np.minimum(np.minimum(r - np.abs(u), r - np.abs(s)),
                   np.minimum(-t + 1e-12, F.alpha + t))
    np.maximum.at(slack, pi[inside], m[inside])
    covered = slack > 0
    if not np.any(covered):
        raise CoverFailure("no sampled point is covered; cannot estimate")
    return float(np.min(slack[covered]) / 3.0), float(np.mean(covered))


def _edge_tables(F, L, sign, n_grid=4):
    """Sampled holonomy contributions for the label-set recursion.

    For each section i, grid points v over K_i are flowed by sign*L and
    projected to the family; each sample contributes an affine contraction
    (source section a, anchor label of v, anchor label of the projection,
    contraction factor e^{-L -+ tau}).  sign=-1 feeds the stable (primed)
    recursion, sign=+1 the unstable (plain) one.
    """
    G = F.group
    r = 0.5 * F.epsilon
    g = np.linspace(-0.8 * r, 0.8 * r, n_grid)
    uu, ss = [a.ravel() for a in np.meshgrid(g, g)]
    k = len(uu)
    rel = np.zeros((k, 2, 2))
    rel[:, 0, 0] = rel[:, 1, 1] = 1.0
    rel[:, 0, 1] = ss
    rel[:, 1, 0] = uu
    rel[:, 1, 1] += uu * ss
    idx = F.index("D")
    a_L = psl2.one_param("A", sign * L).m
    edges = {i: [] for i in range(F.n)}
    count = 0
    chunk = max(1, 20000 // k)
    for lo in range(0, F.n, chunk):
        hi = min(lo + chunk, F.n)
        base = np.einsum("nij,kjl->nkil", F.lifts[lo:hi], rel)
        flown = qt.reduce_many(G, base.reshape(-1, 2, 2) @ a_L)
        pi, ai, u2, s2, t2 = idx.locate(flown)
        inw = (np.abs(u2) <= F.d_radius) & (np.abs(s2) <= F.d_radius) \
            & (np.abs(t2) <= 0.55 * F.alpha)
        pi, ai, u2, s2, t2 = pi[inw], ai[inw], u2[inw], s2[inw], t2[inw]
        # keep the tightest hit per sample point
        size = np.maximum(np.abs(u2), np.abs(s2))
        order = np.lexsort((size, pi))
        first = np.ones(len(pi), dtype=bool)
        first[1:] = pi[order][1:] != pi[order][:-1]
        keep = order[first]
        for j in keep:
            p = int(pi[j])
            sec = lo + p // k
            vi = p % k
            anchor_self = ss[vi] if sign < 0 else uu[vi]
            anchor_src = (s2[j] if sign < 0 else u2[j])
            scale = float(np.exp(-L - sign * t2[j]))
            edges[sec].append((int(ai[j]), float(anchor_self),
                               float(anchor_src), scale))
            count += 1
    return edges, count


def refine_C(F, L, Kmax=50, tol=1e-9, rng=None, enforce_lambda=True):
    """Bracket-stable cores C_i by the contracting label-set recursion.

    Starting from the inner cores, each iteration adjoins to the stable
    (primed) labels of section i the time-L contracted images of its
    suppliers' labels, and dually for the unstable (plain) labels; the
    fixed point is reached geometrically at rate ~2 e^{-T}, T = L - alpha/2.
    """
    T = L - 0.5 * F.alpha
    if L <= 4.0 or T <= 3.0:
        raise ScheduleViolation(f"L = {L} requires L > 4 and T = L - alpha/2 > 3")
    lam, cov = estimate_lebesgue(F, rng=rng)
    if enforce_lambda and L <= np.log(4.0 * F.epsilon / lam):
        raise ScheduleViolation(
            f"L = {L} <= ln(4 eps/lambda) = {np.log(4*F.epsilon/lam):.3f}")
    eps0 = 2.0 * F.epsilon / 3.0
    sched = [0.5 * F.epsilon]
    for _ in range(Kmax):
        sched.append(eps0 + 2.0 * sched[-1] * np.exp(-T))
        if sched[-1] >= F.epsilon:
            raise ScheduleViolation(
                f"radius schedule reaches {sched[-1]:.5f} >= eps = {F.epsilon}")
        if abs(sched[-1] - sched[-2]) < tol:
            break
    s_edges, c1 = _edge_tables(F, L, -1)
    u_edges, c2 = _edge_tables(F, L, +1)
    r0 = 0.5 * F.epsilon
    primed = [LabelSet.interval(-r0, r0) for _ in range(F.n)]
    plain = [LabelSet.interval(-r0, r0) for _ in range(F.n)]
    converged = False
    it = 0
    for it in range(1, Kmax + 1):
        delta = 0.0
        new_primed = []
        for i in range(F.n):
            acc = LabelSet.interval(-r0, r0)
            for (a, anc, anc_src, scale) in s_edges[i]:
                img = primed[a].map(lambda x: anc + scale * (x - anc_src))
                acc = acc.union(img)
            delta = max(delta, acc.hausdorff(primed[i]))
            new_primed.append(acc)
        new_plain = []
        for i in range(F.n):
            acc = LabelSet.interval(-r0, r0)
            for (a, anc, anc_src, scale) in u_edges[i]:
                img = plain[a].map(lambda x: anc + scale * (x - anc_src))
                acc = acc.union(img)
            delta = max(delta, acc.hausdorff(plain[i]))
            new_plain.append(acc)
        primed, plain = new_primed, new_plain
        if delta < tol:
            converged = True
            break
    C = []
    box = LabelSet.interval(-F.epsilon, F.epsilon)
    for i in range(F.n):
        pl = plain[i].intersect(box)
        pr = primed[i].intersect(box)
        lo, hi = pl.hull()
        lo2, hi2 = pr.hull()
        if max(abs(lo), abs(hi), abs(lo2), abs(hi2)) > F.epsilon + 1e-12:
            raise ScheduleViolation(f"C_{i} leaves the outer core")
        C.append(Rectangle(F.chart(i), pl, pr))
    return RefinementState(F, float(L), float(T), lam, sched, C, it,
                           converged, c1 + c2)


# ---------------------------------------------------------------------------
# subdivision by successor projections
# ---------------------------------------------------------------------------

@dataclass
class Subdivision:
    state: RefinementState
    I: dict                       # j -> sorted successor list
    E: dict                       # (j,i) -> (plain LabelSet, primed LabelSet)
    pieces: dict                  # j -> list of (plain iv, primed iv) cells
    holonomies: dict              # (j,i) -> (Mobius1D plain, Mobius1D primed)
    transit_samples: dict         # (j,i) -> count


def _piece_id(pieces_j, plain, primed, tol=1e-9):
    """Index of the grid piece containing the labels (or -1)."""
    for k, (pl, pr) in enumerate(pieces_j):
        if pl.contains(plain, tol) and pr.contains(primed, tol):
            return k
    return -1


def _witness_rel(u0, s0, u1, s1, tau):
    """Exact chart-to-chart transition element from one transit witness.

    Flowing the start for time tau reaches the landing frame:
    gamma lift_j c_{u0} b_{s0} a_tau = lift_i c_{u1} b_{s1}, so
    rel = inv(lift_i) gamma lift_j = c_{u1} b_{s1} a_{-tau} inv(c_{u0} b_{s0}).
    """
    e = np.exp(-0.5 * tau)
    M = np.array([[e, s1 / e], [u1 * e, (1.0 + u1 * s1) / e]])
    inv0 = np.array([[1.0 + u0 * s0, -s0], [-u0, 1.0]])
    return M @ inv0


def _branch_holonomy(rel, plain_hull, primed_hull, n_grid=7):
    """Componentwise Moebius label maps induced by a transition element.

    Landing labels are evaluated on the two label axes (the other label
    fixed at 0) through the closed crossing formulas; the leaf-invariance
    of labels makes the two component maps exact Moebius maps."""
    xs = np.linspace(plain_hull[0], plain_hull[1], n_grid)
    qs = np.linspace(primed_hull[0], primed_hull[1], n_grid)

    def land(us, ss):
        w = np.zeros((len(us), 2, 2))
        w[:, 0, 0] = w[:, 1, 1] = 1.0
        w[:, 0, 1] = ss
        w[:, 1, 0] = us
        w[:, 1, 1] += us * ss
        M = rel[None] @ w
        u1 = M[:, 1, 0] / M[:, 0, 0]
        s1 = M[:, 0, 0] * M[:, 0, 1]
        return u1, label_from_s(u1, s1)

    pu, _ = land(xs, np.zeros_like(xs))
    _, qq = land(np.zeros_like(qs), s_from_label(np.zeros_like(qs), qs))
    pm = Mobius1D.fit(xs, pu)
    qm = Mobius1D.fit(qs, qq)
    resid = max(np.max(np.abs(pm(xs) - pu)), np.max(np.abs(qm(qs) - qq)))
    return pm, qm, resid


def _pullback_labels(minv, tgt, src, wx):
    """Preimage of the target labels under a Moebius component map, clipped
    to the source labels.

    Applying the inverse map to an interval's endpoints gives the wrong
    component when the map's pole lies inside the interval (the true
    preimage then wraps through infinity); the witness label wx, known to
    be in the preimage, selects the right component."""
    slo, shi = src.hull()
    pieces = []
    for lo, hi in tgt.intervals:
        a, b = minv(lo), minv(hi)
        lo2, hi2 = (a, b) if a <= b else (b, a)
        if lo2 - 1e-12 <= wx <= hi2 + 1e-12:
            pieces.append((lo2, hi2))
        else:
            pieces.append((slo, lo2))
            pieces.append((hi2, shi))
    return LabelSet(p for p in pieces if p[1] > p[0]).intersect(src)


def subdivide_E(state, samples_per_member=60, rng=None, min_count=3):
    """Cut each core by the label windows feeding its observed successors.

    E_{ji} (the part of C_j flowing into C_i within the short window) is a
    sub-product of C_j's labels; its plain/primed endpoint cuts, collected
    over all successors i, grid C_j into pieces overlapping only at
    endpoints.  Transitions are observed by a sampled first-return sweep
    and modelled by componentwise Moebius fits.
    """
    if rng is None:
        rng = np.random.default_rng(2)
    F = state.family
    P = ProperFamily(F.group, state.C, F.alpha)
    n = F.n
    # sampled transition sweep
    src, plains, primeds = [], [], []
    for j, R in enumerate(state.C):
        pl, pr = R.sample_points(int(np.sqrt(samples_per_member)) + 2, rng)
        g1, g2 = np.meshgrid(pl, pr)
        src.append(np.full(g1.size, j))
        plains.append(g1.ravel())
        primeds.append(g2.ravel())
    src = np.concatenate(src)
    plains = np.concatenate(plains)
    primeds = np.concatenate(primeds)
    lifts, _ = P._arrays()
    reps = landing_reps(P, src, plains, s_from_label(plains, primeds))
    mi, tt, uu, ss, ok = poincare_map_many(P, reps, member_tol=1e-12)
    pairs = {}
    for a in range(len(src)):
        if not ok[a]:
            continue
        key = (int(src[a]), int(mi[a]))
        pairs.setdefault(key, []).append(
            (plains[a], primeds[a], uu[a],
             label_from_s(uu[a], ss[a]), tt[a]))
    I = {j: [] for j in range(n)}
    E = {}
    holos = {}
    counts = {}
    for (j, i), rows in sorted(pairs.items()):
        if len(rows) < min_count:
            continue
        arr = np.array(rows)
        Cj, ci = state.C[j], state.C[i]
        # exact branch holonomy from a transit witness: the transition is
        # induced by a group element, recovered from one (start, landing,
        # time) triple; the remaining samples cross-check the branch.
        # (Fitting the sample cloud directly is rank-deficient whenever the
        # transit slice is thinner than the sample grid in one label.)
        pm = qm = None
        wit = None
        for w in range(min(3, len(arr))):
            rel = _witness_rel(arr[w, 0], s_from_label(arr[w, 0], arr[w, 1]),
                               arr[w, 2], s_from_label(arr[w, 2], arr[w, 3]),
                               arr[w, 4])
            try:
                pmw, qmw, resid = _branch_holonomy(
                    rel, Cj.plain_labels.hull(), Cj.primed_labels.hull())
            except HolonomyDegenerate:
                continue
            err = max(np.max(np.abs(pmw(arr[:, 0]) - arr[:, 2])),
                      np.max(np.abs(qmw(arr[:, 1]) - arr[:, 3])))
            if resid <= 1e-9 and err <= 1e-6:
                pm, qm, wit = pmw, qmw, arr[w]
                break
        if pm is not None:
            epl = _pullback_labels(pm.inverse(), ci.plain_labels,
                                   Cj.plain_labels, wit[0])
            epr = _pullback_labels(qm.inverse(), ci.primed_labels,
                                   Cj.primed_labels, wit[1])
            holos[(j, i)] = (pm, qm)
        else:
            # fall back to sample hulls
            epl = LabelSet.interval(float(np.min(arr[:, 0])),
                                    float(np.max(arr[:, 0])))
            epr = LabelSet.interval(float(np.min(arr[:, 1])),
                                    float(np.max(arr[:, 1])))
        if epl.is_empty() or epr.is_empty():
            continue
        I[j].append(i)
        E[(j, i)] = (epl, epr)
        counts[(j, i)] = len(rows)
    empty = [j for j in range(n) if not I[j]]
    if empty:
        err = EmptySubdivision(
            f"{len(empty)} members have no observed successors "
            f"(first: {empty[:5]})")
        err.members = empty
        raise err
    # grid pieces per member from the union of cuts
    pieces = {}
    for j in range(n):
        Cj = state.C[j]
        pcuts, qcuts = set(), set()
        lo, hi = Cj.plain_labels.hull()
        lo2, hi2 = Cj.primed_labels.hull()
        for i in I[j]:
            epl, epr = E[(j, i)]
            for a, b in epl.intervals:
                pcuts.update((a, b))
            for a, b in epr.intervals:
                qcuts.update((a, b))
        pcuts = sorted({lo, hi, *(c for c in pcuts if lo < c < hi)})
        qcuts = sorted({lo2, hi2, *(c for c in qcuts if lo2 < c < hi2)})
        cells = []
        for a, b in zip(pcuts[:-1], pcuts[1:]):
            for c, d in zip(qcuts[:-1], qcuts[1:]):
                pl = Cj.plain_labels.intersect(LabelSet.interval(a, b))
                pr = Cj.primed_labels.intersect(LabelSet.interval(c, d))
                if pl.measure() > 1e-12 and pr.measure() > 1e-12:
                    cells.append((pl, pr))
        pieces[j] = cells
    return Subdivision(state, I, E, pieces, holos, counts)


# ---------------------------------------------------------------------------
# itinerary classes and the final partition
# ---------------------------------------------------------------------------

@dataclass
class ItineraryClass:
    key: tuple                    # ((member, piece), ...) length N+1
    member: int                   # starting member
    plain_labels: LabelSet
    primed_labels: LabelSet
    witness: tuple                # (plain, primed) labels of one sample
    count: int


@dataclass
class MarkovPartition:
    group: qt.FuchsianGroup
    members: list                 # shifted Rectangles M_p
    shifts: np.ndarray
    itinerary_depth: int
    adjacency: np.ndarray
    return_times: dict            # (p,q) -> list of sampled r
    classes: list                 # ItineraryClass
    alpha: float
    provenance: dict = field(default_factory=dict)


def _orbit_itineraries(state, subdiv, N, n_orbits, rng, seeds=None):
    """Iterate sampled orbits and record per-step (member, piece, labels, t).

    Returns a list of per-orbit step records; orbits that leave the family
    or land on piece boundaries are truncated at that step.
    """
    F = state.family
    P = ProperFamily(F.group, state.C, F.alpha)
    steps = N + 2
    starts = []
    for j, R in enumerate(state.C):
        pl, pr = R.sample_points(3, rng)
        for a in pl:
            for b in pr:
                starts.append((j, a, b))
    rng.shuffle(starts)
    starts = starts[:n_orbits]
    if seeds:
        starts = list(seeds) + starts
    src = np.array([s[0] for s in starts], dtype=np.int64)
    plains = np.array([s[1] for s in starts])
    primeds = np.array([s[2] for s in starts])
    orbits = [[(int(src[k]),
                _piece_id(subdiv.pieces[int(src[k])], plains[k], primeds[k]),
                float(plains[k]), float(primeds[k]), 0.0)]
              for k in range(len(src))]
    alive = np.ones(len(src), dtype=bool)
    cur_m, cur_p, cur_q = src.copy(), plains.copy(), primeds.copy()
    for _ in range(steps):
        if not np.any(alive):
            break
        ai = np.nonzero(alive)[0]
        reps = landing_reps(P, cur_m[ai], cur_p[ai],
                            s_from_label(cur_p[ai], cur_q[ai]))
        mi, tt, uu, ss, ok = poincare_map_many(P, reps, member_tol=1e-12)
        qq = label_from_s(uu, ss)
        for w, k in enumerate(ai):
            if not ok[w]:
                alive[k] = False
                continue
            m2 = int(mi[w])
            pid = _piece_id(subdiv.pieces[m2], uu[w], qq[w])
            if pid < 0:
                alive[k] = False
                continue
            orbits[k].append((m2, pid, float(uu[w]), float(qq[w]),
                              float(tt[w])))
            cur_m[k], cur_p[k], cur_q[k] = m2, uu[w], qq[w]
    return orbits


def itinerary_classes(state, subdiv, N, n_orbits=2000, rng=None, seeds=None,
                      min_class_samples=1):
    """Equivalence classes of depth-N piece itineraries, as rectangles.

    Each class closure is reconstructed exactly as a product: the plain
    labels are the intersection of the pulled-back piece windows along the
    observed branch (componentwise Moebius holonomies), and dually for the
    primed labels.  Also returns the observed class-to-class transitions.
    """
    if N <= state.L / (2.0 * state.family.alpha):
        raise ValueError(f"N = {N} must exceed L/(2 alpha) = "
                         f"{state.L/(2*state.family.alpha):.2f}")
    if rng is None:
        rng = np.random.default_rng(3)
    orbits = _orbit_itineraries(state, subdiv, N, n_orbits, rng, seeds)
    index = {}
    classes = []
    transitions = set()
    rtimes = {}
    for orb in orbits:
        for k0 in range(len(orb) - N):
            window = orb[k0:k0 + N + 1]
            key = tuple((m, p) for (m, p, _, _, _) in window)
            if -1 in [p for (_, p) in key]:
                continue
            if key not in index:
                rect = _class_rectangle(state, subdiv, window)
                if rect is None:
                    continue
                index[key] = len(classes)
                classes.append(ItineraryClass(
                    key, key[0][0], rect[0], rect[1],
                    (window[0][2], window[0][3]), 0))
            classes[index[key]].count += 1
        for k0 in range(len(orb) - N - 1):
            k1 = tuple((m, p) for (m, p, _, _, _) in orb[k0:k0 + N + 1])
            k2 = tuple((m, p) for (m, p, _, _, _) in orb[k0 + 1:k0 + N + 2])
            if k1 in index and k2 in index:
                transitions.add((index[k1], index[k2]))
                rtimes.setdefault((index[k1], index[k2]), []).append(
                    orb[k0 + 1][4])
    if not classes:
        raise SampleTooSparse("no complete depth-N itineraries were sampled")
    return classes, sorted(transitions), rtimes


def _step_holonomy(state, ma, ua, qa, ub, qb, tb, tol=1e-6):
    """Branch holonomy of a single recorded orbit step.

    The step's (start, landing, time) data determine the inducing group
    element exactly; the recorded landing itself cross-checks the fitted
    componentwise maps."""
    rel = _witness_rel(ua, s_from_label(ua, qa), ub, s_from_label(ub, qb), tb)
    Ca = state.C[ma]
    try:
        pm, qm, resid = _branch_holonomy(
            rel, Ca.plain_labels.hull(), Ca.primed_labels.hull())
    except HolonomyDegenerate:
        return None
    if resid > 1e-9:
        return None
    if abs(pm(ua) - ub) > tol or abs(qm(qa) - qb) > tol:
        return None
    return pm, qm


def _class_rectangle(state, subdiv, window):
    """Exact label product of a depth-N itinerary window.

    Each step of the window is itself a transit witness, so its branch
    holonomy is recovered on the fly from the recorded (start, landing,
    time) data; the step's own landing cross-checks the branch.  Pulls
    every piece window back to the starting chart through the composed
    holonomies; fails (returns None) when a branch degenerates or the
    product becomes empty.
    """
    m0, p0, _, _, _ = window[0]
    pl, pr = subdiv.pieces[m0][p0]
    plain = pl
    primed = pr
    pm_acc = Mobius1D.identity()
    qm_acc = Mobius1D.identity()
    for k in range(1, len(window)):
        ma, _, ua, qa, _ = window[k - 1]
        mb, pb, ub, qb, tb = window[k]
        h = _step_holonomy(state, ma, ua, qa, ub, qb, tb)
        if h is None:
            return None
        cpl, cpr = subdiv.pieces[mb][pb]
        u0, q0 = window[0][2], window[0][3]
        try:
            pm_acc = h[0].compose(pm_acc)
            qm_acc = h[1].compose(qm_acc)
            plain = _pullback_labels(pm_acc.inverse(), cpl, plain, u0)
            primed = _pullback_labels(qm_acc.inverse(), cpr, primed, q0)
        except HolonomyDegenerate:
            return None
        if plain.is_empty() or primed.is_empty():
            return None
    return plain, primed


def finalize_markov(state, subdiv, classes, transitions, rtimes,
                    shifts_seed=0, max_tries=6):
    """Shift the class closures into pairwise disjoint members and build
    the adjacency matrix from the observed transitions.

    Shifts are tau_p = (p+1) * tau0 with tau0 = margin/(10 m); the scale
    is halved until a sampled disjointness sweep passes.
    """
    F = state.family
    m = len(classes)
    margin = min(min(c.plain_labels.measure(), c.primed_labels.measure())
                 for c in classes)
    margin = min(margin, 0.05 * F.alpha)
    # the shift scale must stay resolvable: deep itineraries contract some
    # class widths below float spacing, but shifts only need to separate
    # members in the flow direction, so a floor relative to alpha is safe
    tau0 = max(margin / (10.0 * m), 1e-3 * F.alpha / m)
    for _ in range(max_tries):
        shifts = tau0 * (1.0 + np.arange(m))
        members = []
        for p, c in enumerate(classes):
            tau = shifts[p]
            ch = state.C[c.member].chart
            lift = GroupElement(psl2.canonicalize_many(
                ch.lift.m @ psl2.one_param("A", tau).m))
            eu = float(np.exp(tau))
            plain = c.plain_labels.map(lambda x: x * eu)
            primed = c.primed_labels.map(lambda x: x / eu)
            chart = sc.SectionChart(ch.group, qt.QuotientPoint(lift), lift,
                                    ch.u_radius * eu, ch.s_radius * eu,
                                    "CB", ch.alpha)
            members.append(Rectangle(chart, plain, primed))
        if _shifts_disjoint(F, classes, members, shifts):
            break
        tau0 *= 0.5
    else:
        raise ShiftExhausted("no shift scale separated the members")
    A = np.zeros((m, m), dtype=np.int64)
    for p, q in transitions:
        A[p, q] = 1
    rt = {k: [float(v) for v in vs] for k, vs in rtimes.items()}
    return MarkovPartition(
        F.group, members, shifts, len(classes[0].key) - 1, A, rt,
        classes, F.alpha,
        provenance={"shift_scale": float(tau0), "seed": int(shifts_seed),
                    "n_classes": m, "margin": float(margin)})


def _shifts_disjoint(F, classes, members, shifts, tol=1e-12, n_probe=2):
    """Pairwise disjointness of the shifted members.

    Members on the same base chart are disjoint exactly when their flow
    shifts differ (the t-coordinates differ by the shift everywhere);
    cross-chart pairs are probed by locating member samples on the other
    charts and demanding no on-surface containment."""
    by_member = {}
    for p, c in enumerate(classes):
        by_member.setdefault(c.member, []).append(p)
    for _, group in by_member.items():
        for a_i in range(len(group)):
            for b_i in range(a_i + 1, len(group)):
                if abs(shifts[group[b_i]] - shifts[group[a_i]]) < tol:
                    return False
    P = ProperFamily(F.group, members, F.alpha)
    idx = P.index()
    for p, c in enumerate(classes):
        R = members[p]
        pl, pr = R.sample_points(n_probe)
        reps = qt.reduce_many(
            F.group, landing_reps(P, np.full(len(pl), p, dtype=np.int64),
                                  pl, s_from_label(pl, pr)))
        pi, mi, u, s, t = idx.locate(reps)
        on = (np.abs(t) < tol) & (mi != p)
        if np.any(on & P.membership(mi, u, s)):
            return False
    return True


def verify_markov(M, samples=10000, rng=None, fiber_points=8,
                  boundary_tol=1e-6, splice_depth=None, state=None,
                  subdiv=None):
    """Sampled Markov-property report for a finalized partition.

    For sampled transitions p -> q, stable-fiber samples through the
    transit witness must follow it into M_q ((M_s)); dually, unstable
    fibers through the landing point must pull back into M_p ((M_u)).
    Samples landing within `boundary_tol` of a member boundary are
    excluded.  Also checks itinerary splicing on bracket triples.
    """
    if rng is None:
        rng = np.random.default_rng(4)
    P = ProperFamily(M.group, M.members, M.alpha)
    m = len(M.members)
    edges = [(p, q) for p in range(m) for q in range(m) if M.adjacency[p, q]]
    if not edges:
        return {"passed": False, "reason": "empty adjacency"}
    s_pass = s_fail = s_skip = s_esc = 0
    u_pass = u_fail = u_skip = u_esc = 0
    details = []
    budget = samples
    ei = 0
    rounds = 0
    order = rng.permutation(len(edges))
    while budget > 0 and ei < len(edges) and rounds < 50:
        p, q = edges[order[ei]]
        ei += 1
        Rp, Rq = M.members[p], M.members[q]
        # find a transit witness x in M_p with P(x) in M_q
        wit = _find_transit(P, M, p, q, rng)
        if wit is None:
            continue
        (wp, wq), (lu, lq2) = wit
        # (M_s): stable fiber through the witness
        fib = Rp.primed_labels.sample(fiber_points, rng)
        pl = np.full(len(fib), wp)
        reps = landing_reps(P, np.full(len(fib), p, dtype=np.int64),
                            pl, s_from_label(pl, fib))
        mi, tt, uu, ss, ok = poincare_map_many(P, reps, member_tol=1e-12)
        qq = label_from_s(uu, ss)
        for w in range(len(fib)):
            budget -= 1
            if not ok[w]:
                # the orbit left the covered set before returning; this is
                # censoring by partial coverage, not a property violation
                s_esc += 1
                continue
            if _near_boundary(Rq, uu[w], qq[w], boundary_tol) or \
               _near_boundary(Rp, wp, fib[w], boundary_tol):
                s_skip += 1
                continue
            if int(mi[w]) == q and Rq.contains_labels(uu[w], qq[w], 1e-9):
                s_pass += 1
            else:
                s_fail += 1
        # (M_u): unstable fiber through the landing point, pulled back
        fib = Rq.plain_labels.sample(fiber_points, rng)
        qv = np.full(len(fib), lq2)
        reps = landing_reps(P, np.full(len(fib), q, dtype=np.int64),
                            fib, s_from_label(fib, qv))
        mi, tt, uu, ss, ok = poincare_map_many(P, reps, direction=-1,
                                               member_tol=1e-12)
        qq = label_from_s(uu, ss)
        for w in range(len(fib)):
            budget -= 1
            if not ok[w]:
                u_esc += 1
                continue
            if _near_boundary(Rq, fib[w], lq2, boundary_tol) or \
               _near_boundary(Rp, uu[w], qq[w], boundary_tol):
                u_skip += 1
                continue
            if int(mi[w]) == p and Rp.contains_labels(uu[w], qq[w], 1e-9):
                u_pass += 1
            else:
                u_fail += 1
        if ei == len(edges) and budget > 0:
            ei = 0
            rounds += 1
    n_s = s_pass + s_fail
    n_u = u_pass + u_fail
    rep = {
        "samples": int(samples - max(budget, 0)),
        "Ms": {"pass": s_pass, "fail": s_fail, "skipped": s_skip,
               "escaped": s_esc, "rate": s_pass / n_s if n_s else None},
        "Mu": {"pass": u_pass, "fail": u_fail, "skipped": u_skip,
               "escaped": u_esc, "rate": u_pass / n_u if n_u else None},
        "boundary_tol": boundary_tol,
        "edges": len(edges),
    }
    rates = [rep["Ms"]["rate"], rep["Mu"]["rate"]]
    rep["pass_rate"] = (None if any(r is None for r in rates)
                        else min(rates))
    rep["splicing"] = _verify_splicing(
        P, M, rng, depth=splice_depth or min(M.itinerary_depth, 5))
    rep["passed"] = rep["pass_rate"] is not None and rep["pass_rate"] >= 0.99
    if details:
        rep["details"] = details[:50]
    return rep


def _itinerary_of(P, p, plain, primed, depth, direction=1):
    """Member sequence of the orbit of a label pair, or None on escape."""
    seq = []
    cp, cq = float(plain), float(primed)
    cm = p
    for _ in range(depth):
        rep = landing_reps(P, np.array([cm]), np.array([cp]),
                           np.array([s_from_label(cp, cq)]))
        mi, tt, uu, ss, ok = poincare_map_many(P, rep, direction=direction,
                                               member_tol=1e-12)
        if not ok[0]:
            return None
        cm = int(mi[0])
        cp, cq = float(uu[0]), float(label_from_s(uu[0], ss[0]))
        seq.append(cm)
    return seq


def _verify_splicing(P, M, rng, depth, triples=30):
    """Bracket points follow the first factor forward and the second
    backward through their member itineraries."""
    done = fwd = bwd = 0
    for p in rng.permutation(len(M.members))[:triples]:
        R = M.members[p]
        pl = R.plain_labels.sample(2, rng)
        pr = R.primed_labels.sample(2, rng)
        if len(pl) < 2 or len(pr) < 2:
            continue
        x = (pl[0], pr[0])
        y = (pl[-1], pr[-1])
        z = (pl[0], pr[-1])
        fx = _itinerary_of(P, p, *x, depth)
        fz = _itinerary_of(P, p, *z, depth)
        by = _itinerary_of(P, p, *y, depth, direction=-1)
        bz = _itinerary_of(P, p, *z, depth, direction=-1)
        if None in (fx, fz, by, bz):
            continue
        done += 1
        fwd += int(fx == fz)
        bwd += int(by == bz)
    return {"triples": done, "forward_match": fwd, "backward_match": bwd,
            "passed": done > 0 and fwd == done and bwd == done}


def _near_boundary(R, plain, primed, tol):
    # deep-itinerary members are much narrower than any absolute
    # tolerance in the plain direction, so the exclusion band scales
    # with each axis width
    lo, hi = R.plain_labels.hull()
    lo2, hi2 = R.primed_labels.hull()
    tp = min(tol, 0.05 * (hi - lo))
    tq = min(tol, 0.05 * (hi2 - lo2))
    inside = R.contains_labels(plain, primed)
    shrunk = (R.plain_labels.dilate(-tp).contains(plain)
              & R.primed_labels.dilate(-tq).contains(primed)) \
        if tol > 0 else inside
    return bool(inside and not shrunk)


def _find_transit(P, M, p, q, rng, tries=25):
    """A sampled interior point of M_p mapping into M_q, with labels."""
    Rp, Rq = M.members[p], M.members[q]
    pl = Rp.plain_labels.sample(tries, rng)
    pr = Rp.primed_labels.sample(tries, rng)
    k = min(len(pl), len(pr))
    pl, pr = pl[:k], rng.permutation(pr)[:k]
    reps = landing_reps(P, np.full(k, p, dtype=np.int64), pl,
                        s_from_label(pl, pr))
    mi, tt, uu, ss, ok = poincare_map_many(P, reps, member_tol=1e-12)
    qq = label_from_s(uu, ss)
    for w in range(k):
        if ok[w] and int(mi[w]) == q and \
                Rq.contains_labels(uu[w], qq[w], 1e-12):
            return (float(pl[w]), float(pr[w])), (float(uu[w]), float(qq[w]))
    return None


# ---------------------------------------------------------------------------
# symbolic export
# ---------------------------------------------------------------------------

def _cycles_up_to(A, period_max, cap=20000):
    """Simple cycles of the 0/1 digraph up to the given length."""
    m = len(A)
    succ = [np.nonzero(A[p])[0] for p in range(m)]
    out = []
    def dfs(start, node, path):
        if len(out) >= cap:
            return
        for nxt in succ[node]:
            if nxt == start and len(path) >= 1:
                out.append(tuple(path))
            elif nxt > start and nxt not in path and len(path) < period_max:
                dfs(start, int(nxt), path + [int(nxt)])
    for start in range(m):
        dfs(start, start, [start])
    return out


def _min_cycle(A, weights, max_len=40):
    """Minimum return-time-weight cycle of the transition digraph.

    Dijkstra from each node over the sparse edge list; the best cycle
    through p closes a shortest path p -> q with an edge q -> p.  Returns
    (total weight, node list) or (inf, None)."""
    import heapq
    m = len(A)
    succ = [[(int(q), float(weights[p, q]))
             for q in np.nonzero(A[p])[0]] for p in range(m)]
    best = (np.inf, None)
    for p in range(m):
        dist = {p: 0.0}
        prev = {}
        heap = [(0.0, p)]
        seen = set()
        while heap:
            d, node = heapq.heappop(heap)
            if node in seen:
                continue
            seen.add(node)
            for q, w in succ[node]:
                nd = d + w
                if nd < best[0] and nd < dist.get(q, np.inf):
                    if q == p:
                        continue
                    dist[q] = nd
                    prev[q] = node
                    heapq.heappush(heap, (nd, q))
        for node in seen:
            for q, w in succ[node]:
                if q == p and dist.get(node, np.inf) + w < best[0]:
                    cyc = [node]
                    while cyc[-1] != p:
                        cyc.append(prev[cyc[-1]])
                    best = (dist[node] + w, list(reversed(cyc)))
    return best


def close_periodic_word(M, cycle, subdiv=None, iters=200):
    """Close an admissible cycle into a periodic flow orbit.

    Iterates the return map around the cycle while re-centering with the
    on-section bracket: forward sweeps converge the stable label, a
    backward pass the unstable one; returns (length, residual) with the
    residual the quotient distance between the endpoints of one loop.
    """
    P = ProperFamily(M.group, M.members, M.alpha)
    k = len(cycle)
    p0 = cycle[0]
    R0 = M.members[p0]
    pl = float(np.mean(R0.plain_labels.hull()))
    pr = float(np.mean(R0.primed_labels.hull()))
    for sweep in range(iters):
        cur_p, cur_q = pl, pr
        okloop = True
        for step in range(k):
            tgt = cycle[(step + 1) % k]
            rep = landing_reps(P, np.array([cycle[step] % len(M.members)]),
                               np.array([cur_p]),
                               np.array([s_from_label(cur_p, cur_q)]))
            mi, tt, uu, ss, ok = poincare_map_many(P, rep, member_tol=0.02)
            if not ok[0] or int(mi[0]) != tgt:
                okloop = False
                break
            cur_p, cur_q = float(uu[0]), float(label_from_s(uu[0], ss[0]))
        if not okloop:
            return None
        # forward loop contracts the primed label: keep it, re-seed plain
        moved = abs(cur_q - pr)
        pr = cur_q
        # unstable label: one backward loop from the current point
        bp, bq = pl, pr
        okb = True
        for step in range(k):
            src = cycle[(-step) % k]
            tgt = cycle[(-step - 1) % k]
            rep = landing_reps(P, np.array([src]), np.array([bp]),
                               np.array([s_from_label(bp, bq)]))
            mi, tt, uu, ss, ok = poincare_map_many(P, rep, direction=-1,
                                                   member_tol=0.02)
            if not ok[0] or int(mi[0]) != tgt:
                okb = False
                break
            bp, bq = float(uu[0]), float(label_from_s(uu[0], ss[0]))
        if okb:
            moved = max(moved, abs(bp - pl))
            pl = bp
        if moved < 1e-12 and sweep > 2:
            break
    # length of one loop at the converged point
    length = 0.0
    cur_p, cur_q = pl, pr
    start = landing_reps(P, np.array([p0]), np.array([pl]),
                         np.array([s_from_label(pl, pr)]))
    for step in range(len(cycle)):
        rep = landing_reps(P, np.array([cycle[step]]), np.array([cur_p]),
                           np.array([s_from_label(cur_p, cur_q)]))
        mi, tt, uu, ss, ok = poincare_map_many(P, rep, member_tol=0.02)
        if not ok[0] or int(mi[0]) != cycle[(step + 1) % len(cycle)]:
            return None
        length += float(tt[0])
        cur_p, cur_q = float(uu[0]), float(label_from_s(uu[0], ss[0]))
    end = landing_reps(P, np.array([p0]), np.array([cur_p]),
                       np.array([s_from_label(cur_p, cur_q)]))
    resid = float(qt.quotient_dist_many(M.group,
                                        qt.reduce_many(M.group, start),
                                        qt.reduce_many(M.group, end))[0])
    return float(length), resid


def length_spectrum(G, depth=6):
    """Closed-geodesic lengths from the group: {2 arccosh(|tr|/2)}."""
    ball = G.ball_array(depth)
    tr = np.abs(ball[:, 0, 0] + ball[:, 1, 1])
    lengths = 2.0 * np.arccosh(np.maximum(tr / 2.0, 1.0))
    lengths = lengths[lengths > 1e-9]
    return np.unique(np.round(np.sort(lengths), 9))


def export_symbolic(M, period_max=3, spectrum_depth=6, search_len=40):
    """The subshift bundle: adjacency, sampled return times, periodic
    words up to `period_max` closed into orbits, and the shortest
    admissible cycle, all cross-checked against the group length spectrum.
    """
    G = M.group
    spec = length_spectrum(G, spectrum_depth)
    m = len(M.members)
    wmat = np.full((m, m), np.inf)
    for (p, q), vals in M.return_times.items():
        wmat[p, q] = float(np.median(vals))
    words = _cycles_up_to(M.adjacency, period_max)
    rows = []
    for cyc in words:
        got = close_periodic_word(M, list(cyc))
        if got is None:
            rows.append({"word": cyc, "period": len(cyc), "r_sum": None,
                         "length": None, "group_length": None,
                         "residual": None, "closed": False})
            continue
        length, resid = got
        j = int(np.argmin(np.abs(spec - length)))
        rows.append({"word": cyc, "period": len(cyc),
                     "r_sum": float(length), "length": float(length),
                     "group_length": float(spec[j]),
                     "residual": float(abs(spec[j] - length)),
                     "closed": True})
    min_len, min_cyc = _min_cycle(M.adjacency, wmat, search_len)
    shortest = None
    if min_cyc is not None:
        got = close_periodic_word(M, min_cyc)
        if got is not None:
            length, resid = got
            j = int(np.argmin(np.abs(spec - length)))
            shortest = {"word": tuple(min_cyc), "period": len(min_cyc),
                        "length": float(length),
                        "group_length": float(spec[j]),
                        "residual": float(abs(spec[j] - length)),
                        "closing_residual": float(resid)}
    return {
        "adjacency": M.adjacency,
        "return_times": M.return_times,
        "periodic_words": rows,
        "shortest_cycle": shortest,
        "spectrum_head": [float(v) for v in spec[:10]],
        "period_max": int(period_max),
    }
