"""The discrete group Gamma and the quotient space X = Gamma \\ PSL(2,R).

Default group: the genus-2 octagon group (regular hyperbolic octagon with
vertex angle pi/4, opposite sides identified).  Provides word-ball
enumeration, fundamental-domain reduction by greedy Dirichlet descent
about i, the quotient distance, and the injectivity radius.

Scalar entry points work on `GroupElement`/`QuotientPoint`; the `*_many`
functions operate on (n,2,2) numpy stacks and carry the heavy load.
"""

from dataclasses import dataclass, field

import numpy as np

from . import psl2
from .psl2 import GroupElement, canonicalize_many, inv_many, log_many

BALL_CAP = 8


class BallTooLarge(ValueError):
    """Requested word-ball radius exceeds the configured cap."""


def mobius_i_many(m):
    """g -> g(i) as a complex array, vectorized over (...,2,2)."""
    m = np.asarray(m, dtype=float)
    num = m[..., 0, 0] * 1j + m[..., 0, 1]
    den = m[..., 1, 0] * 1j + m[..., 1, 1]
    return num / den


def frame_many(m):
    """Global coordinates (x, y, psi) of g: base point g(i) = x+iy in the
    upper half-plane and frame angle psi = -2 arg(ci + d) mod 2pi."""
    m = np.asarray(m, dtype=float)
    den = m[..., 1, 0] * 1j + m[..., 1, 1]
    z = (m[..., 0, 0] * 1j + m[..., 0, 1]) / den
    psi = np.mod(-2.0 * np.angle(den), 2.0 * np.pi)
    return z.real, z.imag, psi


def hyp_dist_i_many(z):
    """Hyperbolic distance from z to i in the upper half-plane."""
    z = np.asarray(z, dtype=complex)
    q = 1.0 + (np.abs(z - 1j) ** 2) / (2.0 * z.imag)
    return np.arccosh(np.maximum(q, 1.0))


@dataclass(frozen=True)
class QuotientPoint:
    """A point Gamma g with a fundamental-domain representative."""
    rep: GroupElement
    word: tuple = ()


@dataclass
class FuchsianGroup:
    """A cocompact torsion-free Fuchsian group with a fixed generator list."""
    generators: list            # GroupElement, closed under inverse
    relation: tuple             # signed generator indices, product == e
    _gen_arr: np.ndarray = field(repr=False, default=None)
    _balls: dict = field(repr=False, default_factory=dict)
    _near: np.ndarray = field(repr=False, default=None)
    _sigma: float = field(default=None)

    def __post_init__(self):
        arr = np.stack([g.m for g in self.generators])
        for g in self.generators:
            if abs(g.trace()) <= 2.0:
                raise ValueError("generators must be hyperbolic (|trace| > 2)")
        rel = GroupElement.identity()
        for idx in self.relation:
            g = self.generators[abs(idx) - 1]
            rel = rel @ (g if idx > 0 else g.inv())
        if not rel.close_to(GroupElement.identity(), 1e-9):
            raise ValueError("relation word does not multiply to the identity")
        self._gen_arr = arr

    # -- word balls --------------------------------------------------------

    def ball_array(self, max_word_len):
        """Distinct nontrivial elements of word length <= max_word_len, (n,2,2)."""
        if max_word_len > BALL_CAP:
            raise BallTooLarge(f"word length {max_word_len} exceeds cap {BALL_CAP}")
        if max_word_len <= 0:
            return np.empty((0, 2, 2))
        if max_word_len in self._balls:
            return self._balls[max_word_len]
        seen = {_key(np.eye(2))}
        out = []
        frontier = np.eye(2)[None]
        for _ in range(max_word_len):
            prods = canonicalize_many(
                np.einsum("nij,gjk->ngik", frontier, self._gen_arr)
            ).reshape(-1, 2, 2)
            fresh = []
            for m in prods:
                k = _key(m)
                if k not in seen:
                    seen.add(k)
                    fresh.append(m)
            if not fresh:
                break
            frontier = np.stack(fresh)
            out.append(frontier)
        arr = np.concatenate(out) if out else np.empty((0, 2, 2))
        self._balls[max_word_len] = arr
        return arr

    # -- near-translate table for quotient distances -----------------------

    def near_translates(self, reach=None, depth=5):
        """Ball elements that can matter when comparing reduced representatives:
        all gamma with d_H(gamma(i), i) below 2*circumradius + sqrt(2)*sigma*."""
        if self._near is not None and reach is None:
            return self._near
        if reach is None:
            reach = 2.0 * self.circumradius() + 1.45 * self.sigma_star()
        ball = self.ball_array(min(depth, BALL_CAP))
        disp = hyp_dist_i_many(mobius_i_many(ball))
        near = np.concatenate([np.eye(2)[None], ball[disp <= reach]])
        self._near = near
        return near

    def circumradius(self):
        """Radius of the Dirichlet domain about i: the farthest vertex,
        estimated as the farthest greedy-irreducible point of a probe orbit
        (right-triangle value arccosh(cot^2 pi/8) ~ 2.448 for the octagon)."""
        if getattr(self, "_circ", None) is None:
            rng = np.random.default_rng(12345)
            m = psl2.random_elements(rng, 3000, scale=1.5)
            red = reduce_many(self, m)
            self._circ = float(np.max(
                hyp_dist_i_many(mobius_i_many(red)))) + 0.05
        return self._circ

    def sigma_star(self):
        return injectivity_radius(self)


def _key(m, digits=9):
    return tuple(np.round(np.asarray(m).ravel(), digits))


# ---------------------------------------------------------------------------
# construction of the default group
# ---------------------------------------------------------------------------

def octagon_generators():
    """Side pairings of the regular octagon (vertex angle pi/4), as real
    unit-determinant matrices acting on the upper half-plane."""
    r2 = np.sqrt(2.0)
    beta = np.sqrt(2.0 + 2.0 * r2)
    cayley = np.array([[1.0, -1j], [1.0, 1j]]) / np.sqrt(2j)
    cayley_inv = np.linalg.inv(cayley)
    gens = []
    for k in range(4):
        w = np.exp(1j * k * np.pi / 4.0)
        h = np.array([[1.0 + r2, beta * w], [beta * np.conj(w), 1.0 + r2]])
        g = cayley_inv @ h @ cayley
        assert np.max(np.abs(g.imag)) < 1e-9
        gens.append(GroupElement(g.real))
    return gens


def bolza_group():
    """The genus-2 octagon group: generators g1..g4 and their inverses g5..g8,
    with the surface relation [g1, g2^-1] [g2^-1 g1 g3, g4^-1 g3] = e."""
    base = octagon_generators()
    gens = base + [g.inv() for g in base]
    # y1=g1, y2=g2^-1, y3=g3, y4=g4^-1; relator y1 y2 y3 y4 y1' y2' y3' y4'
    relation = (1, -2, 3, -4, -1, 2, -3, 4)
    return FuchsianGroup(gens, relation)


# ---------------------------------------------------------------------------
# reduction and distances
# ---------------------------------------------------------------------------

def reduce_many(G, m, return_words=False):
    """Greedy Dirichlet reduction of an (n,2,2) stack.

    Left-multiplies by generators while this strictly decreases the
    hyperbolic distance of g(i) to i; ties broken by generator order.
    """
    m = canonicalize_many(np.asarray(m, dtype=float))
    single = m.ndim == 2
    if single:
        m = m[None]
    m = m.copy()
    gen = G._gen_arr
    words = [[] for _ in range(len(m))] if return_words else None
    active = np.arange(len(m))
    cost = hyp_dist_i_many(mobius_i_many(m))
    for _ in range(200):
        sub = m[active]
        cand = np.einsum("gij,njk->ngik", gen, sub)
        ccost = hyp_dist_i_many(mobius_i_many(cand))
        best = np.argmin(ccost, axis=1)
        bcost = ccost[np.arange(len(sub)), best]
        improve = bcost < cost[active] - 1e-12
        if not np.any(improve):
            break
        idx = active[improve]
        m[idx] = canonicalize_many(cand[improve, best[improve]])
        cost[idx] = bcost[improve]
        if return_words:
            for i, b in zip(idx, best[improve]):
                words[i].append(int(b) + 1)
        active = idx
        if len(active) == 0:
            break
    if return_words:
        words = [tuple(w) for w in words]
        return (m[0], words[0]) if single else (m, words)
    return m[0] if single else m


def reduce(G, g):
    rep, word = reduce_many(G, g.m, return_words=True)
    return QuotientPoint(GroupElement(rep), word)


def quotient_dist_many(G, a, b, chunk=512):
    """d_X between reduced representative stacks a and b (broadcast pairs)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if b.ndim == 2:
        b = b[None]
    n = max(len(a), len(b))
    a = np.broadcast_to(a, (n, 2, 2))
    b = np.broadcast_to(b, (n, 2, 2))
    near = G.near_translates()
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        rel = np.einsum("nij,gjk,nkl->ngil", inv_many(a[lo:hi]), near, b[lo:hi])
        rel = canonicalize_many(rel)
        lg = log_many(rel)
        d = np.sqrt(np.sum(lg * lg, axis=(-2, -1)))
        out[lo:hi] = np.min(d, axis=1)
    return out


def quotient_dist(G, x, y):
    """d_X(x, y) = min over near translates gamma of d_G(rep_x, gamma rep_y).

    Exact whenever the value is below sigma*; otherwise an upper bound."""
    return float(quotient_dist_many(G, x.rep.m, y.rep.m)[0])


def injectivity_radius(G, depth=4):
    """Minimal translation length over nontrivial conjugacy classes / sqrt(2)."""
    if G._sigma is not None:
        return G._sigma
    ball = G.ball_array(depth)
    tr = np.abs(ball[:, 0, 0] + ball[:, 1, 1])
    hyp = tr > 2.0 + 1e-9
    if np.any(~hyp):
        raise ValueError("group ball contains non-hyperbolic elements")
    lengths = 2.0 * np.arccosh(tr[hyp] / 2.0)
    G._sigma = float(np.min(lengths) / np.sqrt(2.0))
    return G._sigma


def ball(G, max_word_len):
    """Distinct nontrivial elements of word length <= max_word_len."""
    return [GroupElement(m) for m in G.ball_array(max_word_len)]
