"""Arithmetic in PSL(2,R).

Elements are stored as sign-canonicalized unit-determinant 2x2 real
matrices: det = 1, trace >= 0, and when the trace vanishes the first
nonzero entry in row-major order is positive.  With this convention
equality in PSL(2,R) is plain matrix equality (up to tolerance).

Alongside the scalar `GroupElement` API the module exposes `*_many`
helpers operating on (n,2,2) numpy stacks; the quotient and partition
machinery is built on those.
"""

from dataclasses import dataclass

import numpy as np

DET_TOL = 1e-12
ZERO_PIVOT = 1e-12


class DegenerateDecomposition(ValueError):
    """A triangular decomposition pivot vanished."""


class LogUndefined(ValueError):
    """The principal matrix logarithm does not exist for this element."""


# ---------------------------------------------------------------------------
# vectorized helpers on (n,2,2) stacks
# ---------------------------------------------------------------------------

def canonicalize_many(m):
    """Normalize det to 1 and fix the PSL sign on a (...,2,2) stack."""
    m = np.asarray(m, dtype=float)
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if np.any(det <= 0):
        raise ValueError("matrix has non-positive determinant")
    m = m / np.sqrt(det)[..., None, None]
    tr = m[..., 0, 0] + m[..., 1, 1]
    flat = m.reshape(*m.shape[:-2], 4)
    # sign of the first entry exceeding the tie tolerance, else of the trace
    first = np.where(
        np.abs(flat[..., 0]) > ZERO_PIVOT, flat[..., 0],
        np.where(np.abs(flat[..., 1]) > ZERO_PIVOT, flat[..., 1],
                 np.where(np.abs(flat[..., 2]) > ZERO_PIVOT, flat[..., 2],
                          flat[..., 3])))
    sign = np.where(np.abs(tr) > ZERO_PIVOT, np.sign(tr), np.sign(first))
    return m * sign[..., None, None]


def mul_many(a, b):
    """Canonical product of two (...,2,2) stacks."""
    return canonicalize_many(np.asarray(a) @ np.asarray(b))


def inv_many(m):
    m = np.asarray(m, dtype=float)
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    out[..., 1, 1] = m[..., 0, 0]
    return canonicalize_many(out)


def _log_factor(tau):
    """f(tau) with log(M) = f(tau) * (M - tau*I) for det-1 M, tau = tr/2."""
    tau = np.asarray(tau, dtype=float)
    out = np.ones_like(tau)
    hyp = tau > 1.0 + 1e-8
    ell = tau < 1.0 - 1e-8
    if np.any(hyp):
        th = np.arccosh(tau[hyp])
        out[hyp] = th / np.sinh(th)
    if np.any(ell):
        th = np.arccos(tau[ell])
        out[ell] = th / np.sin(th)
    mid = ~(hyp | ell)
    if np.any(mid):
        # series around tau = 1: theta/sinh(theta) = 1 - (tau-1)/3 + O((tau-1)^2)
        out[mid] = 1.0 - (tau[mid] - 1.0) / 3.0
    return out


def log_many(m):
    """Principal logarithm of canonical (...,2,2) stacks (closed form)."""
    m = np.asarray(m, dtype=float)
    tau = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    if np.any(tau <= -1.0 + 1e-12):
        raise LogUndefined("element is a rotation by pi; no principal log")
    f = _log_factor(tau)
    eye = np.eye(2)
    return f[..., None, None] * (m - tau[..., None, None] * eye)


def exp_traceless(x):
    """exp of traceless (...,2,2) stacks (closed form)."""
    x = np.asarray(x, dtype=float)
    q = x[..., 0, 0] * x[..., 1, 1] - x[..., 0, 1] * x[..., 1, 0]  # det
    eye = np.eye(2)
    c = np.empty(q.shape)
    s = np.empty(q.shape)
    hyp = q < -1e-16
    ell = q > 1e-16
    if np.any(hyp):
        k = np.sqrt(-q[hyp])
        c[hyp] = np.cosh(k)
        s[hyp] = np.sinh(k) / k
    if np.any(ell):
        k = np.sqrt(q[ell])
        c[ell] = np.cos(k)
        s[ell] = np.sin(k) / k
    mid = ~(hyp | ell)
    if np.any(mid):
        c[mid] = 1.0 + 0.5 * (-q[mid])
        s[mid] = 1.0 - q[mid] / 6.0
    return c[..., None, None] * eye + s[..., None, None] * x


def dist_many(a, b):
    """Frobenius norm of log(a^{-1} b), vectorized; a may broadcast over b."""
    rel = mul_many(inv_many(a), b)
    lg = log_many(rel)
    return np.sqrt(np.sum(lg * lg, axis=(-2, -1)))


def norm_log_many(m):
    lg = log_many(canonicalize_many(m))
    return np.sqrt(np.sum(lg * lg, axis=(-2, -1)))


# ---------------------------------------------------------------------------
# scalar API
# ---------------------------------------------------------------------------

class GroupElement:
    """A PSL(2,R) element as a canonical unit-determinant 2x2 matrix."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = canonicalize_many(np.asarray(m, dtype=float))
        if m.shape != (2, 2):
            raise ValueError("expected a single 2x2 matrix")
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det - 1.0) > 1e-9:
            raise ValueError("determinant normalization failed")
        m.setflags(write=False)
        self.m = m

    @classmethod
    def identity(cls):
        return cls(np.eye(2))

    def inv(self):
        a, b, c, d = self.m.ravel()
        return GroupElement([[d, -b], [-c, a]])

    def __matmul__(self, other):
        return GroupElement(self.m @ other.m)

    def trace(self):
        return float(self.m[0, 0] + self.m[1, 1])

    def close_to(self, other, tol=1e-9):
        return bool(np.max(np.abs(self.m - other.m)) <= tol)

    def __repr__(self):
        a, b, c, d = self.m.ravel()
        return f"GroupElement([[{a:.12g},{b:.12g}],[{c:.12g},{d:.12g}]])"


IDENTITY = GroupElement.identity()


@dataclass(frozen=True)
class KanCoords:
    """Coordinates of a triangular decomposition; order is 'cba' or 'abc'."""
    u: float
    s: float
    t: float
    order: str = "cba"


@dataclass(frozen=True)
class MetricValue:
    """A distance bracket; lower == upper for the implemented proxy."""
    lower: float
    upper: float

    @property
    def value(self):
        return self.lower


def mul(g, h):
    return g @ h


def one_param(kind, t):
    """The one-parameter subgroups a_t (diagonal), b_t (upper), c_t (lower)."""
    t = float(t)
    if kind == "A":
        e = np.exp(0.5 * t)
        return GroupElement([[e, 0.0], [0.0, 1.0 / e]])
    if kind == "B":
        return GroupElement([[1.0, t], [0.0, 1.0]])
    if kind == "C":
        return GroupElement([[1.0, 0.0], [t, 1.0]])
    raise ValueError(f"unknown one-parameter kind {kind!r}")


def decompose_cba_many(m):
    """(u, s, t) with m = c_u b_s a_t, vectorized.  Pivot is the top-left entry."""
    m = np.asarray(m, dtype=float)
    a = m[..., 0, 0]
    if np.any(np.abs(a) <= ZERO_PIVOT):
        raise DegenerateDecomposition("top-left entry vanishes")
    t = 2.0 * np.log(np.abs(a))
    s = a * m[..., 0, 1]
    u = m[..., 1, 0] / a
    return u, s, t


def decompose_abc_many(m):
    """(u, s, t) with m = a_t b_s c_u, vectorized.  Pivot is the bottom-right entry."""
    m = np.asarray(m, dtype=float)
    d = m[..., 1, 1]
    if np.any(np.abs(d) <= ZERO_PIVOT):
        raise DegenerateDecomposition("bottom-right entry vanishes")
    t = -2.0 * np.log(np.abs(d))
    s = m[..., 0, 1] * d
    u = m[..., 1, 0] / d
    return u, s, t


def decompose_cba(g):
    u, s, t = decompose_cba_many(g.m)
    return KanCoords(float(u), float(s), float(t), "cba")


def decompose_abc(g):
    u, s, t = decompose_abc_many(g.m)
    return KanCoords(float(u), float(s), float(t), "abc")


def recompose(k):
    cu = one_param("C", k.u)
    bs = one_param("B", k.s)
    at = one_param("A", k.t)
    if k.order == "cba":
        return cu @ bs @ at
    if k.order == "abc":
        return at @ bs @ cu
    raise ValueError(f"unknown decomposition order {k.order!r}")


def matrix_log(g):
    return log_many(g.m)


def proxy_dist(g, h):
    """Left-invariant distance proxy ||log(g^{-1} h)||_F."""
    v = float(dist_many(g.m, h.m))
    return MetricValue(v, v)


def random_elements(rng, n, scale=1.0):
    """Random canonical elements exp(X) with X traceless, entries ~ scale."""
    x = rng.normal(scale=scale, size=(n, 2, 2))
    x[:, 1, 1] = -x[:, 0, 0]
    return canonicalize_many(exp_traceless(x))
