"""Truncated moment sequences, moment/localizing matrices and Lebesgue moments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .polyalg import Polynomial, QuotientRing, monomials_up_to


@dataclass(frozen=True)
class MomentSpace:
    """Indexing of the moments of one measure: ambient indeterminates, truncation
    degree and (optionally) the quotient ring whose reduced monomials form the basis."""

    variables: tuple[str, ...]
    degree: int
    ring: QuotientRing | None = None
    basis: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.variables)
        if self.ring is None:
            basis = monomials_up_to(n, self.degree)
        else:
            basis = self.ring.basis(n, self.degree)
        object.__setattr__(self, "basis", tuple(basis))
        object.__setattr__(self, "index", {a: i for i, a in enumerate(basis)})

    @property
    def dim(self) -> int:
        return len(self.variables)

    @property
    def size(self) -> int:
        return len(self.basis)

    def half_basis(self, k: int) -> list[tuple[int, ...]]:
        n = self.dim
        if self.ring is None:
            return monomials_up_to(n, k)
        return self.ring.basis(n, k)

    def functional(self, p: Polynomial) -> list[tuple[int, float]]:
        """``<y, p>`` as (moment index, coefficient) pairs; ``p`` is reduced first."""
        if p.variables != self.variables:
            raise ValueError(f"polynomial over {p.variables}, space over {self.variables}")
        p = p.reduce(self.ring)
        out = []
        for a, v in p.sorted_terms():
            if a not in self.index:
                raise TruncationError(f"monomial {a} exceeds truncation degree {self.degree}")
            out.append((self.index[a], v))
        return out

    def monomial_functional(self, alpha) -> list[tuple[int, float]]:
        alpha = tuple(alpha)
        if self.ring is None or self.ring.is_reduced(alpha):
            if alpha not in self.index:
                raise TruncationError(f"monomial {alpha} exceeds truncation degree {self.degree}")
            return [(self.index[alpha], 1.0)]
        out = []
        for b, v in sorted(self.ring.reduce_monomial(alpha).items()):
            if b not in self.index:
                raise TruncationError(f"monomial {b} exceeds truncation degree {self.degree}")
            out.append((self.index[b], v))
        return out


class TruncationError(ValueError):
    pass


@dataclass
class MomentVector:
    """Truncated moment sequence of one measure, ordered by ``space.basis``."""

    tag: str
    space: MomentSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.size,):
            raise ValueError(f"{self.tag}: expected {self.space.size} moments, got {self.values.shape}")

    @property
    def mass(self) -> float:
        return float(self.values[0])

    def __getitem__(self, alpha) -> float:
        return float(self.values[self.space.index[tuple(alpha)]])

    def integrate(self, p: Polynomial) -> float:
        return float(sum(self.values[i] * c for i, c in self.space.functional(p)))


@dataclass
class StructuredMatrix:
    """Symmetric matrix whose entries are linear functionals of a moment vector.

    ``entries[(i, j)]`` lists (moment index, coefficient) pairs and is stored for
    both triangles (the lists for (i, j) and (j, i) are the same object).
    """

    kind: str
    size: int
    row_basis: list[tuple[int, ...]]
    entries: dict
    generator: Polynomial | None = None

    def instantiate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        M = np.zeros((self.size, self.size))
        for (i, j), terms in self.entries.items():
            M[i, j] = sum(c * y[idx] for idx, c in terms)
        return M

    def triplets(self):
        """Upper-triangle (row, col, moment index, coefficient) arrays."""
        rows, cols, idx, coef = [], [], [], []
        for (i, j), terms in sorted(self.entries.items()):
            if i > j:
                continue
            for k, c in terms:
                rows.append(i)
                cols.append(j)
                idx.append(k)
                coef.append(c)
        return (np.array(rows, dtype=int), np.array(cols, dtype=int),
                np.array(idx, dtype=int), np.array(coef, dtype=float))


def _space(dim_or_space, k2: int, ring=None) -> MomentSpace:
    if isinstance(dim_or_space, MomentSpace):
        return dim_or_space
    names = tuple(f"x{i + 1}" for i in range(dim_or_space))
    return MomentSpace(names, k2, ring)


def moment_matrix(dim, k: int, ring: QuotientRing | None = None) -> StructuredMatrix:
    """``[M_k(y)]_{(a,b)} = y^{a+b}`` over the (reduced) basis of degree ``k``.

    ``dim`` is an indeterminate count or a :class:`MomentSpace` whose truncation
    degree is at least ``2k``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    space = _space(dim, 2 * k, ring)
    rows = space.half_basis(k)
    entries = {}
    for i, a in enumerate(rows):
        for j in range(i, len(rows)):
            terms = space.monomial_functional(tuple(x + y for x, y in zip(a, rows[j])))
            entries[(i, j)] = terms
            entries[(j, i)] = terms
    return StructuredMatrix("moment", len(rows), rows, entries)


def localizing_matrix(h: Polynomial, dim, k_h: int, ring: QuotientRing | None = None) -> StructuredMatrix:
    """``[M_{k_h}(h, y)]_{(a,b)} = sum_g h_g y^{a+b+g}``."""
    if k_h < 0:
        raise ValueError(f"localizing order k_h = {k_h} < 0")
    if isinstance(dim, MomentSpace):
        space = dim
    else:
        space = _space(dim, 2 * k_h + max(h.degree, 0), ring)
        h = Polynomial(space.variables, h.terms)
    rows = space.half_basis(k_h)
    hr = h.reduce(space.ring)
    entries = {}
    for i, a in enumerate(rows):
        for j in range(i, len(rows)):
            ab = tuple(x + y for x, y in zip(a, rows[j]))
            acc: dict[int, float] = {}
            for g, hv in hr.terms.items():
                for idx, c in space.monomial_functional(tuple(x + y for x, y in zip(ab, g))):
                    acc[idx] = acc.get(idx, 0.0) + hv * c
            terms = [(idx, c) for idx, c in sorted(acc.items()) if c != 0.0]
            entries[(i, j)] = terms
            entries[(j, i)] = terms
    return StructuredMatrix("localizing", len(rows), rows, entries, generator=h)


# ---------------------------------------------------------------------------
# Lebesgue moments

class UnsupportedGeometry(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    """Product of unit circles (ring pairs) and a box or ball in the other coordinates."""

    kind: str                      # "box" | "ball"
    free: tuple[int, ...]          # coordinate indices of the box/ball part
    circles: tuple[tuple[int, int], ...]
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0

    def volume(self) -> float:
        v = (2 * math.pi) ** len(self.circles)
        if self.kind == "box":
            v *= float(np.prod(np.subtract(self.hi, self.lo)))
        else:
            d = len(self.free)
            v *= math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d
        return v

    def half_widths(self, n: int) -> np.ndarray:
        """Per-coordinate magnitude bound, used for moment scaling."""
        r = np.ones(n)
        for k, i in enumerate(self.free):
            if self.kind == "box":
                r[i] = max(abs(self.lo[k]), abs(self.hi[k]))
            else:
                r[i] = abs(self.center[k]) + self.radius
        return r

    def sample(self, rng: np.random.Generator, count: int, n: int) -> np.ndarray:
        """Uniform samples (w.r.t. this set's Lebesgue measure)."""
        x = np.zeros((count, n))
        for s, c in self.circles:
            th = rng.uniform(-np.pi, np.pi, count)
            x[:, s] = np.sin(th)
            x[:, c] = np.cos(th)
        d = len(self.free)
        if self.kind == "box":
            x[:, list(self.free)] = rng.uniform(self.lo, self.hi, size=(count, d))
        else:
            z = rng.normal(size=(count, d))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            rad = self.radius * rng.random(count) ** (1.0 / d)
            x[:, list(self.free)] = np.asarray(self.center) + z * rad[:, None]
        return x


def detect_geometry(inequalities: Sequence[Polynomial], ring: QuotientRing | None = None) -> Geometry:
    """Recognize a box or ball syntactically (after ring reduction)."""
    if not inequalities:
        raise UnsupportedGeometry("no inequalities")
    n = inequalities[0].nvars
    circles = tuple(ring.pairs) if ring else ()
    ring_idx = {i for pair in circles for i in pair}
    free = tuple(i for i in range(n) if i not in ring_idx)
    hs = [h.reduce(ring) for h in inequalities]
    hs = [h for h in hs if not (h.degree <= 0 and h.coef((0,) * n) >= 0)]
    for h in hs:
        if any(a[i] for a in h.terms for i in ring_idx):
            raise UnsupportedGeometry("inequality involves circle coordinates")
        if h.degree != 2:
            raise UnsupportedGeometry("only quadratic inequalities are recognized")
    if not free:
        return Geometry("box", (), circles)

    def quad_parts(h):
        Q = np.zeros((n, n))
        lin = np.zeros(n)
        const = h.coef((0,) * n)
        for a, v in h.terms.items():
            if sum(a) == 2:
                idx = [i for i in range(n) for _ in range(a[i])]
                Q[idx[0], idx[1]] += v / (1 if idx[0] == idx[1] else 2)
                if idx[0] != idx[1]:
                    Q[idx[1], idx[0]] += v / 2
            elif sum(a) == 1:
                lin[a.index(1)] = v
        return Q, lin, const

    # ball: -q |x - c|^2 + q r^2 over all free coordinates
    if len(hs) == 1:
        Q, lin, const = quad_parts(hs[0])
        q = -Q[free[0], free[0]]
        sub = Q[np.ix_(free, free)]
        if q > 0 and np.allclose(sub, -q * np.eye(len(free)), atol=1e-14 * q) and \
                np.allclose(Q[np.ix_(free, free)].sum(), Q.sum()):
            center = lin[list(free)] / (2 * q)
            r2 = const / q + center @ center
            if r2 > 0:
                return Geometry("ball", free, circles, center=tuple(center), radius=math.sqrt(r2))
    # box: univariate concave quadratics, at least one per free coordinate
    lo = {i: -np.inf for i in free}
    hi = {i: np.inf for i in free}
    for h in hs:
        Q, lin, const = quad_parts(h)
        used = [i for i in range(n) if Q[i].any() or lin[i]]
        if len(used) != 1 or Q[used[0], used[0]] >= 0:
            raise UnsupportedGeometry("not a box or ball")
        i = used[0]
        a, b, c = Q[i, i], lin[i], const
        disc = b * b - 4 * a * c
        if disc <= 0:
            raise UnsupportedGeometry("empty interval")
        r1, r2 = sorted(np.roots([a, b, c]).real)
        lo[i] = max(lo[i], r1)
        hi[i] = min(hi[i], r2)
    if any(not np.isfinite(lo[i]) or not np.isfinite(hi[i]) for i in free):
        raise UnsupportedGeometry("some coordinate is unbounded")
    return Geometry("box", free, circles, lo=tuple(lo[i] for i in free), hi=tuple(hi[i] for i in free))


def _interval_moment(a: int, lo: float, hi: float) -> float:
    return (hi ** (a + 1) - lo ** (a + 1)) / (a + 1)


def ball_moment_centered(alpha: Sequence[int], radius: float) -> float:
    """``int_{|x| <= R} x^alpha dx`` in ``len(alpha)`` dimensions."""
    if any(a % 2 for a in alpha):
        return 0.0
    d = len(alpha)
    s = sum(alpha)
    betas = [(a + 1) / 2 for a in alpha]
    logv = math.log(2.0) + sum(gammaln(b) for b in betas) - gammaln(sum(betas))
    return math.exp(logv) * radius ** (s + d) / (s + d)


def circle_moment(a: int, b: int) -> float:
    """``int_{-pi}^{pi} sin^a cos^b dtheta``."""
    if a % 2 or b % 2:
        return 0.0
    return 2.0 * math.exp(gammaln((a + 1) / 2) + gammaln((b + 1) / 2) - gammaln((a + b) / 2 + 1))


def geometry_moment(geo: Geometry, alpha: Sequence[int]) -> float:
    val = 1.0
    for s, c in geo.circles:
        val *= circle_moment(alpha[s], alpha[c])
        if val == 0.0:
            return 0.0
    sub = [alpha[i] for i in geo.free]
    if geo.kind == "box":
        for a, lo, hi in zip(sub, geo.lo, geo.hi):
            val *= _interval_moment(a, lo, hi)
        return val
    c = np.asarray(geo.center)
    if not c.any():
        return val * ball_moment_centered(sub, geo.radius)
    # shift: (z + c)^alpha expanded binomially
    total = 0.0
    for beta in np.ndindex(*[a + 1 for a in sub]):
        w = 1.0
        for a, b, ci in zip(sub, beta, c):
            w *= math.comb(a, b) * ci ** (a - b)
        if w:
            total += w * ball_moment_centered(beta, geo.radius)
    return val * total


def lebesgue_moments(inequalities: Sequence[Polynomial], space: MomentSpace,
                     allow_quadrature: bool = True, quad_order: int = 64,
                     bound: float | None = None, tag: str = "lambda") -> MomentVector:
    """Moments of Lebesgue measure on ``{h_i >= 0}`` (arc length on ring circles).

    Boxes and balls use closed forms; otherwise a tensor Gauss-Legendre rule on
    ``[-bound, bound]^n`` restricted by rejection is used (``tolerance`` attribute
    of the returned vector reports the difference to a half-order rule).
    """
    try:
        geo = detect_geometry(inequalities, space.ring)
    except UnsupportedGeometry:
        if not allow_quadrature:
            raise
        if space.ring is not None or bound is None:
            raise UnsupportedGeometry("quadrature fallback needs a bound and no quotient ring")
        vals, tol = _quadrature_moments(inequalities, space, quad_order, bound)
        mv = MomentVector(tag, space, vals)
        mv.tolerance = tol
        return mv
    vals = np.array([geometry_moment(geo, a) for a in space.basis])
    mv = MomentVector(tag, space, vals)
    mv.tolerance = 0.0
    return mv


def _quadrature_moments(inequalities, space: MomentSpace, order: int, bound: float):
    def rule(q):
        x, w = np.polynomial.legendre.leggauss(q)
        grids = np.meshgrid(*[x * bound] * space.dim, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wts = np.ones(len(pts)) * bound ** space.dim
        for ax in np.meshgrid(*[w] * space.dim, indexing="ij"):
            wts *= ax.ravel()
        inside = np.ones(len(pts), dtype=bool)
        for h in inequalities:
            inside &= h.evaluate(pts) >= 0
        pts, wts = pts[inside], wts[inside]
        exps = np.array(space.basis, dtype=float)
        V = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
        return wts @ V

    full = rule(order)
    half = rule(order // 2)
    tol = float(np.max(np.abs(full - half)) / max(np.max(np.abs(full)), 1e-300))
    return full, tol
