"""Sparse multivariate polynomials over named indeterminates.

Monomials are exponent tuples; every ordered basis in the package uses the
graded lexicographic order produced by :func:`monomials_up_to`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

PRUNE_RTOL = 1e-14

Monomial = tuple


def monomials_of_degree(n: int, d: int) -> list[tuple[int, ...]]:
    """All exponent vectors of length ``n`` with total degree exactly ``d``,
    in lexicographic order (x1 dominant)."""
    if n == 1:
        return [(d,)]
    out = []
    for first in range(d, -1, -1):
        for rest in monomials_of_degree(n - 1, d - first):
            out.append((first,) + rest)
    return out


def monomials_up_to(n: int, d: int) -> list[tuple[int, ...]]:
    """Graded-lex ordered exponent vectors with ``|alpha| <= d``.

    >>> monomials_up_to(2, 2)
    [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    """
    if n < 1 or d < 0:
        raise ValueError("need n >= 1 and d >= 0")
    out: list[tuple[int, ...]] = []
    for deg in range(d + 1):
        out.extend(monomials_of_degree(n, deg))
    return out


def grlex_key(alpha: Sequence[int]) -> tuple:
    """Sort key reproducing the :func:`monomials_up_to` order."""
    return (sum(alpha), tuple(-a for a in alpha))


def _add_exp(a, b):
    return tuple(i + j for i, j in zip(a, b))


@dataclass(frozen=True)
class QuotientRing:
    """Pairs ``(s, c)`` of indeterminate indices with ``s^2 + c^2 = 1``.

    Reduction rewrites ``c^2 -> 1 - s^2`` until every c-exponent is at most one.
    """

    pairs: tuple[tuple[int, int], ...]

    def is_reduced(self, alpha: Sequence[int]) -> bool:
        return all(alpha[c] <= 1 for _, c in self.pairs)

    def reduce_monomial(self, alpha: tuple[int, ...]) -> dict[tuple[int, ...], float]:
        """Expansion of one monomial in the reduced basis."""
        terms = {tuple(alpha): 1.0}
        for s, c in self.pairs:
            new: dict[tuple[int, ...], float] = {}
            for a, coef in terms.items():
                q, r = divmod(a[c], 2)
                if q == 0:
                    new[a] = new.get(a, 0.0) + coef
                    continue
                # c^(2q) = (1 - s^2)^q
                for j in range(q + 1):
                    b = list(a)
                    b[c] = r
                    b[s] = a[s] + 2 * j
                    b = tuple(b)
                    new[b] = new.get(b, 0.0) + coef * math.comb(q, j) * (-1) ** j
            terms = new
        return {a: v for a, v in terms.items() if v != 0.0}

    def basis(self, n: int, d: int) -> list[tuple[int, ...]]:
        """Reduced graded-lex basis: monomials up to degree ``d`` with c-exponents <= 1."""
        return [a for a in monomials_up_to(n, d) if self.is_reduced(a)]

    def shifted(self, offset: int) -> "QuotientRing":
        """Same relation with indices shifted, e.g. after prepending ``t``."""
        return QuotientRing(tuple((s + offset, c + offset) for s, c in self.pairs))


class Polynomial:
    """Immutable sparse polynomial ``sum coef * x^alpha``.

    ``terms`` maps exponent tuples to float coefficients; ``variables`` names the
    indeterminates in order.
    """

    __slots__ = ("variables", "terms")

    def __init__(self, variables: Sequence[str], terms: Mapping[tuple, float] | None = None,
                 prune: bool = True):
        object.__setattr__(self, "variables", tuple(variables))
        n = len(self.variables)
        clean: dict[tuple[int, ...], float] = {}
        for a, v in (terms or {}).items():
            a = tuple(int(e) for e in a)
            if len(a) != n or min(a, default=0) < 0:
                raise ValueError(f"bad exponent {a} for variables {self.variables}")
            v = float(v)
            if v != 0.0:
                clean[a] = clean.get(a, 0.0) + v
        if prune and clean:
            cutoff = PRUNE_RTOL * max(abs(v) for v in clean.values())
            clean = {a: v for a, v in clean.items() if abs(v) >= cutoff and v != 0.0}
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # construction helpers
    @classmethod
    def constant(cls, variables, value: float) -> "Polynomial":
        n = len(variables)
        return cls(variables, {(0,) * n: value})

    @classmethod
    def variable(cls, variables, name: str) -> "Polynomial":
        i = list(variables).index(name)
        a = [0] * len(variables)
        a[i] = 1
        return cls(variables, {tuple(a): 1.0})

    @classmethod
    def monomial(cls, variables, alpha, coef: float = 1.0) -> "Polynomial":
        return cls(variables, {tuple(alpha): coef})

    @classmethod
    def from_vector(cls, variables, basis: Sequence[tuple], coefs) -> "Polynomial":
        return cls(variables, dict(zip(map(tuple, basis), np.asarray(coefs, dtype=float))))

    # basic properties
    @property
    def nvars(self) -> int:
        return len(self.variables)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(a) for a in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def coef(self, alpha) -> float:
        return self.terms.get(tuple(alpha), 0.0)

    def vec(self, basis: Sequence[tuple]) -> np.ndarray:
        """Coefficient vector against ``basis``; raises if a term falls outside it."""
        index = {tuple(a): i for i, a in enumerate(basis)}
        out = np.zeros(len(basis))
        for a, v in self.terms.items():
            if a not in index:
                raise ValueError(f"term {a} not in basis")
            out[index[a]] = v
        return out

    def sorted_terms(self) -> list[tuple[tuple[int, ...], float]]:
        return sorted(self.terms.items(), key=lambda kv: grlex_key(kv[0]))

    def depends_on(self, name: str) -> bool:
        i = self.variables.index(name)
        return any(a[i] > 0 for a in self.terms)

    # arithmetic
    def _check(self, other: "Polynomial"):
        if self.variables != other.variables:
            raise ValueError(f"mismatched indeterminates {self.variables} vs {other.variables}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.variables, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for a, v in other.terms.items():
            terms[a] = terms.get(a, 0.0) + v
        return Polynomial(self.variables, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.variables, {a: -v for a, v in self.terms.items()}, prune=False)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[tuple[int, ...], float] = {}
        for a, u in self.terms.items():
            for b, v in other.terms.items():
                c = _add_exp(a, b)
                terms[c] = terms.get(c, 0.0) + u * v
        return Polynomial(self.variables, terms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, e: int):
        if int(e) != e or e < 0:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.variables, 1.0)
        base = self
        e = int(e)
        while e:
            if e & 1:
                out = out * base
            base = base * base
            e >>= 1
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.variables == other.variables and self.terms == other.terms

    def __hash__(self):
        return hash((self.variables, tuple(sorted(self.terms.items()))))

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.coef(a) - other.coef(a)) <= atol for a in keys)

    # calculus and substitution
    def partial(self, i: int | str) -> "Polynomial":
        if isinstance(i, str):
            i = self.variables.index(i)
        if not 0 <= i < self.nvars:
            raise IndexError(i)
        terms = {}
        for a, v in self.terms.items():
            if a[i] > 0:
                b = list(a)
                b[i] -= 1
                terms[tuple(b)] = v * a[i]
        return Polynomial(self.variables, terms)

    def evaluate(self, point) -> float | np.ndarray:
        """Evaluate at one point (length ``nvars``) or at rows of an ``(N, nvars)`` array."""
        x = np.asarray(point, dtype=float)
        if x.shape[-1] != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {x.shape[-1]}")
        if not self.terms:
            return 0.0 if x.ndim == 1 else np.zeros(x.shape[0])
        exps = np.array(list(self.terms.keys()), dtype=float)
        coefs = np.array(list(self.terms.values()))
        if x.ndim == 1:
            return float(np.sum(coefs * np.prod(x[None, :] ** exps, axis=1)))
        powers = np.prod(x[:, None, :] ** exps[None, :, :], axis=2)
        return powers @ coefs

    __call__ = evaluate

    def substitute(self, name: str, value: float) -> "Polynomial":
        """Fix one indeterminate to a number; the variable list is unchanged."""
        i = self.variables.index(name)
        terms: dict = {}
        for a, v in self.terms.items():
            b = list(a)
            b[i] = 0
            b = tuple(b)
            terms[b] = terms.get(b, 0.0) + v * value ** a[i]
        return Polynomial(self.variables, terms)

    def scale_variable(self, name: str, factor: float) -> "Polynomial":
        """Return ``p`` with ``name`` replaced by ``factor * name``."""
        i = self.variables.index(name)
        return Polynomial(self.variables, {a: v * factor ** a[i] for a, v in self.terms.items()})

    def shift_variable(self, name: str, offset: float) -> "Polynomial":
        """Return ``p`` with ``name`` replaced by ``name + offset``."""
        x = Polynomial.variable(self.variables, name) + offset
        return self.compose({name: x})

    def compose(self, mapping: Mapping[str, "Polynomial"]) -> "Polynomial":
        """Substitute polynomials (over ``self.variables``) for named indeterminates."""
        idx = {self.variables.index(k): v for k, v in mapping.items()}
        out = Polynomial(self.variables)
        one = Polynomial.constant(self.variables, 1.0)
        for a, v in self.terms.items():
            keep = list(a)
            term = one
            for i, q in idx.items():
                if a[i]:
                    term = term * q ** a[i]
                    keep[i] = 0
            out = out + term * Polynomial.monomial(self.variables, keep, v)
        return out

    def embed(self, variables: Sequence[str]) -> "Polynomial":
        """Re-express over a superset of indeterminates (by name)."""
        variables = tuple(variables)
        pos = [variables.index(v) for v in self.variables]
        terms = {}
        for a, v in self.terms.items():
            b = [0] * len(variables)
            for i, e in zip(pos, a):
                b[i] = e
            terms[tuple(b)] = v
        return Polynomial(variables, terms, prune=False)

    def restrict(self, variables: Sequence[str]) -> "Polynomial":
        """Drop indeterminates that do not occur; raises if a dropped one occurs."""
        variables = tuple(variables)
        pos = [self.variables.index(v) for v in variables]
        dropped = [i for i in range(self.nvars) if i not in pos]
        terms = {}
        for a, v in self.terms.items():
            if any(a[i] for i in dropped):
                raise ValueError("polynomial depends on a dropped indeterminate")
            terms[tuple(a[i] for i in pos)] = v
        return Polynomial(variables, terms, prune=False)

    def reduce(self, ring: QuotientRing | None) -> "Polynomial":
        return self if ring is None else reduce_mod_circle(self, ring)

    # text form
    def to_text(self, fmt: str | None = None) -> str:
        """Text in the problem-file syntax; the default number format round-trips exactly."""
        if not self.terms:
            return "0"
        parts = []
        for a, v in self.sorted_terms():
            factors = [f"{name}^{e}" if e > 1 else name
                       for name, e in zip(self.variables, a) if e > 0]
            coef = _shortest(v) if fmt is None else fmt.format(v)
            if factors and coef in ("1", "-1"):
                body = "*".join(factors)
                parts.append(("-" if coef == "-1" else "+", body))
            else:
                sign = "-" if coef.startswith("-") else "+"
                body = "*".join([coef.lstrip("-")] + factors)
                parts.append((sign, body))
        text = parts[0][1] if parts[0][0] == "+" else "-" + parts[0][1]
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text

    def __repr__(self):
        return f"Polynomial({self.to_text('{:.6g}')}; vars={','.join(self.variables)})"


def _shortest(v: float) -> str:
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def partial(p: Polynomial, i) -> Polynomial:
    return p.partial(i)


def evaluate(p: Polynomial, point) -> float:
    return p.evaluate(point)


def reduce_mod_circle(p: Polynomial, ring: QuotientRing) -> Polynomial:
    """Canonical representative of ``p`` modulo ``s^2 + c^2 - 1`` for every pair in ``ring``."""
    terms: dict[tuple[int, ...], float] = {}
    for a, v in p.terms.items():
        if ring.is_reduced(a):
            terms[a] = terms.get(a, 0.0) + v
            continue
        for b, w in ring.reduce_monomial(a).items():
            terms[b] = terms.get(b, 0.0) + v * w
    return Polynomial(p.variables, terms)


# ----------------------------------------------------------------------------
# text syntax: sums of terms  coef*x1^a*x2^b  with optional named parameters

class PolynomialSyntaxError(ValueError):
    def __init__(self, message: str, column: int):
        super().__init__(f"column {column}: {message}")
        self.column = column


_TOKEN = re.compile(r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()])")


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m:
            raise PolynomialSyntaxError(f"unexpected character {text[pos]!r}", pos + 1)
        toks.append((m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return toks


def parse_polynomial(text: str, variables: Sequence[str],
                     parameters: Mapping[str, float] | None = None) -> Polynomial:
    """Parse ``text`` into a :class:`Polynomial` over ``variables``.

    Grammar (whitespace-insensitive)::

        poly   := ['+'|'-'] term (('+'|'-') term)*
        term   := factor (('*'|'/') factor)*
        factor := atom ['^' int]
        atom   := number | name | '(' poly ')'

    Names are indeterminates or entries of ``parameters``; division is only by
    constants.
    """
    params = dict(parameters or {})
    variables = tuple(variables)
    toks = _tokenize(text)
    if not toks:
        raise PolynomialSyntaxError("empty polynomial", 1)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else (None, None, len(text) + 1)

    def take():
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def atom():
        kind, val, col = take()
        if kind == "num":
            return Polynomial.constant(variables, float(val))
        if kind == "name":
            if val in variables:
                return Polynomial.variable(variables, val)
            if val in params:
                return Polynomial.constant(variables, float(params[val]))
            raise PolynomialSyntaxError(f"unknown name {val!r}", col)
        if kind == "op" and val == "(":
            p = poly()
            k2, v2, c2 = take()
            if v2 != ")":
                raise PolynomialSyntaxError("expected ')'", c2)
            return p
        raise PolynomialSyntaxError(f"unexpected {val!r}" if val else "unexpected end", col)

    def factor():
        base = atom()
        if peek()[1] == "^":
            take()
            kind, val, col = take()
            if kind != "num" or not val.isdigit():
                raise PolynomialSyntaxError("exponent must be a non-negative integer", col)
            base = base ** int(val)
        return base

    def term():
        p = factor()
        while peek()[1] in ("*", "/"):
            _, op, col = take()
            q = factor()
            if op == "*":
                p = p * q
            else:
                if q.degree > 0:
                    raise PolynomialSyntaxError("division by a non-constant", col)
                if q.is_zero():
                    raise PolynomialSyntaxError("division by zero", col)
                p = p / q.coef((0,) * len(variables))
        return p

    def poly():
        sign = 1.0
        if peek()[1] in ("+", "-"):
            sign = -1.0 if take()[1] == "-" else 1.0
        p = term() * sign
        while peek()[1] in ("+", "-"):
            op = take()[1]
            q = term()
            p = p + q if op == "+" else p - q
        return p

    out = poly()
    if pos != len(toks):
        raise PolynomialSyntaxError(f"unexpected {toks[pos][1]!r}", toks[pos][2])
    return out


def random_polynomial(variables: Sequence[str], degree: int, rng: np.random.Generator,
                      density: float = 0.6) -> Polynomial:
    """Random dense-ish polynomial, used by property tests."""
    basis = monomials_up_to(len(variables), degree)
    keep = rng.random(len(basis)) < density
    coefs = rng.normal(size=len(basis)) * keep
    return Polynomial.from_vector(variables, basis, coefs)
