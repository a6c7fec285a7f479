"""Synthesis problem definition, validation, normalization and file I/O.

Problem files are UTF-8 text with ``[section]`` headers and ``key = value``
lines; see ``docs/problem_format.md`` for the grammar.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .polyalg import Polynomial, PolynomialSyntaxError, QuotientRing, parse_polynomial

TIME = "t"
MODES = ("fixed", "free")
BENCHMARKS = ("double_integrator", "brockett", "pendulum", "quadrotor", "satellite")


class ProblemError(ValueError):
    """Base class for problem parse/validation errors."""


class ProblemParseError(ProblemError):
    def __init__(self, message: str, line: int, column: int = 1, path: str | None = None):
        where = f"{path}:" if path else ""
        super().__init__(f"{where}{line}:{column}: {message}")
        self.line = line
        self.column = column


class ProblemValidationError(ProblemError):
    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant


@dataclass(frozen=True)
class SemialgebraicSet:
    """``{x : h_i(x) >= 0}``, or a single point when ``point`` is given."""

    inequalities: tuple[Polynomial, ...] = ()
    point: tuple[float, ...] | None = None

    @property
    def is_point(self) -> bool:
        return self.point is not None

    def contains(self, x, tol: float = 0.0) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        if self.point is not None:
            d = np.linalg.norm(x - np.asarray(self.point), axis=-1)
            return d <= tol
        ok = np.ones(x.shape[:-1], dtype=bool) if x.ndim > 1 else True
        for h in self.inequalities:
            ok = ok & (h.evaluate(x) >= -tol)
        return ok


@dataclass(frozen=True)
class SynthesisProblem:
    name: str
    states: tuple[str, ...]
    inputs: tuple[str, ...]
    f: tuple[Polynomial, ...]                 # over (t, *states)
    g: tuple[tuple[Polynomial, ...], ...]     # n x m, over (t, *states)
    X: SemialgebraicSet
    X_T: SemialgebraicSet
    T: float
    input_lo: tuple[float, ...]
    input_hi: tuple[float, ...]
    mode: str = "fixed"
    ring_names: tuple[tuple[str, str], ...] = ()
    k: int = 2
    stretch: bool = False
    description: str = ""
    parameters: dict = field(default_factory=dict, compare=False)
    # affine maps recorded by normalize(): original time = time_scale * t,
    # original input = input_offset + input_gain * u
    time_scale: float = 1.0
    input_offset: tuple[float, ...] | None = None
    input_gain: tuple[float, ...] | None = None

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.inputs)

    @property
    def tx_vars(self) -> tuple[str, ...]:
        return (TIME,) + self.states

    def ring(self, variables: Sequence[str] | None = None) -> QuotientRing | None:
        """Quotient ring with indices into ``variables`` (default: the states)."""
        if not self.ring_names:
            return None
        variables = tuple(variables or self.states)
        return QuotientRing(tuple((variables.index(s), variables.index(c)) for s, c in self.ring_names))

    @property
    def is_normalized(self) -> bool:
        return (self.T == 1.0 and all(a == -1.0 for a in self.input_lo)
                and all(b == 1.0 for b in self.input_hi))

    def offsets(self) -> np.ndarray:
        return np.zeros(self.m) if self.input_offset is None else np.asarray(self.input_offset)

    def gains(self) -> np.ndarray:
        return np.ones(self.m) if self.input_gain is None else np.asarray(self.input_gain)

    def rhs(self, t, x, u) -> np.ndarray:
        """Vector field ``f + g u`` at rows of ``x`` (shape (N, n)) and ``u`` (N, m); ``t`` scalar or (N,)."""
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        tx = np.column_stack([np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)), x])
        out = np.empty_like(x, dtype=float)
        for i in range(self.n):
            col = self.f[i].evaluate(tx)
            for j in range(self.m):
                if not self.g[i][j].is_zero():
                    col = col + self.g[i][j].evaluate(tx) * u[:, j]
            out[:, i] = col
        return out

    def digest(self) -> str:
        return hashlib.sha256(dumps_problem(self).encode()).hexdigest()[:16]

    def replace(self, **kw) -> "SynthesisProblem":
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# validation and normalization

def validate(p: SynthesisProblem) -> SynthesisProblem:
    """Check the structural invariants; returns ``p`` unchanged or raises."""
    tx = p.tx_vars
    if p.n < 1 or p.m < 1:
        raise ProblemValidationError("dimensions", "need at least one state and one input")
    if len(p.f) != p.n or len(p.g) != p.n or any(len(row) != p.m for row in p.g):
        raise ProblemValidationError("dimensions", "f must have n entries and g must be n x m")
    for poly in list(p.f) + [q for row in p.g for q in row]:
        if poly.variables != tx:
            raise ProblemValidationError("control-affine",
                                         f"dynamics must be polynomials in {tx}, got {poly.variables}")
    if len(p.input_lo) != p.m or len(p.input_hi) != p.m:
        raise ProblemValidationError("input box", "one [a, b] pair per input")
    for j, (a, b) in enumerate(zip(p.input_lo, p.input_hi)):
        if not a < b:
            raise ProblemValidationError("input box", f"channel {p.inputs[j]} needs a < b, got [{a}, {b}]")
    if not p.T > 0:
        raise ProblemValidationError("horizon", f"T must be positive, got {p.T}")
    if p.mode not in MODES:
        raise ProblemValidationError("mode", f"mode must be one of {MODES}")
    if p.k < 1:
        raise ProblemValidationError("relaxation order", "k must be >= 1")
    for s, c in p.ring_names:
        if s not in p.states or c not in p.states or s == c:
            raise ProblemValidationError("quotient ring", f"bad pair ({s}, {c})")
    for name, S in (("X", p.X), ("X_T", p.X_T)):
        for h in S.inequalities:
            if h.variables != p.states:
                raise ProblemValidationError("sets", f"{name} inequalities must depend on states only")
        if S.point is not None:
            if len(S.point) != p.n:
                raise ProblemValidationError("sets", f"{name} point needs {p.n} coordinates")
            for h in S.inequalities:
                if h.evaluate(S.point) < -1e-9:
                    raise ProblemValidationError("sets", f"{name} point violates its own inequality")
    if p.X.point is not None:
        raise ProblemValidationError("compactness", "the bounding set cannot be a point")
    if compactness_radius(p) is None:
        raise ProblemValidationError(
            "compactness", "X needs an inequality of the form C - |x|^2 >= 0 (modulo the ring)")
    for j in range(p.m):
        if all(p.g[i][j].is_zero() for i in range(p.n)):
            raise ProblemValidationError("inputs", f"input {p.inputs[j]} has an identically zero column of g")
    return p


def compactness_radius(p: SynthesisProblem) -> float | None:
    """``C`` of an inequality ``h = C - |x|^2`` (equality after ring reduction), else None."""
    ring = p.ring()
    norm2 = Polynomial(p.states)
    for name in p.states:
        norm2 = norm2 + Polynomial.variable(p.states, name) ** 2
    for h in p.X.inequalities:
        r = (h + norm2).reduce(ring)
        if r.degree <= 0:
            C = r.coef((0,) * p.n)
            if C > 0:
                return C
    return None


def normalize(p: SynthesisProblem) -> SynthesisProblem:
    """Equivalent problem with ``U = [-1, 1]^m`` and horizon scaled to ``[0, 1]``.

    ``f <- T (f + g mid)``, ``g <- T g diag(half)`` with ``t`` replaced by ``T t``.
    The maps are recorded so controllers can be expressed in original units.
    """
    lo = np.asarray(p.input_lo, dtype=float)
    hi = np.asarray(p.input_hi, dtype=float)
    if np.any(hi <= lo):
        j = int(np.argmax(hi <= lo))
        raise ProblemValidationError("input box", f"degenerate channel {p.inputs[j]}: a = b")
    if p.is_normalized:
        return p
    mid = (lo + hi) / 2
    half = (hi - lo) / 2
    T = float(p.T)
    f, g = [], []
    for i in range(p.n):
        fi = p.f[i]
        for j in range(p.m):
            if mid[j] != 0.0:
                fi = fi + p.g[i][j] * mid[j]
        f.append((fi * T).scale_variable(TIME, T))
        g.append(tuple((p.g[i][j] * (T * half[j])).scale_variable(TIME, T) for j in range(p.m)))
    return p.replace(
        f=tuple(f), g=tuple(g), T=1.0,
        input_lo=(-1.0,) * p.m, input_hi=(1.0,) * p.m,
        time_scale=p.time_scale * T,
        input_offset=tuple(p.offsets() + p.gains() * mid),
        input_gain=tuple(p.gains() * half),
    )


# ---------------------------------------------------------------------------
# file format

_SECTIONS = ("problem", "states", "inputs", "parameters", "dynamics", "sets", "horizon", "options")


def _split_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def loads_problem(text: str, path: str | None = None) -> SynthesisProblem:
    """Parse problem text; errors carry line/column."""
    lines = text.splitlines()
    entries: dict[str, list[tuple[str, str, int, int]]] = {s: [] for s in _SECTIONS}
    section = None
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ProblemParseError("unterminated section header", ln, len(raw) + 1, path)
            section = stripped[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ProblemParseError(f"unknown section [{section}]", ln, raw.index("[") + 2, path)
            continue
        if section is None:
            raise ProblemParseError("entry before any [section] header", ln, 1, path)
        if "=" not in line:
            raise ProblemParseError("expected 'key = value'", ln, len(raw) - len(raw.lstrip()) + 1, path)
        key, value = line.split("=", 1)
        col = line.index("=") + 2 + (len(value) - len(value.lstrip()))
        entries[section].append((key.strip(), value.strip(), ln, col))
    if not any(entries.values()):
        raise ProblemParseError("empty problem file", 1, 1, path)

    def single(sec, key, default=None, required=True):
        found = [e for e in entries[sec] if e[0] == key]
        if not found:
            if required and default is None:
                raise ProblemParseError(f"missing '{key}' in [{sec}]", len(lines) or 1, 1, path)
            return default, 0, 0
        if len(found) > 1:
            raise ProblemParseError(f"duplicate '{key}' in [{sec}]", found[1][2], 1, path)
        return found[0][1], found[0][2], found[0][3]

    def number(value, ln, col):
        try:
            return float(value)
        except ValueError:
            raise ProblemParseError(f"expected a number, got {value!r}", ln, col, path) from None

    name, _, _ = single("problem", "name", default="unnamed", required=False)
    description, _, _ = single("problem", "description", default="", required=False)
    snames, ln, col = single("states", "names")
    states = tuple(_split_list(snames))
    if not states or TIME in states:
        raise ProblemParseError("state names must be non-empty and must not use 't'", ln, col, path)
    ring_names = []
    rtext, ln, col = single("states", "ring", default="", required=False)
    for pair in _split_list(rtext):
        parts = [q.strip() for q in pair.split(":")]
        if len(parts) != 2:
            raise ProblemParseError("ring pairs are written 'sin_name:cos_name'", ln, col, path)
        ring_names.append((parts[0], parts[1]))

    inames, ln, col = single("inputs", "names")
    inputs = tuple(_split_list(inames))
    lo, hi = [], []
    for u in inputs:
        btext, bl, bc = single("inputs", u)
        vals = _split_list(btext)
        if len(vals) != 2:
            raise ProblemParseError(f"bounds for {u} must be 'lo, hi'", bl, bc, path)
        lo.append(number(vals[0], bl, bc))
        hi.append(number(vals[1], bl, bc))

    params = {}
    for key, value, pl, pc in entries["parameters"]:
        params[key] = number(value, pl, pc)

    tx = (TIME,) + states
    full = tx + inputs

    def poly(value, pl, pc, variables):
        try:
            return parse_polynomial(value, variables, params)
        except PolynomialSyntaxError as exc:
            raise ProblemParseError(str(exc).split(": ", 1)[-1], pl, pc + exc.column - 1, path) from None

    f = {s: Polynomial(tx) for s in states}
    g = {(s, u): Polynomial(tx) for s in states for u in inputs}
    for key, value, pl, pc in entries["dynamics"]:
        parts = key.split(".")
        if parts[0] == "f" and len(parts) == 2 and parts[1] in states:
            target = ("f", parts[1])
        elif parts[0] == "g" and len(parts) == 3 and parts[1] in states and parts[2] in inputs:
            target = ("g", parts[1], parts[2])
        else:
            raise ProblemParseError(f"bad dynamics key {key!r} (use f.<state> or g.<state>.<input>)",
                                    pl, 1, path)
        p = poly(value, pl, pc, full)
        if any(p.depends_on(u) for u in inputs):
            raise ProblemValidationError("control-affine",
                                         f"line {pl}: {key} contains an input indeterminate")
        p = p.restrict(tx)
        if target[0] == "f":
            f[target[1]] = f[target[1]] + p
        else:
            g[target[1:]] = g[target[1:]] + p

    X_ineq, T_ineq, T_point = [], [], None
    for key, value, pl, pc in entries["sets"]:
        if key in ("X", "target"):
            p = poly(value, pl, pc, tx)
            if p.depends_on(TIME):
                raise ProblemValidationError("sets", f"line {pl}: set inequalities must not depend on t")
            (X_ineq if key == "X" else T_ineq).append(p.restrict(states))
        elif key == "target_point":
            coords = _split_list(value)
            T_point = tuple(number(c, pl, pc) for c in coords)
        else:
            raise ProblemParseError(f"unknown set key {key!r}", pl, 1, path)

    Ttext, tl, tc = single("horizon", "T")
    mode, ml, mc = single("options", "mode", default="fixed", required=False)
    ktext, kl, kc = single("options", "k", default="2", required=False)
    stretch, _, _ = single("options", "stretch", default="false", required=False)
    try:
        k = int(ktext)
    except ValueError:
        raise ProblemParseError(f"k must be an integer, got {ktext!r}", kl, kc, path) from None

    prob = SynthesisProblem(
        name=name, description=description, states=states, inputs=inputs,
        f=tuple(f[s] for s in states),
        g=tuple(tuple(g[(s, u)] for u in inputs) for s in states),
        X=SemialgebraicSet(tuple(X_ineq)),
        X_T=SemialgebraicSet(tuple(T_ineq), T_point),
        T=number(Ttext, tl, tc), input_lo=tuple(lo), input_hi=tuple(hi),
        mode=mode.strip().lower(), ring_names=tuple(ring_names), k=k,
        stretch=stretch.strip().lower() in ("1", "true", "yes"),
        parameters=params,
    )
    return validate(prob)


def load_problem(path) -> SynthesisProblem:
    """Load a problem file, or a bundled benchmark by bare name."""
    path_s = str(path)
    if path_s in BENCHMARKS and not Path(path_s).exists():
        text = resources.files("brsynth.data").joinpath(f"{path_s}.problem").read_text("utf-8")
        return loads_problem(text, path=path_s)
    text = Path(path).read_text("utf-8")
    return loads_problem(text, path=path_s)


def dumps_problem(p: SynthesisProblem) -> str:
    """Canonical text; ``loads_problem(dumps_problem(p)) == p`` up to term order."""
    if p.time_scale != 1.0 or p.input_offset is not None:
        raise ProblemError("normalized problems are internal; save the original problem instead")
    out = ["[problem]", f"name = {p.name}"]
    if p.description:
        out.append(f"description = {p.description}")
    out += ["", "[states]", f"names = {', '.join(p.states)}"]
    if p.ring_names:
        out.append("ring = " + ", ".join(f"{s}:{c}" for s, c in p.ring_names))
    out += ["", "[inputs]", f"names = {', '.join(p.inputs)}"]
    for u, a, b in zip(p.inputs, p.input_lo, p.input_hi):
        out.append(f"{u} = {a!r}, {b!r}")
    if p.parameters:
        out += ["", "[parameters]"] + [f"{k} = {v!r}" for k, v in p.parameters.items()]
    out += ["", "[dynamics]"]
    for s, fi in zip(p.states, p.f):
        out.append(f"f.{s} = {fi.to_text()}")
    for s, row in zip(p.states, p.g):
        for u, gij in zip(p.inputs, row):
            if not gij.is_zero():
                out.append(f"g.{s}.{u} = {gij.to_text()}")
    out += ["", "[sets]"]
    for h in p.X.inequalities:
        out.append(f"X = {h.to_text()}")
    for h in p.X_T.inequalities:
        out.append(f"target = {h.to_text()}")
    if p.X_T.point is not None:
        out.append("target_point = " + ", ".join(repr(float(c)) for c in p.X_T.point))
    out += ["", "[horizon]", f"T = {p.T!r}", "", "[options]", f"mode = {p.mode}", f"k = {p.k}"]
    if p.stretch:
        out.append("stretch = true")
    return "\n".join(out) + "\n"


def save_problem(p: SynthesisProblem, path) -> None:
    Path(path).write_text(dumps_problem(p), encoding="utf-8")
