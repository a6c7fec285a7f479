"""Assembly of the order-k moment relaxation.

Measures (in variable order): ``sigma+_j``, ``sigma-_j``, ``sigmahat_j`` for each
input channel, the occupation measure ``mu``, the initial measure ``mu0``, its
slack ``muhat0`` and the final measure ``muT``.  Equality rows come from the
Liouville equation tested against monomials, the slack identities and Lebesgue
domination of ``mu0``.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .moments import (MomentSpace, MomentVector, StructuredMatrix, TruncationError,
                      UnsupportedGeometry, detect_geometry, lebesgue_moments,
                      localizing_matrix, moment_matrix)
from .polyalg import Polynomial
from .problem import TIME, ProblemValidationError, SynthesisProblem, compactness_radius

log = logging.getLogger(__name__)


class AssemblyError(ValueError):
    pass


def apply_Lf(v: Polynomial, problem: SynthesisProblem) -> Polynomial:
    """``dv/dt + sum_i dv/dx_i f_i``, reduced modulo the ring."""
    out = v.partial(TIME)
    for i, s in enumerate(problem.states):
        dv = v.partial(s)
        if not dv.is_zero() and not problem.f[i].is_zero():
            out = out + dv * problem.f[i]
    return out.reduce(problem.ring(problem.tx_vars))


def apply_Lg(v: Polynomial, problem: SynthesisProblem) -> list[Polynomial]:
    """``[L_g v]_j = sum_i dv/dx_i g_ij`` for every input channel."""
    ring = problem.ring(problem.tx_vars)
    grads = [v.partial(s) for s in problem.states]
    out = []
    for j in range(problem.m):
        acc = Polynomial(problem.tx_vars)
        for i in range(problem.n):
            if not grads[i].is_zero() and not problem.g[i][j].is_zero():
                acc = acc + grads[i] * problem.g[i][j]
        out.append(acc.reduce(ring))
    return out


@dataclass
class Measure:
    """One measure's slice of the variable vector.

    Point measures (a point target) carry only time moments (free final time)
    or a single mass; their moments in ``(t, x)`` are ``m_a * x_T^beta``.
    """

    tag: str
    space: MomentSpace
    offset: int
    point: tuple[float, ...] | None = None
    state_vars: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)

    def functional(self, p: Polynomial) -> list[tuple[int, float]]:
        """Global (variable index, coefficient) pairs for ``<measure, p>``."""
        if self.point is None:
            return [(self.offset + i, c) for i, c in self.space.functional(p)]
        acc: dict[int, float] = {}
        has_t = TIME in p.variables
        t_pos = p.variables.index(TIME) if has_t else None
        xs = [p.variables.index(s) for s in self.state_vars]
        for a, v in p.terms.items():
            w = v
            for pos, xv in zip(xs, self.point):
                w *= xv ** a[pos]
            if w == 0.0:
                continue
            tpow = a[t_pos] if has_t else 0
            if self.space.variables == (TIME,):
                if (tpow,) not in self.space.index:
                    raise TruncationError(f"time moment {tpow} exceeds truncation")
                idx = self.space.index[(tpow,)]
            else:
                if tpow:
                    raise ValueError("fixed-time point measure paired with a t-dependent polynomial")
                idx = 0
            acc[self.offset + idx] = acc.get(self.offset + idx, 0.0) + w
        return sorted(acc.items())

    def moments(self, y) -> MomentVector:
        return MomentVector(self.tag, self.space, np.asarray(y)[self.slice])


@dataclass
class PSDBlock:
    measure: str
    label: str
    matrix: StructuredMatrix
    offset: int

    @property
    def size(self) -> int:
        return self.matrix.size

    def instantiate(self, y) -> np.ndarray:
        y = np.asarray(y)
        return self.matrix.instantiate(y[self.offset:])


@dataclass
class ConicProgram:
    """maximize ``c @ y`` s.t. ``A y = b`` and every block ``F_j(y) >= 0`` (PSD)."""

    measures: list[Measure]
    A: sp.csr_matrix
    b: np.ndarray
    row_labels: list[str]
    blocks: list[PSDBlock]
    c: np.ndarray
    var_scale: np.ndarray
    k: int
    problem: SynthesisProblem
    lebesgue: MomentVector
    dropped_rows: list[str] = field(default_factory=list)
    row_kind: list[str] = field(default_factory=list)
    test_functions: list = field(default_factory=list)

    @property
    def nvars(self) -> int:
        return self.A.shape[1]

    @property
    def nrows(self) -> int:
        return self.A.shape[0]

    def measure(self, tag: str) -> Measure:
        for meas in self.measures:
            if meas.tag == tag:
                return meas
        raise KeyError(tag)

    def split(self, y) -> dict[str, MomentVector]:
        return {meas.tag: meas.moments(y) for meas in self.measures}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.problem.digest().encode())
        h.update(str(self.k).encode())
        h.update(np.ascontiguousarray(self.A.toarray()).tobytes())
        h.update(self.b.tobytes())
        for blk in self.blocks:
            for arr in blk.matrix.triplets():
                h.update(arr.tobytes())
        return h.hexdigest()[:16]

    def block_inventory(self) -> list[tuple[str, str, int]]:
        return [(b.measure, b.label, b.size) for b in self.blocks]


def measure_tags(m: int) -> list[str]:
    tags = []
    for prefix in ("sigma+", "sigma-", "sigmahat"):
        tags += [f"{prefix}_{j + 1}" for j in range(m)]
    return tags + ["mu", "mu0", "muhat0", "muT"]


def _layout(problem: SynthesisProblem, k: int) -> list[Measure]:
    tx_ring = problem.ring(problem.tx_vars)
    x_ring = problem.ring(problem.states)
    tx = MomentSpace(problem.tx_vars, 2 * k, tx_ring)
    xs = MomentSpace(problem.states, 2 * k, x_ring)
    out, off = [], 0
    for tag in measure_tags(problem.m):
        point = None
        if tag in ("mu0", "muhat0"):
            space = xs
        elif tag == "muT":
            if problem.X_T.is_point:
                point = tuple(problem.X_T.point)
                space = MomentSpace((TIME,), 2 * k) if problem.mode == "free" else MomentSpace(("mass",), 0)
            else:
                space = tx if problem.mode == "free" else xs
        else:
            space = tx
        out.append(Measure(tag, space, off, point, problem.states))
        off += space.size
    return out


def liouville_rows(problem: SynthesisProblem, k: int, measures: list[Measure] | None = None):
    """Liouville rows for test monomials ``t^a x^b`` of degree <= 2k.

    Returns ``(rows, labels, dropped, tests)`` where each row is a dict
    ``{variable index: coefficient}``; rows needing moments beyond degree 2k are
    dropped.
    """
    measures = measures or _layout(problem, k)
    by = {meas.tag: meas for meas in measures}
    basis = MomentSpace(problem.tx_vars, 2 * k, problem.ring(problem.tx_vars)).basis
    rows, labels, dropped, tests = [], [], [], []
    for alpha in basis:
        v = Polynomial.monomial(problem.tx_vars, alpha)
        label = "liouville:" + _mono_name(problem.tx_vars, alpha)
        row: dict[int, float] = {}

        def add(pairs, sign):
            for i, c in pairs:
                row[i] = row.get(i, 0.0) + sign * c

        try:
            add(by["mu"].functional(apply_Lf(v, problem)), 1.0)
            for j, lg in enumerate(apply_Lg(v, problem)):
                if lg.is_zero():
                    continue
                add(by[f"sigma+_{j + 1}"].functional(lg), 1.0)
                add(by[f"sigma-_{j + 1}"].functional(lg), -1.0)
            v0 = v.substitute(TIME, 0.0).restrict(problem.states)
            add(by["mu0"].functional(v0), 1.0)
            muT = by["muT"]
            if problem.mode == "free":
                vT = v
            else:
                vT = v.substitute(TIME, 1.0).restrict(problem.states)
            add(muT.functional(vT), -1.0)
        except TruncationError:
            dropped.append(label)
            continue
        row = {i: c for i, c in row.items() if c != 0.0}
        if not row:
            continue
        rows.append(row)
        labels.append(label)
        tests.append(alpha)
    if dropped:
        log.info("dropped %d Liouville rows beyond degree %d", len(dropped), 2 * k)
    return rows, labels, dropped, tests


def slack_rows(problem: SynthesisProblem, k: int, measures: list[Measure] | None = None,
               lebesgue: MomentVector | None = None):
    """``sigma+_j + sigma-_j + sigmahat_j = mu`` and ``mu0 + muhat0 = lambda`` rows.

    Returns ``(rows, rhs, labels)``.
    """
    measures = measures or _layout(problem, k)
    by = {meas.tag: meas for meas in measures}
    if lebesgue is None:
        lebesgue = bounding_lebesgue(problem, by["mu0"].space)
    rows, rhs, labels = [], [], []
    mu = by["mu"]
    for j in range(problem.m):
        for i, alpha in enumerate(mu.space.basis):
            row = {by[f"{p}_{j + 1}"].offset + i: 1.0 for p in ("sigma+", "sigma-", "sigmahat")}
            row[mu.offset + i] = -1.0
            rows.append(row)
            rhs.append(0.0)
            labels.append(f"slack_{j + 1}:" + _mono_name(problem.tx_vars, alpha))
    mu0, mh = by["mu0"], by["muhat0"]
    for i, alpha in enumerate(mu0.space.basis):
        rows.append({mu0.offset + i: 1.0, mh.offset + i: 1.0})
        rhs.append(float(lebesgue.values[i]))
        labels.append("lebesgue:" + _mono_name(problem.states, alpha))
    return rows, rhs, labels


def bounding_lebesgue(problem: SynthesisProblem, space: MomentSpace) -> MomentVector:
    C = compactness_radius(problem)
    bound = math.sqrt(C) if C else None
    return lebesgue_moments(problem.X.inequalities, space, bound=bound)


def _mono_name(variables, alpha) -> str:
    parts = [f"{v}^{a}" if a > 1 else v for v, a in zip(variables, alpha) if a]
    return "*".join(parts) or "1"


def coordinate_scales(problem: SynthesisProblem) -> np.ndarray:
    """Magnitude bound per state coordinate from the bounding set."""
    try:
        geo = detect_geometry(problem.X.inequalities, problem.ring())
        return geo.half_widths(problem.n)
    except UnsupportedGeometry:
        C = compactness_radius(problem) or 1.0
        return np.full(problem.n, math.sqrt(C))


def _lift(h: Polynomial, variables) -> Polynomial:
    return h.embed(variables) if h.variables != tuple(variables) else h


def assemble(problem: SynthesisProblem, k: int | None = None) -> ConicProgram:
    """Build the order-k relaxation of a normalized problem."""
    if not problem.is_normalized:
        raise AssemblyError("assemble() expects a normalized problem (see problem.normalize)")
    k = problem.k if k is None else k
    for j in range(problem.m):
        if all(problem.g[i][j].is_zero() for i in range(problem.n)):
            raise ProblemValidationError("inputs", f"input {problem.inputs[j]} has a zero column of g")
    measures = _layout(problem, k)
    by = {meas.tag: meas for meas in measures}
    nvars = measures[-1].offset + measures[-1].size

    lam = bounding_lebesgue(problem, by["mu0"].space)
    lrows, llabels, dropped, tests = liouville_rows(problem, k, measures)
    srows, srhs, slabels = slack_rows(problem, k, measures, lam)
    rows = lrows + srows
    rhs = [0.0] * len(lrows) + srhs
    labels = llabels + slabels
    kinds = ["liouville"] * len(lrows) + [lab.split(":")[0].split("_")[0] for lab in slabels]

    ri, ci, vals = [], [], []
    for r, row in enumerate(rows):
        for i in sorted(row):
            ri.append(r)
            ci.append(i)
            vals.append(row[i])
    A = sp.csr_matrix((vals, (ri, ci)), shape=(len(rows), nvars))

    # PSD blocks
    x_ring = problem.ring(problem.states)
    hX = [h.reduce(x_ring) for h in problem.X.inequalities]
    hX = [h for h in hX if h.degree > 0]
    hT = [h.reduce(x_ring) for h in problem.X_T.inequalities]
    hT = [h for h in hT if h.degree > 0]
    blocks: list[PSDBlock] = []
    for meas in measures:
        space = meas.space
        order = min(k, space.degree // 2)
        blocks.append(PSDBlock(meas.tag, "moment", moment_matrix(space, order), meas.offset))
        if meas.tag != "muT":
            for i, h in enumerate(hX):
                kh = k - math.ceil(h.degree / 2)
                if kh < 0:
                    raise AssemblyError(f"k={k} too small for X inequality {i + 1} of degree {h.degree}")
                blocks.append(PSDBlock(meas.tag, f"X{i + 1}",
                                       localizing_matrix(_lift(h, space.variables), space, kh),
                                       meas.offset))
        elif meas.point is None:
            for i, h in enumerate(hT):
                kh = k - math.ceil(h.degree / 2)
                if kh < 0:
                    raise AssemblyError(f"k={k} too small for target inequality {i + 1}")
                blocks.append(PSDBlock(meas.tag, f"T{i + 1}",
                                       localizing_matrix(_lift(h, space.variables), space, kh),
                                       meas.offset))
        timed = meas.tag not in ("mu0", "muhat0", "muT") or (meas.tag == "muT" and problem.mode == "free")
        if timed and k >= 1:
            t = Polynomial.variable(space.variables, TIME)
            blocks.append(PSDBlock(meas.tag, "tau", localizing_matrix(t * (1 - t), space, k - 1),
                                   meas.offset))

    c = np.zeros(nvars)
    c[by["mu0"].offset] = 1.0

    r = coordinate_scales(problem)
    scale = np.ones(nvars)
    for meas in measures:
        if meas.point is not None:
            continue
        names = meas.space.variables
        rr = np.array([1.0 if v == TIME else r[problem.states.index(v)] for v in names])
        exps = np.array(meas.space.basis, dtype=float)
        scale[meas.slice] = np.prod(rr[None, :] ** exps, axis=1)

    return ConicProgram(measures=measures, A=A, b=np.array(rhs), row_labels=labels, blocks=blocks,
                        c=c, var_scale=scale, k=k, problem=problem, lebesgue=lam,
                        dropped_rows=dropped, row_kind=kinds, test_functions=tests)


def equality_residuals(program: ConicProgram, y) -> np.ndarray:
    return program.A @ np.asarray(y) - program.b


def block_min_eigs(program: ConicProgram, y) -> list[float]:
    return [float(np.linalg.eigvalsh(b.instantiate(y))[0]) for b in program.blocks]
