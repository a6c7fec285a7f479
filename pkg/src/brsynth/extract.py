"""Controller and certificate recovery from a solved relaxation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .moments import moment_matrix
from .polyalg import Polynomial, parse_polynomial
from .problem import TIME, SynthesisProblem
from .relax import ConicProgram, apply_Lf, apply_Lg

log = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    pass


class CertificateError(RuntimeError):
    def __init__(self, message: str, point=None, value: float | None = None):
        super().__init__(message)
        self.point = point
        self.value = value


@dataclass
class PolynomialController:
    """Per-channel feedback law ``u_j(t, x)`` in original time and input units."""

    variables: tuple[str, ...]
    channels: list[Polynomial]
    lo: np.ndarray
    hi: np.ndarray
    input_names: tuple[str, ...] = ()
    residuals: list[float] = field(default_factory=list)
    k: int = 0

    @property
    def m(self) -> int:
        return len(self.channels)

    def raw(self, t, x) -> np.ndarray:
        """Unsaturated law; ``x`` is ``(N, n)`` or ``(n,)``, returns ``(N, m)``."""
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), (x.shape[0],))
        pts = np.column_stack([t, x])
        return np.column_stack([p.evaluate(pts) for p in self.channels])

    def __call__(self, t, x) -> np.ndarray:
        return np.clip(self.raw(t, x), self.lo, self.hi)

    def to_text(self, header: str | None = None) -> str:
        lines = [f"# {h}" for h in (header or "").splitlines() if h]
        lines.append("variables: " + ", ".join(self.variables))
        lines.append(f"order: {self.k}")
        for j, p in enumerate(self.channels):
            name = self.input_names[j] if self.input_names else f"u{j + 1}"
            lines.append(f"bounds.{name}: {float(self.lo[j])!r}, {float(self.hi[j])!r}")
            lines.append(f"u.{name} = {p.to_text()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PolynomialController":
        variables, k, names, lo, hi, polys = None, 0, [], [], [], {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("variables:"):
                variables = tuple(v.strip() for v in line.split(":", 1)[1].split(","))
            elif line.startswith("order:"):
                k = int(line.split(":", 1)[1])
            elif line.startswith("bounds."):
                name, rest = line[len("bounds."):].split(":", 1)
                a, b = (float(v) for v in rest.split(","))
                names.append(name.strip())
                lo.append(a)
                hi.append(b)
            elif line.startswith("u."):
                name, expr = line[2:].split("=", 1)
                polys[name.strip()] = expr.strip()
        if variables is None:
            raise ExtractionError("controller file lacks a 'variables:' line")
        chans = [parse_polynomial(polys[n], variables) for n in names]
        return cls(variables, chans, np.array(lo), np.array(hi), tuple(names), k=k)


def _basis_scale(space_vars, basis, problem: SynthesisProblem, scales) -> np.ndarray:
    r = np.array([1.0 if v == TIME else scales[problem.states.index(v)] for v in space_vars])
    return np.prod(r[None, :] ** np.array(basis, float), axis=1)


def extract_controller(program: ConicProgram, y, eps_rel: float = 1e-8, refine: int = 3,
                       original: SynthesisProblem | None = None) -> PolynomialController:
    """Solve ``M_k(y_mu) u_j = y_{sigma+_j} - y_{sigma-_j}`` with Tikhonov regularization.

    The system is solved in coordinates scaled by the bounding-set half widths,
    with ``eps = eps_rel * trace(M) / dim`` and a few iterated-Tikhonov
    refinement sweeps.  The result is mapped back to original time and input
    units.
    """
    problem = program.problem
    k = program.k
    y = np.asarray(y, float)
    mu = program.measure("mu")
    space = mu.space
    M_struct = moment_matrix(space, k)
    M = M_struct.instantiate(y[mu.offset:])
    basis = list(M_struct.row_basis)
    mass = y[mu.offset]
    if not np.isfinite(mass) or mass <= 1e-9 * max(1.0, np.abs(y).max()):
        raise ExtractionError("occupation measure has no mass: the backward reachable set is empty")
    from .relax import coordinate_scales
    S = _basis_scale(space.variables, basis, problem, coordinate_scales(problem))
    Ms = M * S[:, None] * S[None, :]
    eps = eps_rel * np.trace(Ms) / len(basis)
    reg = Ms + eps * np.eye(len(basis))
    chans, residuals = [], []
    idx = [space.index[a] for a in basis]
    for j in range(problem.m):
        sp_ = program.measure(f"sigma+_{j + 1}")
        sm_ = program.measure(f"sigma-_{j + 1}")
        r = (y[sp_.offset:sp_.offset + sp_.size] - y[sm_.offset:sm_.offset + sm_.size])[idx]
        rs = r * S
        z = np.linalg.solve(reg, rs)
        for _ in range(refine):
            z = z + np.linalg.solve(reg, rs - Ms @ z)
        res = float(np.linalg.norm(Ms @ z - rs) / max(np.linalg.norm(rs), 1e-300))
        coef = z * S
        chans.append(Polynomial.from_vector(space.variables, basis, coef))
        residuals.append(res)
    ctrl_n = PolynomialController(space.variables, chans, -np.ones(problem.m), np.ones(problem.m),
                                  problem.inputs, residuals, k)
    return to_original_units(ctrl_n, problem)


def to_original_units(ctrl: PolynomialController, problem: SynthesisProblem) -> PolynomialController:
    """Map a law over normalized time/inputs to ``u = offset + gain * u_n(t / T, x)``."""
    T = problem.time_scale
    off = np.asarray(problem.input_offset, float) if problem.input_offset else np.zeros(problem.m)
    gain = np.asarray(problem.input_gain, float) if problem.input_gain else np.ones(problem.m)
    chans = []
    for j, p in enumerate(ctrl.channels):
        q = p.scale_variable(TIME, 1.0 / T) * gain[j] + off[j]
        chans.append(q)
    lo = off - gain
    hi = off + gain
    return PolynomialController(ctrl.variables, chans, lo, hi, ctrl.input_names, ctrl.residuals, ctrl.k)


def controller_gap(program: ConicProgram, y, a: PolynomialController, b: PolynomialController) -> float:
    """``int (a - b)^2 dmu`` summed over channels, using the optimal occupation moments.

    Both controllers are compared in normalized units.
    """
    problem = program.problem
    mu = program.measure("mu")
    T = problem.time_scale
    gain = np.asarray(problem.input_gain or (1.0,) * problem.m, float)
    total = 0.0
    for j, (pa, pb) in enumerate(zip(a.channels, b.channels)):
        d = (pa - pb).scale_variable(TIME, T) / gain[j]
        d2 = (d * d).embed(mu.space.variables)
        total += sum(c * y[mu.offset + i] for i, c in mu.space.functional(d2))
    return float(total)


# ---------------------------------------------------------------------------
# certificate

@dataclass
class BRSCertificate:
    """Dual polynomials over the normalized problem (time in [0, 1], unit inputs).

    ``w`` depends on the state only, so ``{w >= 1}`` is directly the outer
    approximation of the backward reachable set in original coordinates.
    """

    w: Polynomial
    v: Polynomial
    p: list[Polynomial]
    k: int
    dual_objective: float
    problem: SynthesisProblem

    def integral_w(self, lebesgue) -> float:
        return float(sum(c * lebesgue.values[i] for i, c in lebesgue.space.functional(self.w)))

    def contains(self, x, level: float = 1.0, tol: float = 0.0) -> np.ndarray:
        return self.w.evaluate(np.atleast_2d(x)) >= level - tol


def recover_certificate(program: ConicProgram, multipliers) -> BRSCertificate:
    """Polynomials ``(v, w, p)`` from the equality-row multipliers.

    Liouville row multipliers are the coefficients of ``-v`` on the test
    monomials, slack-row multipliers those of ``p_j`` and the Lebesgue-row
    multipliers those of ``w``.
    """
    problem = program.problem
    lam = np.asarray(multipliers, float)
    tx = problem.tx_vars
    V = {}
    P = [dict() for _ in range(problem.m)]
    W = {}
    nl = 0
    for r, lab in enumerate(program.row_labels):
        kind = program.row_kind[r]
        if kind == "liouville":
            V[tuple(program.test_functions[nl])] = -lam[r]
            nl += 1
    mu = program.measure("mu")
    mu0 = program.measure("mu0")
    srow = [r for r, kd in enumerate(program.row_kind) if kd == "slack"]
    lrow = [r for r, kd in enumerate(program.row_kind) if kd == "lebesgue"]
    per = len(mu.space.basis)
    for j in range(problem.m):
        for i, alpha in enumerate(mu.space.basis):
            P[j][alpha] = lam[srow[j * per + i]]
    for i, alpha in enumerate(mu0.space.basis):
        W[alpha] = lam[lrow[i]]
    v = Polynomial(tx, V)
    w = Polynomial(problem.states, W)
    p = [Polynomial(tx, pj) for pj in P]
    dual = float(np.dot(program.b, lam))
    return BRSCertificate(w, v, p, program.k, dual, problem)


def certificate_violations(cert: BRSCertificate, x_samples, xt_samples, t_grid) -> dict:
    """Worst violation of each dual constraint on sample points (positive = violated).

    ``x_samples`` are points of X, ``xt_samples`` points of the target set and
    ``t_grid`` normalized times in [0, 1].
    """
    problem = cert.problem
    ring = problem.ring(problem.tx_vars)
    X = np.atleast_2d(x_samples)
    out = {}
    out["w>=0"] = float(np.max(-cert.w.evaluate(X)))
    v0 = cert.v.substitute(TIME, 0.0).restrict(problem.states)
    out["w-v0-1>=0"] = float(np.max(-(cert.w - v0 - 1.0).evaluate(X)))
    XT = np.asarray(xt_samples, float).reshape(-1, problem.n)
    if len(XT) == 0:
        out["vT>=0"] = float("-inf")
    elif problem.mode == "fixed":
        vT = cert.v.substitute(TIME, 1.0).restrict(problem.states)
        out["vT>=0"] = float(np.max(-vT.evaluate(XT)))
    else:
        pts = np.array([[t, *x] for t in t_grid for x in XT])
        out["vT>=0"] = float(np.max(-cert.v.evaluate(pts)))
    pts = np.array([[t, *x] for t in t_grid for x in X])
    lf = apply_Lf(cert.v, problem).reduce(ring)
    acc = lf.evaluate(pts)
    worst_p = -np.inf
    for j, lg in enumerate(apply_Lg(cert.v, problem)):
        pj = cert.p[j].evaluate(pts)
        acc = acc + pj
        worst_p = max(worst_p, float(np.max(np.abs(lg.evaluate(pts)) - pj)))
    out["Lfv+sum(p)<=0"] = float(np.max(acc))
    out["p>=|Lgv|"] = worst_p
    return out


def validate_certificate(cert: BRSCertificate, x_samples, xt_samples, t_grid, tol: float) -> dict:
    """Raise :class:`CertificateError` if any sampled constraint is violated beyond ``tol``.

    The tolerance is relative to the coefficient magnitude of the certificate.
    """
    viol = certificate_violations(cert, x_samples, xt_samples, t_grid)
    scale = 1.0 + max(np.abs(list(cert.w.terms.values()) or [0.0]).max(),
                      np.abs(list(cert.v.terms.values()) or [0.0]).max())
    for key, val in viol.items():
        if val > tol * scale:
            raise CertificateError(f"certificate constraint {key} violated by {val:.3g}", value=val)
    return viol


# ---------------------------------------------------------------------------
# level sets

@dataclass
class LevelGrid:
    axes: tuple[str, str]
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray          # shape (len(ys), len(xs)), row-major in y
    level: float
    contours: list[np.ndarray]  # each (P, 2) in (x, y) coordinates


def level_set_grid(w: Polynomial, bounds, resolution, level: float = 1.0,
                   axes: tuple[int, int] = (0, 1), fixed=None, embed=None,
                   names: tuple[str, str] | None = None) -> LevelGrid:
    """Evaluate ``w`` on a 2D slice and trace the ``w = level`` contour (marching squares).

    The slice is the plane of coordinates ``axes`` through ``fixed``, or the
    image of the plane under ``embed`` (a map from (P, 2) to (P, n) points).
    """
    from skimage import measure

    res = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    if min(res) < 2:
        raise ValueError("resolution must be at least 2 per axis")
    (x0, x1), (y0, y1) = bounds
    xs = np.linspace(x0, x1, res[0])
    ys = np.linspace(y0, y1, res[1])
    XX, YY = np.meshgrid(xs, ys)
    plane = np.column_stack([XX.ravel(), YY.ravel()])
    if embed is not None:
        pts = embed(plane)
    else:
        base = np.zeros(w.nvars) if fixed is None else np.asarray(fixed, float)
        pts = np.tile(base, (XX.size, 1))
        pts[:, axes[0]] = plane[:, 0]
        pts[:, axes[1]] = plane[:, 1]
    vals = np.asarray(w.evaluate(pts)).reshape(XX.shape)
    contours = []
    if vals.min() < level < vals.max():
        for cimg in measure.find_contours(vals, level):
            r, c = cimg[:, 0], cimg[:, 1]
            contours.append(np.column_stack([np.interp(c, np.arange(len(xs)), xs),
                                             np.interp(r, np.arange(len(ys)), ys)]))
    if names is None:
        names = (w.variables[axes[0]], w.variables[axes[1]])
    return LevelGrid(tuple(names), xs, ys, vals, level, contours)
