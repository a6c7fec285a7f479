"""Closed-loop simulation, Monte-Carlo reachable-set estimates and the
double-integrator minimum-time oracle."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid

from .moments import UnsupportedGeometry, detect_geometry
from .problem import SynthesisProblem, compactness_radius

log = logging.getLogger(__name__)

REACHED_FINAL = "reached-final"     # in the target (within r) at the horizon
REACHED = "reached"                 # free final time: target hit before the horizon
LEFT_X = "left-X"
HORIZON = "horizon"
UNDERFLOW = "step-underflow"


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; every Monte-Carlo result is a function of ``seed``."""
    return np.random.Generator(np.random.Philox(int(seed)))


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    flag: str

    def to_csv(self, states, inputs) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *states, *inputs])
        for row in zip(self.t, self.x, self.u):
            w.writerow([repr(float(row[0]))] + [repr(float(v)) for v in row[1]]
                       + [repr(float(v)) for v in row[2]])
        return buf.getvalue()


@dataclass
class BatchResult:
    x0: np.ndarray
    x_final: np.ndarray
    t_final: np.ndarray
    flags: np.ndarray
    dist_final: np.ndarray       # target metric at the end
    dist_min: np.ndarray         # smallest target metric while inside X
    t_min: np.ndarray
    trajectories: list[Trajectory] = field(default_factory=list)
    projections: int = 0
    mode: str = "fixed"


class TargetMetric:
    """Distance-like measure to the target used for success classification.

    Point targets: Euclidean distance to the point.  Ball targets: distance to
    the ball's center, so a success radius equal to the ball radius is exact
    membership.  Other targets: worst constraint violation (0 inside).
    """

    def __init__(self, problem: SynthesisProblem):
        self.problem = problem
        self.kind = "set"
        if problem.X_T.is_point:
            self.kind = "point"
            self.center = np.asarray(problem.X_T.point, float)
            self.default_r = 0.1
            return
        try:
            geo = detect_geometry(problem.X_T.inequalities, problem.ring())
            if geo.kind == "ball" and not geo.circles and len(geo.free) == problem.n:
                self.kind = "ball"
                self.center = np.asarray(geo.center, float)
                self.default_r = float(geo.radius)
                return
        except UnsupportedGeometry:
            pass
        self.default_r = 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind in ("point", "ball"):
            return np.linalg.norm(x - self.center, axis=1)
        worst = np.zeros(x.shape[0])
        for h in self.problem.X_T.inequalities:
            worst = np.maximum(worst, -h.evaluate(x))
        return worst

    def success(self, d, r) -> np.ndarray:
        if self.kind == "set":
            return d <= 1e-12
        return d <= r


def _in_X(problem, x, tol):
    ok = np.ones(x.shape[0], bool)
    for h in problem.X.inequalities:
        ok &= h.evaluate(x) >= -tol
    return ok


def _controlled(problem, controller, lo, hi):
    def u_of(t, x):
        if x.shape[0] == 0:
            return np.zeros((0, problem.m))
        u = np.asarray(controller(t, x), float).reshape(x.shape[0], problem.m)
        return np.clip(u, lo, hi)
    return u_of


def integrate_batch(problem: SynthesisProblem, controller, X0, T: float | None = None,
                    rtol: float = 1e-8, atol: float = 1e-10, max_step: float | None = None,
                    record: bool = False, r: float | None = None, x_tol: float = 1e-7,
                    max_steps: int = 200000) -> BatchResult:
    """Integrate ``x' = f + g sat(u(t, x))`` for every row of ``X0`` on ``[0, T]``.

    Adaptive Dormand-Prince 5(4) with per-trajectory step sizes.  Ring pairs
    are renormalized onto the unit circle after every accepted step.
    Integration stops early when a trajectory leaves X.
    """
    if problem.is_normalized and problem.time_scale != 1.0:
        log.warning("simulating a normalized problem: time runs over [0, 1]")
    T = float(problem.T if T is None else T)
    X0 = np.atleast_2d(np.asarray(X0, float))
    N, n = X0.shape
    lo = np.asarray(problem.input_lo, float)
    hi = np.asarray(problem.input_hi, float)
    u_of = _controlled(problem, controller, lo, hi)
    metric = TargetMetric(problem)
    r = metric.default_r if r is None else r
    ring = [(problem.states.index(s), problem.states.index(c)) for s, c in problem.ring_names]
    hmax = T if max_step is None else max_step

    def F(t, x):
        return problem.rhs(t, x, u_of(t, x))

    def project(x):
        for s, c in ring:
            nrm = np.hypot(x[:, s], x[:, c])
            nrm[nrm == 0] = 1.0
            x[:, s] /= nrm
            x[:, c] /= nrm
        return x

    x = project(X0.copy())
    t = np.zeros(N)
    h = np.full(N, min(hmax, T, 1e-2 * T if T > 0 else 0.0) if T > 0 else 0.0)
    flags = np.array([HORIZON] * N, dtype=object)
    active = np.ones(N, bool) if T > 0 else np.zeros(N, bool)
    inside = _in_X(problem, x, x_tol)
    flags[~inside] = LEFT_X
    active &= inside
    d0 = metric(x)
    dmin = np.where(inside, d0, np.inf)
    tmin = np.zeros(N)
    rec_t = [[0.0] for _ in range(N)] if record else None
    rec_x = [[x[i].copy()] for i in range(N)] if record else None
    projections = 0
    steps = 0
    while active.any():
        steps += 1
        if steps > max_steps:
            flags[active] = UNDERFLOW
            break
        idx = np.flatnonzero(active)
        ti, xi, hi_ = t[idx], x[idx], np.minimum(h[idx], T - t[idx])
        K = np.zeros((7, len(idx), n))
        K[0] = F(ti, xi)
        for s in range(1, 7):
            acc = xi.copy()
            for j, a in enumerate(_A[s]):
                if a:
                    acc += (hi_ * a)[:, None] * K[j]
            K[s] = F(ti + _C[s] * hi_, acc)
        x5 = xi + hi_[:, None] * np.tensordot(_B5, K, axes=1)
        err = hi_[:, None] * np.tensordot(_E, K, axes=1)
        sc = atol + rtol * np.maximum(np.abs(xi), np.abs(x5))
        en = np.sqrt(np.mean((err / sc) ** 2, axis=1))
        ok = en <= 1.0
        with np.errstate(divide="ignore"):
            fac = np.where(en > 0, 0.9 * en ** -0.2, 5.0)
        fac = np.clip(fac, 0.2, 5.0)
        h[idx] = np.minimum(hi_ * fac, hmax)
        acc_idx = idx[ok]
        if len(acc_idx):
            xn = x5[ok]
            if ring:
                projections += len(acc_idx)
                xn = project(xn)
            x[acc_idx] = xn
            t[acc_idx] = ti[ok] + hi_[ok]
            inX = _in_X(problem, xn, x_tol)
            d = metric(xn)
            better = inX & (d < dmin[acc_idx])
            dmin[acc_idx[better]] = d[better]
            tmin[acc_idx[better]] = t[acc_idx[better]]
            if record:
                for loc, i in enumerate(acc_idx):
                    rec_t[i].append(t[i])
                    rec_x[i].append(xn[loc].copy())
            left = acc_idx[~inX]
            flags[left] = LEFT_X
            active[left] = False
            done = acc_idx[inX & (t[acc_idx] >= T * (1 - 1e-14))]
            active[done] = False
        small = idx[(~ok) & (hi_ < 1e-13 * max(T, 1.0))]
        if len(small):
            flags[small] = UNDERFLOW
            active[small] = False
    dfin = metric(x)
    if problem.mode == "fixed":
        hit = (flags == HORIZON) & metric.success(dfin, r)
        flags[hit] = REACHED_FINAL
    else:
        hit = metric.success(dmin, r)
        flags[hit] = REACHED
    trajs = []
    if record:
        for i in range(N):
            tt = np.array(rec_t[i])
            xx = np.array(rec_x[i])
            uu = u_of(tt, xx) if len(tt) else np.zeros((0, problem.m))
            trajs.append(Trajectory(tt, xx, uu, str(flags[i])))
    if projections:
        log.info("circle projection applied on %d accepted steps", projections)
    return BatchResult(X0, x, t, flags, dfin, dmin, tmin, trajs, projections, problem.mode)


def integrate(problem: SynthesisProblem, controller, x0, T: float | None = None, **kw) -> Trajectory:
    """Single closed-loop trajectory (see :func:`integrate_batch`)."""
    res = integrate_batch(problem, controller, np.atleast_2d(x0), T=T, record=True, **kw)
    return res.trajectories[0]


# ---------------------------------------------------------------------------
# Monte-Carlo estimate

def sample_X(problem: SynthesisProblem, rng: np.random.Generator, count: int):
    """Uniform samples of X and its volume."""
    try:
        geo = detect_geometry(problem.X.inequalities, problem.ring())
        return geo.sample(rng, count, problem.n), geo.volume()
    except UnsupportedGeometry:
        C = compactness_radius(problem)
        if C is None or problem.ring_names:
            raise
        R = math.sqrt(C)
        out, tried, kept = [], 0, 0
        while kept < count:
            batch = rng.uniform(-R, R, size=(max(count, 1000), problem.n))
            tried += len(batch)
            ok = problem.X.contains(batch)
            out.append(batch[ok])
            kept += int(ok.sum())
        pts = np.concatenate(out)[:count]
        return pts, (2 * R) ** problem.n * kept / tried


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass
class BRSEstimate:
    samples: np.ndarray
    result: BatchResult
    radii: tuple[float, ...]
    classes: np.ndarray          # index of the smallest radius achieved, len(radii) = miss
    volume_X: float
    seed: int

    def success(self, level: int = 0) -> np.ndarray:
        return self.classes <= level

    def fraction(self, level: int = 0) -> float:
        return float(np.mean(self.success(level))) if len(self.samples) else 0.0

    def volume(self, level: int = 0) -> tuple[float, float, float]:
        k = int(self.success(level).sum())
        lo, hi = wilson_interval(k, len(self.samples))
        return self.fraction(level) * self.volume_X, lo * self.volume_X, hi * self.volume_X

    def to_csv(self, states) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*(f"{s}_0" for s in states), *(f"{s}_end" for s in states),
                    "t_end", "distance", "flag", "class"])
        res = self.result
        for i in range(len(self.samples)):
            d = res.dist_final[i] if res.mode == "fixed" else res.dist_min[i]
            cls = "miss" if self.classes[i] == len(self.radii) else f"r<={self.radii[self.classes[i]]:g}"
            w.writerow([*(repr(float(v)) for v in self.samples[i]), *(repr(float(v)) for v in res.x_final[i]),
                        repr(float(res.t_final[i])), repr(float(d)), res.flags[i], cls])
        return buf.getvalue()


def classify(problem, res: BatchResult, radii) -> np.ndarray:
    metric = TargetMetric(problem)
    classes = np.full(len(res.x0), len(radii))
    for lvl in reversed(range(len(radii))):
        if problem.mode == "fixed":
            ok = (res.flags != LEFT_X) & (res.flags != UNDERFLOW) & metric.success(res.dist_final, radii[lvl])
        else:
            ok = metric.success(res.dist_min, radii[lvl])
        classes[ok] = lvl
    return classes


def estimate_brs(problem: SynthesisProblem, controller, samples: int, r=0.1, seed: int = 0,
                 rtol: float = 1e-6, atol: float = 1e-8, x0=None) -> BRSEstimate:
    """Sample X uniformly, simulate, and classify by success radius (or radii)."""
    radii = tuple(sorted(np.atleast_1d(r).astype(float)))
    if any(v <= 0 for v in radii):
        raise ValueError("success radius must be positive")
    rng = make_rng(seed)
    if x0 is None:
        X0, vol = sample_X(problem, rng, samples) if samples else (np.zeros((0, problem.n)), 0.0)
    else:
        X0 = np.atleast_2d(np.asarray(x0, float))
        vol = float("nan")
    if len(X0) == 0:
        empty = BatchResult(X0, X0, np.zeros(0), np.zeros(0, object), np.zeros(0), np.zeros(0),
                            np.zeros(0), mode=problem.mode)
        return BRSEstimate(X0, empty, radii, np.zeros(0, int), vol, seed)
    res = integrate_batch(problem, controller, X0, rtol=rtol, atol=atol, r=radii[0])
    return BRSEstimate(X0, res, radii, classify(problem, res, radii), vol, seed)


# ---------------------------------------------------------------------------
# double integrator oracle

def min_time(x) -> np.ndarray:
    """Minimum time to steer ``x1' = x2, x2' = u, |u| <= 1`` to the origin."""
    x = np.atleast_2d(np.asarray(x, float))
    x1, x2 = x[:, 0], x[:, 1]
    s = x1 + 0.5 * x2 * np.abs(x2)
    pos = x2 + 2.0 * np.sqrt(np.maximum(x1 + 0.5 * x2 * x2, 0.0))
    neg = -x2 + 2.0 * np.sqrt(np.maximum(-x1 + 0.5 * x2 * x2, 0.0))
    return np.where(s > 0, pos, np.where(s < 0, neg, np.abs(x2)))


def double_integrator_oracle(x0, T: float) -> np.ndarray:
    """Membership in the backward reachable set of the origin at horizon ``T``."""
    return min_time(x0) <= T


def bang_bang(t, x, eps: float = 0.0) -> np.ndarray:
    """Minimum-time feedback ``u = -sign(x1 + x2|x2|/2)``; ``eps > 0`` smooths the switch."""
    x = np.atleast_2d(x)
    s = x[:, 0] + 0.5 * x[:, 1] * np.abs(x[:, 1])
    if eps > 0:
        return np.clip(-s / eps, -1.0, 1.0)[:, None]
    u = -np.sign(s)
    on = s == 0
    u[on] = -np.sign(x[on, 1])
    return u[:, None]


def dp_min_time(bounds=(-1.6, 1.6), resolution: int = 400, t_max: float = 2.0,
                dt: float | None = None, target_radius: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Minimum time on a grid by semi-Lagrangian value iteration (inputs -1, 0, 1).

    Returns ``(axis, V)`` with ``V[i, j]`` the time at ``(axis[i], axis[j])``;
    unreached cells hold ``inf``.
    """
    ax = np.linspace(bounds[0], bounds[1], resolution)
    hgrid = ax[1] - ax[0]
    dt = hgrid if dt is None else dt
    rad = 3.0 * hgrid if target_radius is None else target_radius
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    big = 10.0 * t_max
    V = np.where(np.hypot(X1, X2) <= rad, 0.0, big)
    tgt = V == 0.0
    coords = []
    for u in (-1.0, 0.0, 1.0):
        # second-order step of the exact flow
        n1 = X1 + dt * X2 + 0.5 * dt * dt * u
        n2 = X2 + dt * u
        coords.append(np.array([(n1 - ax[0]) / hgrid, (n2 - ax[0]) / hgrid]))
    for _ in range(int(math.ceil(t_max / dt)) + 5):
        cand = [ndimage.map_coordinates(V, c, order=1, mode="constant", cval=big) for c in coords]
        Vn = np.minimum(V, dt + np.minimum.reduce(cand))
        Vn[tgt] = 0.0
        if np.max(np.abs(Vn - V)) < 1e-12:
            V = Vn
            break
        V = Vn
    V[V >= t_max] = np.inf
    return ax, V


# ---------------------------------------------------------------------------
# empirical moments of simulated trajectories

def _monomials(pts: np.ndarray, basis) -> np.ndarray:
    E = np.array(basis, dtype=int)
    out = np.ones((pts.shape[0], len(basis)))
    for i in range(E.shape[1]):
        out *= pts[:, [i]] ** E[None, :, i]
    return out


def empirical_moments(program, trajectories, weights, problem: SynthesisProblem) -> np.ndarray:
    """Moment vector ``y`` (in ``program``'s layout) of the measures generated by ``trajectories``.

    ``problem`` is the original (unnormalized) problem the trajectories were
    simulated on; time and inputs are mapped to the normalized units of the
    program.  ``muhat0`` is set to the exact Lebesgue moments minus ``mu0``.
    Trajectories must stay in X and (fixed mode) end in the target.
    """
    norm = program.problem
    T = problem.T
    off = norm.offsets() if norm.input_offset is not None else np.zeros(problem.m)
    gain = norm.gains() if norm.input_gain is not None else np.ones(problem.m)
    y = np.zeros(program.nvars)
    for tr, w in zip(trajectories, weights):
        tn = tr.t / T
        pts = np.column_stack([tn, tr.x])
        un = (tr.u - off) / gain
        for meas in program.measures:
            sl = meas.slice
            tag = meas.tag
            if tag == "mu0":
                y[sl] += w * _monomials(tr.x[:1], meas.space.basis)[0]
            elif tag == "muhat0":
                continue
            elif tag == "muT":
                if meas.point is not None:
                    if meas.space.variables == ("mass",):
                        y[sl] += w
                    else:
                        y[sl] += w * tn[-1] ** np.array([a[0] for a in meas.space.basis], float)
                elif problem.mode == "free":
                    y[sl] += w * _monomials(pts[-1:], meas.space.basis)[0]
                else:
                    y[sl] += w * _monomials(tr.x[-1:], meas.space.basis)[0]
            else:
                vals = _monomials(pts, meas.space.basis)
                if tag == "mu":
                    dens = np.ones(len(tn))
                else:
                    prefix, j = tag.split("_")
                    uj = un[:, int(j) - 1]
                    dens = {"sigma+": np.maximum(uj, 0.0), "sigma-": np.maximum(-uj, 0.0),
                            "sigmahat": 1.0 - np.abs(uj)}[prefix]
                y[sl] += w * trapezoid(vals * dens[:, None], tn, axis=0)
    mh = program.measure("muhat0")
    m0 = program.measure("mu0")
    y[mh.slice] = program.lebesgue.values - y[m0.slice]
    return y
