"""Primal-dual interior-point solver for the assembled moment programs.

Problem form (moment side)::

    maximize  c @ y   s.t.  A y = b,   F_j(y) = sum_i y_i F_{j,i}  PSD for every block j

and its dual (certificate side)::

    minimize  b @ lam  s.t.  A' lam - sum_j F_j^*(X_j) = c,   X_j PSD.

The method is an infeasible-start path-following scheme with Nesterov-Todd
scaling and Mehrotra's predictor-corrector.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class InterchangeError(ValueError):
    pass


@dataclass
class SolveOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iter: int = 200
    step_fraction: float = 0.98
    refine_steps: int = 3
    check_weak_duality: bool = False
    verbose: bool = False


@dataclass
class SolveReport:
    status: str                    # optimal | near-optimal | infeasible | numerical-failure
    primal_objective: float
    dual_objective: float
    gap: float
    residual: float                # max |A y - b| / (1 + max |b|)
    dual_residual: float
    min_eigenvalue: float          # min over blocks of lambda_min / max(1, max |entry|)
    iterations: int
    wall_time: float
    eliminated_rows: list[int] = field(default_factory=list)
    message: str = ""
    weak_duality_violations: int = 0
    residual_abs: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SDP:
    """Explicit data: ``phis[j]`` maps ``y`` to the column-stacked block ``j``."""

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    sizes: list[int]
    phis: list[sp.csr_matrix]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def block(self, j: int, y) -> np.ndarray:
        s = self.sizes[j]
        return (self.phis[j] @ y).reshape(s, s)

    def adjoint(self, j: int, X) -> np.ndarray:
        return self.phis[j].T @ np.asarray(X).ravel()


def phi_from_triplets(size: int, nvars: int, rows, cols, idx, coef, offset: int = 0) -> sp.csr_matrix:
    """Sparse map y -> vec(F(y)) from upper-triangle triplets."""
    r = np.concatenate([rows * size + cols, (cols * size + rows)[rows != cols]])
    v = np.concatenate([idx, idx[rows != cols]]) + offset
    w = np.concatenate([coef, coef[rows != cols]])
    return sp.csr_matrix((w, (r, v)), shape=(size * size, nvars))


def program_to_sdp(program) -> SDP:
    phis, sizes = [], []
    for blk in program.blocks:
        r, c_, i, v = blk.matrix.triplets()
        phis.append(phi_from_triplets(blk.size, program.nvars, r, c_, i, v, blk.offset))
        sizes.append(blk.size)
    return SDP(program.A.tocsr(), np.asarray(program.b, float), np.asarray(program.c, float), sizes, phis)


# ---------------------------------------------------------------------------
# linear algebra helpers

def _chol(M):
    return la.cholesky(M, lower=True, check_finite=False)


def _max_step(L, D) -> float:
    """Largest a with L L' + a D PSD (L lower Cholesky factor)."""
    Li = la.solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False)
    e = np.linalg.eigvalsh(Li @ D @ Li.T)[0]
    return math.inf if e >= 0 else -1.0 / e


def _nt_scaling(X, Z):
    """Return (G, v) with W = G G', W Z W = X, and G' Z G = G^-1 X G^-T = diag(v)."""
    Lx = _chol(X)
    Lz = _chol(Z)
    U, s, Vt = np.linalg.svd(Lz.T @ Lx)
    G = Lx @ Vt.T / np.sqrt(s)[None, :]
    return G, s


def _sym(M):
    return (M + M.T) / 2


def _factor_pd(M):
    """Cholesky with progressive diagonal regularization; returns (factor, shift)."""
    d = np.abs(np.diag(M))
    base = max(d.max(initial=0.0), 1e-300)
    shift = 0.0
    for attempt in range(8):
        try:
            return la.cho_factor(M + shift * np.eye(len(M)), lower=True, check_finite=False), shift
        except la.LinAlgError:
            shift = base * 10.0 ** (-14 + 2 * attempt)
    raise SolverError("Schur complement factorization broke down")


# ---------------------------------------------------------------------------
# presolve

def _independent_rows(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    if A.shape[0] == 0:
        return np.arange(0)
    _, R, perm = la.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    nrm = max(np.linalg.norm(A), 1e-300)
    rank = int(np.sum(d > rtol * nrm))
    return np.sort(perm[:rank])


# ---------------------------------------------------------------------------
# main loop

def solve_sdp(sdp: SDP, opts: SolveOptions | None = None, var_scale=None):
    """Solve an :class:`SDP`; returns ``(y, lam, Xs, report)`` in the original scaling."""
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    n = sdp.n
    A0 = sdp.A.toarray() if sp.issparse(sdp.A) else np.asarray(sdp.A, float)
    D = np.ones(n) if var_scale is None else np.asarray(var_scale, float)

    # presolve: dependent rows, column scaling, row equilibration, block scaling
    keep = _independent_rows(A0 * D[None, :])
    eliminated = sorted(set(range(A0.shape[0])) - set(keep.tolist()))
    if eliminated:
        log.info("presolve eliminated %d dependent equality rows", len(eliminated))
    A = A0[keep] * D[None, :]
    rnorm = np.abs(A).max(axis=1) if A.size else np.ones(0)
    rnorm[rnorm == 0] = 1.0
    Rs = 1.0 / rnorm
    A = A * Rs[:, None]
    b = sdp.b[keep] * Rs
    c = sdp.c * D
    Dm = sp.diags(D)
    phis, bscale = [], []
    for phi in sdp.phis:
        ph = (phi @ Dm).tocsr()
        m = abs(ph).max() if ph.nnz else 1.0
        bscale.append(1.0 / m)
        phis.append((ph / m).tocsr())
    sizes = sdp.sizes
    nb = len(sizes)
    block_cols = []
    for phi in phis:
        cols = np.unique(phi.indices)
        block_cols.append(cols)
    phis_local = [phis[j][:, block_cols[j]].tocsr() for j in range(nb)]

    m_eq = A.shape[0]
    N = sum(sizes)

    y = np.zeros(n)
    lam = np.zeros(m_eq)
    scale0 = 10.0
    Xs = [scale0 * np.eye(s) for s in sizes]
    Zs = [scale0 * np.eye(s) for s in sizes]

    def Fy(j, yv):
        return (phis_local[j] @ yv[block_cols[j]]).reshape(sizes[j], sizes[j])

    def Fadj(j, X):
        out = np.zeros(n)
        out[block_cols[j]] = phis_local[j].T @ X.ravel()
        return out

    status, message = "numerical-failure", ""
    it = 0
    wd_viol = 0
    pinf = dinf = gap_rel = math.inf
    best = None
    for it in range(1, opts.max_iter + 1):
        # residuals
        rp = b - A @ y
        Rb = [Fy(j, y) - Zs[j] for j in range(nb)]
        FX = np.zeros(n)
        for j in range(nb):
            FX += Fadj(j, Xs[j])
        mu = sum(np.sum(Xs[j] * Zs[j]) for j in range(nb)) / N
        pobj = c @ y
        dobj = b @ lam
        Ay = A @ y
        Atl = A.T @ lam
        rd = c - Atl + FX
        pscale = 1.0 + max(np.linalg.norm(b), np.linalg.norm(Ay))
        dscale = 1.0 + max(np.linalg.norm(c), np.linalg.norm(Atl), np.linalg.norm(FX))
        pinf = max(np.linalg.norm(rp) / pscale,
                   math.sqrt(sum(np.sum(R * R) for R in Rb)) / (1.0 + math.sqrt(sum(np.sum(Z * Z) for Z in Zs))))
        dinf = np.linalg.norm(rd) / dscale
        gap_rel = abs(dobj - pobj) / (1.0 + abs(pobj) + abs(dobj))
        if opts.verbose:
            log.info("it %3d pobj %+.9e dobj %+.9e pinf %.1e dinf %.1e gap %.1e mu %.1e |lam| %.1e |X| %.1e",
                     it, pobj, dobj, pinf, dinf, gap_rel, mu, np.linalg.norm(lam),
                     max(np.abs(X).max() for X in Xs))
        if opts.check_weak_duality and pinf <= opts.feas_tol and dinf <= opts.feas_tol:
            if pobj > dobj + opts.gap_tol * (1 + abs(dobj)):
                wd_viol += 1
        score = max(pinf / opts.feas_tol, dinf / opts.feas_tol, gap_rel / opts.gap_tol)
        if best is None or score < best[0]:
            best = (score, y.copy(), lam.copy(), [X.copy() for X in Xs], [Z.copy() for Z in Zs], it)
        if pinf <= opts.feas_tol and dinf <= opts.feas_tol and gap_rel <= opts.gap_tol:
            status = "optimal"
            break
        # crude infeasibility / unboundedness detection
        if np.linalg.norm(y) > 1e12 * (1 + np.linalg.norm(b)):
            status, message = "infeasible", "moment iterates diverge (dual infeasible)"
            break
        if np.linalg.norm(lam) > 1e12 * (1 + np.linalg.norm(c)) and dobj < 0:
            status, message = "infeasible", "certificate iterates diverge (primal infeasible)"
            break

        try:
            scal = [_nt_scaling(Xs[j], Zs[j]) for j in range(nb)]
        except (la.LinAlgError, np.linalg.LinAlgError):
            message = "NT scaling failed"
            break
        Ws = [G @ G.T for G, _ in scal]

        # H = sum Phi' (W kron W) Phi, block diagonal over variable groups
        H = np.zeros((n, n))
        for j in range(nb):
            W = Ws[j]
            P = phis_local[j]
            K = np.kron(W, W)
            Hj = (P.T @ (P.T @ K).T).T if False else P.T @ (K @ P.toarray())
            cols = block_cols[j]
            H[np.ix_(cols, cols)] += Hj
        try:
            K = np.zeros((n + m_eq, n + m_eq))
            K[:n, :n] = _sym(H)
            K[:n, n:] = A.T
            K[n:, :n] = A
            Kfac = la.lu_factor(K, check_finite=False)
            if not np.all(np.isfinite(Kfac[0])):
                raise SolverError("KKT factorization broke down")
        except (SolverError, la.LinAlgError, ValueError) as exc:
            message = str(exc) or "KKT factorization broke down"
            break

        def kkt_solve(rhs):
            sol = la.lu_solve(Kfac, rhs, check_finite=False)
            for _ in range(opts.refine_steps):
                res = rhs - K @ sol
                if np.linalg.norm(res) <= 1e-15 * np.linalg.norm(rhs):
                    break
                sol = sol + la.lu_solve(Kfac, res, check_finite=False)
            return sol

        def direction(Dmats):
            g = rd.copy()
            for j in range(nb):
                G = scal[j][0]
                g += Fadj(j, G @ Dmats[j] @ G.T - Ws[j] @ Rb[j] @ Ws[j])
            sol = kkt_solve(np.concatenate([g, rp]))
            dy, dlam = sol[:n], sol[n:]
            dZ, dX = [], []
            for j in range(nb):
                G = scal[j][0]
                dz = Fy(j, dy) + Rb[j]
                dZ.append(_sym(dz))
                dX.append(_sym(G @ Dmats[j] @ G.T - Ws[j] @ dz @ Ws[j]))
            return dy, dlam, dZ, dX

        def divide(v, Rhs):
            return 2.0 * Rhs / (v[:, None] + v[None, :])

        # predictor
        Dp = [divide(v, np.diag(-v * v)) for _, v in scal]
        dy, dlam, dZ, dX = direction(Dp)
        try:
            LZ = [_chol(Z) for Z in Zs]
            LX = [_chol(X) for X in Xs]
        except la.LinAlgError:
            message = "iterate lost positive definiteness"
            break
        ap = min([1.0] + [_max_step(LZ[j], dZ[j]) for j in range(nb)])
        ad = min([1.0] + [_max_step(LX[j], dX[j]) for j in range(nb)])
        mu_aff = sum(np.sum((Xs[j] + ad * dX[j]) * (Zs[j] + ap * dZ[j])) for j in range(nb)) / N
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        # corrector
        Dc = []
        for j in range(nb):
            G, v = scal[j]
            Gi = la.solve(G, np.eye(len(v)), check_finite=False)
            dxs = Gi @ dX[j] @ Gi.T
            dzs = G.T @ dZ[j] @ G
            corr = _sym(dxs @ dzs)
            Rhs = sigma * mu * np.eye(len(v)) - np.diag(v * v) - corr
            Dc.append(divide(v, Rhs))
        dy, dlam, dZ, dX = direction(Dc)
        ap = min(1.0, opts.step_fraction * min([math.inf] + [_max_step(LZ[j], dZ[j]) for j in range(nb)]))
        ad = min(1.0, opts.step_fraction * min([math.inf] + [_max_step(LX[j], dX[j]) for j in range(nb)]))
        if not (np.all(np.isfinite(dy)) and np.all(np.isfinite(dlam))):
            message = "non-finite search direction"
            break
        y = y + ap * dy
        Zs = [_sym(Zs[j] + ap * dZ[j]) for j in range(nb)]
        lam = lam + ad * dlam
        Xs = [_sym(Xs[j] + ad * dX[j]) for j in range(nb)]
        if max(ap, ad) < 1e-10:
            message = "step length underflow"
            break
    else:
        message = "iteration cap reached"

    if status != "optimal" and best is not None:
        score, y, lam, Xs, Zs, _ = best
        if status != "infeasible":
            status = "near-optimal" if score <= 1e3 else "numerical-failure"
            if not message:
                message = "stalled"

    # unscale
    y_out = y * D
    lam_full = np.zeros(sdp.A.shape[0])
    lam_full[keep] = lam * Rs
    X_out = [Xs[j] * bscale[j] for j in range(nb)]
    resid = sdp.A @ y_out - sdp.b
    min_eig = 0.0
    for j in range(nb):
        Fj = sdp.block(j, y_out)
        e = float(np.linalg.eigvalsh(Fj)[0]) / max(1.0, float(np.abs(Fj).max()))
        min_eig = min(min_eig, e) if j else e
    pobj = float(sdp.c @ y_out)
    dobj = float(sdp.b @ lam_full)
    dres = sdp.A.T @ lam_full - sdp.c
    for j in range(nb):
        dres -= sdp.adjoint(j, X_out[j])
    res_abs = float(np.max(np.abs(resid), initial=0.0))
    report = SolveReport(
        status=status, primal_objective=pobj, dual_objective=dobj,
        gap=abs(dobj - pobj) / (1.0 + abs(pobj) + abs(dobj)),
        residual=res_abs / (1.0 + float(np.max(np.abs(sdp.b), initial=0.0))),
        dual_residual=float(np.linalg.norm(dres)) / (1.0 + float(np.linalg.norm(sdp.c))
                                                      + float(np.linalg.norm(sdp.A.T @ lam_full))),
        min_eigenvalue=min_eig, iterations=it, wall_time=time.perf_counter() - t0,
        eliminated_rows=eliminated, message=message, weak_duality_violations=wd_viol,
        residual_abs=res_abs,
    )
    log.info("solve: %s after %d iterations, objective %.10g, gap %.2e", status, it, pobj, report.gap)
    return y_out, lam_full, X_out, report


@dataclass
class Solution:
    """Output of :func:`solve` on a :class:`~brsynth.relax.ConicProgram`."""

    y: np.ndarray
    row_multipliers: np.ndarray
    block_duals: list[np.ndarray]
    report: SolveReport
    program: object

    @property
    def moments(self):
        return self.program.split(self.y)

    @property
    def objective(self) -> float:
        return self.report.primal_objective


def solve(program, opts: SolveOptions | None = None) -> Solution:
    sdp = program_to_sdp(program)
    y, lam, Xs, report = solve_sdp(sdp, opts, var_scale=program.var_scale)
    return Solution(y, lam, Xs, report, program)


# ---------------------------------------------------------------------------
# interchange: SDPA sparse format, equality rows carried by one flagged LP block

def export_interchange(program, header: str | None = None) -> str:
    """SDPA-sparse text of the program.

    SDPA solves ``min c'x  s.t.  sum_i F_i x_i - F_0  PSD``; we store ``c = -objective``.
    The last block is a diagonal (LP) block holding ``A y - b``; the comment line
    ``*EQUALITY_BLOCK <index>`` marks it as a zero cone.  Entries are listed by
    block, then variable (0 = F_0), then row, column (upper triangle, 1-based);
    numbers use 17 significant digits.
    """
    sdp = program_to_sdp(program) if not isinstance(program, SDP) else program
    n = sdp.n
    nb = len(sdp.sizes)
    eq_block = nb + 1
    lines = []
    if header:
        lines += ["* " + h for h in header.splitlines()]
    lines.append(f"*EQUALITY_BLOCK {eq_block}")
    lines.append(f"{n} = mDIM")
    lines.append(f"{nb + 1} = nBLOCK")
    lines.append(" ".join(str(s) for s in sdp.sizes) + f" {-sdp.A.shape[0]} = bLOCKsTRUCT")
    lines.append(" ".join(f"{-v:.17g}" for v in sdp.c))
    entries = []
    for j, phi in enumerate(sdp.phis):
        s = sdp.sizes[j]
        coo = phi.tocoo()
        for r, var, val in zip(coo.row, coo.col, coo.data):
            row, col = divmod(int(r), s)
            if row <= col and val != 0.0:
                entries.append((j + 1, int(var) + 1, row + 1, col + 1, float(val)))
    A = sdp.A.tocoo()
    for r, var, val in zip(A.row, A.col, A.data):
        if val != 0.0:
            entries.append((eq_block, int(var) + 1, int(r) + 1, int(r) + 1, float(val)))
    for r, val in enumerate(sdp.b):
        if val != 0.0:
            entries.append((eq_block, 0, r + 1, r + 1, float(val)))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    for blk, var, r, cidx, val in entries:
        lines.append(f"{var} {blk} {r} {cidx} {val:.17g}")
    return "\n".join(lines) + "\n"


def read_interchange(text: str) -> SDP:
    """Parse :func:`export_interchange` output back into an :class:`SDP`."""
    eq_block = None
    body = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line[0] in "*\"":
            if line.startswith("*EQUALITY_BLOCK"):
                eq_block = int(line.split()[1])
            continue
        body.append((ln, line))
    try:
        n = int(body[0][1].split("=")[0].split()[0])
        nblock = int(body[1][1].split("=")[0].split()[0])
        struct = [int(v) for v in body[2][1].split("=")[0].replace(",", " ").replace("{", " ")
                  .replace("}", " ").replace("(", " ").replace(")", " ").split()]
        cvec = np.array([float(v) for v in body[3][1].replace(",", " ").split()])
    except (IndexError, ValueError) as exc:
        raise InterchangeError(f"malformed header: {exc}") from None
    if len(struct) != nblock or len(cvec) != n:
        raise InterchangeError("block structure / objective length mismatch")
    psd = {}
    A_r, A_c, A_v = [], [], []
    b = np.zeros(0)
    if eq_block is not None:
        b = np.zeros(-struct[eq_block - 1])
    for ln, line in body[4:]:
        parts = line.split()
        if len(parts) != 5:
            raise InterchangeError(f"line {ln}: expected 'var block row col value'")
        var, blk, r, col = (int(p) for p in parts[:4])
        val = float(parts[4])
        if not 1 <= blk <= nblock or not 0 <= var <= n:
            raise InterchangeError(f"line {ln}: index out of range")
        if blk == eq_block:
            if var == 0:
                b[r - 1] = val
            else:
                A_r.append(r - 1)
                A_c.append(var - 1)
                A_v.append(val)
        else:
            if var == 0:
                if val != 0.0:
                    raise InterchangeError(f"line {ln}: constant matrices are not supported")
                continue
            psd.setdefault(blk, []).append((r - 1, col - 1, var - 1, val))
    sizes, phis = [], []
    for blk in range(1, nblock + 1):
        if blk == eq_block:
            continue
        s = struct[blk - 1]
        if s <= 0:
            raise InterchangeError(f"block {blk}: only PSD blocks and the equality block are supported")
        trip = psd.get(blk, [])
        arr = np.array(trip, dtype=float).reshape(-1, 4)
        phis.append(phi_from_triplets(s, n, arr[:, 0].astype(int), arr[:, 1].astype(int),
                                      arr[:, 2].astype(int), arr[:, 3]))
        sizes.append(s)
    A = sp.csr_matrix((A_v, (A_r, A_c)), shape=(len(b), n))
    return SDP(A, b, -cvec, sizes, phis)


def export_solution(program, y, header: str | None = None) -> str:
    """Solution text: block structure for validation followed by the moment vector."""
    sdp = program_to_sdp(program) if not isinstance(program, SDP) else program
    lines = ["* " + h for h in (header or "").splitlines() if header]
    lines.append(f"{sdp.n} = mDIM")
    lines.append(f"{len(sdp.sizes) + 1} = nBLOCK")
    lines.append(" ".join(str(s) for s in sdp.sizes) + f" {-sdp.A.shape[0]} = bLOCKsTRUCT")
    lines += [f"{v:.17g}" for v in np.asarray(y)]
    return "\n".join(lines) + "\n"


def import_solution(text: str, program):
    """Read a solution for ``program``; returns per-measure moment vectors and ``y``."""
    sdp = program_to_sdp(program)
    body = [ln.strip() for ln in text.splitlines() if ln.strip() and ln.strip()[0] not in "*\""]
    try:
        n = int(body[0].split("=")[0])
        nblock = int(body[1].split("=")[0])
        struct = [int(v) for v in body[2].split("=")[0].split()]
        y = np.array([float(v) for line in body[3:] for v in line.split()])
    except (IndexError, ValueError) as exc:
        raise InterchangeError(f"malformed solution: {exc}") from None
    if nblock != len(sdp.sizes) + 1 or struct[:-1] != list(sdp.sizes):
        raise InterchangeError(
            f"block count mismatch: solution has {nblock} blocks {struct}, program has "
            f"{len(sdp.sizes) + 1}")
    if n != sdp.n or len(y) != n:
        raise InterchangeError(f"expected {sdp.n} moments, got {len(y)}")
    return program.split(y), y


def feasibility(program, y) -> dict:
    """Equality residual and block eigenvalue checks for a candidate moment vector."""
    sdp = program_to_sdp(program) if not isinstance(program, SDP) else program
    y = np.asarray(y, float)
    res = sdp.A @ y - sdp.b
    eigs = [float(np.linalg.eigvalsh(sdp.block(j, y))[0]) for j in range(len(sdp.sizes))]
    scales = [max(np.abs(sdp.block(j, y)).max(), 1e-300) for j in range(len(sdp.sizes))]
    return {
        "max_residual": float(np.max(np.abs(res), initial=0.0)),
        "relative_residual": float(np.linalg.norm(res) / (1.0 + np.linalg.norm(sdp.b))),
        "min_eigenvalue": min(eigs, default=0.0),
        "min_relative_eigenvalue": min((e / s for e, s in zip(eigs, scales)), default=0.0),
        "objective": float(sdp.c @ y),
    }
