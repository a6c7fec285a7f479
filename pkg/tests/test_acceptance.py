"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
import math
import os
import time

import numpy as np
import pytest
import scipy.sparse as sp

from brsynth.extract import extract_controller, recover_certificate
from brsynth.problem import load_problem, normalize, validate
from brsynth.relax import assemble
from brsynth.sdpsolve import export_interchange, feasibility, read_interchange, solve
from brsynth.cli import liouville_check
from brsynth.sim import estimate_brs, integrate_batch, make_rng, min_time, sample_X

from conftest import oracle_volume, solved


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok
    return emit


def oracle_samples(count, T=1.0, seed=0, frac=1.0):
    """Uniform samples of {min_time <= frac * T} inside X."""
    p = load_problem("double_integrator")
    rng = make_rng(seed)
    out = []
    while sum(len(o) for o in out) < count:
        pts, _ = sample_X(p, rng, 20000)
        out.append(pts[min_time(pts) <= frac * T])
    return np.concatenate(out)[:count]


def test_criterion_1_containment(report):
    pts = oracle_samples(10_000, seed=1)
    fracs = []
    for k in (2, 3, 4):
        _, prog, sol = solved("double_integrator", k)
        cert = recover_certificate(prog, sol.row_multipliers)
        fracs.append(float(np.mean(cert.w.evaluate(pts) >= 1 - 1e-3)))
    ok = min(fracs) >= 0.999
    report(1, ok, "fraction of 10^4 oracle samples with w_k >= 1 - 1e-3 for k=2,3,4: "
           + ", ".join(f"{f:.4f}" for f in fracs) + " (need >= 0.999)")
    assert ok


def test_criterion_2_monotone(report):
    ps, ints = [], []
    for k in (2, 3, 4):
        _, prog, sol = solved("double_integrator", k)
        ps.append(sol.objective)
        ints.append(recover_certificate(prog, sol.row_multipliers).integral_w(prog.lebesgue))
    vol = oracle_volume(1.0)
    gaps = [v - vol for v in ps]
    ok = (all(ps[i] >= ps[i + 1] * (1 - 1e-6) for i in range(2))
          and all(ints[i] >= ints[i + 1] - 1e-6 * abs(ints[i]) for i in range(2))
          and ps[2] >= vol and gaps[2] < gaps[0])
    report(2, ok, f"p* = {ps[0]:.6f} >= {ps[1]:.6f} >= {ps[2]:.6f}, int w = "
           + ", ".join(f"{v:.6f}" for v in ints) + f", oracle volume {vol:.5f}")
    assert ok


def test_criterion_3_controller(report):
    p, prog, sol = solved("double_integrator", 4)
    ctrl = extract_controller(prog, sol.y)
    # policy thresholds (90 % of samples within 0.1) are derived, not taken from a table
    x0 = oracle_samples(500, seed=3, frac=0.9)
    res = integrate_batch(p, ctrl, x0, rtol=1e-6, atol=1e-8)
    frac = float(np.mean((res.flags != "left-X") & (np.linalg.norm(res.x_final, axis=1) <= 0.1)))
    ok = frac >= 0.90
    report(3, ok, f"k=4 saturated controller: {frac:.3f} of 500 interior samples end within 0.1 (need >= 0.90)")
    assert ok


def test_criterion_4_liouville(report):
    p = load_problem("double_integrator")
    prog, y, rel, eigs, used, _ = liouville_check(p, 2, 200, seed=0)
    worst_eig = min(e / s for _, _, e, s in eigs)
    ok = used == 200 and rel.max() <= 1e-2 and worst_eig >= -1e-3
    report(4, ok, f"{used} trajectories, max relative row residual {rel.max():.2e} (<= 1e-2), "
           f"min scaled block eigenvalue {worst_eig:.2e} (>= -1e-3)")
    assert ok


def external_optimum(sdp):
    """Reference value from CVXOPT's SDP solver fed the interchange data."""
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import solvers

    def sparse(M):
        M = sp.coo_matrix(M)
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)
    # column equilibration computed from the file data alone
    absA = abs(sdp.A).tocsc()
    absP = [abs(p).tocsc() for p in sdp.phis]
    D = np.ones(sdp.n)
    for _ in range(20):
        mx = np.zeros(sdp.n)
        for M in [absA] + absP:
            mx = np.maximum(mx, (M @ sp.diags(D)).max(axis=0).toarray().ravel())
        mx[mx == 0] = 1
        D = D / np.sqrt(mx)
    Dm = sp.diags(D)
    opts = dict(show_progress=False, abstol=1e-7, reltol=1e-7, feastol=1e-8, maxiters=200)
    res = solvers.sdp(cvxopt.matrix(-(sdp.c * D)), Gs=[sparse(-(p @ Dm)) for p in sdp.phis],
                      hs=[cvxopt.matrix(0.0, (s, s)) for s in sdp.sizes],
                      A=sparse(sdp.A @ Dm), b=cvxopt.matrix(sdp.b), options=opts)
    return res["status"], np.array(res["x"]).ravel() * D


def test_criterion_5_external_solver(report):
    parts, ok = [], True
    for k in (2, 3):
        _, prog, sol = solved("double_integrator", k)
        sdp = read_interchange(export_interchange(prog))
        status, y = external_optimum(sdp)
        ext = float(sdp.c @ y)
        rel = abs(ext - sol.objective) / abs(ext)
        feas = feasibility(prog, y)
        ok &= (status == "optimal" and rel <= 1e-5 and sol.report.gap <= 1e-7
               and feas["relative_residual"] <= 1e-6)
        parts.append(f"P_{k}: internal {sol.objective:.8f}, external {ext:.8f}, rel diff {rel:.1e}, "
                     f"internal gap {sol.report.gap:.1e}")
    report(5, ok, "; ".join(parts))
    assert ok


def test_criterion_6_brockett(report):
    p = load_problem("brockett")
    t0 = time.perf_counter()
    prog = assemble(normalize(p), 3)
    sol = solve(prog)
    elapsed = time.perf_counter() - t0
    ctrl = extract_controller(prog, sol.y)
    black = estimate_brs(p, ctrl, 1000, r=0.1, seed=0)
    grey = estimate_brs(p, ctrl, 1000, r=0.2, seed=0)
    b, g = black.success(), grey.success()
    ok = (sol.report.status in ("optimal", "near-optimal") and elapsed <= 1800
          and b.any() and bool(np.all(g[b])))
    report(6, ok, f"k=3 {sol.report.status} in {elapsed:.1f} s, success fraction r=0.1: {b.mean():.3f}, "
           f"r=0.2: {g.mean():.3f}, black within grey: {bool(np.all(g[b]))}")
    assert ok


def test_criterion_7_pendulum(report):
    p = load_problem("pendulum")
    pn = normalize(p)
    prog = assemble(pn, 3)
    # (t, s, c, x2) and (s, c, x2) at degree 6, c-exponent at most one
    counts_ok = (prog.measure("mu").size == math.comb(9, 3) + math.comb(8, 3)
                 and prog.measure("mu0").size == math.comb(8, 2) + math.comb(7, 2))
    sol = solve(prog)
    ctrl = extract_controller(prog, sol.y)
    rng = make_rng(0)
    th = rng.uniform(-0.5, 0.5, 400)
    om = rng.uniform(-1.0, 1.0, 400)
    x0 = np.column_stack([np.sin(th), np.cos(th), om])
    res = integrate_batch(p, ctrl, x0, rtol=1e-8, atol=1e-10)
    frac = float(np.mean(res.flags == "reached"))
    base = integrate_batch(p, lambda t, x: np.zeros((len(x), 1)), x0, rtol=1e-8, atol=1e-10)
    frac0 = float(np.mean(base.flags == "reached"))
    # the whole cone must be swung up; allow 1 % for samples on the cone's edge
    ok = counts_ok and sol.report.status == "optimal" and frac >= 0.99
    report(7, ok, f"reduced moment counts match: {counts_ok}, status {sol.report.status}, "
           f"p*_3 = {sol.objective:.3f} of vol(X) {prog.lebesgue.mass:.3f}, cone swing-up {frac:.3f} "
           f"(u = 0 gives {frac0:.3f}; need >= 0.99)")
    assert ok


def test_criterion_8_stretch_structure(report):
    parts, ok = [], True
    for name in ("quadrotor", "satellite"):
        p = validate(load_problem(name))
        prog = assemble(normalize(p), 2)
        good = p.stretch and prog.nrows > 0 and len(prog.blocks) == len(prog.block_inventory())
        ok &= good
        parts.append(f"{name}: n={p.n}, m={p.m}, {prog.nvars} moments, {prog.nrows} rows, "
                     f"{len(prog.blocks)} blocks")
    report(8, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("BRSYNTH_SLOW"), reason="set BRSYNTH_SLOW=1 for the satellite k=2 solve")
def test_criterion_8_satellite_solve(report):
    p = load_problem("satellite")
    t0 = time.perf_counter()
    sol = solve(assemble(normalize(p), 2))
    ok = sol.report.status in ("optimal", "near-optimal")
    report(8, ok, f"satellite k=2 {sol.report.status}, p* = {sol.objective:.4f}, "
           f"{time.perf_counter() - t0:.0f} s")
    assert ok
