import math

import numpy as np
import pytest
import sympy

from brsynth.cli import liouville_check
from brsynth.polyalg import Polynomial, parse_polynomial
from brsynth.problem import ProblemValidationError, SemialgebraicSet, load_problem, normalize
from brsynth.relax import (apply_Lf, apply_Lg, assemble, block_min_eigs, equality_residuals,
                           liouville_rows, slack_rows)
from brsynth.sim import integrate

from conftest import oracle_volume, solved


def di():
    return normalize(load_problem("double_integrator"))


def test_Lf_Lg_double_integrator():
    p = di()
    x1 = Polynomial.variable(p.tx_vars, "x1")
    t = Polynomial.variable(p.tx_vars, "t")
    assert apply_Lf(x1, p) == Polynomial.variable(p.tx_vars, "x2")
    assert [q.is_zero() for q in apply_Lg(x1, p)] == [True]
    assert apply_Lf(t, p) == Polynomial.constant(p.tx_vars, 1.0)
    assert apply_Lg(t, p)[0].is_zero()


def test_Lf_against_sympy(rng):
    p = normalize(load_problem("brockett"))
    syms = sympy.symbols(p.tx_vars)
    from brsynth.polyalg import random_polynomial
    v = random_polynomial(p.tx_vars, 3, rng)

    def sym(q):
        return sum(sympy.Float(c) * sympy.Mul(*[s ** e for s, e in zip(syms, a)]) for a, c in q.terms.items())
    vs = sym(v)
    ref_f = sympy.diff(vs, syms[0]) + sum(sympy.diff(vs, syms[i + 1]) * sym(p.f[i]) for i in range(p.n))
    for pt in rng.normal(size=(5, 4)):
        sub = dict(zip(syms, pt))
        assert float(ref_f.subs(sub)) == pytest.approx(apply_Lf(v, p).evaluate(pt), rel=1e-9, abs=1e-9)
        for j, lg in enumerate(apply_Lg(v, p)):
            ref_g = sum(sympy.diff(vs, syms[i + 1]) * sym(p.g[i][j]) for i in range(p.n))
            assert float(ref_g.subs(sub)) == pytest.approx(lg.evaluate(pt), rel=1e-9, abs=1e-9)


def test_pendulum_operators_along_trajectory():
    p = load_problem("pendulum")
    tx = p.tx_vars
    v = parse_polynomial("x2^2", tx)
    lg = apply_Lg(v, p)[0]
    assert lg.allclose(parse_polynomial("2*x2/0.25", tx))
    lf = apply_Lf(v, p)
    th0 = 2.5
    tr = integrate(p, lambda t, x: np.zeros((len(x), 1)), np.array([np.sin(th0), np.cos(th0), 0.5]),
                   T=1.0, rtol=1e-11, atol=1e-12, max_step=1e-3)
    vals = np.array([v.evaluate(np.r_[t, x]) for t, x in zip(tr.t, tr.x)])
    dt = np.gradient(vals, tr.t)
    ref = np.array([lf.evaluate(np.r_[t, x]) for t, x in zip(tr.t, tr.x)])
    inner = slice(5, -5)
    assert np.max(np.abs(dt[inner] - ref[inner])) <= 1e-4 * max(1.0, np.abs(ref).max())


def test_liouville_row_examples():
    p = di()
    prog = assemble(p, 2)
    rows = {lab: prog.A.getrow(i).toarray().ravel() for i, lab in enumerate(prog.row_labels)}
    mu, m0, mT = prog.measure("mu"), prog.measure("mu0"), prog.measure("muT")
    r1 = rows["liouville:1"]
    assert r1[m0.offset] == 1 and r1[mT.offset] == -1 and np.count_nonzero(r1) == 2
    rt = rows["liouville:t"]
    assert rt[mu.offset] == 1 and rt[mT.offset] == -1 and np.count_nonzero(rt) == 2
    rx = rows["liouville:x1"]
    assert rx[mu.offset + mu.space.index[(0, 0, 1)]] == 1
    assert rx[m0.offset + m0.space.index[(1, 0)]] == 1
    # point target at the origin: the x1 moment of muT is zero
    assert np.count_nonzero(rx) == 2


def test_slack_row_examples():
    p = di()
    prog = assemble(p, 2)
    i = prog.row_labels.index("slack_1:1")
    row = prog.A.getrow(i).toarray().ravel()
    for tag, sign in [("sigma+_1", 1), ("sigma-_1", 1), ("sigmahat_1", 1), ("mu", -1)]:
        assert row[prog.measure(tag).offset] == sign
    j = prog.row_labels.index("lebesgue:1")
    assert prog.b[j] == pytest.approx(math.pi * 1.6 ** 2)


def test_constructed_feasible_point():
    # sigma+ = sigma- = 0, sigmahat = mu, mu0 = muhat0 = lambda / 2 satisfies all slack rows
    p = di()
    prog = assemble(p, 2)
    rows, rhs, labels = slack_rows(p, 2, prog.measures)
    y = np.zeros(prog.nvars)
    rng = np.random.default_rng(0)
    mu, sh = prog.measure("mu"), prog.measure("sigmahat_1")
    y[mu.slice] = rng.normal(size=mu.size)
    y[sh.slice] = y[mu.slice]
    y[prog.measure("mu0").slice] = prog.lebesgue.values / 2
    y[prog.measure("muhat0").slice] = prog.lebesgue.values / 2
    for row, b in zip(rows, rhs):
        assert abs(sum(c * y[i] for i, c in row.items()) - b) <= 1e-12 * max(1.0, abs(b))


def test_inventory_double_integrator_k2():
    prog = assemble(di(), 2)
    assert [m.size for m in prog.measures] == [35, 35, 35, 35, 15, 15, 1]
    inv = prog.block_inventory()
    # moment blocks for every measure, X-localizing for all but muT, tau for the (t, x) measures
    assert [(m, lab) for m, lab, _ in inv if lab == "moment"] == [(t, "moment") for t in
                                                                  ["sigma+_1", "sigma-_1", "sigmahat_1", "mu",
                                                                   "mu0", "muhat0", "muT"]]
    assert {m for m, lab, _ in inv if lab == "X1"} == {"sigma+_1", "sigma-_1", "sigmahat_1", "mu", "mu0", "muhat0"}
    assert {m for m, lab, _ in inv if lab == "tau"} == {"sigma+_1", "sigma-_1", "sigmahat_1", "mu"}
    sizes = {(m, lab): s for m, lab, s in inv}
    assert sizes[("mu", "moment")] == math.comb(3 + 2, 3)
    assert sizes[("mu", "X1")] == sizes[("mu", "tau")] == math.comb(3 + 1, 3)
    assert sizes[("mu0", "moment")] == 6 and sizes[("mu0", "X1")] == 3


def test_free_mode_target_carries_time():
    prog = assemble(normalize(load_problem("brockett")), 2)
    mT = prog.measure("muT")
    assert mT.space.variables == ("t", "x1", "x2", "x3")
    assert mT.size == math.comb(4 + 4, 4)
    labels = {lab for m, lab, _ in prog.block_inventory() if m == "muT"}
    assert labels == {"moment", "T1", "tau"}


def test_pendulum_reduced_counts():
    prog = assemble(normalize(load_problem("pendulum")), 3)
    # (t, s, c, x2) at degree 6 with c-exponent <= 1: c^0 part over 3 variables plus c^1 part
    n_tx = math.comb(3 + 6, 3) + math.comb(3 + 5, 3)
    n_x = math.comb(2 + 6, 2) + math.comb(2 + 5, 2)
    assert prog.measure("mu").size == n_tx
    assert prog.measure("mu0").size == n_x
    sizes = {(m, lab): s for m, lab, s in prog.block_inventory()}
    assert sizes[("mu", "moment")] == math.comb(3 + 3, 3) + math.comb(3 + 2, 3)


def test_full_row_rank_and_determinism():
    p = di()
    a, b = assemble(p, 3), assemble(p, 3)
    assert a.digest() == b.digest()
    A = a.A.toarray()
    assert np.linalg.matrix_rank(A) == A.shape[0]


def test_objective_is_mu0_mass():
    prog = assemble(di(), 2)
    assert np.flatnonzero(prog.c).tolist() == [prog.measure("mu0").offset]


def test_truncation_drops_rows_for_quadratic_dynamics():
    p = normalize(load_problem("pendulum"))
    rows, labels, dropped, tests = liouville_rows(p, 2)
    assert dropped and all(lab.startswith("liouville:") for lab in dropped)
    assert all(sum(a) <= 4 for a in tests)


def test_zero_input_column_rejected():
    p = di()
    g = ((p.g[0][0], ), (Polynomial(p.tx_vars), ))
    with pytest.raises(ProblemValidationError):
        assemble(p.replace(g=g), 2)


def test_assemble_requires_normalized():
    with pytest.raises(ValueError):
        assemble(load_problem("pendulum"), 3)


def test_empirical_liouville_point_target():
    p = load_problem("double_integrator")
    prog, y, rel, eigs, used, _ = liouville_check(p, 2, 200, seed=1)
    assert used == 200
    assert rel.max() <= 1e-2
    assert min(e / s for _, _, e, s in eigs) >= -1e-3


def test_empirical_liouville_ball_target_any_law():
    # an arbitrary saturated law; keep only trajectories that end inside the target ball
    p = load_problem("double_integrator")
    p = p.replace(X_T=SemialgebraicSet((parse_polynomial("0.5^2 - x1^2 - x2^2", p.states),)))

    def law(t, x):
        return np.clip(-2 * x[:, 0] - 2 * x[:, 1], -1, 1)[:, None]
    prog, y, rel, eigs, used, _ = liouville_check(p, 2, 100, seed=3, controller=law)
    assert used > 20
    assert rel.max() <= 1e-2
    assert min(e / s for _, _, e, s in eigs) >= -1e-3


def test_outer_bound_and_residuals_at_optimum():
    p, prog, sol = solved("double_integrator", 2)
    assert sol.objective >= oracle_volume(1.0) - 1e-3
    assert np.abs(equality_residuals(prog, sol.y)).max() <= 1e-6 * max(1.0, np.abs(prog.b).max())
    assert min(block_min_eigs(prog, sol.y)) >= -1e-6
