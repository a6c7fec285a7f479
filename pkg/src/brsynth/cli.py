"""Command-line front end.

Exit codes: 0 success, 2 usage or parse error, 3 solver did not reach an
optimal point (or the reachable set is empty), 4 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import plots
from .extract import (CertificateError, ExtractionError, PolynomialController, extract_controller,
                      level_set_grid, recover_certificate, validate_certificate)
from .moments import UnsupportedGeometry, detect_geometry
from .problem import MODES, ProblemError, load_problem, normalize, validate
from .relax import AssemblyError, assemble, coordinate_scales
from .sdpsolve import (InterchangeError, SolveOptions, export_interchange, feasibility, import_solution,
                       solve)
from .sim import (TargetMetric, bang_bang, empirical_moments, estimate_brs, integrate_batch, make_rng, min_time,
                  sample_X)

log = logging.getLogger("brsynth")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4
DEFAULT_SEED = 0
SUCCESS_STATUSES = ("optimal", "near-optimal")


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# run bookkeeping

def make_run_id(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


class Run:
    """Files produced by one command, all stamped with the run id."""

    def __init__(self, out_dir, command: str, payload: dict):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.payload = payload
        self.id = make_run_id({"command": command, **payload})
        self.files: list[str] = []
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.headline: dict = {}

    def write(self, name: str, text: str, comment: str | None = "#") -> Path:
        if comment:
            text = f"{comment} run-id: {self.id}\n" + text
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.files.append(name)
        return path

    def write_json(self, name: str, obj: dict) -> Path:
        # JSON has no comments: the run id is the first key instead
        body = {"run_id": self.id, **dict(sorted(obj.items()))}
        return self.write(name, json.dumps(body, indent=2, default=_json_default) + "\n", comment=None)

    def finish(self, status: str) -> None:
        entry = {
            "run_id": self.id, "command": self.command, **self.payload,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "status": status, "files": self.files, "headline": self.headline,
        }
        with open(self.out / "manifest.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise CLIError(f"{path}: empty file", EXIT_USAGE)
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# helpers

def _problem(args):
    try:
        p = load_problem(args.problem)
    except FileNotFoundError as exc:
        raise CLIError(f"cannot read problem: {exc}", EXIT_USAGE) from None
    except ProblemError as exc:
        raise CLIError(f"invalid problem: {exc}", EXIT_USAGE) from None
    if getattr(args, "mode", None):
        p = validate(p.replace(mode=args.mode))
    return p


def _options(args) -> SolveOptions:
    return SolveOptions(feas_tol=args.feas_tol, gap_tol=args.gap_tol, max_iter=args.max_iter)


class PlaneSlice:
    """2D coordinates for plotting: the angle of the first ring pair (if any) and
    the next free state, else the first two states; other coordinates at rest."""

    def __init__(self, problem):
        self.problem = problem
        n = problem.n
        self.ring = [(problem.states.index(s), problem.states.index(c)) for s, c in problem.ring_names]
        ring_idx = {i for pr in self.ring for i in pr}
        free = [i for i in range(n) if i not in ring_idx]
        r = coordinate_scales(problem)
        if self.ring:
            s = problem.ring_names[0][0]
            self.names = (f"atan2({s},{problem.ring_names[0][1]})", problem.states[free[0]])
            self.coords = ("angle", free[0])
            self.bounds = ((-math.pi, math.pi), (-r[free[0]], r[free[0]]))
        else:
            self.names = (problem.states[0], problem.states[1])
            self.coords = (0, 1)
            self.bounds = ((-r[0], r[0]), (-r[1], r[1]))

    def embed(self, plane) -> np.ndarray:
        plane = np.atleast_2d(plane)
        x = np.zeros((len(plane), self.problem.n))
        for s, c in self.ring:
            x[:, c] = 1.0
        for k, coord in enumerate(self.coords):
            if coord == "angle":
                s, c = self.ring[0]
                x[:, s] = np.sin(plane[:, k])
                x[:, c] = np.cos(plane[:, k])
            else:
                x[:, coord] = plane[:, k]
        return x

    def project(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 2))
        for k, coord in enumerate(self.coords):
            if coord == "angle":
                s, c = self.ring[0]
                out[:, k] = np.arctan2(x[:, s], x[:, c])
            else:
                out[:, k] = x[:, coord]
        return out


def _target_samples(problem, rng, count=200):
    if problem.X_T.is_point:
        return np.atleast_2d(problem.X_T.point)
    try:
        geo = detect_geometry(problem.X_T.inequalities, problem.ring())
        return geo.sample(rng, count, problem.n)
    except UnsupportedGeometry:
        pass
    pts, _ = sample_X(problem, rng, 50 * count)
    inside = pts[problem.X_T.contains(pts)]
    return inside[:count] if len(inside) else pts[:0]


def _empty_brs_tol(program) -> float:
    return 1e-6 * max(1.0, float(program.lebesgue.values[0]))


# ---------------------------------------------------------------------------
# commands

def cmd_relax(args) -> int:
    p = _problem(args)
    k = args.k or p.k
    prog = assemble(normalize(p), k)
    run = Run(args.out_dir, "relax", {"problem": p.name, "problem_hash": p.digest(), "k": k,
                                       "mode": p.mode})
    stem = f"{p.name}_k{k}"
    header = f"run-id: {run.id}\nproblem {p.name} ({p.digest()}), order {k}, mode {p.mode}"
    run.write(f"{stem}.dat-s", export_interchange(prog, header), comment=None)
    rows = [(meas, lab, size) for meas, lab, size in prog.block_inventory()]
    run.write(f"{stem}_blocks.csv", _csv(rows, ["measure", "block", "size"]))
    run.headline = {"variables": prog.nvars, "equalities": prog.nrows, "blocks": len(prog.blocks),
                    "dropped_rows": len(prog.dropped_rows)}
    run.finish("ok")
    print(f"{stem}: {prog.nvars} moments, {prog.nrows} equality rows, {len(prog.blocks)} PSD blocks, "
          f"{len(prog.dropped_rows)} truncated Liouville rows dropped")
    print(f"run-id {run.id} -> {run.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    p = _problem(args)
    k = args.k or p.k
    seed = args.seed
    norm = normalize(p)
    try:
        prog = assemble(norm, k)
    except (AssemblyError, UnsupportedGeometry) as exc:
        raise CLIError(f"assembly failed: {exc}", EXIT_VALIDATION) from None
    opts = _options(args)
    payload = {"problem": p.name, "problem_hash": p.digest(), "k": k, "mode": p.mode, "seed": seed,
               "solver": {"feas_tol": opts.feas_tol, "gap_tol": opts.gap_tol, "max_iter": opts.max_iter},
               "import": str(args.import_solution) if args.import_solution else None}
    run = Run(args.out_dir, "synth", payload)
    stem = f"{p.name}_k{k}"
    if args.export_sdp:
        header = f"run-id: {run.id}\nproblem {p.name} ({p.digest()}), order {k}, mode {p.mode}"
        run.write(f"{stem}.dat-s", export_interchange(prog, header), comment=None)

    multipliers = None
    if args.import_solution:
        try:
            _, y = import_solution(Path(args.import_solution).read_text(encoding="utf-8"), prog)
        except (OSError, InterchangeError) as exc:
            raise CLIError(f"cannot import solution: {exc}", EXIT_USAGE) from None
        feas = feasibility(prog, y)
        ok = feas["relative_residual"] <= 1e-6 and feas["min_relative_eigenvalue"] >= -1e-6
        status = "imported" if ok else "imported-infeasible"
        report = {"status": status, **feas}
        objective = feas["objective"]
    else:
        sol = solve(prog, opts)
        y, multipliers = sol.y, sol.row_multipliers
        report = sol.report.as_dict()
        status = sol.report.status
        objective = sol.report.primal_objective
    if status in SUCCESS_STATUSES + ("imported",) and objective <= _empty_brs_tol(prog):
        status = "infeasible"
        report["status"] = status
        report["message"] = "optimal value is zero: no initial condition reaches the target"
    run.headline = {"status": status, "p_star": objective, "gap": report.get("gap"),
                    "volume_X": float(prog.lebesgue.values[0])}
    run.write_json(f"{stem}_solve.json", report)
    print(f"{stem}: status {status}, bound on BRS volume p*_{k} = {objective:.10g} "
          f"(volume of X {prog.lebesgue.values[0]:.6g})")
    if status not in SUCCESS_STATUSES + ("imported",):
        run.finish(status)
        print(f"run-id {run.id} -> {run.out}")
        return EXIT_SOLVER

    try:
        ctrl = extract_controller(prog, y)
    except ExtractionError as exc:
        run.finish("extraction-failed")
        raise CLIError(str(exc), EXIT_SOLVER) from None
    run.write(f"{stem}_controller.txt",
              ctrl.to_text(f"feedback law of order {k} for {p.name}, original time and input units;"
                           "\nsaturate to the bounds before use"))
    run.headline["controller_residuals"] = ctrl.residuals

    code = EXIT_OK
    slc = PlaneSlice(p)
    contours = []
    if multipliers is not None:
        cert = recover_certificate(prog, multipliers)
        rng = make_rng(seed)
        xs, _ = sample_X(p, rng, 2000)
        try:
            viol = validate_certificate(cert, xs, _target_samples(p, rng), np.linspace(0, 1, 11),
                                        tol=max(opts.feas_tol, 1e-6))
            cstatus = "valid"
        except CertificateError as exc:
            viol, cstatus = {"error": str(exc)}, "invalid"
            code = EXIT_VALIDATION
        lines = [f"# dual certificate of order {k}; v and p use normalized time t/T in [0, 1]",
                 "# and inputs scaled to [-1, 1]; {w >= 1} outer-approximates the reachable set",
                 f"variables: {', '.join(p.tx_vars)}",
                 f"w = {cert.w.to_text()}", f"v = {cert.v.to_text()}"]
        lines += [f"p.{name} = {pj.to_text()}" for name, pj in zip(p.inputs, cert.p)]
        run.write(f"{stem}_certificate.txt", "\n".join(lines) + "\n")
        integral = cert.integral_w(prog.lebesgue)
        run.headline.update({"certificate": cstatus, "integral_w": integral, "violations": viol})
        print(f"certificate {cstatus}: integral of w = {integral:.10g}")

        grid = level_set_grid(cert.w, slc.bounds, args.resolution, embed=slc.embed, names=slc.names)
        contours = grid.contours
        XX, YY = np.meshgrid(grid.xs, grid.ys)
        run.write(f"{stem}_w_grid.csv",
                  f"# axes {grid.axes[0]},{grid.axes[1]} resolution {len(grid.xs)}x{len(grid.ys)} "
                  f"level {grid.level}\n"
                  + _csv(zip(XX.ravel(), YY.ravel(), grid.values.ravel()), [*grid.axes, "w"]))
        run.write(f"{stem}_contours.csv",
                  _csv([(i, a, b) for i, c in enumerate(contours) for a, b in c],
                       ["contour", *grid.axes]))
    reference = _reference_boundary(p, slc, args.resolution)
    run.write(f"{stem}_w.svg",
              plots.level_set_svg(contours, slc.names, slc.bounds, reference=reference,
                                  title=f"{p.name}: w_{k} = 1", run_id=run.id), comment=None)
    run.finish("ok" if code == EXIT_OK else "certificate-invalid")
    print(f"run-id {run.id} -> {run.out}")
    return code


def _reference_boundary(p, slc, resolution):
    """Analytic boundary for the double integrator, else nothing."""
    if p.name != "double_integrator" or p.mode != "fixed":
        return None
    from skimage import measure
    (x0, x1), (y0, y1) = slc.bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    XX, YY = np.meshgrid(xs, ys)
    tm = min_time(np.column_stack([XX.ravel(), YY.ravel()])).reshape(XX.shape)
    out = []
    for c in measure.find_contours(tm, p.T):
        out.append(np.column_stack([np.interp(c[:, 1], np.arange(len(xs)), xs),
                                    np.interp(c[:, 0], np.arange(len(ys)), ys)]))
    return out


def _controller(args, p):
    try:
        ctrl = PolynomialController.from_text(Path(args.controller).read_text(encoding="utf-8"))
    except (OSError, ExtractionError, ValueError, KeyError) as exc:
        raise CLIError(f"cannot read controller: {exc}", EXIT_USAGE) from None
    if tuple(ctrl.variables) != tuple(p.tx_vars) or ctrl.m != p.m:
        raise CLIError(f"controller variables {ctrl.variables} do not match problem {p.tx_vars}",
                       EXIT_USAGE)
    return ctrl


def cmd_simulate(args) -> int:
    p = _problem(args)
    ctrl = _controller(args, p)
    radii = sorted(args.radius or [0.1, 0.2])
    payload = {"problem": p.name, "problem_hash": p.digest(), "mode": p.mode, "seed": args.seed,
               "samples": args.samples, "radii": radii,
               "controller_hash": hashlib.sha256(Path(args.controller).read_bytes()).hexdigest()[:16]}
    run = Run(args.out_dir, "simulate", payload)
    est = estimate_brs(p, ctrl, args.samples, r=radii, seed=args.seed)
    stem = f"{p.name}_sim_s{args.seed}"
    run.write(f"{stem}_samples.csv", est.to_csv(p.states))
    ndump = min(args.dump, len(est.samples))
    trajs = []
    if ndump:
        res = integrate_batch(p, ctrl, est.samples[:ndump], record=True, rtol=1e-6, atol=1e-8)
        rows = []
        for i, tr in enumerate(res.trajectories):
            for tt, xx, uu in zip(tr.t, tr.x, tr.u):
                rows.append([i, float(tt), *map(float, xx), *map(float, uu)])
            trajs.append(PlaneSlice(p).project(tr.x))
        run.write(f"{stem}_trajectories.csv", _csv(rows, ["trajectory", "t", *p.states, *p.inputs]))
    else:
        run.write(f"{stem}_trajectories.csv", _csv([], ["trajectory", "t", *p.states, *p.inputs]))
    slc = PlaneSlice(p)
    run.write(f"{stem}.svg", plots.level_set_svg(
        [], slc.names, slc.bounds, samples=slc.project(est.samples) if len(est.samples) else None,
        classes=est.classes, trajectories=trajs,
        terminal=slc.project(est.result.x_final) if len(est.samples) and p.mode == "fixed" else None,
        title=f"{p.name}: sampled initial conditions", run_id=run.id), comment=None)
    head = {"samples": len(est.samples)}
    for lvl, r in enumerate(radii):
        vol, lo, hi = est.volume(lvl) if len(est.samples) else (0.0, 0.0, 0.0)
        head[f"fraction_r{r:g}"] = est.fraction(lvl)
        head[f"volume_r{r:g}"] = [vol, lo, hi]
        print(f"r = {r:g}: success fraction {est.fraction(lvl):.4f}, "
              f"volume estimate {vol:.4g} (95% CI {lo:.4g} .. {hi:.4g})")
    print("success criterion: distance of x(T) (fixed) or of the closest approach (free) to the "
          "target center at most r")
    run.headline = head
    run.finish("ok")
    print(f"run-id {run.id} -> {run.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    payload = {"grid": args.grid, "samples": args.samples, "trajectories": args.trajectories,
               "level": args.level}
    run = Run(args.out_dir, "plot", payload)
    contours, axes, bounds = [], ("x1", "x2"), None
    if args.grid:
        from skimage import measure
        header, rows = _read_csv(args.grid)
        try:
            data = np.array(rows, float)
        except ValueError as exc:
            raise CLIError(f"{args.grid}: {exc}", EXIT_USAGE) from None
        if data.ndim != 2 or data.shape[1] < 3:
            raise CLIError(f"{args.grid}: expected columns x, y, w", EXIT_USAGE)
        xs = np.unique(data[:, 0])
        ys = np.unique(data[:, 1])
        vals = data[:, 2].reshape(len(ys), len(xs))
        axes = tuple(header[:2])
        bounds = ((xs[0], xs[-1]), (ys[0], ys[-1]))
        if vals.min() < args.level < vals.max():
            for c in measure.find_contours(vals, args.level):
                contours.append(np.column_stack([np.interp(c[:, 1], np.arange(len(xs)), xs),
                                                 np.interp(c[:, 0], np.arange(len(ys)), ys)]))
        run.write("contours.csv", _csv([(i, a, b) for i, c in enumerate(contours) for a, b in c],
                                       ["contour", *axes]))
    samples = classes = None
    if args.samples:
        header, rows = _read_csv(args.samples)
        if rows:
            samples = np.array([[float(r[0]), float(r[1])] for r in rows])
            cls = [r[header.index("class")] for r in rows]
            radii = sorted({c for c in cls if c != "miss"}, key=lambda s: float(s[3:]))
            classes = np.array([radii.index(c) if c != "miss" else 99 for c in cls])
    trajs = []
    if args.trajectories:
        header, rows = _read_csv(args.trajectories)
        by: dict[str, list] = {}
        for r in rows:
            by.setdefault(r[0], []).append([float(r[2]), float(r[3])])
        trajs = [np.array(v) for _, v in sorted(by.items(), key=lambda kv: int(kv[0]))]
    run.write(args.name, plots.level_set_svg(contours, axes, bounds, samples=samples, classes=classes,
                                             trajectories=trajs, run_id=run.id), comment=None)
    run.headline = {"contours": len(contours), "trajectories": len(trajs)}
    run.finish("ok")
    print(f"{len(contours)} contour(s), {len(trajs)} trajectory overlay(s) -> {run.out / args.name}")
    return EXIT_OK


def row_residuals(prog, y):
    """Relative equality residuals of a moment vector.

    The primary measure divides by the size each term can have: coefficient
    times the measure's mass times the magnitude bound of the monomial on the
    bounding set.  The second, ``|A| |y| + |b|``, degenerates when moments
    vanish by symmetry and is reported for information only.
    """
    resid = prog.A @ y - prog.b
    bound = np.zeros(prog.nvars)
    for meas in prog.measures:
        bound[meas.slice] = abs(y[meas.offset]) * prog.var_scale[meas.slice]
    rel = np.abs(resid) / np.maximum(abs(prog.A) @ bound + np.abs(prog.b), 1e-300)
    rel_terms = np.abs(resid) / np.maximum(abs(prog.A) @ np.abs(y) + np.abs(prog.b), 1e-300)
    return rel, rel_terms


def liouville_check(p, k: int, samples: int, seed: int, controller=None, horizon_fraction: float = 0.9):
    """Empirical occupation moments of simulated trajectories against the relaxation rows.

    Initial conditions are uniform in X; for the double integrator (default law:
    smoothed minimum-time feedback) only those with minimum time at most
    ``horizon_fraction * T`` are kept.  Each kept trajectory carries weight
    ``vol(X) / draws`` so ``mu0`` estimates Lebesgue measure on the kept set.
    """
    prog = assemble(normalize(p), k)
    rng = make_rng(seed)
    if controller is None:
        if p.n != 2 or p.m != 1:
            raise CLIError("the default check law is the double integrator's bang-bang feedback; "
                           "pass --controller for other systems", EXIT_USAGE)
        controller = lambda t, x: bang_bang(t, x, 1e-3)  # noqa: E731
        select = lambda x0: min_time(x0) <= horizon_fraction * p.T  # noqa: E731
    else:
        select = None
    chunks, vol = [], None
    while True:
        pts, vol = sample_X(p, rng, max(samples, 1000))
        chunks.append(pts)
        allpts = np.concatenate(chunks)
        sel = select(allpts) if select is not None else np.ones(len(allpts), bool)
        if sel.sum() >= samples:
            break
    idx = np.flatnonzero(sel)[:samples]
    draws = int(idx[-1]) + 1 if len(idx) else len(allpts)
    res = integrate_batch(p, controller, allpts[idx], record=True, max_step=2e-3 * p.T)
    if select is None:
        good = [tr for tr in res.trajectories if tr.flag in ("reached-final", "reached")]
    else:
        good = res.trajectories
    if p.mode == "free":
        metric = TargetMetric(p)
        for tr in good:
            stop = int(np.argmin(metric(tr.x))) + 1
            tr.t, tr.x, tr.u = tr.t[:stop], tr.x[:stop], tr.u[:stop]
    w = vol / draws
    y = empirical_moments(prog, good, [w] * len(good), p)
    rel, rel_terms = row_residuals(prog, y)
    eigs = []
    for blk in prog.blocks:
        M = blk.instantiate(y)
        eigs.append((blk.measure, blk.label, float(np.linalg.eigvalsh(M)[0]),
                     float(max(np.abs(np.diag(M)).max(), 1e-300))))
    return prog, y, rel, eigs, len(good), rel_terms


def cmd_check(args) -> int:
    p = _problem(args)
    k = args.k or 2
    ctrl = _controller(args, p) if args.controller else None
    payload = {"problem": p.name, "problem_hash": p.digest(), "k": k, "seed": args.seed,
               "samples": args.samples}
    run = Run(args.out_dir, "check", payload)
    prog, y, rel, eigs, used, rel_terms = liouville_check(p, k, args.samples, args.seed, ctrl)
    stem = f"{p.name}_check_k{k}"
    run.write(f"{stem}_rows.csv", _csv(zip(prog.row_labels, rel, rel_terms),
                                       ["row", "relative_residual", "relative_to_terms"]))
    run.write(f"{stem}_blocks.csv", _csv([(m, lab, e, s, e / s) for m, lab, e, s in eigs],
                                         ["measure", "block", "min_eigenvalue", "scale", "relative"]))
    worst_row = float(rel.max(initial=0.0))
    worst_eig = min(e / s for _, _, e, s in eigs)
    ok = worst_row <= args.row_tol and worst_eig >= -args.eig_tol
    run.headline = {"trajectories": used, "max_relative_residual": worst_row,
                    "min_relative_eigenvalue": worst_eig, "pass": ok}
    run.finish("ok" if ok else "failed")
    print(f"{used} trajectories: max relative row residual {worst_row:.3g} (tol {args.row_tol:g}), "
          f"min relative block eigenvalue {worst_eig:.3g} (tol -{args.eig_tol:g}): "
          f"{'PASS' if ok else 'FAIL'}")
    print(f"run-id {run.id} -> {run.out}")
    return EXIT_OK if ok else EXIT_VALIDATION


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brsynth", description="Reachable-set controller synthesis "
                                 "by occupation-measure moment relaxations.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("problem", help="problem file or benchmark name")
        sp.add_argument("--out-dir", default="out", help="directory for produced files (default: out)")
        if seed:
            sp.add_argument("--seed", type=int, default=None,
                            help=f"random seed (default {DEFAULT_SEED})")

    def relax_opts(sp):
        sp.add_argument("--k", type=int, default=None, help="relaxation order (default: from the problem file)")
        sp.add_argument("--mode", choices=MODES, default=None, help="override the final-time mode")

    sp = sub.add_parser("relax", help="assemble the relaxation and export it")
    common(sp, seed=False)
    relax_opts(sp)
    sp.set_defaults(func=cmd_relax)

    sp = sub.add_parser("synth", help="solve, extract the controller and the certificate")
    common(sp)
    relax_opts(sp)
    sp.add_argument("--feas-tol", type=float, default=1e-7)
    sp.add_argument("--gap-tol", type=float, default=1e-7)
    sp.add_argument("--max-iter", type=int, default=200)
    sp.add_argument("--export-sdp", action="store_true", help="also write the interchange file")
    sp.add_argument("--import-solution", default=None,
                    help="use moments from an external solver instead of solving")
    sp.add_argument("--resolution", type=int, default=201, help="level-set grid points per axis")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("simulate", help="Monte-Carlo estimate of the controlled reachable set")
    common(sp)
    sp.add_argument("--mode", choices=MODES, default=None)
    sp.add_argument("--controller", required=True, help="controller file written by synth")
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--radius", type=float, action="append",
                    help="success radius; repeat for several classes (default 0.1 and 0.2)")
    sp.add_argument("--dump", type=int, default=20, help="number of trajectories to write")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("plot", help="SVG from grid/sample/trajectory files")
    sp.add_argument("--grid", default=None)
    sp.add_argument("--samples", default=None)
    sp.add_argument("--trajectories", default=None)
    sp.add_argument("--level", type=float, default=1.0)
    sp.add_argument("--name", default="plot.svg")
    sp.add_argument("--out-dir", default="out")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("check", help="empirical Liouville oracle on simulated trajectories")
    common(sp)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--controller", default=None)
    sp.add_argument("--row-tol", type=float, default=1e-2)
    sp.add_argument("--eig-tol", type=float, default=1e-3)
    sp.set_defaults(func=cmd_check, mode=None)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "seed"):
        if args.seed is None:
            args.seed = DEFAULT_SEED
            print(f"seed not given, using default {DEFAULT_SEED}")
        else:
            print(f"seed {args.seed}")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
