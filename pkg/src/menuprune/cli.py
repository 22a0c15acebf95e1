"""Batch front-end: build instances, solve, prune, and export CSV artifacts.

All tabular outputs are RFC-4180 CSV with '.' decimals and LF line endings;
floats are written with repr so reruns of the same configuration produce
identical files (wall-clock columns excepted).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import elasticity, pruning, solver
from .model import BasisFunction, Menu, revenue
from .pruning import build_complex, evaluate_losses, prune_linf, prune_local

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

GREEDY_METRICS = ("linf", "l1", "jbased")
ALL_METRICS = GREEDY_METRICS + ("onestep",)

DEFAULT_CONFIG = {
    "grid_n": 20,
    "dedup_tol": 1e-6,
    "fw_tol": 1e-5,
    "fw_max_iter": 5000,
    "coarse_grid_n": None,
    "targets": [25, 10],
    "metrics": list(ALL_METRICS),
    "onestep_sizes": None,
    "seed": 0,
    "protect_reservation": False,
    "instance": {
        "eta": -0.1,
        "p_check": 140.0,
        "z_check": [0.174, 0.19],
        "c2": 0.01,
        "p_bounds": [0.0, 500.0],
        "z_bounds": {"lower": [0.05, 0.05], "upper": [0.5, 0.5]},
        "poset": [],
        "rho_rect": [[0.6, 1.8], [1.4, 4.2]],
        "reservation": None,
    },
}


class CliError(RuntimeError):
    def __init__(self, message, code=EXIT_FAIL):
        super().__init__(message)
        self.code = code


def load_config(path=None, overrides=None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise CliError(f"config file not found: {p}", EXIT_USAGE)
        with open(p, "r", encoding="utf-8") as fh:
            user = json.load(fh)
        for key, val in user.items():
            if key == "instance" and isinstance(val, dict):
                cfg["instance"].update(val)
            else:
                cfg[key] = val
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    return cfg


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (int, float, np.floating,
                                                  np.integer)) else v
                        for v in row])


def _ensure_outdir(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_solution_menu(out_dir: Path, instance, dedup_tol: float) -> Menu:
    path = out_dir / "solution.csv"
    if not path.exists():
        raise CliError(f"solution file not found: {path} (run solve first)",
                       EXIT_USAGE)
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    sol = solver.MenuSolution(
        points=rows[:, 1:3], u=rows[:, 3], q=rows[:, 4:6], p=rows[:, 6],
        value=float("nan"), fw_gap=float("nan"), iterations=0,
        oracle_calls=0, converged=True)
    return solver.solution_menu(sol, instance, dedup_tol)


def _reservation_ids(menu: Menu) -> set:
    inst = menu.instance
    g_tol = 1e-6 * float(np.max(np.abs(inst.alpha)))
    p_tol = 1e-6 * max(1.0, abs(inst.p_ref))
    out = set()
    for b in menu.basis:
        if (np.max(np.abs(b.g - inst.alpha)) <= g_tol
                and abs(b.p - inst.p_ref) <= p_tol):
            out.add(b.id)
    return out


def cmd_solve(cfg: dict, out_dir) -> int:
    out = _ensure_outdir(out_dir)
    inst = elasticity.instance_from_dict(cfg["instance"])
    n_grid = int(cfg["grid_n"])
    t0 = time.perf_counter()
    sol = solver.solve_instance(inst, n_grid, tol=float(cfg["fw_tol"]),
                                max_iter=int(cfg["fw_max_iter"]),
                                coarse_n=cfg.get("coarse_grid_n"))
    dt = time.perf_counter() - t0
    rows = [
        (i, sol.points[i, 0], sol.points[i, 1], sol.u[i], sol.q[i, 0],
         sol.q[i, 1], sol.p[i])
        for i in range(len(sol.points))
    ]
    write_csv(out / "solution.csv", ["i", "x1", "x2", "u", "q1", "q2", "p"],
              rows)
    menu = solver.solution_menu(sol, inst, float(cfg["dedup_tol"]))
    cx = build_complex(menu)
    revenue_ref = revenue(menu, cx)
    (out / "jref.txt").write_text(f"{revenue_ref!r}\n", encoding="utf-8")
    print(f"solve: grid {n_grid}x{n_grid}, objective {sol.value:.6f}, "
          f"gap {sol.fw_gap:.3e}, {sol.iterations} iterations, "
          f"{len(menu)} distinct contracts, revenue_ref {revenue_ref:.6f}, "
          f"{dt:.1f}s")
    print(f"residuals: ic {sol.residuals['ic']:.2e} "
          f"participation {sol.residuals['participation']:.2e} "
          f"price {sol.residuals['price']:.2e} "
          f"quality {sol.residuals['quality']:.2e}")
    if not sol.converged:
        print("solver failed to reach the duality-gap tolerance",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _read_jref(out: Path) -> float:
    path = out / "jref.txt"
    if not path.exists():
        raise CliError(f"missing {path} (run solve first)", EXIT_USAGE)
    return float(path.read_text().strip())


def _export_cells(menu: Menu, path):
    cx = build_complex(menu)
    rows = []
    for cid in sorted(cx.live):
        poly = cx.cells[cid].polygon
        for k, v in enumerate(poly.vertices):
            rows.append((cid, k, v[0], v[1]))
    write_csv(path, ["cell_id", "vertex", "x1", "x2"], rows)


def _greedy_outputs(menu, metric, targets, out, root, cfg,
                    compare_global=False):
    n_min = min(targets)
    protected = (_reservation_ids(menu) if cfg.get("protect_reservation")
                 else set())
    if metric == "linf":
        pruned, trace = prune_linf(menu, n_min, protected=protected)
    else:
        pruned, trace = prune_local(menu, n_min, metric, protected=protected)
    order = [s.removed_id for s in trace.steps]
    j_ref = _read_jref(root)
    loss_rows = evaluate_losses(menu, order, j_ref)
    by_t = {r["t"]: r for r in loss_rows}

    # per-iteration trace with losses merged in
    t_rows = []
    for s in trace.steps:
        lr = by_t.get(s.size_after, {})
        t_rows.append((s.iteration, s.removed_id, s.nu,
                       lr.get("j_lifted", float("nan")),
                       lr.get("loss", float("nan")),
                       s.lp_solves_cum, s.vrep_calls_cum, s.ms_cum))
    write_csv(out / "trace.csv",
              ["iteration", "removed_id", "nu", "J_lifted", "loss",
               "lp_solves_cum", "vrep_calls_cum", "ms_cum"], t_rows)

    loss_table = [(r["t"], r["loss"], r["shift"],
                   _trace_ms_at(trace, r["t"])) for r in loss_rows]
    headers = ["t", "loss", "shift", "ms_cum"]
    if compare_global:
        t0 = time.perf_counter()
        if metric == "linf":
            _, g_trace = prune_linf(menu, n_min, protected=protected,
                                    global_recompute=True)
        else:
            _, g_trace = prune_local(menu, n_min, metric, protected=protected,
                                     global_recompute=True)
        global_ms = (time.perf_counter() - t0) * 1e3
        seq_local = [s.removed_id for s in trace.steps]
        seq_global = [s.removed_id for s in g_trace.steps]
        if seq_local != seq_global:
            print(f"warning: {metric} local and global removal orders differ",
                  file=sys.stderr)
        by_t_global = {s.size_after: s.ms_cum for s in g_trace.steps}
        loss_table = [row + (by_t_global.get(row[0], float("nan")),)
                      for row in loss_table]
        headers.append("ms_cum_global")
        print(f"{metric}: local {trace.wall_ms:.0f}ms vs global "
              f"{global_ms:.0f}ms (x{global_ms / max(trace.wall_ms, 1e-9):.2f})")
    write_csv(out / "losses.csv", headers, loss_table)

    # nested menus and their cells at each requested size
    removed_at = {}
    alive = {b.id for b in menu.basis}
    sizes = {len(alive): set(alive)}
    for s in trace.steps:
        alive = alive - {s.removed_id}
        sizes[len(alive)] = set(alive)
    for n in sorted(set(targets), reverse=True):
        if n not in sizes:
            raise CliError(f"descent never reached size {n}")
        sub = menu.without({b.id for b in menu.basis} - sizes[n])
        write_csv(out / f"menu_{n}.csv", ["id", "p", "q1", "q2"],
                  [(b.id, b.p, *menu.instance.quality_of(b.g)) for b in
                   sorted(sub.basis, key=lambda bb: bb.id)])
        _export_cells(sub, out / f"cells_{n}.csv")
    print(f"{metric}: pruned {len(menu)} -> {n_min}; "
          f"m_max {trace.m_max}, lp_solves {trace.lp_solves}, "
          f"vrep_calls {trace.vrep_calls}")
    return trace


def _trace_ms_at(trace, size_after):
    for s in trace.steps:
        if s.size_after == size_after:
            return s.ms_cum
    return 0.0


def _onestep_outputs(menu, targets, sizes_requested, out, root, cfg):
    j_ref = _read_jref(root)
    ranking = pruning.onestep_ranking(menu, "jbased")
    sizes = sizes_requested or sorted(set(
        list(targets) + [len(menu)]
        + list(np.unique(np.geomspace(1, len(menu), 24).astype(int)))))
    loss_rows = []
    for n in sorted(set(s for s in sizes if 1 <= s <= len(menu)),
                    reverse=True):
        keep = set(ranking[:n])
        sub = menu.without({b.id for b in menu.basis} - keep)
        rows = evaluate_losses(sub, [], j_ref)
        loss_rows.append((n, rows[0]["loss"], rows[0]["shift"]))
        if n in targets:
            write_csv(out / f"menu_{n}.csv", ["id", "p", "q1", "q2"],
                      [(b.id, b.p, *menu.instance.quality_of(b.g))
                       for b in sorted(sub.basis, key=lambda bb: bb.id)])
            _export_cells(sub, out / f"cells_{n}.csv")
    write_csv(out / "losses.csv", ["t", "loss", "shift"], loss_rows)
    print(f"onestep: ranked once, {len(loss_rows)} sizes evaluated")


def cmd_prune(cfg: dict, out_dir, metrics=None, targets=None,
              compare_global=False) -> int:
    out = _ensure_outdir(out_dir)
    inst = elasticity.instance_from_dict(cfg["instance"])
    menu = _load_solution_menu(out, inst, float(cfg["dedup_tol"]))
    metrics = metrics or cfg["metrics"]
    targets = [int(t) for t in (targets or cfg["targets"])]
    bad = [m for m in metrics if m not in ALL_METRICS]
    if bad:
        raise CliError(f"unknown metrics: {bad}", EXIT_USAGE)
    if min(targets) < 1:
        raise CliError("target sizes must be at least 1", EXIT_USAGE)
    for metric in metrics:
        mdir = _ensure_outdir(out / metric)
        if metric == "onestep":
            _onestep_outputs(menu, targets, cfg.get("onestep_sizes"), mdir,
                             out, cfg)
        else:
            _greedy_outputs(menu, metric, targets, mdir, out, cfg,
                            compare_global)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="menuprune",
        description="optimal contract menus and greedy basis pruning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve the infinite-size menu")
    p_solve.add_argument("-c", "--config")
    p_solve.add_argument("-o", "--out", default="out")
    p_solve.add_argument("--grid-n", type=int, dest="grid_n")
    p_solve.add_argument("--fw-tol", type=float, dest="fw_tol")
    p_solve.add_argument("--fw-max-iter", type=int, dest="fw_max_iter")

    p_prune = sub.add_parser("prune", help="greedy descent to n contracts")
    p_prune.add_argument("-c", "--config")
    p_prune.add_argument("-o", "--out", default="out")
    p_prune.add_argument("--metric", choices=ALL_METRICS)
    p_prune.add_argument("-n", type=int, dest="target")
    p_prune.add_argument("--compare-global", action="store_true")
    p_prune.add_argument("--protect-reservation", action="store_true")

    p_sweep = sub.add_parser("sweep", help="all metrics, full loss curves")
    p_sweep.add_argument("-c", "--config")
    p_sweep.add_argument("-o", "--out", default="out")
    p_sweep.add_argument("--metrics")
    p_sweep.add_argument("-n", type=int, dest="target")
    p_sweep.add_argument("--compare-global", action="store_true")

    p_val = sub.add_parser("validate", help="randomized property checks")
    p_val.add_argument("--seed", type=int, default=0)
    p_val.add_argument("--inject-fault", choices=["skip-local-refresh"])

    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            cfg = load_config(args.config, {
                "grid_n": args.grid_n, "fw_tol": args.fw_tol,
                "fw_max_iter": args.fw_max_iter})
            return cmd_solve(cfg, args.out)
        if args.command == "prune":
            cfg = load_config(args.config)
            if args.protect_reservation:
                cfg["protect_reservation"] = True
            metrics = [args.metric] if args.metric else None
            targets = [args.target] if args.target else None
            return cmd_prune(cfg, args.out, metrics, targets,
                             args.compare_global)
        if args.command == "sweep":
            cfg = load_config(args.config)
            metrics = (args.metrics.split(",") if args.metrics
                       else cfg["metrics"])
            targets = [args.target] if args.target else cfg["targets"]
            return cmd_prune(cfg, args.out, metrics, targets,
                             args.compare_global)
        if args.command == "validate":
            from .validate import run_validation
            return run_validation(seed=args.seed,
                                  inject_fault=args.inject_fault)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (solver.SolverError, pruning.PruningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
