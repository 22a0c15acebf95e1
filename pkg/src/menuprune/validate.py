"""Randomized self-checks: local-update equivalence, dual invariance,
neighborhood locality and work-counter bounds on synthetic menus.

Each check prints one JSON line with a pass flag and details, so the output
is machine readable; the process exit code is zero only when all pass.
"""

from __future__ import annotations

import json

import numpy as np

from . import geometry, lpsolver
from .geometry import HalfPlane
from .model import BasisFunction, Instance, Menu
from .pruning import (
    build_complex,
    compute_futures,
    importance_l1,
    importance_linf,
    importance_revenue,
    prune_linf,
    prune_local,
    _aggregates,
)


def _toy_instance(c2=0.1):
    dom = geometry.rectangle(0.0, 1.0, 0.0, 1.0)
    big = 1e6
    planes = [HalfPlane(np.array([1.0, 0.0]), big),
              HalfPlane(np.array([-1.0, 0.0]), big),
              HalfPlane(np.array([0.0, 1.0]), big),
              HalfPlane(np.array([0.0, -1.0]), big)]
    return Instance(domain=dom, alpha=np.array([1.0, 1.0]), eta=0.5,
                    z_ref=np.array([1.0, 1.0]), p_ref=0.0, cost_coeff=c2,
                    p_bounds=(-1e4, 1e4), quality_set=planes,
                    reservation=(np.array([0.0, 0.0]), -1e6))


def _random_menu(rng, n_contracts, instance):
    pts = rng.uniform(0.05, 0.95, size=(n_contracts, 2))
    grads = np.clip(2.0 * pts + rng.normal(0.0, 0.08, size=(n_contracts, 2)),
                    0.05, 2.5)
    vals = np.sum(pts * pts, axis=1) + rng.normal(0.0, 0.03, size=n_contracts)
    icpts = vals - np.sum(grads * pts, axis=1)
    return Menu([BasisFunction(grads[i], icpts[i], i)
                 for i in range(n_contracts)], instance)


def check_oracle_equivalence(seed: int, inject_fault: str | None):
    """Removal sequences of the local descents match full recomputation."""
    rng = np.random.default_rng(seed)
    inst = _toy_instance()
    mismatches = []
    fault = inject_fault == "skip-local-refresh"
    for trial in range(5):
        menu = _random_menu(rng, int(rng.integers(10, 18)), inst)
        for metric in ("l1", "jbased"):
            _, tr_local = prune_local(menu, 1, metric,
                                      _skip_local_refresh=fault)
            _, tr_ref = prune_local(menu, 1, metric, global_recompute=True)
            a = [s.removed_id for s in tr_local.steps]
            b = [s.removed_id for s in tr_ref.steps]
            if a != b:
                mismatches.append((trial, metric))
        _, tr_local = prune_linf(menu, 1)
        _, tr_ref = prune_linf(menu, 1, global_recompute=True)
        if [s.removed_id for s in tr_local.steps] != [
                s.removed_id for s in tr_ref.steps]:
            mismatches.append((trial, "linf"))
    return {
        "check": "oracle_equivalence_local_vs_global",
        "pass": not mismatches,
        "mismatches": mismatches,
        "fault_injected": bool(fault),
    }


def check_dual_invariance(seed: int):
    """Dropping rows with zero multiplier and slack leaves the value."""
    rng = np.random.default_rng(seed + 1)
    inst = _toy_instance()
    solved = 0
    worst = 0.0
    while solved < 120:
        menu = _random_menu(rng, int(rng.integers(6, 14)), inst)
        basis = sorted(menu.basis, key=lambda b: b.id)
        gi = np.array([b.g for b in basis])
        ci = np.array([b.intercept for b in basis])
        for idx in range(len(basis)):
            others = [k for k in range(len(basis)) if k != idx]
            A = np.zeros((len(others) + 4, 3))
            b_vec = np.zeros(len(others) + 4)
            for r, k in enumerate(others):
                A[r, 0:2] = gi[k] - gi[idx]
                A[r, 2] = 1.0
                b_vec[r] = ci[idx] - ci[k]
            A[-4:, 0:2] = [[1, 0], [-1, 0], [0, 1], [0, -1]]
            b_vec[-4:] = [1.0, 0.0, 1.0, 0.0]
            lp = lpsolver.LinearProgram([0.0, 0.0, 1.0], A, b_vec)
            sol = lpsolver.solve_lp(lp)
            if sol.status != lpsolver.OPTIMAL:
                continue
            solved += 1
            slack = b_vec - A @ sol.primal
            for r in range(len(others)):
                if sol.duals[r] == 0.0 and slack[r] > 1e-8:
                    keep = [k for k in range(A.shape[0]) if k != r]
                    red = lpsolver.solve_lp(
                        lpsolver.LinearProgram([0.0, 0.0, 1.0], A[keep],
                                               b_vec[keep]))
                    worst = max(worst, abs(red.value - sol.value))
            if solved >= 120:
                break
    return {
        "check": "dual_zero_row_invariance",
        "pass": worst < 1e-9,
        "lps_solved": solved,
        "max_value_change": worst,
    }


def check_neighborhood_locality(seed: int):
    """Removing a non-neighbor leaves the local metric data unchanged.

    For the L1 metric this is the metric value itself; for the revenue
    metric it is the pair of transfer integrals (margin and consumption
    deltas), since the final value always recombines them with the current
    aggregate consumption.
    """
    rng = np.random.default_rng(seed + 2)
    inst = _toy_instance(c2=0.07)
    worst = 0.0
    pairs = 0
    for trial in range(6):
        menu = _random_menu(rng, 12, inst)
        cx = build_complex(menu)
        dead = [c for c in cx.live if cx.cells[c].is_empty]
        menu = menu.without(dead)
        cx = build_complex(menu)
        live = sorted(cx.live)
        for i in live:
            fut = compute_futures(cx, i)
            nu_l1 = importance_l1(cx, i, fut)
            dm, de = importance_revenue(cx, i, fut, inst)
            outsiders = [j for j in live
                         if j != i and j not in cx.cells[i].neighbors]
            for j in outsiders[:3]:
                sub = menu.without([j])
                cx2 = build_complex(sub)
                if cx2.cells[i].is_empty:
                    continue
                fut2 = compute_futures(cx2, i)
                nu_l1_b = importance_l1(cx2, i, fut2)
                dmb, deb = importance_revenue(cx2, i, fut2, inst)
                worst = max(worst, abs(nu_l1 - nu_l1_b), abs(dm - dmb),
                            abs(de - deb))
                pairs += 1
    return {
        "check": "non_neighbor_removal_invariance",
        "pass": bool(worst <= 1e-9),
        "pairs_tested": pairs,
        "max_change": worst,
    }


def check_counter_bounds(seed: int):
    """Measured LP and cell-recomputation counts stay within the envelope."""
    rng = np.random.default_rng(seed + 3)
    inst = _toy_instance()
    menu = _random_menu(rng, 30, inst)
    _, tr_inf = prune_linf(menu, 1)
    m_inf = max(tr_inf.m_max, 1)
    _, tr_loc = prune_local(menu, 1, "l1")
    m_loc = max(tr_loc.m_max, 1)
    ok_inf = tr_inf.lp_solves <= 3 * m_inf * len(menu)
    ok_loc = tr_loc.vrep_calls <= 3 * m_loc * m_loc * len(menu)
    return {
        "check": "work_counter_bounds",
        "pass": bool(ok_inf and ok_loc),
        "lp_solves": tr_inf.lp_solves,
        "lp_bound": 3 * m_inf * len(menu),
        "m_support": m_inf,
        "vrep_calls": tr_loc.vrep_calls,
        "vrep_bound": 3 * m_loc * m_loc * len(menu),
        "m_neighbors": m_loc,
    }


def run_validation(seed: int = 0, inject_fault: str | None = None) -> int:
    results = [
        check_oracle_equivalence(seed, inject_fault),
        check_dual_invariance(seed),
        check_neighborhood_locality(seed),
        check_counter_bounds(seed),
    ]
    all_pass = True
    for res in results:
        print(json.dumps(res, default=float))
        all_pass = all_pass and res["pass"]
    print(json.dumps({"summary": "pass" if all_pass else "fail",
                      "checks": len(results)}))
    return 0 if all_pass else 1
