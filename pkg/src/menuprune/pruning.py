"""Greedy menu quantization by pruning max-plus basis functions.

Starting from the full menu, the descent repeatedly removes the contract
whose deletion changes the envelope the least, under one of three importance
metrics: sup-norm (computed by a small LP whose duals tell which metrics
need refreshing), L1 mass (exact polygon integration over the territory the
deleted cell cedes to its neighbors), or the revenue change itself.  All
updates are local: removing a cell only reshapes its neighbors.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry, lpsolver
from .geometry import ConvexPolygon, cell_vrep, integrate_affine, intersect
from .model import Menu, ModelError

INF_SENTINEL = float("inf")
DUAL_SUPPORT_TOL = 1e-9
ACTIVE_SLACK_TOL = 1e-8

METRICS = ("linf", "l1", "jbased")


class PruningError(RuntimeError):
    pass


def _worker_count() -> int:
    """Worker cap from MENUPRUNE_THREADS; metric refreshes are pure reads
    over a frozen complex, so they may run on any number of threads."""
    try:
        return max(1, int(os.environ.get("MENUPRUNE_THREADS", "1")))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    """Map preserving input order, threaded when the env cap allows."""
    workers = _worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class Cell:
    id: int
    polygon: ConvexPolygon
    neighbors: set

    @property
    def is_empty(self) -> bool:
        return self.polygon.is_empty


@dataclass
class CellComplex:
    """Cell decomposition of the type space induced by the live contracts."""

    domain: ConvexPolygon
    cells: dict
    live: set
    empty_ids: list                 # queued for free removal
    basis_by_id: dict

    def live_basis(self, exclude=None):
        """Live basis functions sorted by id, optionally excluding one id."""
        out = []
        for cid in sorted(self.live):
            if cid != exclude:
                out.append(self.basis_by_id[cid])
        return out

    def partition_defect(self) -> float:
        area = sum(self.cells[cid].polygon.area() for cid in self.live)
        dom = self.domain.area()
        return abs(area - dom) / dom


@dataclass
class TraceStep:
    iteration: int
    removed_id: int
    nu: float
    size_after: int
    ms_cum: float
    lp_solves_cum: int
    vrep_calls_cum: int
    # filled by evaluate_losses
    j_lifted: float = float("nan")
    shift: float = float("nan")
    loss: float = float("nan")


@dataclass
class PruneTrace:
    metric: str
    steps: list = field(default_factory=list)
    lp_solves: int = 0
    vrep_calls: int = 0
    m_max: int = 0                  # largest support / neighborhood observed
    wall_ms: float = 0.0
    initial_size: int = 0


def build_complex(menu: Menu, count=None) -> CellComplex:
    """Cell per contract via half-plane clipping; neighbors symmetrized."""
    basis = sorted(menu.basis, key=lambda b: b.id)
    domain = menu.instance.domain
    cells = {}
    empty_ids = []
    for idx, b in enumerate(basis):
        poly, active = cell_vrep(basis, idx, domain)
        if count is not None:
            count.vrep_calls += 1
        cells[b.id] = Cell(b.id, poly, set(active))
        if poly.is_empty:
            empty_ids.append(b.id)
    _symmetrize(cells)
    return CellComplex(
        domain=domain,
        cells=cells,
        live={b.id for b in basis},
        empty_ids=empty_ids,
        basis_by_id={b.id: b for b in basis},
    )


def _symmetrize(cells: dict):
    for cid, cell in cells.items():
        cell.neighbors = {j for j in cell.neighbors if j in cells and j != cid}
    for cid in sorted(cells):
        for j in sorted(cells[cid].neighbors):
            cells[j].neighbors.add(cid)


# ---------------------------------------------------------------------------
# Importance metrics
# ---------------------------------------------------------------------------

def importance_linf(basis, i_idx: int, domain: ConvexPolygon):
    """Sup-norm importance of basis[i_idx] within the family.

    Solves max nu s.t. u_i(x) - u_j(x) >= nu over x in the domain and
    returns (max(0, value), support) where the support is the conservative
    set of contract ids whose constraint carries a positive multiplier or is
    active at the optimum.  A single remaining contract is never removable.
    """
    if len(basis) == 1:
        return INF_SENTINEL, set()
    bi = basis[i_idx]
    gi = np.asarray(bi.g, dtype=float)
    ci = float(bi.intercept)
    others = [b for k, b in enumerate(basis) if k != i_idx]
    G = np.array([b.g for b in others])
    C = np.array([b.intercept for b in others])
    ids = np.array([b.id for b in others], dtype=int)

    # prefilter on the domain bounding box: gap_j(x) = u_i(x) - u_j(x)
    v = domain.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    gaps = corners @ (gi[None, :] - G).T + (ci - C)[None, :]
    gap_max = gaps.max(axis=0)
    gap_min = gaps.min(axis=0)
    nu_ub = gap_max.min()
    slack_scale = 1e-9 * max(1.0, abs(nu_ub))
    keep = gap_min <= nu_ub + slack_scale
    G, C, ids = G[keep], C[keep], ids[keep]

    m_c = len(ids)
    dv = domain.vertices
    n_dom = len(dv)
    A = np.zeros((m_c + n_dom, 3))
    b_vec = np.zeros(m_c + n_dom)
    A[:m_c, 0:2] = G - gi[None, :]
    A[:m_c, 2] = 1.0
    b_vec[:m_c] = ci - C
    for k in range(n_dom):
        a_pt = dv[k]
        b_pt = dv[(k + 1) % n_dom]
        e = b_pt - a_pt
        A[m_c + k, 0:2] = (e[1], -e[0])
        b_vec[m_c + k] = e[1] * a_pt[0] - e[0] * a_pt[1]
    lp = lpsolver.LinearProgram(objective=np.array([0.0, 0.0, 1.0]), A=A, b=b_vec)
    sol = lpsolver.solve_lp(lp)
    if sol.status != lpsolver.OPTIMAL:
        raise PruningError(f"importance LP ended with status {sol.status}")
    support = set()
    duals = sol.duals
    active = set(int(r) for r in sol.active_rows)
    for k in range(m_c):
        if duals[k] > DUAL_SUPPORT_TOL or k in active:
            support.add(int(ids[k]))
    return max(0.0, sol.value), support


def _gap_coeffs(bi, bj):
    """Affine coefficients of u_i - u_j."""
    return (bi.g[0] - bj.g[0], bi.g[1] - bj.g[1], bi.intercept - bj.intercept)


def compute_futures(complex_: CellComplex, i: int, count=None) -> dict:
    """Cells the neighbors of i would occupy after its removal."""
    basis = complex_.live_basis(exclude=i)
    idx_of = {b.id: k for k, b in enumerate(basis)}
    futures = {}
    for j in sorted(complex_.cells[i].neighbors):
        poly, active = cell_vrep(basis, idx_of[j], complex_.domain)
        if count is not None:
            count.vrep_calls += 1
        futures[j] = (poly, set(active))
    return futures


def importance_l1(complex_: CellComplex, i: int, futures: dict) -> float:
    """L1 distance between the envelope with and without contract i."""
    if len(complex_.live) == 1:
        return INF_SENTINEL
    cell = complex_.cells[i]
    if cell.is_empty:
        return 0.0
    bi = complex_.basis_by_id[i]
    nu = 0.0
    for j in sorted(futures):
        region = intersect(futures[j][0], cell.polygon)
        if region.is_empty:
            continue
        a, b, c = _gap_coeffs(bi, complex_.basis_by_id[j])
        nu += integrate_affine(region, a, b, c)
    if nu < -1e-9:
        raise PruningError(f"negative transfer mass for contract {i}: {nu}")
    return max(nu, 0.0)


def importance_revenue(complex_: CellComplex, i: int, futures: dict,
                       instance) -> tuple:
    """Revenue drop when contract i is removed, via its ceded territory.

    Returns (delta_margin, delta_energy); the metric value is
    delta_margin - C(M0) + C(M0 + delta_energy) for the current aggregate M0.
    """
    cell = complex_.cells[i]
    if cell.is_empty:
        return 0.0, 0.0
    bi = complex_.basis_by_id[i]
    li = instance.margin_coeffs(bi)
    mi = instance.consumption_coeffs(bi)
    d_margin = 0.0
    d_energy = 0.0
    for j in sorted(futures):
        region = intersect(futures[j][0], cell.polygon)
        if region.is_empty:
            continue
        bj = complex_.basis_by_id[j]
        lj = instance.margin_coeffs(bj)
        mj = instance.consumption_coeffs(bj)
        d_margin += integrate_affine(region, li[0] - lj[0], li[1] - lj[1],
                                     li[2] - lj[2])
        d_energy += integrate_affine(region, mj[0] - mi[0], mj[1] - mi[1],
                                     mj[2] - mi[2])
    return d_margin, d_energy


def _aggregates(complex_: CellComplex, instance):
    """Total margin integral and aggregate consumption of the live complex."""
    margin = 0.0
    energy = 0.0
    for cid in sorted(complex_.live):
        cell = complex_.cells[cid]
        if cell.is_empty:
            continue
        b = complex_.basis_by_id[cid]
        a1, b1, c1 = instance.margin_coeffs(b)
        margin += integrate_affine(cell.polygon, a1, b1, c1)
        a2, b2, c2 = instance.consumption_coeffs(b)
        energy += integrate_affine(cell.polygon, a2, b2, c2)
    return margin, energy


def _remove_and_promote(complex_: CellComplex, r: int, futures: dict | None,
                        count=None) -> list:
    """Remove contract r and give its territory to the neighbors.

    `futures` must be the future cells computed against the current live set;
    when absent (metric value was cached), they are recomputed fresh so the
    promoted cells are exact.  Returns the sorted list of updated ids.
    """
    neighbors = sorted(complex_.cells[r].neighbors)
    complex_.live.discard(r)
    if r in complex_.empty_ids:
        complex_.empty_ids.remove(r)
    if futures is None:
        # also taken when r's cell is empty: the neighbor polygons cannot
        # change, but their edge provenance may have credited r and must be
        # reattributed to the surviving contract behind the same edge
        futures = compute_futures_after_removal(complex_, r, neighbors, count)
    old_area = complex_.cells[r].polygon.area()
    gained = 0.0
    for j in neighbors:
        poly, active = futures[j]
        gained += poly.area() - complex_.cells[j].polygon.area()
        complex_.cells[j] = Cell(j, poly, set(active))
    del complex_.cells[r]
    del complex_.basis_by_id[r]
    for cell in complex_.cells.values():
        cell.neighbors.discard(r)
    _symmetrize(complex_.cells)
    dom_area = complex_.domain.area()
    if abs(gained - old_area) > 1e-7 * dom_area:
        raise PruningError(
            f"territory of {r} not fully transferred to neighbors "
            f"({gained} vs {old_area}); degenerate complex")
    return neighbors


def compute_futures_after_removal(complex_: CellComplex, r: int,
                                  neighbors, count=None) -> dict:
    basis = complex_.live_basis(exclude=r)
    idx_of = {b.id: k for k, b in enumerate(basis)}
    futures = {}
    for j in neighbors:
        poly, active = cell_vrep(basis, idx_of[j], complex_.domain)
        if count is not None:
            count.vrep_calls += 1
        futures[j] = (poly, set(active))
    return futures


def _argmin_nu(nu: dict, live: set, protected: set) -> int:
    best_id = -1
    best_val = INF_SENTINEL
    for cid in sorted(live):
        if cid in protected:
            continue
        val = nu[cid]
        if val < best_val:
            best_val = val
            best_id = cid
    if best_id < 0:
        raise PruningError("no removable contract left")
    return best_id


def _final_menu(menu: Menu, live: set) -> Menu:
    kept = [b for b in menu.basis if b.id in live]
    return Menu(sorted(kept, key=lambda b: b.id), menu.instance)


def prune_linf(menu: Menu, n: int, protected=frozenset(),
               global_recompute: bool = False):
    """Greedy descent under the sup-norm metric with dual-guided updates."""
    if n < 1:
        raise ValueError("target size must be at least 1")
    t0 = time.perf_counter()
    trace = PruneTrace(metric="linf", initial_size=len(menu))
    domain = menu.instance.domain
    basis_by_id = {b.id: b for b in menu.basis}
    live = set(basis_by_id)
    nu: dict = {}
    support: dict = {}
    refresh = sorted(live)
    it = 0
    while len(live) > n:
        if global_recompute:
            refresh = sorted(live)
        basis = [basis_by_id[c] for c in sorted(live)]
        idx_of = {b.id: k for k, b in enumerate(basis)}
        results = _map_ordered(
            lambda i: importance_linf(basis, idx_of[i], domain), refresh)
        for i, (nu_i, support_i) in zip(refresh, results):
            nu[i], support[i] = nu_i, support_i
            trace.lp_solves += 1
            trace.m_max = max(trace.m_max, len(support_i))
        r = _argmin_nu(nu, live, protected)
        removed_nu = nu[r]
        live.discard(r)
        nu.pop(r, None)
        support.pop(r, None)
        refresh = sorted(i for i in live if r in support.get(i, ()))
        it += 1
        trace.steps.append(TraceStep(
            iteration=it, removed_id=r, nu=removed_nu,
            size_after=len(live), ms_cum=(time.perf_counter() - t0) * 1e3,
            lp_solves_cum=trace.lp_solves, vrep_calls_cum=trace.vrep_calls,
        ))
    trace.wall_ms = (time.perf_counter() - t0) * 1e3
    return _final_menu(menu, live), trace


def prune_local(menu: Menu, n: int, metric: str, protected=frozenset(),
                global_recompute: bool = False,
                _skip_local_refresh: bool = False):
    """Greedy descent for the L1 and revenue metrics with local cell updates."""
    if metric not in ("l1", "jbased"):
        raise ValueError(f"metric must be 'l1' or 'jbased', got {metric!r}")
    if n < 1:
        raise ValueError("target size must be at least 1")
    t0 = time.perf_counter()
    trace = PruneTrace(metric=metric, initial_size=len(menu))
    instance = menu.instance
    complex_ = build_complex(menu, count=trace)

    # contracts that never win anywhere go first, at zero cost
    for cid in sorted(complex_.empty_ids):
        if len(complex_.live) <= n:
            break
        _remove_and_promote(complex_, cid, futures=None, count=trace)
        trace.steps.append(TraceStep(
            iteration=len(trace.steps) + 1, removed_id=cid, nu=0.0,
            size_after=len(complex_.live),
            ms_cum=(time.perf_counter() - t0) * 1e3,
            lp_solves_cum=trace.lp_solves, vrep_calls_cum=trace.vrep_calls,
        ))

    nu: dict = {}
    d_margin: dict = {}
    d_energy: dict = {}
    agg_energy = 0.0
    if metric == "jbased":
        _, agg_energy = _aggregates(complex_, instance)
    refresh = sorted(complex_.live)
    while len(complex_.live) > n:
        if global_recompute:
            refresh = sorted(complex_.live)
        futures_now: dict = {}

        def refresh_one(i):
            fut = compute_futures(complex_, i)
            if metric == "l1":
                return fut, importance_l1(complex_, i, fut), None
            dm, de = importance_revenue(complex_, i, fut, instance)
            return fut, dm, de

        for i, (fut, a, b) in zip(refresh, _map_ordered(refresh_one, refresh)):
            trace.m_max = max(trace.m_max, len(complex_.cells[i].neighbors))
            trace.vrep_calls += len(fut)
            futures_now[i] = fut
            if metric == "l1":
                nu[i] = a
            else:
                d_margin[i], d_energy[i] = a, b
        if metric == "jbased":
            c_now = instance.cost(agg_energy)
            for i in sorted(complex_.live):
                if len(complex_.live) == 1:
                    nu[i] = INF_SENTINEL
                else:
                    nu[i] = (d_margin[i] - c_now
                             + instance.cost(agg_energy + d_energy[i]))
        elif len(complex_.live) == 1:
            for i in complex_.live:
                nu[i] = INF_SENTINEL
        r = _argmin_nu(nu, complex_.live, protected)
        removed_nu = nu[r]
        updated = _remove_and_promote(complex_, r, futures_now.get(r),
                                      count=trace)
        if metric == "jbased":
            agg_energy += d_energy.get(r, 0.0)
        for d in (nu, d_margin, d_energy):
            d.pop(r, None)
        refresh = [] if _skip_local_refresh else updated
        trace.steps.append(TraceStep(
            iteration=len(trace.steps) + 1, removed_id=r, nu=removed_nu,
            size_after=len(complex_.live),
            ms_cum=(time.perf_counter() - t0) * 1e3,
            lp_solves_cum=trace.lp_solves, vrep_calls_cum=trace.vrep_calls,
        ))
    trace.wall_ms = (time.perf_counter() - t0) * 1e3
    return _final_menu(menu, complex_.live), trace


def onestep_ranking(menu: Menu, metric: str = "jbased") -> list:
    """Contract ids ranked by importance computed once on the full menu."""
    instance = menu.instance
    nu = {}
    if metric == "linf":
        basis = sorted(menu.basis, key=lambda b: b.id)
        for k, b in enumerate(basis):
            nu[b.id], _ = importance_linf(basis, k, instance.domain)
    elif metric in ("l1", "jbased"):
        complex_ = build_complex(menu)
        if metric == "jbased":
            _, agg_energy = _aggregates(complex_, instance)
            c_now = instance.cost(agg_energy)
        for i in sorted(complex_.live):
            futures = compute_futures(complex_, i)
            if metric == "l1":
                nu[i] = importance_l1(complex_, i, futures)
            else:
                dm, de = importance_revenue(complex_, i, futures, instance)
                nu[i] = dm - c_now + instance.cost(agg_energy + de)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return sorted(nu, key=lambda cid: (-nu[cid], cid))


def prune_onestep(menu: Menu, n: int, metric: str = "jbased") -> Menu:
    """Keep the n contracts with highest importance, measured once on the
    full menu (no re-evaluation during the descent)."""
    if n < 1:
        raise ValueError("target size must be at least 1")
    if n >= len(menu):
        return Menu(sorted(menu.basis, key=lambda b: b.id), menu.instance)
    ranked = onestep_ranking(menu, metric)
    keep = set(ranked[:n])
    return _final_menu(menu, keep)


def evaluate_losses(menu: Menu, removal_order, revenue_ref: float,
                    include_initial: bool = True) -> list:
    """Replay a removal sequence, lifting and re-pricing at every size.

    Returns one row per menu size: dicts with keys t, j_lifted, shift, loss.
    The revenue at each step is updated incrementally from the territory the
    removed cell cedes, which matches a fresh exact integration.
    """
    instance = menu.instance
    complex_ = build_complex(menu)
    margin, energy = _aggregates(complex_, instance)
    defect = complex_.partition_defect()
    if defect > 1e-6:
        raise ModelError(f"initial complex does not partition the domain "
                         f"({defect:.2e} relative)")
    rows = []

    def emit():
        j_raw = margin - instance.cost(energy)
        shift = _lift_shift(complex_, instance)
        j_lift = j_raw - shift
        rows.append({
            "t": len(complex_.live),
            "j_lifted": j_lift,
            "shift": shift,
            "loss": 1.0 - j_lift / revenue_ref,
        })

    if include_initial:
        emit()
    for r in removal_order:
        cell = complex_.cells[r]
        if cell.is_empty:
            _remove_and_promote(complex_, r, futures=None)
            emit()
            continue
        neighbors = sorted(cell.neighbors)
        futures = compute_futures_after_removal(complex_, r, neighbors)
        dm, de = importance_revenue(complex_, r, futures, instance)
        margin -= dm
        energy += de
        _remove_and_promote(complex_, r, futures)
        emit()
    return rows


def _lift_shift(complex_: CellComplex, instance) -> float:
    slope, icpt = instance.reservation
    worst = -np.inf
    for cid in sorted(complex_.live):
        cell = complex_.cells[cid]
        if cell.is_empty:
            continue
        b = complex_.basis_by_id[cid]
        val, _ = geometry.max_affine_gap(
            cell.polygon, slope[0] - b.g[0], slope[1] - b.g[1],
            icpt - b.intercept)
        worst = max(worst, val)
    return max(0.0, worst)
