"""Infinite-size menu solver on a regular grid of customer types.

The continuum problem is discretized on grid points with uniform quadrature
weights; the unknowns are per-point utilities and qualities subject to the
full set of pairwise incentive constraints, participation, price bounds and
the quality polytope.  The objective is concave (linear margin minus a
convex cost of aggregate consumption), so a conditional-gradient method with
away steps over the constraint polytope solves it; the linear oracle is an
LP handled with lazily generated incentive rows, which keeps every iterate
exactly feasible and certifies the final duality gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq, linprog

from .model import BasisFunction, Instance, Menu, ModelError

IC_ADD_TOL = 1e-9        # violation beyond which a pair enters the working set
IC_ACCEPT_TOL = 1e-7     # matches the LP solver's own feasibility tolerance
WORKING_SET_CAP = 16     # multiples of the grid size before slack rows drop


class SolverError(RuntimeError):
    pass


@dataclass
class DiscretizedProblem:
    """Grid form of the menu design problem.

    Variables are laid out as [u (M), q1 (M), q2 (M)].  Incentive rows exist
    for every ordered pair of grid points; they are materialized lazily by
    the linear oracle but always enforced exactly.
    """

    instance: Instance
    points: np.ndarray          # (M, 2) grid points
    weights: np.ndarray         # (M,) quadrature weights, sum to 1

    def __post_init__(self):
        inst = self.instance
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        M = len(self.points)
        self.size = M
        self.reservation = np.array(
            [inst.reservation_at(x) for x in self.points])
        self.inv_eta = 1.0 / inst.eta
        # linear objective pieces
        self._lin_u = -self.weights
        self._lin_q = (self.weights[:, None] * self.inv_eta
                       * self.points * inst.z_ref[None, :])
        # split the quality polytope into box bounds and general rows
        lo = np.full(2, -np.inf)
        hi = np.full(2, np.inf)
        general = []
        for h in inst.quality_set:
            nz = np.flatnonzero(np.abs(h.normal) > 1e-14)
            if len(nz) == 1:
                k = int(nz[0])
                if h.normal[k] > 0:
                    hi[k] = min(hi[k], h.offset / h.normal[k])
                else:
                    lo[k] = max(lo[k], h.offset / h.normal[k])
            else:
                general.append((h.normal.copy(), float(h.offset)))
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
            raise SolverError("quality polytope must have box bounds")
        if np.any(lo > hi + 1e-12):
            raise SolverError("empty quality box")
        self.q_lower, self.q_upper = lo, hi
        self.q_general = general
        # feasible start from the reservation contract
        slope, icpt = inst.reservation
        self._q_start = slope / inst.alpha
        self._p_start = -icpt
        if np.any(self._q_start < lo - 1e-9) or np.any(self._q_start > hi + 1e-9):
            raise SolverError("reservation quality outside the quality box")
        p_lo, p_hi = inst.p_bounds
        if not (p_lo - 1e-9 <= self._p_start <= p_hi + 1e-9):
            raise SolverError("reservation price outside the price bounds")

    @property
    def num_ic_constraints(self) -> int:
        return self.size * (self.size - 1)

    # -- variable packing ---------------------------------------------------

    def pack(self, u: np.ndarray, q: np.ndarray) -> np.ndarray:
        return np.concatenate([u, q[:, 0], q[:, 1]])

    def unpack(self, y: np.ndarray):
        M = self.size
        return y[:M], np.column_stack([y[M:2 * M], y[2 * M:3 * M]])

    def feasible_start(self) -> np.ndarray:
        u = self.reservation.copy()
        q = np.tile(self._q_start, (self.size, 1))
        return self.pack(u, q)

    # -- objective ----------------------------------------------------------

    def aggregate_energy(self, q: np.ndarray) -> float:
        e = q ** self.inv_eta
        return float(np.sum(self.weights[:, None] * self.points * e))

    def objective(self, y: np.ndarray) -> float:
        u, q = self.unpack(y)
        lin = float(self._lin_u @ u) + float(np.sum(self._lin_q * q))
        return lin - self.instance.cost(self.aggregate_energy(q))

    def gradient(self, y: np.ndarray) -> np.ndarray:
        u, q = self.unpack(y)
        cp = self.instance.cost_prime(self.aggregate_energy(q))
        gq = (self._lin_q - cp * self.weights[:, None] * self.points
              * self.inv_eta * q ** (self.inv_eta - 1.0))
        return np.concatenate([self._lin_u, gq[:, 0], gq[:, 1]])

    # -- residuals ----------------------------------------------------------

    def ic_matrix(self, u: np.ndarray, q: np.ndarray) -> np.ndarray:
        """viol[i, j] = u_i - u_j + <x_j - x_i, alpha*q_i>; IC needs <= 0."""
        grads = q * self.instance.alpha[None, :]
        T = grads @ self.points.T
        viol = u[:, None] - u[None, :] + T - np.diag(T)[:, None]
        np.fill_diagonal(viol, -np.inf)
        return viol

    def residuals(self, y: np.ndarray) -> dict:
        u, q = self.unpack(y)
        ic = float(self.ic_matrix(u, q).max())
        part = float(np.max(self.reservation - u))
        price = (q * self.instance.alpha[None, :] * self.points).sum(axis=1) - u
        p_lo, p_hi = self.instance.p_bounds
        price_viol = float(max(np.max(price - p_hi), np.max(p_lo - price), 0.0))
        q_viol = float(max(np.max(self.q_lower[None, :] - q),
                           np.max(q - self.q_upper[None, :]), 0.0))
        for normal, offset in self.q_general:
            q_viol = max(q_viol, float(np.max(q @ normal - offset)))
        return {"ic": ic, "participation": part, "price": price_viol,
                "quality": q_viol}


def discretize(instance: Instance, N: int) -> DiscretizedProblem:
    """Regular N x N grid of cell centers over the type-space rectangle.

    Cell centers make the uniform weights a midpoint rule, which is exact
    for the affine pieces of the objective.
    """
    if N < 1:
        raise ValueError("grid resolution must be at least 1")
    v = instance.domain.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    xs = lo[0] + (np.arange(N) + 0.5) * (hi[0] - lo[0]) / N
    ys = lo[1] + (np.arange(N) + 0.5) * (hi[1] - lo[1]) / N
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([X.ravel(), Y.ravel()])
    weights = np.full(len(points), 1.0 / len(points))
    return DiscretizedProblem(instance=instance, points=points, weights=weights)


@dataclass
class MenuSolution:
    points: np.ndarray
    u: np.ndarray
    q: np.ndarray
    p: np.ndarray
    value: float
    fw_gap: float
    iterations: int
    oracle_calls: int
    converged: bool
    residuals: dict = field(default_factory=dict)


class _LinearOracle:
    """argmax of a linear objective over the constraint polytope.

    Static rows (price bounds, general quality rows) are built once;
    incentive rows accumulate in a persistent working set.  A returned
    vertex is verified against all pairwise incentive constraints, so it is
    an exact optimum of the fully constrained LP.
    """

    def __init__(self, prob: DiscretizedProblem):
        self.prob = prob
        M = prob.size
        inst = prob.instance
        p_lo, p_hi = inst.p_bounds
        alpha = inst.alpha
        P = prob.points
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        for i in range(M):
            # price(x_i) = alpha1 P_i1 q_i1 + alpha2 P_i2 q_i2 - u_i
            coeffs = [(i, -1.0), (M + i, alpha[0] * P[i, 0]),
                      (2 * M + i, alpha[1] * P[i, 1])]
            for c, vcoef in coeffs:
                rows.append(r)
                cols.append(c)
                vals.append(vcoef)
            rhs.append(p_hi)
            r += 1
            for c, vcoef in coeffs:
                rows.append(r)
                cols.append(c)
                vals.append(-vcoef)
            rhs.append(-p_lo)
            r += 1
        for normal, offset in prob.q_general:
            for i in range(M):
                for k in range(2):
                    if abs(normal[k]) > 1e-14:
                        rows.append(r)
                        cols.append((1 + k) * M + i)
                        vals.append(normal[k])
                rhs.append(offset)
                r += 1
        self._static = sp.csr_matrix(
            (vals, (rows, cols)), shape=(r, 3 * M))
        self._static_rhs = np.asarray(rhs)
        self._bounds = (
            [(prob.reservation[i], None) for i in range(M)]
            + [(prob.q_lower[0], prob.q_upper[0])] * M
            + [(prob.q_lower[1], prob.q_upper[1])] * M
        )
        self.working: set = self._seed_pairs()
        self.calls = 0

    def _seed_pairs(self) -> set:
        """Initial working set: incentive rows between nearby grid points.

        The binding incentive constraints of a convex envelope are local, so
        nearest-neighbor pairs cover most of the active set up front.
        """
        from scipy.spatial import cKDTree

        P = self.prob.points
        M = len(P)
        k = min(9, M)
        _, idx = cKDTree(P).query(P, k=k)
        pairs = set()
        for i in range(M):
            for j in np.atleast_1d(idx[i]):
                j = int(j)
                if j != i:
                    pairs.add((i, j))
                    pairs.add((j, i))
        return pairs

    def _ic_rows(self):
        M = self.prob.size
        pairs = sorted(self.working)
        if not pairs:
            return sp.csr_matrix((0, 3 * M)), np.zeros(0)
        n = len(pairs)
        I = np.array([p[0] for p in pairs])
        J = np.array([p[1] for p in pairs])
        P = self.prob.points
        alpha = self.prob.instance.alpha
        rows = np.repeat(np.arange(n), 4)
        cols = np.column_stack([I, J, M + I, 2 * M + I]).ravel()
        dx = P[J] - P[I]
        vals = np.column_stack([
            np.ones(n), -np.ones(n), alpha[0] * dx[:, 0], alpha[1] * dx[:, 1],
        ]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, 3 * M)), np.zeros(n)

    def _closure_pairs(self, q: np.ndarray) -> list:
        """Tight incentive rows of the minimal-utility closure for fixed q.

        For a fixed quality field the smallest utility profile satisfying
        participation and all incentive rows is a max-plus fixpoint; the
        argmax rows of that fixpoint are exactly the long-range incentive
        chains the LP optimum leans on, so adding them up front avoids many
        row-generation rounds.
        """
        prob = self.prob
        M = prob.size
        R = prob.reservation
        G = q * prob.instance.alpha[None, :]
        C = G @ prob.points.T
        cij = C - np.diag(C)[:, None]       # u_j >= u_i + cij[i, j]
        u = R.copy()
        for _ in range(M):
            nu = np.maximum(R, (u[:, None] + cij).max(axis=0))
            if np.max(nu - u) < 1e-12:
                u = nu
                break
            u = nu
        cand = u[:, None] + cij
        arg = np.argmax(cand, axis=0)
        cols = np.arange(M)
        tight = cand[arg, cols] >= u - 1e-9
        return [(int(arg[j]), j) for j in range(M)
                if tight[j] and int(arg[j]) != j]

    def _shrink_working_set(self, y: np.ndarray):
        """Drop rows far from binding to keep the LP small.

        Rows near equality at the latest vertex stay; the rest return via
        row generation if a later gradient needs them.
        """
        prob = self.prob
        u, q = prob.unpack(y)
        viol = prob.ic_matrix(u, q)
        scale = max(1.0, float(np.max(np.abs(u))))
        keep = {(i, j) for (i, j) in self.working
                if viol[i, j] >= -1e-4 * scale}
        if len(keep) < len(self.working):
            self.working = keep

    def __call__(self, grad: np.ndarray) -> np.ndarray:
        prob = self.prob
        M = prob.size
        for _ in range(200):
            ic_mat, ic_rhs = self._ic_rows()
            A = sp.vstack([self._static, ic_mat], format="csr")
            b = np.concatenate([self._static_rhs, ic_rhs])
            res = linprog(-grad, A_ub=A, b_ub=b, bounds=self._bounds,
                          method="highs")
            self.calls += 1
            if res.status != 0:
                raise SolverError(f"linear oracle failed: {res.message}")
            y = res.x
            u, q = prob.unpack(y)
            viol = prob.ic_matrix(u, q)
            max_viol = float(viol.max())
            if max_viol <= IC_ACCEPT_TOL:
                if len(self.working) > 3 * M:
                    self._shrink_working_set(y)
                return y
            added = False
            for pair in self._closure_pairs(q):
                if pair not in self.working:
                    self.working.add(pair)
                    added = True
            top2 = np.argpartition(viol, -2, axis=1)[:, -2:] if M >= 2 else (
                np.zeros((M, 1), dtype=int))
            for i in range(M):
                for j in top2[i]:
                    if viol[i, j] > IC_ADD_TOL:
                        pair = (i, int(j))
                        if pair not in self.working:
                            self.working.add(pair)
                            added = True
            if not added:
                # every violated pair is already enforced; residual beyond
                # the acceptance level means the LP left feasibility noise
                # larger than expected, which is not recoverable by rows
                if max_viol <= 100 * IC_ACCEPT_TOL:
                    return y
                raise SolverError(
                    f"linear oracle stuck with incentive violation {max_viol}")
        raise SolverError("linear oracle failed to settle its working set")


def _closure_utilities(prob: DiscretizedProblem, q: np.ndarray,
                       max_sweeps: int = 80):
    """Smallest utility profile satisfying participation, the price cap and
    every incentive row, for a fixed quality field; None if not settled."""
    inst = prob.instance
    p_lo, p_hi = inst.p_bounds
    G = q * inst.alpha[None, :]
    C = G @ prob.points.T
    cij = C - np.diag(C)[:, None]          # u_j >= u_i + cij[i, j]
    floors = np.maximum(prob.reservation, np.diag(C) - p_hi)
    u = floors.copy()
    for _ in range(max_sweeps):
        nu = np.maximum(floors, (u[:, None] + cij).max(axis=0))
        if np.max(nu - u) < 1e-11:
            return nu
        u = nu
    return None


def _cheap_vertex(prob: DiscretizedProblem, grad: np.ndarray):
    """Feasible ascent candidate without an LP solve.

    Qualities go to the box corner favored by the gradient; utilities are
    repaired to the minimal incentive-compatible profile.  Returns None when
    the repair violates the price floor (rare; the exact oracle covers it).
    """
    M = prob.size
    gq = np.column_stack([grad[M:2 * M], grad[2 * M:3 * M]])
    q = np.where(gq > 0.0, prob.q_upper[None, :], prob.q_lower[None, :])
    for normal, offset in prob.q_general:
        viol = q @ normal - offset
        if np.any(viol > 1e-12):
            return None                     # corner pattern leaves Q
    u = _closure_utilities(prob, q)
    if u is None:
        return None
    price = (q * prob.instance.alpha[None, :] * prob.points).sum(axis=1) - u
    if float(price.min()) < prob.instance.p_bounds[0] - 1e-9:
        return None
    return prob.pack(u, q)


def _line_search(prob: DiscretizedProblem, y: np.ndarray, d: np.ndarray,
                 gamma_max: float) -> float:
    """Exact maximization of the concave 1-D restriction gamma -> F(y + gamma d)."""

    def slope(g: float) -> float:
        return float(prob.gradient(y + g * d) @ d)

    s0 = slope(0.0)
    if s0 <= 0.0:
        return 0.0
    if slope(gamma_max) >= 0.0:
        return gamma_max
    return brentq(slope, 0.0, gamma_max, xtol=1e-14, maxiter=200)


def solve_infinite_menu(prob: DiscretizedProblem, tol: float = 1e-5,
                        max_iter: int = 5000,
                        correction_steps: int = 400,
                        start: np.ndarray | None = None) -> MenuSolution:
    """Conditional-gradient ascent with away steps and exact line search.

    Terminates when the duality gap <grad, s - y> of the linear oracle drops
    below tol * (1 + |F|).  Away steps over the discovered vertex set remove
    the zig-zagging that plain conditional gradient suffers from on faces,
    and the cheap correction loop reoptimizes over known vertices between
    oracle calls.  `start` overrides the reservation-contract starting point
    with any feasible packed vector (e.g. a coarse-grid solution).
    """
    oracle = _LinearOracle(prob)
    y = prob.feasible_start() if start is None else np.asarray(start, float)
    verts = [y.copy()]
    theta = np.array([1.0])
    gap = np.inf
    phi = np.inf                 # running estimate of the duality gap
    it = 0
    converged = False

    for it in range(1, max_iter + 1):
        g = prob.gradient(y)
        f_y = prob.objective(y)
        # cheap feasible candidates first: the exact oracle is only needed
        # when they stop providing a meaningful share of the estimated gap
        s = None
        cheap = _cheap_vertex(prob, g)
        if cheap is not None:
            ascent = float(g @ (cheap - y))
            if ascent >= 0.25 * phi and ascent > 0.25 * tol * (1 + abs(f_y)):
                s = cheap
        if s is None:
            s = oracle(g)
            gap = float(g @ (s - y))
            phi = gap
            if gap <= tol * (1.0 + abs(f_y)):
                converged = True
                break
        V = np.asarray(verts)
        scores = V @ g
        k_away = int(np.argmin(scores))
        d_fw = s - y
        d_aw = y - V[k_away]
        if float(g @ d_fw) >= float(g @ d_aw) or len(verts) == 1:
            gamma = _line_search(prob, y, d_fw, 1.0)
            theta = theta * (1.0 - gamma)
            match = np.flatnonzero(np.all(V == s, axis=1))
            if len(match):
                theta[int(match[0])] += gamma
            else:
                verts.append(s)
                theta = np.append(theta, gamma)
        else:
            t_k = theta[k_away]
            gamma_max = t_k / (1.0 - t_k) if t_k < 1.0 else 1.0
            gamma = _line_search(prob, y, d_aw, gamma_max)
            theta = theta * (1.0 + gamma)
            theta[k_away] -= gamma
        keep = theta > 1e-14
        theta = theta[keep]
        verts = [v for v, k in zip(verts, keep) if k]
        theta = theta / theta.sum()
        y = np.asarray(verts).T @ theta

        # correction: away-step passes over the known vertices only; the
        # expensive oracle is only worth calling once the hull is exhausted
        inner_stop = max(0.1 * phi, 0.05 * tol * (1.0 + abs(f_y)))
        for _ in range(correction_steps):
            g = prob.gradient(y)
            V = np.asarray(verts)
            scores = V @ g
            k_to = int(np.argmax(scores))
            k_away = int(np.argmin(scores))
            d_fw = V[k_to] - y
            gap_in = float(g @ d_fw)
            d_aw = y - V[k_away]
            if gap_in >= float(g @ d_aw):
                if gap_in <= inner_stop:
                    break
                gamma = _line_search(prob, y, d_fw, 1.0)
                theta = theta * (1.0 - gamma)
                theta[k_to] += gamma
            else:
                t_k = theta[k_away]
                if t_k >= 1.0:
                    break
                gamma_max = t_k / (1.0 - t_k)
                gamma = _line_search(prob, y, d_aw, gamma_max)
                theta = theta * (1.0 + gamma)
                theta[k_away] -= gamma
            keep = theta > 1e-14
            theta = theta[keep]
            verts = [v for v, k in zip(verts, keep) if k]
            theta = theta / theta.sum()
            y = np.asarray(verts).T @ theta

    u, q = prob.unpack(y)
    price = (q * prob.instance.alpha[None, :] * prob.points).sum(axis=1) - u
    sol = MenuSolution(
        points=prob.points, u=u, q=q, p=price,
        value=prob.objective(y), fw_gap=gap, iterations=it,
        oracle_calls=oracle.calls, converged=converged,
        residuals=prob.residuals(y),
    )
    return sol


def extract_basis(sol: MenuSolution, instance: Instance,
                  dedup_tol: float = 1e-6) -> list:
    """One affine basis function per grid point, near-duplicates merged.

    Two functions merge when their gradients agree within
    dedup_tol * max|alpha| and their prices within dedup_tol * p_max; the
    lowest grid index survives, so the envelope moves by at most dedup_tol.
    """
    alpha = instance.alpha
    grads = sol.q * alpha[None, :]
    intercepts = sol.u - np.sum(grads * sol.points, axis=1)
    if dedup_tol == 0.0:
        return [BasisFunction(grads[i], intercepts[i], i)
                for i in range(len(grads))]
    g_tol = dedup_tol * float(np.max(np.abs(alpha)))
    p_tol = dedup_tol * max(abs(instance.p_bounds[1]), 1.0)
    kept: list[BasisFunction] = []
    kept_g = np.zeros((0, 2))
    kept_p = np.zeros(0)
    for i in range(len(grads)):
        if len(kept):
            close = (np.max(np.abs(kept_g - grads[i]), axis=1) <= g_tol) & (
                np.abs(kept_p - (-intercepts[i])) <= p_tol)
            if bool(np.any(close)):
                continue
        kept.append(BasisFunction(grads[i], intercepts[i], i))
        kept_g = np.vstack([kept_g, grads[i]])
        kept_p = np.append(kept_p, -intercepts[i])
    return kept


def solution_menu(sol: MenuSolution, instance: Instance,
                  dedup_tol: float = 1e-6) -> Menu:
    return Menu(extract_basis(sol, instance, dedup_tol), instance)


def _coarse_start(prob: DiscretizedProblem, coarse: MenuSolution,
                  instance: Instance) -> np.ndarray | None:
    """Feasible fine-grid point from a coarse solution's envelope.

    The coarse contracts' upper envelope is incentive-compatible by
    construction; a uniform lift restores participation at the fine points.
    Returns None when the lifted prices leave the admissible interval.
    """
    grads = coarse.q * instance.alpha[None, :]
    icpts = coarse.u - np.sum(grads * coarse.points, axis=1)
    vals = prob.points @ grads.T + icpts[None, :]
    winner = np.argmax(vals, axis=1)
    u = vals[np.arange(len(prob.points)), winner]
    q = coarse.q[winner]
    shift = max(0.0, float(np.max(prob.reservation - u)))
    u = u + shift
    price = (q * instance.alpha[None, :] * prob.points).sum(axis=1) - u
    p_lo, p_hi = instance.p_bounds
    if np.min(price) < p_lo - 1e-9 or np.max(price) > p_hi + 1e-9:
        return None
    return prob.pack(u, q)


def solve_instance(instance: Instance, N: int, tol: float = 1e-5,
                   max_iter: int = 5000,
                   coarse_n: int | None = None) -> MenuSolution:
    """Solve on the N x N grid, warm-started from a coarser grid.

    The coarse pass is cheap and its envelope lands the fine iteration close
    to the optimum, cutting the number of linear-oracle calls sharply.
    """
    prob = discretize(instance, N)
    start = None
    if coarse_n is None:
        coarse_n = N // 2 if N >= 10 else 0
    if coarse_n >= 3:
        coarse_prob = discretize(instance, coarse_n)
        coarse_sol = solve_infinite_menu(coarse_prob, tol=max(tol, 1e-4),
                                         max_iter=max_iter)
        start = _coarse_start(prob, coarse_sol, instance)
    return solve_infinite_menu(prob, tol=tol, max_iter=max_iter, start=start)
