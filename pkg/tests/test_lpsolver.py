import itertools

import numpy as np
import pytest

from menuprune.lpsolver import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    LpError,
    solve_lp,
)


def brute_force_value(c, A, b):
    """Vertex enumeration oracle for tiny LPs (n <= 3, m <= 8).

    Enumerates all basic points from row subsets, keeps feasible ones,
    returns the best objective or None when none is feasible/bounded.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    best = None
    for rows in itertools.combinations(range(m), n):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ x <= b + 1e-9):
            val = float(c @ x)
            if best is None or val > best:
                best = val
    return best


class TestBasics:
    def test_single_row(self):
        sol = solve_lp(LinearProgram([1.0], [[1.0]], [3.0]))
        assert sol.status == OPTIMAL
        assert sol.value == pytest.approx(3.0, abs=1e-10)
        assert sol.primal[0] == pytest.approx(3.0, abs=1e-10)
        assert sol.duals[0] == pytest.approx(1.0, abs=1e-10)

    def test_complementary_slackness_zero_dual(self):
        sol = solve_lp(LinearProgram([1.0], [[1.0], [1.0]], [3.0, 5.0]))
        assert sol.value == pytest.approx(3.0, abs=1e-10)
        assert sol.duals == pytest.approx([1.0, 0.0], abs=1e-10)
        assert list(sol.active_rows) == [0]

    def test_importance_lp_example(self):
        # max nu s.t. nu <= 1 - x1 - x2, x in the unit square: nu* = 1 at origin
        A = [[1, 1, 1], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]]
        b = [1, 1, 0, 1, 0]
        sol = solve_lp(LinearProgram([0.0, 0.0, 1.0], A, b))
        assert sol.status == OPTIMAL
        assert sol.value == pytest.approx(1.0, abs=1e-10)
        assert sol.primal[:2] == pytest.approx([0.0, 0.0], abs=1e-10)

    def test_infeasible(self):
        sol = solve_lp(LinearProgram([1.0], [[1.0], [-1.0]], [-1.0, -1.0]))
        assert sol.status == INFEASIBLE

    def test_unbounded(self):
        sol = solve_lp(LinearProgram([1.0], [[-1.0]], [0.0]))
        assert sol.status == UNBOUNDED

    def test_variable_bounds(self):
        sol = solve_lp(LinearProgram([1.0, 1.0], [[1.0, 1.0]], [10.0],
                                     bounds=[(0.0, 2.0), (0.0, 3.0)]))
        assert sol.status == OPTIMAL
        assert sol.value == pytest.approx(5.0, abs=1e-10)

    def test_bad_dimensions_rejected(self):
        with pytest.raises(ValueError):
            LinearProgram([1.0, 2.0], [[1.0]], [1.0])
        with pytest.raises(ValueError):
            LinearProgram([np.inf], [[1.0]], [1.0])


class TestSolutionInvariants:
    def _random_lp(self, rng, n, m):
        A = rng.normal(size=(m, n))
        # feasible by construction: interior point x0 with slack
        x0 = rng.normal(size=n)
        b = A @ x0 + rng.uniform(0.2, 2.0, size=m)
        c = rng.normal(size=n)
        return LinearProgram(c, A, b)

    def test_kkt_on_random_lps(self, rng):
        checked = 0
        for _ in range(200):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(n + 1, 9))
            lp = self._random_lp(rng, n, m)
            sol = solve_lp(lp)
            if sol.status != OPTIMAL:
                continue
            checked += 1
            slack = lp.b - lp.A @ sol.primal
            assert np.all(slack >= -1e-8)                       # primal feas
            assert np.all(sol.duals >= -1e-10)                  # dual sign
            cs = np.abs(sol.duals * slack)
            assert np.max(cs) <= 1e-8 * (1.0 + abs(sol.value))  # compl. slack
            # strong duality (no variable bounds here)
            assert abs(sol.value - sol.duals @ lp.b) <= 1e-8 * (1 + abs(sol.value))
            # stationarity: c = A^T lambda
            assert np.max(np.abs(lp.objective - lp.A.T @ sol.duals)) <= 1e-7
        assert checked >= 100

    def test_agreement_with_vertex_enumeration(self, rng):
        agreements = 0
        for _ in range(150):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(n + 1, 9))
            lp = self._random_lp(rng, n, m)
            sol = solve_lp(lp)
            ref = brute_force_value(lp.objective, lp.A, lp.b)
            if sol.status == OPTIMAL and ref is not None:
                assert sol.value == pytest.approx(ref, abs=1e-8 * (1 + abs(ref)))
                agreements += 1
        assert agreements >= 80

    def test_row_scaling_divides_dual(self, rng):
        for _ in range(40):
            lp = self._random_lp(rng, 2, 5)
            sol = solve_lp(lp)
            if sol.status != OPTIMAL:
                continue
            s = float(rng.uniform(0.5, 4.0))
            k = int(rng.integers(0, 5))
            A2 = lp.A.copy()
            b2 = lp.b.copy()
            A2[k] *= s
            b2[k] *= s
            sol2 = solve_lp(LinearProgram(lp.objective, A2, b2))
            assert sol2.status == OPTIMAL
            assert sol2.value == pytest.approx(sol.value, abs=1e-8)
            assert np.allclose(sol2.primal, sol.primal, atol=1e-7)
            expect = sol.duals.copy()
            expect[k] /= s
            assert np.allclose(sol2.duals, expect, atol=1e-7)

    def test_removing_slack_zero_dual_row_is_neutral(self, rng):
        # the engine behind the local update rule for the sup-norm metric
        for _ in range(60):
            lp = self._random_lp(rng, 2, 6)
            sol = solve_lp(lp)
            if sol.status != OPTIMAL:
                continue
            slack = lp.b - lp.A @ sol.primal
            for k in range(6):
                if sol.duals[k] == 0.0 and slack[k] > 1e-8:
                    keep = [r for r in range(6) if r != k]
                    red = solve_lp(LinearProgram(
                        lp.objective, lp.A[keep], lp.b[keep]))
                    assert red.status == OPTIMAL
                    assert red.value == pytest.approx(sol.value, abs=1e-9)
                    assert np.allclose(red.primal, sol.primal, atol=1e-7)

    def test_determinism(self, rng):
        lp = self._random_lp(rng, 3, 8)
        a = solve_lp(lp)
        b = solve_lp(lp)
        assert a.status == b.status
        assert np.array_equal(a.primal, b.primal)
        assert np.array_equal(a.duals, b.duals)
        assert a.iterations == b.iterations

    def test_iteration_cap_raises(self):
        # pathologically long chains still terminate or report loudly; a
        # crafted cap-zero problem must surface as LpError, never silence
        lp = LinearProgram([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])
        import menuprune.lpsolver as L
        orig = L._bland_simplex
        try:
            def capped(T, basis, n_cols, max_iter):
                return orig(T, basis, n_cols, 0)
            L._bland_simplex = capped
            with pytest.raises(LpError):
                solve_lp(lp)
        finally:
            L._bland_simplex = orig
