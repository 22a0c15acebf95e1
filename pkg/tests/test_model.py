import numpy as np
import pytest

from menuprune import geometry
from menuprune.model import (
    BasisFunction,
    Instance,
    Menu,
    ModelError,
    check_ic,
    lift_participation,
    revenue,
    utility_at,
)
from menuprune.pruning import build_complex

from conftest import random_menu, toy_instance


class TestTypes:
    def test_basis_contract_bijection(self):
        alpha = np.array([2.0, -3.0])
        b = BasisFunction(np.array([1.0, 1.5]), -4.0, 0)
        c = b.contract(alpha)
        assert c.p == pytest.approx(4.0)
        assert np.allclose(c.q * alpha, b.g)

    def test_menu_requires_unique_ids(self):
        inst = toy_instance()
        b = BasisFunction(np.array([0.5, 0.5]), 0.0, 3)
        with pytest.raises(ModelError):
            Menu([b, b], inst)

    def test_instance_rejects_zero_cost_curvature_only_when_negative(self):
        with pytest.raises(ModelError):
            toy_instance(c2=-1.0)
        toy_instance(c2=0.0)  # linear-cost edge case stays constructible

    def test_instance_rejects_eta_one(self):
        inst = toy_instance()
        with pytest.raises(ModelError):
            Instance(domain=inst.domain, alpha=inst.alpha, eta=1.0,
                     z_ref=inst.z_ref, p_ref=0.0, cost_coeff=0.1,
                     p_bounds=inst.p_bounds, quality_set=inst.quality_set,
                     reservation=inst.reservation)


class TestUtilityAt:
    def test_single_basis(self):
        inst = toy_instance()
        b = BasisFunction(np.array([0.4, 0.6]), -0.2, 7)
        menu = Menu([b], inst)
        val, winner = utility_at(menu, np.array([0.5, 0.5]))
        assert val == pytest.approx(0.4 * 0.5 + 0.6 * 0.5 - 0.2)
        assert winner == 7

    def test_tie_goes_to_lower_id(self):
        inst = toy_instance()
        b1 = BasisFunction(np.array([0.4, 0.6]), -0.2, 5)
        b2 = BasisFunction(np.array([0.4, 0.6]), -0.2, 9)
        menu = Menu([b1, b2], inst)
        _, winner = utility_at(menu, np.array([0.3, 0.3]))
        assert winner == 5

    def test_matches_direct_max(self, rng):
        menu = random_menu(rng, 20)
        for _ in range(50):
            x = rng.uniform(0.0, 1.0, 2)
            val, winner = utility_at(menu, x)
            direct = menu.values(x)[0]
            assert val == pytest.approx(float(direct.max()), abs=1e-12)
            assert winner == menu.ids[int(np.argmax(direct))]

    def test_envelope_convexity(self, rng):
        menu = random_menu(rng, 15)
        for _ in range(200):
            x, y = rng.uniform(0.0, 1.0, (2, 2))
            t = float(rng.uniform())
            mid = t * x + (1 - t) * y
            v_mid = menu.envelope(mid)[0]
            bound = t * menu.envelope(x)[0] + (1 - t) * menu.envelope(y)[0]
            assert v_mid <= bound + 1e-12


class TestCheckIc:
    def _grid(self, n=12):
        xs = np.linspace(0.05, 0.95, n)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def test_single_affine_contract_is_ic(self):
        alpha = np.array([1.0, 1.0])
        pts = self._grid()
        q0 = np.array([0.7, 1.3])
        u = pts @ (alpha * q0) - 2.0
        q = np.tile(q0, (len(pts), 1))
        report = check_ic(u, q, alpha, pts)
        assert report["holds"]
        assert report["max_violation"] == pytest.approx(0.0, abs=1e-12)

    def test_concave_utility_violates(self):
        alpha = np.array([1.0, 1.0])
        pts = self._grid()
        u = -np.sum(pts * pts, axis=1)
        q = (-2.0 * pts) / alpha[None, :]
        report = check_ic(u, q, alpha, pts)
        assert not report["holds"]
        assert report["max_violation"] > 1e-3

    def test_envelope_of_menu_is_ic(self, rng):
        menu = random_menu(rng, 12)
        pts = self._grid()
        vals = menu.values(pts)
        winner = np.argmax(vals, axis=1)
        u = vals[np.arange(len(pts)), winner]
        q = menu.G[winner] / menu.instance.alpha[None, :]
        report = check_ic(u, q, menu.instance.alpha, pts)
        assert report["max_violation"] <= 1e-9


class TestRevenue:
    def test_single_reference_contract_closed_form(self):
        # one contract with q = (1,1), p = 2 on the toy market:
        # margin integral = (2<x, q> - u) with u = <x, q> - p
        # = <x, 1> + p; mean of x1 + x2 over the unit square is 1
        inst = toy_instance(c2=0.1)
        b = BasisFunction(np.array([1.0, 1.0]), -2.0, 0)
        menu = Menu([b], inst)
        cx = build_complex(menu)
        got = revenue(menu, cx)
        energy = 1.0  # q = 1 consumption: mean(x1 + x2) = 1
        expect = (1.0 + 2.0) - 0.1 * energy ** 2
        assert got == pytest.approx(expect, abs=1e-12)

    def test_monte_carlo_oracle(self, rng):
        inst = toy_instance(c2=0.05)
        menu = random_menu(rng, 6, inst)
        cx = build_complex(menu)
        got = revenue(menu, cx)
        pts = rng.uniform(0.0, 1.0, size=(1_000_000, 2))
        vals = menu.values(pts)
        winner = np.argmax(vals, axis=1)
        u = vals[np.arange(len(pts)), winner]
        q = menu.G[winner]  # alpha = 1
        margin = np.mean(2.0 * np.sum(pts * inst.z_ref[None, :] * q, axis=1) - u)
        energy = np.mean(np.sum(pts * q ** (1.0 / inst.eta), axis=1))
        expect = margin - inst.cost(energy)
        assert got == pytest.approx(expect, rel=1e-3)

    def test_dense_quadrature_oracle_two_contracts(self):
        inst = toy_instance(c2=0.07)
        b1 = BasisFunction(np.array([0.6, 0.8]), 0.0, 0)
        b2 = BasisFunction(np.array([1.2, 1.1]), -0.5, 1)
        menu = Menu([b1, b2], inst)
        cx = build_complex(menu)
        got = revenue(menu, cx)
        n = 2000
        xs = (np.arange(n) + 0.5) / n
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        vals = menu.values(pts)
        winner = np.argmax(vals, axis=1)
        u = vals[np.arange(len(pts)), winner]
        q = menu.G[winner]
        margin = np.mean(2.0 * np.sum(pts * q, axis=1) - u)
        energy = np.mean(np.sum(pts * q ** 2.0, axis=1))
        expect = margin - inst.cost(energy)
        assert abs(got - expect) <= 1e-4 * (1.0 + abs(expect))

    def test_invariance_under_reindexing_and_empty_cells(self, rng):
        inst = toy_instance()
        menu = random_menu(rng, 8, inst)
        cx = build_complex(menu)
        base = revenue(menu, cx)
        # permuted ids
        perm = rng.permutation(8)
        basis2 = [BasisFunction(b.g, b.intercept, int(perm[k]))
                  for k, b in enumerate(menu.basis)]
        menu2 = Menu(basis2, inst)
        assert revenue(menu2, build_complex(menu2)) == pytest.approx(base, abs=1e-12)
        # add a dominated contract: empty cell, same revenue
        dom = BasisFunction(np.array([0.5, 0.5]), -50.0, 99)
        menu3 = Menu(list(menu.basis) + [dom], inst)
        assert revenue(menu3, build_complex(menu3)) == pytest.approx(base, abs=1e-12)

    def test_partition_mismatch_raises(self, rng):
        inst = toy_instance()
        menu = random_menu(rng, 5, inst)
        cx = build_complex(menu)
        victim = sorted(cx.live)[0]
        cx.cells[victim].polygon = geometry.EMPTY_POLYGON
        if not all(cx.cells[c].polygon.is_empty for c in cx.live):
            with pytest.raises(ModelError):
                revenue(menu, cx)


class TestLiftParticipation:
    def _instance_with_reservation(self, slope, icpt):
        inst = toy_instance()
        inst.reservation = (np.asarray(slope, dtype=float), float(icpt))
        return inst

    def test_already_above_reservation(self, rng):
        inst = self._instance_with_reservation([0.0, 0.0], -100.0)
        menu = random_menu(rng, 6, inst)
        cx = build_complex(menu)
        lifted, shift = lift_participation(menu, cx)
        assert shift == 0.0
        assert lifted is menu

    def test_parallel_contract_shift_one(self):
        inst = self._instance_with_reservation([0.7, 0.7], 0.0)
        b = BasisFunction(np.array([0.7, 0.7]), -1.0, 0)  # reservation minus 1
        menu = Menu([b], inst)
        cx = build_complex(menu)
        lifted, shift = lift_participation(menu, cx)
        assert shift == pytest.approx(1.0, abs=1e-12)
        assert lifted.basis[0].intercept == pytest.approx(0.0, abs=1e-12)

    def test_grid_post_condition_and_revenue_identity(self, rng):
        inst = self._instance_with_reservation([0.9, 0.4], -0.8)
        menu = random_menu(rng, 10, inst)
        cx = build_complex(menu)
        j_before = revenue(menu, cx)
        lifted, shift = lift_participation(menu, cx)
        pts = rng.uniform(0.0, 1.0, size=(100_000, 2))
        slope, icpt = inst.reservation
        gap = lifted.envelope(pts) - (pts @ slope + icpt)
        assert float(gap.min()) >= -1e-6
        cx2 = build_complex(lifted)
        j_after = revenue(lifted, cx2)
        assert abs(j_after - (j_before - shift)) <= 1e-9 * (1.0 + abs(j_before))
