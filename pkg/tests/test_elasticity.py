import json

import numpy as np
import pytest

from menuprune import elasticity as E
from menuprune.elasticity import ElasticityError, MarketParams


@pytest.fixture
def market():
    return MarketParams(eta=-0.1, z_check=[0.174, 0.19], p_check=140.0,
                        z_lower=[0.05, 0.05], z_upper=[0.5, 0.5])


@pytest.fixture
def market_pos():
    return MarketParams(eta=0.5, z_check=[0.2, 0.25], p_check=50.0,
                        z_lower=[0.1, 0.1], z_upper=[0.4, 0.4],
                        poset=[(0, 1, 1.5)])


class TestMarketParams:
    def test_eta_range_enforced(self):
        with pytest.raises(ElasticityError):
            MarketParams(eta=1.0, z_check=[0.2, 0.2], p_check=1.0,
                         z_lower=[0.1, 0.1], z_upper=[0.3, 0.3])
        with pytest.raises(ElasticityError):
            MarketParams(eta=0.0, z_check=[0.2, 0.2], p_check=1.0,
                         z_lower=[0.1, 0.1], z_upper=[0.3, 0.3])

    def test_poset_cycle_rejected(self):
        with pytest.raises(ElasticityError):
            MarketParams(eta=-0.5, z_check=[0.2, 0.2], p_check=1.0,
                         z_lower=[0.1, 0.1], z_upper=[0.3, 0.3],
                         poset=[(0, 1, 1.0), (1, 0, 1.0)])

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ElasticityError):
            MarketParams(eta=-0.5, z_check=[0.2, 0.2], p_check=1.0,
                         z_lower=[0.4, 0.4], z_upper=[0.3, 0.3])


class TestConsumption:
    def test_calibration_point(self, market):
        x = np.array([1.2, 2.8])
        assert np.allclose(E.optimal_consumption(x, market.z_check, market), x)

    def test_doubling_prices(self, market):
        # oracle: 1-D welfare maximization per period on a fine grid
        x = np.array([1.0, 2.0])
        z = 2.0 * market.z_check
        got = E.optimal_consumption(x, z, market)
        expect = x * 2.0 ** (-1.0 / 1.1)
        assert np.allclose(got, expect, atol=1e-12)
        eta = market.eta
        for k in range(2):
            beta = market.z_check[k] * x[k] ** (1.0 - eta)
            grid = np.linspace(1e-3, 3.0 * x[k], 400_001)
            vals = beta * grid ** eta / eta - z[k] * grid
            assert grid[int(np.argmax(vals))] == pytest.approx(got[k], abs=1e-4)

    def test_monotone_decrease_for_saturating_demand(self, market):
        x = np.array([1.0, 1.0])
        e10 = E.optimal_consumption(x, 10 * market.z_check, market)
        e100 = E.optimal_consumption(x, 100 * market.z_check, market)
        assert np.all(e100 < e10)
        assert np.all(e10 < x)

    def test_nonpositive_prices_error(self, market):
        with pytest.raises(ElasticityError):
            E.optimal_consumption(np.ones(2), np.array([0.0, 0.1]), market)


class TestWelfare:
    def test_reference_point(self, market):
        x = np.array([1.2, 2.8])
        got = E.welfare(x, market.p_check, market.z_check, market)
        expect = (1.0 / market.eta - 1.0) * float(x @ market.z_check) - market.p_check
        assert got == pytest.approx(expect, abs=1e-12)

    def test_linear_in_fixed_price(self, market):
        x = np.array([1.0, 2.0])
        z = np.array([0.2, 0.3])
        delta = 17.5
        assert (E.welfare(x, 10.0 + delta, z, market)
                - E.welfare(x, 10.0, z, market)) == pytest.approx(-delta)

    def test_matches_consumption_grid_oracle(self, market):
        x = np.array([0.9, 1.7])
        z = np.array([0.3, 0.12])
        got = E.welfare(x, 5.0, z, market)
        eta = market.eta
        best = 0.0
        for k in range(2):
            beta = market.z_check[k] * x[k] ** (1.0 - eta)
            grid = np.linspace(1e-4, 6.0 * x[k], 2_000_001)
            vals = beta * grid ** eta / eta - z[k] * grid
            best += float(vals.max())
        assert got == pytest.approx(best - 5.0, abs=1e-4)

    def test_convex_nonincreasing_in_prices(self, market, rng):
        x = np.array([1.0, 1.5])
        for _ in range(30):
            z1 = np.exp(rng.uniform(np.log(0.05), np.log(0.5), 2))
            z2 = np.exp(rng.uniform(np.log(0.05), np.log(0.5), 2))
            t = float(rng.uniform())
            mid = t * z1 + (1 - t) * z2
            w1 = E.welfare(x, 0.0, z1, market)
            w2 = E.welfare(x, 0.0, z2, market)
            wm = E.welfare(x, 0.0, mid, market)
            assert wm <= t * w1 + (1 - t) * w2 + 1e-12
            assert E.welfare(x, 0.0, z1 * 1.1, market) <= w1 + 1e-12


class TestQualityMap:
    def test_reference_maps_to_one(self, market):
        assert np.allclose(E.to_quality(market.z_check, market), 1.0)

    def test_round_trip(self, market, rng):
        for _ in range(100):
            z = np.exp(rng.uniform(np.log(0.01), np.log(1.0), 2))
            back = E.from_quality(E.to_quality(z, market), market)
            assert np.allclose(back, z, rtol=1e-12)

    def test_exponent_value(self, market):
        z = np.array([0.05, 0.5])
        q = E.to_quality(z, market)
        expect = (z / market.z_check) ** (1.0 / 11.0)
        assert np.allclose(q, expect, rtol=1e-14)

    def test_invoice_identity(self, market, rng):
        # <E(z), z> = <x, z_ref * q(z)>: the linearization behind the model
        for _ in range(200):
            x = rng.uniform(0.3, 3.0, 2)
            z = np.exp(rng.uniform(np.log(0.05), np.log(0.5), 2))
            lhs = float(E.optimal_consumption(x, z, market) @ z)
            rhs = float(x @ (market.z_check * E.to_quality(z, market)))
            assert abs(lhs - rhs) <= 1e-9 * (1.0 + abs(lhs))

    def test_welfare_identity(self, market, rng):
        alpha_raw = (1.0 / market.eta - 1.0) * market.z_check
        for _ in range(200):
            x = rng.uniform(0.3, 3.0, 2)
            z = np.exp(rng.uniform(np.log(0.05), np.log(0.5), 2))
            p = float(rng.uniform(0.0, 200.0))
            w = E.welfare(x, p, z, market)
            lin = float(x @ (alpha_raw * E.to_quality(z, market))) - p
            assert abs(w - lin) <= 1e-9 * (1.0 + abs(w))


class TestBuildQ:
    def test_box_case_negative_eta(self, market):
        planes = E.build_Q(market)
        assert len(planes) == 4
        xi = market.quality_exponent
        lo = (market.z_lower / market.z_check) ** xi
        hi = (market.z_upper / market.z_check) ** xi
        for k in range(2):
            e = np.zeros(2)
            e[k] = 1.0
            uppers = [h.offset for h in planes if np.allclose(h.normal, e)]
            lowers = [-h.offset for h in planes if np.allclose(h.normal, -e)]
            assert uppers == [pytest.approx(hi[k])]
            assert lowers == [pytest.approx(lo[k])]

    def test_reference_quality_feasible(self, market, market_pos):
        for m in (market, market_pos):
            planes = E.build_Q(m)
            q1 = np.ones(2)
            assert all(float(h.normal @ q1) <= h.offset + 1e-9 for h in planes)

    def test_positive_eta_branch_flips(self, market_pos):
        planes = E.build_Q(market_pos)
        xi = market_pos.quality_exponent
        assert xi < 0.0
        hi = (market_pos.z_lower / market_pos.z_check) ** xi
        e0 = np.zeros(2)
        e0[0] = 1.0
        uppers = [h.offset for h in planes if np.allclose(h.normal, e0)]
        assert uppers == [pytest.approx(hi[0])]

    def test_price_polytope_image_equivalence(self, market_pos, rng):
        # membership both ways on 10^4 samples, tolerance 1e-9
        m = market_pos
        planes = E.build_Q(m)

        def in_Z(z):
            ok = np.all(z >= m.z_lower - 1e-12) and np.all(z <= m.z_upper + 1e-12)
            for (i1, i2, kappa) in m.poset:
                ok = ok and z[i1] <= kappa * z[i2] + 1e-12
            return ok

        def in_Q(q):
            return all(float(h.normal @ q) <= h.offset + 1e-9 for h in planes)

        lo_q = np.minimum((m.z_lower / m.z_check) ** m.quality_exponent,
                          (m.z_upper / m.z_check) ** m.quality_exponent)
        hi_q = np.maximum((m.z_lower / m.z_check) ** m.quality_exponent,
                          (m.z_upper / m.z_check) ** m.quality_exponent)
        for _ in range(10_000):
            z = rng.uniform(m.z_lower * 0.8, m.z_upper * 1.2)
            assert in_Q(E.to_quality(z, m)) == in_Z(z)
        for _ in range(10_000):
            q = rng.uniform(lo_q * 0.9, hi_q * 1.1)
            assert in_Z(E.from_quality(q, m)) == in_Q(q)


class TestBuildInstance:
    def test_default_instance_wiring(self, market):
        inst = E.build_instance(market, rho_rect=[[0.6, 1.8], [1.4, 4.2]],
                                p_bounds=[0.0, 500.0], c2=0.01)
        assert np.allclose(inst.alpha, -11.0 * market.z_check * 1000.0)
        assert inst.cost_coeff == pytest.approx(10.0)
        assert inst.density * inst.domain.area() == pytest.approx(1.0)
        slope, icpt = inst.reservation
        assert np.allclose(slope, inst.alpha)
        assert icpt == pytest.approx(-140.0)
        # marginal cost at the reference aggregate consumption (4 MWh)
        assert inst.cost_prime(4.0) == pytest.approx(80.0)

    def test_positive_eta_branch(self, market_pos):
        inst = E.build_instance(market_pos, rho_rect=[[0.5, 1.5], [1.0, 2.0]],
                                p_bounds=[0.0, 200.0], c2=0.01)
        assert inst.in_quality_set(np.ones(2))

    def test_infeasible_bounds_error(self):
        with pytest.raises(ElasticityError):
            MarketParams(eta=-0.1, z_check=[0.2, 0.2], p_check=1.0,
                         z_lower=[0.6, 0.6], z_upper=[0.5, 0.5])


class TestInstanceJson:
    DOC = {
        "eta": -0.1,
        "p_check": 140.0,
        "z_check": [0.174, 0.19],
        "c2": 0.01,
        "p_bounds": [0.0, 500.0],
        "z_bounds": {"lower": [0.05, 0.05], "upper": [0.5, 0.5]},
        "poset": [],
        "rho_rect": [[0.6, 1.8], [1.4, 4.2]],
        "reservation": None,
    }

    def test_round_trip_bit_exact(self, tmp_path):
        path = tmp_path / "inst.json"
        path.write_text(json.dumps(self.DOC))
        inst = E.load_instance(path)
        out = tmp_path / "back.json"
        E.save_instance(inst, out)
        assert json.loads(out.read_text()) == self.DOC
        # a second hop is byte-identical
        inst2 = E.load_instance(out)
        out2 = tmp_path / "back2.json"
        E.save_instance(inst2, out2)
        assert out2.read_text() == out.read_text()

    def test_dict_reconstruction_without_source(self, market):
        inst = E.build_instance(market, rho_rect=[[0.6, 1.8], [1.4, 4.2]],
                                p_bounds=[0.0, 500.0], c2=0.01)
        doc = E.instance_to_dict(inst)
        inst2 = E.instance_from_dict(doc)
        assert np.allclose(inst2.alpha, inst.alpha)
        assert inst2.cost_coeff == pytest.approx(inst.cost_coeff)
