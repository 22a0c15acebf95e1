"""Electricity-market layer: isoelastic demand and reduction to the
quality-based pricing model.

Customers with reference consumption x and isoelastic (CRRA) utility adapt
their consumption to the variable prices z.  The substitution
q = (z / z_ref)^(-eta / (1 - eta)) makes welfare and invoice linear in
(p, q), turning the tariff design problem into the generic model of
`model.Instance` with a transformed feasible set Q for q.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import geometry, model
from .geometry import HalfPlane
from .model import Instance, ModelError


class ElasticityError(ValueError):
    pass


@dataclass
class MarketParams:
    """Raw market data in invoice units (EUR, EUR/kWh, MWh).

    poset entries are (i1, i2, kappa) meaning z[i1] <= kappa * z[i2].
    """

    eta: float
    z_check: np.ndarray        # reference variable prices, EUR/kWh
    p_check: float             # reference fixed price, EUR
    z_lower: np.ndarray        # EUR/kWh
    z_upper: np.ndarray        # EUR/kWh
    poset: list = field(default_factory=list)

    def __post_init__(self):
        self.z_check = np.asarray(self.z_check, dtype=float)
        self.z_lower = np.asarray(self.z_lower, dtype=float)
        self.z_upper = np.asarray(self.z_upper, dtype=float)
        if not (self.eta < 0.0 or 0.0 < self.eta <= 0.95):
            raise ElasticityError(
                "eta must be negative or in (0, 0.95]; eta = 1 makes the "
                "quality exponent degenerate")
        if np.any(self.z_check <= 0.0):
            raise ElasticityError("reference prices must be positive")
        if np.any(self.z_lower <= 0.0):
            raise ElasticityError("price lower bounds must be positive")
        if np.any(self.z_upper < self.z_lower):
            raise ElasticityError("price bounds must satisfy lower <= upper")
        for (i1, i2, kappa) in self.poset:
            if kappa <= 0.0:
                raise ElasticityError("poset coefficients must be positive")
            if i1 == i2:
                raise ElasticityError("poset relation must be irreflexive")
        self._check_acyclic()

    def _check_acyclic(self):
        edges = [(i1, i2) for (i1, i2, _) in self.poset]
        nodes = {n for e in edges for n in e}
        seen, stack = set(), set()

        def visit(n):
            if n in stack:
                raise ElasticityError("poset relation contains a cycle")
            if n in seen:
                return
            stack.add(n)
            for (a, b) in edges:
                if a == n:
                    visit(b)
            stack.discard(n)
            seen.add(n)

        for n in sorted(nodes):
            visit(n)

    @property
    def quality_exponent(self) -> float:
        """Exponent of z/z_ref in the quality substitution, -eta/(1-eta)."""
        return -self.eta / (1.0 - self.eta)


def _checked_positive(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0.0):
        raise ElasticityError(f"{name} must be positive entrywise")
    if np.any(v < 1e-12) or np.any(v > 1e12):
        raise ElasticityError(f"{name} outside the supported range [1e-12, 1e12]")
    return v


def optimal_consumption(x_ref, z, params: MarketParams) -> np.ndarray:
    """Consumption maximizing utility minus invoice: x_ref * (z/z_ref)^(-1/(1-eta))."""
    z = _checked_positive(z, "prices z")
    x_ref = np.asarray(x_ref, dtype=float)
    return x_ref * (z / params.z_check) ** (-1.0 / (1.0 - params.eta))


def welfare(x_ref, p: float, z, params: MarketParams) -> float:
    """Indirect utility at prices (p, z): consumption surplus minus invoice."""
    z = _checked_positive(z, "prices z")
    x_ref = np.asarray(x_ref, dtype=float)
    ratio = (z / params.z_check) ** params.quality_exponent
    return float((1.0 / params.eta - 1.0) * np.sum(x_ref * params.z_check * ratio)
                 - p)


def to_quality(z, params: MarketParams) -> np.ndarray:
    """Quality coordinates q = (z / z_ref)^(-eta/(1-eta))."""
    z = _checked_positive(z, "prices z")
    return (z / params.z_check) ** params.quality_exponent


def from_quality(q, params: MarketParams) -> np.ndarray:
    """Inverse of to_quality on the positive orthant."""
    q = _checked_positive(q, "quality q")
    return params.z_check * q ** (1.0 / params.quality_exponent)


def build_Q(params: MarketParams) -> list:
    """Feasible quality polytope as half-planes {<n, q> <= c}.

    For eta < 0 the substitution is increasing in z, so price bounds map
    directly; for eta in (0, 1) it is decreasing and the inequalities flip.
    """
    xi = params.quality_exponent
    q_at_lower = (params.z_lower / params.z_check) ** xi
    q_at_upper = (params.z_upper / params.z_check) ** xi
    if params.eta < 0.0:
        lo, hi = q_at_lower, q_at_upper
    else:
        lo, hi = q_at_upper, q_at_lower
    if np.any(lo > hi):
        raise ElasticityError("empty quality polytope: inconsistent bounds")
    planes = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1.0
        planes.append(HalfPlane(e, float(hi[k])))
        planes.append(HalfPlane(-e, float(-lo[k])))
    for (i1, i2, kappa) in params.poset:
        coef = (kappa * params.z_check[i2] / params.z_check[i1]) ** xi
        n = np.zeros(2)
        if params.eta < 0.0:
            n[i1] = 1.0
            n[i2] = -coef
        else:
            n[i1] = -1.0
            n[i2] = coef
        planes.append(HalfPlane(n, 0.0))
    # the polytope must contain at least one of the natural candidates
    candidates = [0.5 * (lo + hi), lo, hi, np.ones(2)]
    if not any(
        all(float(h.normal @ c) <= h.offset + 1e-9 for h in planes)
        for c in candidates
    ):
        raise ElasticityError("empty quality polytope: poset and bounds conflict")
    return planes


def build_instance(market: MarketParams, rho_rect, p_bounds, c2,
                   reservation=None) -> Instance:
    """Assemble the pricing instance in normalized units (EUR/MWh).

    rho_rect    ((x1_lo, x1_hi), (x2_lo, x2_hi)) support of the uniform density
    p_bounds    fixed-price interval in EUR
    c2          quadratic aggregate-cost coefficient; EUR/kWh units per MWh of
                marginal cost, scaled by 1000 internally like the prices
    reservation optional (slope, intercept) override in normalized units;
                defaults to the reference regulated contract
    """
    (x1_lo, x1_hi), (x2_lo, x2_hi) = rho_rect
    domain = geometry.rectangle(x1_lo, x1_hi, x2_lo, x2_hi)
    z_ref = market.z_check * 1000.0            # EUR/kWh -> EUR/MWh
    alpha = (1.0 / market.eta - 1.0) * z_ref
    planes = build_Q(market)
    if reservation is None:
        reservation = (alpha.copy(), -float(market.p_check))
    p_lo, p_hi = float(p_bounds[0]), float(p_bounds[1])
    if not p_lo <= market.p_check <= p_hi:
        raise ElasticityError("reference fixed price outside the price bounds")
    return Instance(
        domain=domain,
        alpha=alpha,
        eta=market.eta,
        z_ref=z_ref,
        p_ref=float(market.p_check),
        cost_coeff=float(c2) * 1000.0,
        p_bounds=(p_lo, p_hi),
        quality_set=planes,
        reservation=reservation,
        market=market,
    )


# ---------------------------------------------------------------------------
# JSON instance files
# ---------------------------------------------------------------------------

def instance_from_dict(doc: dict) -> Instance:
    market = MarketParams(
        eta=doc["eta"],
        z_check=doc["z_check"],
        p_check=doc["p_check"],
        z_lower=doc["z_bounds"]["lower"],
        z_upper=doc["z_bounds"]["upper"],
        poset=[tuple(e) for e in doc.get("poset", [])],
    )
    reservation = None
    if doc.get("reservation") is not None:
        r = doc["reservation"]
        reservation = (np.asarray(r["slope"], dtype=float), float(r["intercept"]))
    inst = build_instance(
        market,
        rho_rect=doc["rho_rect"],
        p_bounds=doc["p_bounds"],
        c2=doc["c2"],
        reservation=reservation,
    )
    inst.source_doc = dict(doc)
    return inst


def instance_to_dict(inst: Instance) -> dict:
    if getattr(inst, "source_doc", None) is not None:
        return dict(inst.source_doc)
    market = inst.market
    if market is None:
        raise ModelError("instance was not built from market parameters")
    v = inst.domain.vertices
    doc = {
        "eta": market.eta,
        "p_check": market.p_check,
        "z_check": market.z_check.tolist(),
        "c2": inst.cost_coeff / 1000.0,
        "p_bounds": [inst.p_bounds[0], inst.p_bounds[1]],
        "z_bounds": {
            "lower": market.z_lower.tolist(),
            "upper": market.z_upper.tolist(),
        },
        "poset": [list(e) for e in market.poset],
        "rho_rect": [
            [float(v[:, 0].min()), float(v[:, 0].max())],
            [float(v[:, 1].min()), float(v[:, 1].max())],
        ],
        "reservation": None,
    }
    return doc


def load_instance(path) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))


def save_instance(inst: Instance, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")
