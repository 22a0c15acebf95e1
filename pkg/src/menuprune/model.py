"""Market model: contracts, max-plus menus, revenue with coupling cost.

A contract (p, q) with price p and 2-period quality vector q induces the
affine customer utility x -> <x, alpha * q> - p.  A menu is the upper
envelope of such affine functions; revenue integrates a per-type linear
term over the cell decomposition of the envelope and subtracts a convex
cost of the aggregate consumption.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import ConvexPolygon, HalfPlane, integrate_affine


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Contract:
    """Price (currency) and quality (dimensionless, per period)."""

    p: float
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "p", float(self.p))


@dataclass(frozen=True)
class BasisFunction:
    """Affine utility x -> <g, x> + intercept with g = alpha * q, intercept = -p."""

    g: np.ndarray
    intercept: float
    id: int

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def p(self) -> float:
        return -self.intercept

    def __call__(self, x) -> float:
        return float(self.g @ np.asarray(x, dtype=float)) + self.intercept

    def quality(self, alpha: np.ndarray) -> np.ndarray:
        return self.g / np.asarray(alpha, dtype=float)

    def contract(self, alpha: np.ndarray) -> Contract:
        return Contract(p=-self.intercept, q=self.quality(alpha))


@dataclass
class Instance:
    """Full market problem in normalized units (energy MWh, money EUR).

    domain      type space X (reference consumptions), a convex polygon
    density     uniform customer density, density * area(domain) = 1
    alpha       utility rescaling of quality, (1/eta - 1) * z_ref entrywise
    eta         risk aversion, in (-inf, 0) or (0, 1)
    z_ref       reference variable prices (EUR/MWh)
    p_ref       reference fixed price (EUR)
    cost_coeff  aggregate cost C(E) = cost_coeff * E**2
    p_bounds    (p_min, p_max) price interval
    quality_set half-planes describing the feasible quality polytope Q
    reservation (slope 2-vector, intercept): affine outside option R
    market      raw market parameters this instance was built from, if any
    """

    domain: ConvexPolygon
    alpha: np.ndarray
    eta: float
    z_ref: np.ndarray
    p_ref: float
    cost_coeff: float
    p_bounds: tuple
    quality_set: list
    reservation: tuple
    density: float = 0.0
    market: object = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.z_ref = np.asarray(self.z_ref, dtype=float)
        area = self.domain.area()
        if area <= 0.0:
            raise ModelError("domain has zero area")
        if self.density == 0.0:
            self.density = 1.0 / area
        if abs(self.density * area - 1.0) > 1e-9:
            raise ModelError("density must integrate to one over the domain")
        if not (self.eta < 0.0 or 0.0 < self.eta <= 0.95):
            raise ModelError(
                "risk aversion must be negative or in (0, 0.95]; the change "
                "of variables is singular at eta = 1")
        if np.any(self.z_ref <= 0.0):
            raise ModelError("reference variable prices must be positive")
        if self.cost_coeff < 0.0:
            raise ModelError("cost coefficient must be nonnegative")
        if np.any(self.domain.vertices < 0.0):
            raise ModelError("type space must lie in the nonnegative orthant")
        slope, icpt = self.reservation
        self.reservation = (np.asarray(slope, dtype=float), float(icpt))

    # aggregate cost and its derivative
    def cost(self, energy: float) -> float:
        return self.cost_coeff * energy * energy

    def cost_prime(self, energy: float) -> float:
        return 2.0 * self.cost_coeff * energy

    def reservation_at(self, x) -> float:
        slope, icpt = self.reservation
        return float(slope @ np.asarray(x, dtype=float)) + icpt

    def quality_of(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(g, dtype=float) / self.alpha

    def in_quality_set(self, q, tol: float = 1e-9) -> bool:
        q = np.asarray(q, dtype=float)
        return all(float(h.normal @ q) <= h.offset + tol for h in self.quality_set)

    def margin_coeffs(self, basis: BasisFunction):
        """Affine coefficients (a, b, c) of the per-type margin density
        L(x, u(x), q) = (eta^-1 <x, z_ref*q> - u(x)) * density on the cell
        where `basis` wins."""
        q = self.quality_of(basis.g)
        inv_eta = 1.0 / self.eta
        a = self.density * (inv_eta * self.z_ref[0] * q[0] - basis.g[0])
        b = self.density * (inv_eta * self.z_ref[1] * q[1] - basis.g[1])
        c = self.density * (-basis.intercept)
        return a, b, c

    def consumption_coeffs(self, basis: BasisFunction):
        """Affine coefficients of the consumption density
        M(x, q) = density * sum_k x_k q_k^(1/eta)."""
        q = self.quality_of(basis.g)
        if np.any(q <= 0.0):
            raise ModelError("quality must be positive for consumption")
        e = q ** (1.0 / self.eta)
        return self.density * e[0], self.density * e[1], 0.0


@dataclass
class Menu:
    """Finite family of basis functions over an instance's type space."""

    basis: list
    instance: Instance

    def __post_init__(self):
        if not self.basis:
            raise ModelError("menu must contain at least one basis function")
        ids = [b.id for b in self.basis]
        if len(set(ids)) != len(ids):
            raise ModelError("basis ids must be unique")
        self._refresh_arrays()

    def _refresh_arrays(self):
        self.G = np.array([b.g for b in self.basis], dtype=float)
        self.icpt = np.array([b.intercept for b in self.basis], dtype=float)
        self.ids = np.array([b.id for b in self.basis], dtype=int)

    def __len__(self) -> int:
        return len(self.basis)

    def envelope(self, points: np.ndarray) -> np.ndarray:
        """Envelope values at an (n, 2) array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts @ self.G.T + self.icpt).max(axis=1)

    def values(self, points: np.ndarray) -> np.ndarray:
        """All basis values at an (n, 2) array of points, shape (n, len)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.G.T + self.icpt

    def without(self, drop_ids) -> "Menu":
        drop = set(drop_ids)
        kept = [b for b in self.basis if b.id not in drop]
        return Menu(kept, self.instance)

    def shifted(self, shift: float) -> "Menu":
        lifted = [BasisFunction(b.g, b.intercept + shift, b.id) for b in self.basis]
        return Menu(lifted, self.instance)

    def validate_contracts(self, tol: float = 1e-9):
        p_lo, p_hi = self.instance.p_bounds
        for b in self.basis:
            if not (p_lo - tol <= b.p <= p_hi + tol):
                raise ModelError(f"contract {b.id}: price {b.p} outside bounds")
            if not self.instance.in_quality_set(self.instance.quality_of(b.g), tol):
                raise ModelError(f"contract {b.id}: quality outside the polytope")


def utility_at(menu: Menu, x):
    """Envelope value and winning contract id at a point (lowest id on ties)."""
    vals = menu.values(np.asarray(x, dtype=float))[0]
    best = float(vals.max())
    winners = menu.ids[vals >= best]
    return best, int(winners.min())


def check_ic(u: np.ndarray, q: np.ndarray, alpha: np.ndarray,
             points: np.ndarray) -> dict:
    """Incentive-compatibility residual on a finite grid.

    Reports max over ordered pairs (x, y) of <y - x, alpha*q(x)> - (u(y) - u(x));
    a nonpositive maximum (up to 1e-6) certifies IC on the grid.
    """
    u = np.asarray(u, dtype=float).ravel()
    pts = np.asarray(points, dtype=float)
    grads = np.asarray(q, dtype=float) * np.asarray(alpha, dtype=float)[None, :]
    # A[i, j] = <x_j, grad_i>
    A = grads @ pts.T
    lhs = A - np.diag(A)[:, None]          # <x_j - x_i, grad_i>
    rhs = u[None, :] - u[:, None]          # u_j - u_i
    viol = lhs - rhs
    np.fill_diagonal(viol, -np.inf)
    k = int(np.argmax(viol))
    i, j = divmod(k, viol.shape[1])
    return {
        "max_violation": float(viol[i, j]),
        "worst_pair": (int(i), int(j)),
        "holds": bool(viol[i, j] <= 1e-6),
    }


def revenue(menu: Menu, complex_) -> float:
    """Exact revenue of a menu given its cell decomposition.

    complex_ provides cell polygons per live contract id (see pruning module).
    Raises if the cells fail to partition the type space.
    """
    inst = menu.instance
    dom_area = inst.domain.area()
    total_area = 0.0
    margin = 0.0
    energy = 0.0
    by_id = {b.id: b for b in menu.basis}
    for cid in sorted(complex_.live):
        cell = complex_.cells[cid]
        if cell.polygon.is_empty:
            continue
        total_area += cell.polygon.area()
        b = by_id[cid]
        a1, b1, c1 = inst.margin_coeffs(b)
        margin += integrate_affine(cell.polygon, a1, b1, c1)
        a2, b2, c2 = inst.consumption_coeffs(b)
        energy += integrate_affine(cell.polygon, a2, b2, c2)
    if abs(total_area - dom_area) > 1e-6 * dom_area:
        raise ModelError(
            f"cells do not partition the domain: {total_area} vs {dom_area}")
    return margin - inst.cost(energy)


def lift_participation(menu: Menu, complex_):
    """Shift the menu up so the envelope dominates the reservation utility.

    The shift is max(0, max over cell vertices of R(x) - envelope(x)); since
    R minus each winning basis function is affine per cell, vertices suffice.
    Returns (lifted_menu, shift).
    """
    inst = menu.instance
    slope, icpt = inst.reservation
    by_id = {b.id: b for b in menu.basis}
    worst = -np.inf
    for cid in sorted(complex_.live):
        cell = complex_.cells[cid]
        if cell.polygon.is_empty:
            continue
        b = by_id[cid]
        a = slope[0] - b.g[0]
        bb = slope[1] - b.g[1]
        c = icpt - b.intercept
        val, _ = geometry.max_affine_gap(cell.polygon, a, bb, c)
        worst = max(worst, val)
    shift = max(0.0, worst)
    if shift == 0.0:
        return menu, 0.0
    return menu.shifted(shift), shift
