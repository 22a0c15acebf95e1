import numpy as np
import pytest

from menuprune import geometry
from menuprune.geometry import HalfPlane
from menuprune.model import BasisFunction, Instance, Menu


def toy_instance(c2=0.1, domain=None, p_bounds=(-1e4, 1e4)):
    """Quality-linear toy market on the unit square.

    eta = 0.5 makes alpha = z_ref = (1, 1), so gradients equal qualities and
    any menu with positive gradients is a valid contract family.
    """
    if domain is None:
        domain = geometry.rectangle(0.0, 1.0, 0.0, 1.0)
    big = 1e6
    planes = [
        HalfPlane(np.array([1.0, 0.0]), big),
        HalfPlane(np.array([-1.0, 0.0]), big),
        HalfPlane(np.array([0.0, 1.0]), big),
        HalfPlane(np.array([0.0, -1.0]), big),
    ]
    return Instance(
        domain=domain,
        alpha=np.array([1.0, 1.0]),
        eta=0.5,
        z_ref=np.array([1.0, 1.0]),
        p_ref=0.0,
        cost_coeff=c2,
        p_bounds=p_bounds,
        quality_set=planes,
        reservation=(np.array([0.0, 0.0]), -1e6),
    )


def random_menu(rng, n_contracts, instance=None):
    """Generic random menu: tangent-like planes of a paraboloid plus jitter.

    Gradients stay positive so the toy instance's quality map is valid.
    """
    if instance is None:
        instance = toy_instance()
    pts = rng.uniform(0.05, 0.95, size=(n_contracts, 2))
    grads = 2.0 * pts + rng.normal(0.0, 0.08, size=(n_contracts, 2))
    grads = np.clip(grads, 0.05, 2.5)
    vals = np.sum(pts * pts, axis=1) + rng.normal(0.0, 0.03, size=n_contracts)
    intercepts = vals - np.sum(grads * pts, axis=1)
    basis = [BasisFunction(grads[i], intercepts[i], i) for i in range(n_contracts)]
    return Menu(basis, instance)


def random_polygon(rng, n_pts=8, lo=0.0, hi=1.0):
    pts = rng.uniform(lo, hi, size=(n_pts, 2))
    hull = _convex_hull(pts)
    return geometry.make_polygon(hull)


def _convex_hull(pts):
    """Andrew's monotone chain, independent of the library under test."""
    pts = sorted(map(tuple, pts))
    if len(pts) <= 2:
        return np.asarray(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.asarray(lower[:-1] + upper[:-1])


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
