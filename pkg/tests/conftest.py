"""Shared fixtures: solved orbit/index bundles reused across test modules."""

import pytest

from charlab.flow import (GaugeField, integrate_flow, integrate_linearized,
                          index_form)
from charlab.geometry import make_ellipsoid
from charlab.index import compute_orbit_index_data
from charlab.orbits import ellipsoid_catalog

RADII_2D = [1.0, 2.0**0.25]           # squared ratio sqrt(2), irrational
RADII_3D = [1.0, 2.0**0.25, 3.0**0.25]


class Bundle:
    def __init__(self, surface, orbits, paths, index_data):
        self.surface = surface
        self.orbits = orbits
        self.paths = paths
        self.index_data = index_data


def solve_bundle(radii, m_max=14, alpha=1.5, tol=1e-12):
    surface = make_ellipsoid(radii)
    orbits = ellipsoid_catalog(surface)
    gf = GaugeField(surface)
    S = index_form(surface, alpha)
    paths = {}
    data = {}
    for orb in orbits:
        traj = integrate_flow(gf, orb.trajectory.x0, orb.prime_period, tol=tol)
        paths[orb.orbit_id] = integrate_linearized(traj, S, tol=tol)
        data[orb.orbit_id] = compute_orbit_index_data(
            orb.orbit_id, paths[orb.orbit_id], m_max=m_max)
    return Bundle(surface, orbits, paths, data)


@pytest.fixture(scope="session")
def circle_bundle():
    return solve_bundle([1.0])


@pytest.fixture(scope="session")
def ell2_bundle():
    return solve_bundle(RADII_2D)


@pytest.fixture(scope="session")
def ell3_bundle():
    return solve_bundle(RADII_3D)
