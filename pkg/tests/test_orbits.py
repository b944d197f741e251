"""Catalogs, shooting, orbit gates and the registry format."""

import json

import numpy as np
import pytest

from charlab.errors import SearchFailure
from charlab.geometry import make_ellipsoid, make_perturbed_ellipsoid
from charlab.orbits import (ellipsoid_catalog, dedupe_orbits, find_orbits,
                            gate_orbit, load_registry, shoot_for_orbit,
                            surface_residual, trajectory_distance,
                            write_registry)


def test_circle_catalog_periods():
    surf = make_ellipsoid([1.0])
    cat = ellipsoid_catalog(surf)
    assert len(cat) == 1
    # canonical clock 2 pi r^2; squared-gauge clock is half of that
    assert cat[0].prime_period == pytest.approx(2 * np.pi, rel=1e-14)
    assert cat[0].period_under_squared_gauge == pytest.approx(np.pi, rel=1e-14)


def test_catalog_period_ratio():
    surf = make_ellipsoid([1.0, 2.0**0.25])
    cat = ellipsoid_catalog(surf)
    ratio = cat[1].prime_period / cat[0].prime_period
    assert ratio == pytest.approx(np.sqrt(2.0), rel=1e-14)


def test_catalog_orbits_on_surface():
    surf = make_ellipsoid([1.0, 1.1, 0.9])
    for orb in ellipsoid_catalog(surf):
        assert surface_residual(surf, orb) <= 1e-12


def test_rationally_dependent_radii_warn():
    with pytest.warns(UserWarning, match="rationally dependent"):
        ellipsoid_catalog(make_ellipsoid([1.0, np.sqrt(2.0)]))


def test_shoot_from_exact_orbit_is_fixed_point(ell2_bundle):
    surf, cat = ell2_bundle.surface, ell2_bundle.orbits
    found = shoot_for_orbit(surf, cat[0].trajectory.x0, cat[0].prime_period)
    assert abs(found.prime_period - cat[0].prime_period) <= 1e-10
    assert trajectory_distance(found, cat[0]) <= 1e-9


def test_perturbed_continuation_small_period_shift():
    delta = 1e-3
    base = make_ellipsoid([1.0, 2.0**0.25])
    pert = make_perturbed_ellipsoid([1.0, 2.0**0.25],
                                    [0.3, -0.2, 0.15, 0.1], delta)
    cat = ellipsoid_catalog(base)
    orbs = find_orbits(pert)
    assert len(orbs) == 2
    for orb, ref in zip(orbs, cat):
        assert abs(orb.prime_period - ref.prime_period) <= 10.0 * delta
        gate_orbit(pert, orb)


def test_far_seed_fails_without_fabrication():
    surf = make_ellipsoid([1.0, 2.0**0.25])
    with pytest.raises(SearchFailure):
        shoot_for_orbit(surf, np.array([0.7, 0.6, 0.3, -0.4]), 1.0, max_iter=6)


def test_iterate_folds_to_prime():
    surf = make_ellipsoid([1.0])
    cat = ellipsoid_catalog(surf)
    found = shoot_for_orbit(surf, cat[0].trajectory.x0,
                            2.0 * cat[0].prime_period)
    assert found.prime_period == pytest.approx(cat[0].prime_period, rel=1e-8)


def test_dedupe_folds_coincident():
    surf = make_ellipsoid([1.0, 2.0**0.25])
    cat = ellipsoid_catalog(surf)
    shifted = shoot_for_orbit(surf, cat[0].trajectory.xs[40],
                              cat[0].prime_period)
    kept = dedupe_orbits([cat[0], shifted, cat[1]])
    assert len(kept) == 2


def test_registry_roundtrip(tmp_path, ell2_bundle):
    surf, orbits = ell2_bundle.surface, ell2_bundle.orbits
    f = tmp_path / "orbits.json"
    write_registry(orbits, f)
    loaded = load_registry(f, surf)
    assert [o.orbit_id for o in loaded] == [o.orbit_id for o in orbits]
    for a, b in zip(loaded, orbits):
        assert a.prime_period == b.prime_period
        assert trajectory_distance(a, b) <= 1e-10
    payload = json.loads(f.read_text())
    rec = payload["orbits"][0]
    assert set(rec) >= {"id", "prime_period", "provenance", "samples", "rho",
                        "critical_value"}


def test_every_orbit_passes_flow_closure_gate(ell3_bundle):
    for orb in ell3_bundle.orbits:
        rep = gate_orbit(ell3_bundle.surface, orb)
        assert rep["closure"] <= 1e-8


def test_custom_surface_needs_and_uses_seeds():
    from charlab.errors import InvalidArgument
    from charlab.geometry import Hypersurface, check_surface_invariants

    base = make_ellipsoid([1.0, 2.0**0.25])
    custom = Hypersurface(base.dim_n, base.gauge, base.gauge_grad,
                          base.gauge_hess, "custom")
    check_surface_invariants(custom)
    with pytest.raises(InvalidArgument, match="seeds"):
        find_orbits(custom)
    seeds = [{"point": [1.02, 0.03, -0.02, 0.01], "period": 6.4},
             {"point": [0.02, 1.2, 0.01, 0.05], "period": 8.8}]
    orbs = find_orbits(custom, seeds=seeds)
    assert len(orbs) == 2
    periods = sorted(o.prime_period for o in orbs)
    assert periods[0] == pytest.approx(2 * np.pi, rel=1e-8)
    assert periods[1] == pytest.approx(2 * np.pi * np.sqrt(2.0), rel=1e-8)
