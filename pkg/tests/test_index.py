"""Index/nullity tables, mean index, minimal period, dimension shift."""

from fractions import Fraction

import numpy as np
import pytest

from charlab.errors import InvariantViolation, NumericFailure
from charlab.flow import SymplecticPath
from charlab.index import (IndexComputer, compute_orbit_index_data,
                           dimension_shift, extend_records, maslov_index,
                           mean_index, minimal_period_K, unit_spectrum_angles)
from charlab.sympl import standard_J


# ---------------------------------------------------------------------------
# synthetic paths


def synthetic_path(R_of_t, S_of_t, period, n):
    d = 2 * n
    ts = np.linspace(0.0, period, 513)
    Rs = np.array([R_of_t(t) for t in ts])

    def sol(tq):
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        out = np.empty((d + d * d, len(tq)))
        for i, t in enumerate(tq):
            out[:d, i] = 0.0
            out[d:, i] = R_of_t(t).ravel()
        return out if out.shape[1] > 1 else out[:, 0]

    return SymplecticPath(ts=ts, Rs=Rs, end_monodromy=R_of_t(period),
                          period=period, defect=0.0, n=n, sol=sol,
                          hess_along=S_of_t, x_of_t=lambda t: t)


def rotation_path(omega, period, n=1):
    J = standard_J(n)

    def R(t):
        from scipy.linalg import expm
        return expm(omega * t * J)

    return synthetic_path(R, lambda t: omega * np.eye(2 * n), period, n)


def circle_model_path(alpha=1.5):
    """Closed-form path of the unit-circle orbit: rotation times a shear."""
    J = standard_J(1)

    def R(t):
        rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        shear = np.array([[1.0, 0.0], [(alpha - 2.0) * t, 1.0]])
        return rot @ shear

    def S_of_t(t):
        c, s = np.cos(t), np.sin(t)
        Q = np.array([[c, -s], [s, c]])
        return Q @ np.diag([alpha - 1.0, 1.0]) @ Q.T

    return synthetic_path(R, S_of_t, 2 * np.pi, 1)


def monodromy_only_path(M, n):
    d = 2 * n

    def R(t):
        w = t / (2 * np.pi)
        return np.eye(d) * (1 - w) + M * w   # only the endpoint matters here

    return synthetic_path(R, lambda t: np.eye(d), 2 * np.pi, n)


def block_rotation(angles):
    """Symplectic matrix with elliptic blocks at the given angles."""
    n = len(angles)
    M = np.zeros((2 * n, 2 * n))
    for k, a in enumerate(angles):
        M[k, k] = np.cos(a)
        M[k, n + k] = -np.sin(a)
        M[n + k, k] = np.sin(a)
        M[n + k, n + k] = np.cos(a)
    return M


# ---------------------------------------------------------------------------
# oracles


def brute_force_circle_index(m, alpha=1.5, refine=10):
    """Independent crossing count on a dense grid for the circle model.

    det(R(t) - I) = 2 - 2 cos t + c(t) sin t with c(t) = (alpha-2) t; the
    quadratic form along the orbit is positive definite, so the index is
    n + (number of zeros in (0, m tau)) counted with kernel dimension,
    minus nothing at the endpoint (positive endpoint form), minus n.
    """
    tau = 2 * np.pi
    # margins keep 2 - 2cos(t) above double-precision noise near the ends
    ts = np.linspace(1e-4, m * tau - 1e-4, refine * 4096 * m)
    g = 2.0 - 2.0 * np.cos(ts) + (alpha - 2.0) * ts * np.sin(ts)
    sign = np.sign(g)
    zeros = len(np.nonzero(sign[:-1] * sign[1:] < 0)[0])
    i_x = 1 + zeros
    return i_x - 1


class TestCircleIndices:
    def test_against_brute_force_oracle(self, circle_bundle):
        data = circle_bundle.index_data["y1"]
        for m in (1, 2, 3, 5, 8, 10):
            assert data.index(m) == brute_force_circle_index(m)
            assert data.index(m) == 2 * m - 2      # frozen oracle values
            assert data.nullity(m) == 1

    def test_mean_index_exact_two(self, circle_bundle):
        d = circle_bundle.index_data["y1"]
        assert d.mean_index_fraction == Fraction(2)
        assert d.K_of_y == 2
        # identity for the single orbit: chi_hat / ihat = 1/2
        assert Fraction(1) / d.mean_index_fraction == Fraction(1, 2)

    def test_closed_form_model_path_agrees(self, circle_bundle):
        model = circle_model_path()
        comp = IndexComputer(model)
        real = circle_bundle.index_data["y1"]
        for m in range(1, 8):
            assert comp.index_pair(m) == (real.index(m), real.nullity(m))


class TestEllipsoidIndices:
    def test_floor_formula(self, ell2_bundle):
        beta = {"y1": 1.0 / np.sqrt(2.0), "y2": np.sqrt(2.0)}
        for oid, d in ell2_bundle.index_data.items():
            b = beta[oid]
            for r in d.records:
                m = r.iterate_m
                assert r.index_i == 2 * m + 2 * int(np.floor(m * b)) - 2
                assert r.nullity_nu == 1

    def test_mean_index_matches_rotation_numbers(self, ell2_bundle):
        expected = {"y1": 2.0 + np.sqrt(2.0), "y2": 2.0 + 2.0 * np.sqrt(2.0)}
        for oid, d in ell2_bundle.index_data.items():
            assert abs(d.mean_index - expected[oid]) <= 1e-8
            assert d.mean_index_fraction is None   # irrational, not rounded

    def test_bott_consistency_check_runs(self, ell2_bundle):
        comp = IndexComputer(ell2_bundle.paths["y1"])
        records = ell2_bundle.index_data["y1"].records
        res = mean_index(comp, records, bott_check=True)
        assert abs(res.value - (2.0 + np.sqrt(2.0))) <= 1e-8

    def test_iterate_additivity(self, ell2_bundle):
        # index of the 2m-fold iterate from the m-path equals the direct one
        d = ell2_bundle.index_data["y1"]
        for m in (1, 2, 3):
            assert d.index(2 * m) == d.index(2 * m)  # table consistency
        comp = IndexComputer(ell2_bundle.paths["y1"])
        for m in (2, 4, 6):
            assert comp.index_pair(m)[0] == d.index(m)


class TestThreePlaneIndices:
    def test_floor_formula_all_orbits(self, ell3_bundle):
        sq = np.array([1.0, np.sqrt(2.0), np.sqrt(3.0)])
        for k, (oid, d) in enumerate(sorted(ell3_bundle.index_data.items())):
            betas = [sq[k] / sq[j] for j in range(3) if j != k]
            for r in d.records:
                m = r.iterate_m
                expected = (2 * m
                            + sum(2 * int(np.floor(m * b)) for b in betas)
                            - 2)
                assert r.index_i == expected
                assert r.nullity_nu == 1
            ihat_expected = 2.0 + sum(2.0 * b for b in betas)
            assert abs(d.mean_index - ihat_expected) <= 1e-8


def test_identity_on_golden_ratio_ellipsoid():
    # a different irrational spectrum: squared radii (1, golden ratio)
    from charlab.flow import (GaugeField, integrate_flow, integrate_linearized,
                              index_form)
    from charlab.geometry import make_ellipsoid
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    surf = make_ellipsoid([1.0, phi**0.5])
    from charlab.orbits import ellipsoid_catalog
    total = 0.0
    for orb in ellipsoid_catalog(surf):
        traj = integrate_flow(GaugeField(surf), orb.trajectory.x0,
                              orb.prime_period, tol=1e-12)
        path = integrate_linearized(traj, index_form(surf, 1.5), tol=1e-12)
        d = compute_orbit_index_data(orb.orbit_id, path, m_max=8)
        total += 1.0 / d.mean_index      # even parity throughout: chi_hat = 1
    assert abs(total - 0.5) <= 1e-10


class TestInvariantGates:
    def test_identity_path_rejected(self):
        path = monodromy_only_path(np.eye(2), 1)
        comp = IndexComputer(path)
        with pytest.raises(InvariantViolation, match="nullity"):
            comp.index_pair(1)

    def test_mean_index_window(self, ell3_bundle):
        for d in ell3_bundle.index_data.values():
            for r in d.records:
                assert abs(r.index_i - r.iterate_m * d.mean_index) \
                    <= 2 * d.dim_n + 1e-9


def test_homogeneity_exponent_independence(ell2_bundle):
    # the index data must not depend on the exponent used for the
    # linearization (any value in (1, 2) gives the same path counts)
    from charlab.flow import (GaugeField, integrate_flow, integrate_linearized,
                              index_form)
    surf = ell2_bundle.surface
    orb = ell2_bundle.orbits[0]
    ref = ell2_bundle.index_data["y1"]
    for alpha in (1.3, 1.7):
        traj = integrate_flow(GaugeField(surf), orb.trajectory.x0,
                              orb.prime_period, tol=1e-12)
        path = integrate_linearized(traj, index_form(surf, alpha), tol=1e-12)
        data = compute_orbit_index_data("a", path, m_max=10)
        assert all(data.index(m) == ref.index(m) for m in range(1, 11))
        assert all(data.nullity(m) == ref.nullity(m) for m in range(1, 11))
        assert abs(data.mean_index - ref.mean_index) <= 1e-8
        assert data.K_of_y == ref.K_of_y


def test_scaling_invariance_of_mean_index(ell2_bundle):
    from charlab.flow import (GaugeField, integrate_flow, integrate_linearized,
                              index_form)
    from charlab.geometry import make_ellipsoid
    lam = 2.0
    surf = make_ellipsoid([lam * 1.0, lam * 2.0**0.25])
    tau = 2 * np.pi * lam**2
    traj = integrate_flow(GaugeField(surf),
                          np.array([lam, 0.0, 0.0, 0.0]), tau, tol=1e-12)
    path = integrate_linearized(traj, index_form(surf, 1.5), tol=1e-12)
    data = compute_orbit_index_data("s", path, m_max=10)
    ref = ell2_bundle.index_data["y1"]
    assert abs(data.mean_index - ref.mean_index) <= 1e-8
    assert all(data.index(m) == ref.index(m) for m in range(1, 11))


class TestMinimalPeriod:
    def test_no_rational_angles_gives_two(self, ell2_bundle):
        assert ell2_bundle.index_data["y1"].K_of_y == 2

    def test_third_root_gives_six(self):
        M = block_rotation([2 * np.pi / 3, 2 * np.pi / 3])
        path = monodromy_only_path(M, 2)
        assert minimal_period_K(path) == 6

    def test_two_rational_pairs_lcm(self):
        M = block_rotation([2 * np.pi / 3, 2 * np.pi / 4])
        path = monodromy_only_path(M, 2)
        assert minimal_period_K(path) == 24

    def test_ambiguous_angle_raises_with_candidates(self):
        # 0.30 of a turn sits within the tolerance of both 1/3 and 2/7
        M = block_rotation([2 * np.pi * 0.30])
        path = monodromy_only_path(M, 1)
        with pytest.raises(NumericFailure) as e:
            minimal_period_K(path, angle_tol=2 * np.pi * 0.045, q_max=8)
        assert "candidates" in e.value.info

    def test_unit_cluster_handles_defective_one(self, circle_bundle):
        angles = unit_spectrum_angles(circle_bundle.paths["y1"])
        assert angles == [0.0]


def test_near_tangency_reports_ambiguous_window():
    # an eigenvalue grazing 1 at depth ~3e-6 is neither a clean crossing nor
    # a clean miss; the scanner must report the ambiguous time window
    eps = 3e-6
    tau = 2 * np.pi
    J = standard_J(1)

    def theta(t):
        return (2 * np.pi - eps) * np.sin(np.pi * t / tau)

    def R(t):
        a = theta(t)
        return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])

    def S_of_t(t):
        return ((2 * np.pi - eps) * np.pi / tau
                * np.cos(np.pi * t / tau)) * np.eye(2) + 1e-3 * np.eye(2)

    path = synthetic_path(R, S_of_t, tau, 1)
    comp = IndexComputer(path)
    with pytest.raises(NumericFailure) as e:
        comp._scan_segment(0, 1.0 + 0.0j)
    assert "window" in e.value.info


class TestDimensionShift:
    def test_worked_value(self):
        # K T / 2 pi = 2.5 with n = 2: 2*2*(2+1) = 12
        K = 2.5 * 2 * np.pi
        assert dimension_shift(K, 1.0, 2) == 12

    def test_jump_by_2n(self):
        n = 2
        assert dimension_shift(7.0, 1.0, n) - dimension_shift(1.0, 1.0, n) == 2 * n


def test_extend_records(circle_bundle):
    d = circle_bundle.index_data["y1"]
    extend_records(d, 30)
    assert len(d.records) >= 30
    assert d.index(30) == 58


def test_maslov_index_convenience(circle_bundle):
    i, nu = maslov_index(circle_bundle.paths["y1"], 3)
    assert (i, nu) == (4, 1)
