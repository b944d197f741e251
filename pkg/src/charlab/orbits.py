"""Prime closed characteristics: analytic catalogs, shooting, registry I/O.

Periods are reported in the canonical clock of ``ydot = J grad j(y)`` (the
normal normalised by grad j . y = 1 on the surface).  Under the squared-gauge
flow ``H = j^2`` time runs twice as fast, so those periods are half the
canonical ones.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument, InvariantViolation, SearchFailure
from .flow import GaugeField, Trajectory, integrate_flow
from .geometry import Hypersurface
from .sympl import standard_J


@dataclass
class ClosedCharacteristic:
    """One prime periodic solution of the canonical-clock flow."""

    orbit_id: str
    prime_period: float
    trajectory: Trajectory
    provenance: str                       # analytic | shooting | galerkin
    rho: float | None = None              # gauge level of the loop-problem representative
    critical_value: float | None = None
    multiplicity_of_record: int = 1

    @property
    def period_under_squared_gauge(self) -> float:
        return 0.5 * self.prime_period

    def samples(self):
        return self.trajectory.ts, self.trajectory.xs

    def to_record(self) -> dict:
        ts, xs = self.samples()
        return {
            "id": self.orbit_id,
            "prime_period": self.prime_period,
            "provenance": self.provenance,
            "rho": self.rho,
            "critical_value": self.critical_value,
            "samples": [[float(t)] + [float(v) for v in x]
                        for t, x in zip(ts, xs)],
        }


def surface_residual(surface: Hypersurface, orbit: ClosedCharacteristic) -> float:
    return float(np.max(np.abs(surface.gauge(orbit.trajectory.xs) - 1.0)))


def trajectory_distance(orbit_a: ClosedCharacteristic,
                        orbit_b: ClosedCharacteristic,
                        n_phase: int = 128) -> float:
    """Sup distance between the two loops after optimal time-shift alignment.

    Coarse scan over ``n_phase`` shifts followed by a bounded refinement of
    the best bracket, so coincident loops at a generic relative phase still
    align to interpolation accuracy.
    """
    import scipy.optimize

    ta, xa = orbit_a.samples()
    tb, xb = orbit_b.samples()
    m = min(len(ta), len(tb), 256)
    phases = np.linspace(0.0, 1.0, m, endpoint=False)

    def resample(ts, xs, shift):
        s = (phases + shift) % 1.0
        src = s * ts[-1]
        out = np.empty((m, xs.shape[1]))
        for j in range(xs.shape[1]):
            out[:, j] = np.interp(src, ts, xs[:, j])
        return out

    ya = resample(ta, xa, 0.0)

    def dist(shift):
        return float(np.max(np.linalg.norm(ya - resample(tb, xb, shift),
                                           axis=1)))

    grid = np.linspace(0.0, 1.0, n_phase, endpoint=False)
    vals = [dist(s) for s in grid]
    i = int(np.argmin(vals))
    h = 1.0 / n_phase
    res = scipy.optimize.minimize_scalar(
        dist, bounds=(grid[i] - h, grid[i] + h), method="bounded",
        options={"xatol": 1e-12})
    return min(vals[i], float(res.fun))


def ellipsoid_catalog(surface, *, n_samples: int = 257,
                      rational_q_max: int = 32,
                      rational_tol: float = 1e-9) -> list:
    """The n planar circle orbits of an ellipsoid, sampled analytically.

    Accepts an ellipsoid surface or the radii themselves.  Canonical prime
    periods are 2 pi r_k^2 (pi r_k^2 under the squared-gauge clock).
    Rationally dependent squared radii admit extra orbit families, so the
    catalog warns that it is incomplete in that case.
    """
    if not isinstance(surface, Hypersurface):
        from .geometry import make_ellipsoid
        surface = make_ellipsoid(surface)
    if surface.kind != "ellipsoid":
        raise InvalidArgument("catalog requires an ellipsoid surface")
    radii = np.asarray(surface.meta["radii"], dtype=float)
    n = radii.size
    sq = radii**2
    for i in range(n):
        for j in range(i + 1, n):
            ratio = sq[i] / sq[j]
            frac = Fraction(ratio).limit_denominator(rational_q_max)
            if abs(float(frac) - ratio) < rational_tol:
                warnings.warn(
                    f"squared radii {i+1},{j+1} are rationally dependent "
                    f"({frac}); extra orbit families exist, catalog incomplete",
                    stacklevel=2)
    gf = GaugeField(surface)
    orbits = []
    order = np.argsort(sq)
    for rank, k in enumerate(order):
        tau = 2.0 * np.pi * sq[k]
        ts = np.linspace(0.0, tau, n_samples)
        ang = ts / sq[k]
        xs = np.zeros((n_samples, 2 * n))
        xs[:, k] = radii[k] * np.cos(ang)
        xs[:, n + k] = radii[k] * np.sin(ang)
        traj = Trajectory(ts=ts, xs=xs, period_tau=tau, energy_level=1.0,
                          closure_residual=0.0, energy_drift=0.0,
                          hamiltonian=gf)
        orbits.append(ClosedCharacteristic(
            orbit_id=f"y{rank+1}", prime_period=float(tau), trajectory=traj,
            provenance="analytic"))
    return orbits


def _closure_map(surface: Hypersurface, x0, tau, tol):
    """Flow endpoint, its state derivative (variational matrix) and the field."""
    gf = GaugeField(surface)
    J = gf.J
    d = surface.dim
    import scipy.integrate

    def rhs(t, y):
        x = y[:d]
        V = y[d:].reshape(d, d)
        return np.concatenate([J @ surface.gauge_grad(x),
                               (J @ surface.gauge_hess(x) @ V).ravel()])

    y0 = np.concatenate([x0, np.eye(d).ravel()])
    res = scipy.integrate.solve_ivp(rhs, (0.0, tau), y0, method="DOP853",
                                    rtol=tol, atol=tol)
    if not res.success:
        raise SearchFailure(f"variational integration failed: {res.message}")
    xT = res.y[:d, -1]
    V = res.y[d:, -1].reshape(d, d)
    return xT, V, J @ surface.gauge_grad(xT)


def shoot_for_orbit(surface: Hypersurface, seed_point, period_guess: float,
                    tol: float = 1e-10, max_iter: int = 40,
                    orbit_id: str = "orbit", int_tol: float = 1e-12,
                    prime_check_max: int = 12) -> ClosedCharacteristic:
    """Newton (Gauss-Newton) on the closure map of the canonical flow.

    Unknowns (x0, tau); equations: flow closure, gauge level 1, and a phase
    constraint pinning the time shift against the seed.  Convergence to an
    iterate of a shorter orbit is detected and the prime period returned.
    """
    x0 = np.asarray(seed_point, dtype=float).copy()
    x0 = x0 / surface.gauge(x0)
    tau = float(period_guess)
    v_phase = standard_J(surface.dim_n) @ surface.gauge_grad(x0)
    x_ref = x0.copy()
    d = surface.dim

    def residual(x, t):
        xT, V, f_end = _closure_map(surface, x, t, int_tol)
        F = np.concatenate([xT - x,
                            [surface.gauge(x) - 1.0],
                            [np.dot(x - x_ref, v_phase)]])
        Jac = np.zeros((d + 2, d + 1))
        Jac[:d, :d] = V - np.eye(d)
        Jac[:d, d] = f_end
        Jac[d, :d] = surface.gauge_grad(x)
        Jac[d + 1, :d] = v_phase
        return F, Jac

    F, Jac = residual(x0, tau)
    norm0 = np.linalg.norm(F)
    for it in range(max_iter):
        if np.linalg.norm(F[:d]) <= tol and abs(F[d]) <= tol:
            break
        step, *_ = np.linalg.lstsq(Jac, -F, rcond=None)
        lam = 1.0
        for _bt in range(20):
            x_try = x0 + lam * step[:d]
            t_try = tau + lam * step[d]
            if t_try <= 0:
                lam *= 0.5
                continue
            F_try, Jac_try = residual(x_try, t_try)
            if np.linalg.norm(F_try) < np.linalg.norm(F):
                break
            lam *= 0.5
        else:
            raise SearchFailure(
                f"shooting stalled at residual {np.linalg.norm(F):.3g}")
        x0, tau, F, Jac = x_try, t_try, F_try, Jac_try
    else:
        raise SearchFailure(
            f"shooting did not converge (residual {np.linalg.norm(F):.3g} "
            f"from initial {norm0:.3g})")

    # prime-vs-iterate: try closing at tau/m
    prime_tau = tau
    for m in range(prime_check_max, 1, -1):
        gf = GaugeField(surface)
        sub = integrate_flow(gf, x0, tau / m, tol=int_tol)
        if sub.closure_residual < 100.0 * tol:
            prime_tau = tau / m
            break

    gf = GaugeField(surface)
    traj = integrate_flow(gf, x0, prime_tau, tol=int_tol)
    if traj.closure_residual > 100.0 * tol:
        raise SearchFailure("closure degraded after prime-period reduction")
    return ClosedCharacteristic(orbit_id=orbit_id, prime_period=float(prime_tau),
                                trajectory=traj, provenance="shooting")


def gate_orbit(surface: Hypersurface, orbit: ClosedCharacteristic, *,
               closure_tol: float = 1e-8, surface_tol: float = 1e-8,
               int_tol: float = 1e-12) -> dict:
    """Acceptance gate every orbit passes regardless of provenance:
    re-integration at tightened tolerance must close, and the loop must sit
    on the surface."""
    gf = GaugeField(surface)
    re = integrate_flow(gf, orbit.trajectory.x0, orbit.prime_period, tol=int_tol)
    sres = surface_residual(surface, orbit)
    if re.closure_residual > closure_tol:
        raise InvariantViolation(
            f"orbit {orbit.orbit_id}: closure residual "
            f"{re.closure_residual:.3g} above {closure_tol}")
    if sres > surface_tol:
        raise InvariantViolation(
            f"orbit {orbit.orbit_id}: off-surface by {sres:.3g}")
    return {"closure": re.closure_residual, "surface": sres}


def dedupe_orbits(orbits: list, separation: float = 1e-4) -> list:
    """Fold geometrically coincident orbits (single-writer merge step)."""
    kept = []
    for orb in orbits:
        if any(trajectory_distance(orb, other) < separation for other in kept):
            continue
        kept.append(orb)
    return kept


def find_orbits(surface: Hypersurface, *, seeds=None, tol: float = 1e-10,
                int_tol: float = 1e-12) -> list:
    """Orbit discovery dispatch: analytic catalog for ellipsoids, shooting
    continuation from the base catalog for perturbed ellipsoids, shooting
    from user seeds otherwise."""
    if surface.kind == "ellipsoid":
        return ellipsoid_catalog(surface)
    if surface.kind == "perturbed_ellipsoid":
        from .geometry import make_ellipsoid
        base = make_ellipsoid(surface.meta["radii"])
        catalog = ellipsoid_catalog(base)
        out = []
        for k, orb in enumerate(catalog):
            found = shoot_for_orbit(surface, orb.trajectory.x0,
                                    orb.prime_period, tol=tol,
                                    orbit_id=f"y{k+1}", int_tol=int_tol)
            out.append(found)
        return dedupe_orbits(out)
    if not seeds:
        raise InvalidArgument("custom surfaces need explicit orbit seeds")
    out = []
    for k, s in enumerate(seeds):
        out.append(shoot_for_orbit(surface, np.asarray(s["point"], dtype=float),
                                   float(s["period"]), tol=tol,
                                   orbit_id=f"y{k+1}", int_tol=int_tol))
    return dedupe_orbits(out)


def write_registry(orbits: list, fname, extra: dict | None = None):
    payload = {"orbits": [o.to_record() for o in orbits]}
    if extra:
        payload.update(extra)
    with open(fname, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def load_registry(fname, surface: Hypersurface) -> list:
    with open(fname) as f:
        payload = json.load(f)
    gf = GaugeField(surface)
    out = []
    for rec in payload["orbits"]:
        arr = np.asarray(rec["samples"], dtype=float)
        traj = Trajectory(ts=arr[:, 0], xs=arr[:, 1:],
                          period_tau=rec["prime_period"], energy_level=1.0,
                          closure_residual=float(np.linalg.norm(arr[-1, 1:] - arr[0, 1:])),
                          energy_drift=0.0, hamiltonian=gf)
        out.append(ClosedCharacteristic(
            orbit_id=rec["id"], prime_period=rec["prime_period"],
            trajectory=traj, provenance=rec["provenance"], rho=rec.get("rho"),
            critical_value=rec.get("critical_value")))
    return out
