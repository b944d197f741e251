"""Hamiltonian flow integration and the linearized symplectic path.

Vector fields are ``xdot = J grad H(x)``.  Besides the full modified
Hamiltonian this module ships two canonical fields on a surface:

* ``GaugeField``: H = j itself; on the surface ``grad j(y) . y = 1``, so its
  trajectories carry the canonical time normalisation used for periods.
* ``PowerHamiltonian``: H = j^alpha.

For index work the linearization is integrated along the canonical-clock
trajectory with the effective Hessian ``(alpha-1) g g^T + hess j`` (see
``index_form``).  This is the linearized flow of j^alpha after rescaling time
by the constant factor alpha; rescaling changes no crossing count, monodromy,
index or nullity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.integrate

from .errors import DomainError, NumericFailure
from .geometry import Hypersurface
from .sympl import project_symplectic, standard_J, symplectic_defect


class GaugeField:
    """H = j: the canonical-clock field J grad j."""

    def __init__(self, surface: Hypersurface):
        self.surface = surface
        self.J = standard_J(surface.dim_n)

    def value(self, x):
        return self.surface.gauge(x)

    def grad(self, x):
        return self.surface.gauge_grad(x)

    def hess(self, x):
        return self.surface.gauge_hess(x)


class PowerHamiltonian:
    """H = j^alpha on a surface (alpha = 2 gives the squared-gauge flow)."""

    def __init__(self, surface: Hypersurface, alpha: float):
        self.surface = surface
        self.alpha = float(alpha)
        self.J = standard_J(surface.dim_n)

    def value(self, x):
        return self.surface.gauge(x)**self.alpha

    def grad(self, x):
        j = self.surface.gauge(x)
        g = self.surface.gauge_grad(x)
        return self.alpha * j**(self.alpha - 1.0) * g

    def hess(self, x):
        a = self.alpha
        j = self.surface.gauge(x)
        g = self.surface.gauge_grad(x)
        Hj = self.surface.gauge_hess(x)
        return (a * (a - 1.0) * j**(a - 2.0) * np.outer(g, g)
                + a * j**(a - 1.0) * Hj)


def index_form(surface: Hypersurface, alpha: float) -> Callable:
    """Effective Hessian for the index path along a canonical-clock orbit.

    Equals hess(j^alpha)/alpha restricted to the surface level; the 1/alpha
    factor is the time rescaling between the j^alpha clock and the canonical
    clock and does not affect signs.
    """

    def S(x):
        g = surface.gauge_grad(x)
        return (alpha - 1.0) * np.outer(g, g) + surface.gauge_hess(x)

    return S


@dataclass
class Trajectory:
    """A solved arc of the flow with uniform samples on [0, period_tau]."""

    ts: np.ndarray
    xs: np.ndarray
    period_tau: float
    energy_level: float
    closure_residual: float
    energy_drift: float
    hamiltonian: object = field(repr=False, default=None)
    sol: object = field(repr=False, default=None)

    @property
    def x0(self):
        return self.xs[0]


@dataclass
class SymplecticPath:
    """Fundamental solution R(t) of zdot = J S(x(t)) z over one orbit period.

    ``samples``/``ts`` hold R on a uniform grid, ``end_monodromy`` the value
    at the period.  ``at(t)`` evaluates anywhere in [0, m*period] by the
    iteration rule R(t + k*period) = R(t) R(period)^k.
    """

    ts: np.ndarray
    Rs: np.ndarray
    end_monodromy: np.ndarray
    period: float
    defect: float
    n: int
    sol: object = field(repr=False, default=None)
    hess_along: Callable = field(repr=False, default=None)
    x_of_t: Callable = field(repr=False, default=None)
    _powers: dict = field(default_factory=dict, repr=False)

    def monodromy_power(self, k: int) -> np.ndarray:
        if k not in self._powers:
            if k == 0:
                self._powers[0] = np.eye(2 * self.n)
            else:
                self._powers[k] = self.monodromy_power(k - 1) @ self.end_monodromy
        return self._powers[k]

    def base_at(self, t: float) -> np.ndarray:
        """R(t) for t in [0, period] from the dense solution."""
        d = 2 * self.n
        if self.sol is not None:
            y = self.sol(float(np.clip(t, 0.0, self.period)))
            return y[d:].reshape(d, d)
        i = int(np.clip(np.searchsorted(self.ts, t), 0, len(self.ts) - 1))
        return self.Rs[i]

    def at(self, t: float) -> np.ndarray:
        k, s = divmod(float(t), self.period)
        k = int(k)
        if s < 0:
            s += self.period
            k -= 1
        return self.base_at(s) @ self.monodromy_power(k)

    def S_at(self, t: float) -> np.ndarray:
        s = float(t) % self.period
        return self.hess_along(self.x_of_t(s))


def integrate_flow(hamiltonian, x0, t_end: float, tol: float = 1e-10,
                   n_samples: int = 257, max_gauge: float = None) -> Trajectory:
    """Adaptive high-order integration of xdot = J grad H(x).

    Reported local error tolerance is ``tol``; the energy drift along the
    returned samples must stay within 10 * tol * max(1, t_end) * scale.
    """
    x0 = np.asarray(x0, dtype=float)
    J = hamiltonian.J
    h0 = float(hamiltonian.value(x0))
    if t_end == 0.0:
        return Trajectory(ts=np.zeros(1), xs=x0[None, :], period_tau=0.0,
                          energy_level=h0, closure_residual=0.0,
                          energy_drift=0.0, hamiltonian=hamiltonian)

    def rhs(t, x):
        return J @ hamiltonian.grad(x)

    scale = max(1.0, float(np.linalg.norm(x0)))
    rtol = max(1e-2 * tol, 3e-14)   # local control well under the drift budget
    res = scipy.integrate.solve_ivp(
        rhs, (0.0, t_end), x0, method="DOP853", rtol=rtol,
        atol=rtol * scale, dense_output=True)
    if not res.success:
        raise NumericFailure(f"flow integration failed: {res.message}")
    ts = np.linspace(0.0, t_end, n_samples)
    xs = res.sol(ts).T
    if max_gauge is not None:
        levels = hamiltonian.surface.gauge(xs)
        if np.any(levels > max_gauge):
            raise DomainError("trajectory escaped the modeled region")
    energies = np.array([float(hamiltonian.value(x)) for x in xs])
    drift = float(np.max(np.abs(energies - h0)))
    budget = 10.0 * tol * max(1.0, abs(t_end)) * max(1.0, abs(h0))
    if drift > budget:
        raise NumericFailure("energy drift exceeds tolerance budget",
                             drift=drift, budget=budget)
    return Trajectory(ts=ts, xs=xs, period_tau=float(t_end), energy_level=h0,
                      closure_residual=float(np.linalg.norm(xs[-1] - x0)),
                      energy_drift=drift, hamiltonian=hamiltonian, sol=res.sol)


def integrate_linearized(traj: Trajectory, hess: Callable, tol: float = 1e-11,
                         n_samples: int = 513,
                         defect_gate: float = 1e-6) -> SymplecticPath:
    """Integrate R' = J S(x(t)) R jointly with the base trajectory.

    The state is re-integrated (not interpolated) so that S is evaluated on
    the true orbit.  Samples with symplecticity defect above 1e-10 are
    retracted onto Sp(2n); a defect above ``defect_gate`` raises.
    """
    ham = traj.hamiltonian
    n = ham.J.shape[0] // 2
    d = 2 * n
    J = ham.J
    x0 = traj.x0
    tau = traj.period_tau

    def rhs(t, y):
        x = y[:d]
        R = y[d:].reshape(d, d)
        dx = J @ ham.grad(x)
        dR = J @ hess(x) @ R
        return np.concatenate([dx, dR.ravel()])

    y0 = np.concatenate([x0, np.eye(d).ravel()])
    rtol = max(1e-2 * tol, 3e-14)
    res = scipy.integrate.solve_ivp(
        rhs, (0.0, tau), y0, method="DOP853", rtol=rtol,
        atol=rtol * max(1.0, float(np.linalg.norm(x0))), dense_output=True)
    if not res.success:
        raise NumericFailure(f"linearized integration failed: {res.message}")
    ts = np.linspace(0.0, tau, n_samples)
    ys = res.sol(ts)
    Rs = ys[d:].T.reshape(len(ts), d, d)
    defect = max(symplectic_defect(R, J) for R in Rs[:: max(1, len(ts) // 32)])
    defect = max(defect, symplectic_defect(Rs[-1], J))
    if defect > defect_gate:
        raise NumericFailure("symplecticity defect too large; refine steps",
                             defect=defect)
    monodromy = Rs[-1]
    if defect > 1e-10:
        monodromy = project_symplectic(monodromy, J)
        Rs = np.array([project_symplectic(R, J) for R in Rs])
    sol = res.sol

    def x_of_t(t):
        return sol(float(t))[:d]

    return SymplecticPath(ts=ts, Rs=Rs, end_monodromy=monodromy, period=tau,
                          defect=float(defect), n=n, sol=sol,
                          hess_along=hess, x_of_t=x_of_t)


def floquet_multipliers(path: SymplecticPath, tol: float = 1e-6):
    """Eigenvalues of the end monodromy in symplectic (lambda, 1/conj) classes."""
    from .sympl import pair_multipliers
    vals = np.linalg.eigvals(path.end_monodromy)
    return pair_multipliers(vals, tol=tol)


def path_max_defect(path: SymplecticPath) -> float:
    J = standard_J(path.n)
    return max(symplectic_defect(R, J) for R in path.Rs)


def write_trajectory_csv(traj: Trajectory, fname):
    with open(fname, "w", newline="") as f:
        w = csv.writer(f)
        d = traj.xs.shape[1]
        w.writerow(["t"] + [f"x_{i+1}" for i in range(d)])
        for t, x in zip(traj.ts, traj.xs):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def write_path_csv(path: SymplecticPath, fname):
    with open(fname, "w", newline="") as f:
        w = csv.writer(f)
        d = 2 * path.n
        w.writerow(["t"] + [f"R_{i+1}{j+1}" for i in range(d) for j in range(d)])
        for t, R in zip(path.ts, path.Rs):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in R.ravel()])
