"""Star-shaped surfaces, radial profiles, and the convexified Hamiltonian family.

A surface is described by its gauge function ``j`` (positively homogeneous of
degree 1, with the surface itself the level set ``j = 1``).  On top of a
surface we build a family of Hamiltonians

* ``a * phi(j(x))`` with ``phi`` a radial profile that is quadratic-like at 0,
  exactly ``c t^alpha`` on a middle band, and sublinear-slope at infinity;
* an outer modification that turns the far field into ``eps/2 |x|^2``;
* the convexification ``H_K = H + K/2 |x|^2`` together with its Legendre
  (Fenchel) dual evaluated by damped Newton.

Time parametrisation convention used throughout the package: trajectories on
the surface follow ``ydot = J grad j(y)``, for which the normal is normalised
by ``grad j(y) . y = 1`` on the surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from .errors import ConstructionFailure, InvalidArgument, NumericFailure
from .sympl import standard_J

_TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class Hypersurface:
    """A compact star-shaped surface given by its gauge function.

    ``gauge``, ``gauge_grad`` and ``gauge_hess`` accept arrays of shape
    ``(..., 2n)`` and broadcast over leading axes.  All objects are immutable
    after construction.
    """

    dim_n: int
    gauge: Callable[[np.ndarray], np.ndarray]
    gauge_grad: Callable[[np.ndarray], np.ndarray]
    gauge_hess: Callable[[np.ndarray], np.ndarray]
    kind: str
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 2 * self.dim_n

    def point(self, direction: np.ndarray) -> np.ndarray:
        """Radial projection of ``direction`` onto the surface."""
        d = np.asarray(direction, dtype=float)
        return d / self.gauge(d)

    def to_spec(self) -> dict:
        if self.kind == "ellipsoid":
            return {"kind": "ellipsoid", "radii": list(self.meta["radii"])}
        if self.kind == "perturbed_ellipsoid":
            return {
                "kind": "perturbed_ellipsoid",
                "radii": list(self.meta["radii"]),
                "perturbation": {
                    "type": "quartic",
                    "coeffs": list(self.meta["coeffs"]),
                    "magnitude": self.meta["magnitude"],
                },
            }
        raise InvalidArgument(f"cannot serialise surface of kind {self.kind!r}")


def make_ellipsoid(radii) -> Hypersurface:
    """Ellipsoid surface with gauge j(x) = sqrt(sum_k (x_k^2 + x_{n+k}^2) / r_k^2).

    Coordinates are ordered (q_1..q_n, p_1..p_n); the k-th radius governs the
    (q_k, p_k) plane.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 1:
        raise InvalidArgument("radii must be a non-empty 1-d sequence")
    if np.any(radii <= 0):
        raise InvalidArgument("all radii must be positive")
    n = radii.size
    w = np.concatenate([1.0 / radii**2, 1.0 / radii**2])

    def gauge(x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.sum(w * x * x, axis=-1))

    def gauge_grad(x):
        x = np.asarray(x, dtype=float)
        j = gauge(x)
        return w * x / j[..., None]

    def gauge_hess(x):
        x = np.asarray(x, dtype=float)
        j = gauge(x)
        g = w * x / j[..., None]
        eye = np.broadcast_to(np.diag(w), x.shape + (2 * n,))
        return eye / j[..., None, None] - g[..., :, None] * g[..., None, :] / j[..., None, None]

    return Hypersurface(n, gauge, gauge_grad, gauge_hess, "ellipsoid",
                        {"radii": radii.copy()})


def make_perturbed_ellipsoid(radii, coeffs, magnitude) -> Hypersurface:
    """Ellipsoid gauge multiplied by 1 + delta * q(x / j_e(x)) with quartic q.

    ``q(u) = sum_i coeffs[i] * u_i^4`` is evaluated on the radial projection
    onto the base ellipsoid, so the result stays homogeneous of degree 1.
    Star-shapedness requires ``|delta| * max|q|`` on the base surface to be
    well below 1; this is checked by sampling.
    """
    base = make_ellipsoid(radii)
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (base.dim,):
        raise InvalidArgument(f"need {base.dim} quartic coefficients, got {c.shape}")
    delta = float(magnitude)
    n = base.dim_n

    def _q(u):
        return np.sum(c * u**4, axis=-1)

    def gauge(x):
        x = np.asarray(x, dtype=float)
        e = base.gauge(x)
        u = x / e[..., None]
        return e * (1.0 + delta * _q(u))

    def gauge_grad(x):
        x = np.asarray(x, dtype=float)
        e = base.gauge(x)
        ge = base.gauge_grad(x)
        u = x / e[..., None]
        Q = _q(u)
        Gq = 4.0 * c * u**3
        grad_w = Gq - 3.0 * Q[..., None] * ge
        return ge + delta * grad_w

    def gauge_hess(x):
        x = np.asarray(x, dtype=float)
        e = base.gauge(x)
        ge = base.gauge_grad(x)
        He = base.gauge_hess(x)
        u = x / e[..., None]
        Q = _q(u)
        Gq = 4.0 * c * u**3
        Hq = np.zeros(x.shape + (2 * n,))
        idx = np.arange(2 * n)
        Hq[..., idx, idx] = 12.0 * c * u**2
        cross = (Gq[..., :, None] * ge[..., None, :]
                 + ge[..., :, None] * Gq[..., None, :])
        outer_ge = ge[..., :, None] * ge[..., None, :]
        hess_w = ((Hq - 3.0 * cross + 12.0 * Q[..., None, None] * outer_ge)
                  / e[..., None, None] - 3.0 * Q[..., None, None] * He)
        return He + delta * hess_w

    surf = Hypersurface(n, gauge, gauge_grad, gauge_hess, "perturbed_ellipsoid",
                        {"radii": np.asarray(radii, dtype=float),
                         "coeffs": c, "magnitude": delta})
    check_surface_invariants(surf, rng=np.random.default_rng(0))
    return surf


def surface_from_spec(spec: dict) -> Hypersurface:
    """Build a surface from its JSON description."""
    kind = spec.get("kind")
    if kind == "ellipsoid":
        return make_ellipsoid(spec["radii"])
    if kind == "perturbed_ellipsoid":
        pert = spec["perturbation"]
        if pert.get("type") != "quartic":
            raise InvalidArgument(f"unknown perturbation type {pert.get('type')!r}")
        return make_perturbed_ellipsoid(spec["radii"], pert["coeffs"],
                                        pert["magnitude"])
    raise InvalidArgument(f"unknown surface kind {kind!r}")


def check_surface_invariants(surface: Hypersurface, rng=None, n_samples: int = 100,
                             tol: float = 1e-8) -> dict:
    """Sampled gauge invariants: homogeneity, the degree-1 Euler identity,
    star-shapedness, and agreement of grad/hess with finite differences.

    Returns the worst observed defects; raises ConstructionFailure when a
    hard invariant fails.
    """
    rng = rng or np.random.default_rng(0)
    d = surface.dim
    X = rng.normal(size=(n_samples, d))
    X = X[np.linalg.norm(X, axis=1) > 1e-3]
    lam = rng.uniform(0.5, 3.0, size=X.shape[0])

    j = surface.gauge(X)
    hom = np.max(np.abs(surface.gauge(lam[:, None] * X) - lam * j) / (lam * j))
    g = surface.gauge_grad(X)
    euler = np.max(np.abs(np.sum(g * X, axis=1) - j) / j)
    onsurf = X / j[:, None]
    star = np.min(np.sum(surface.gauge_grad(onsurf) * onsurf, axis=1))

    # derivative consistency on a few points
    h = 1e-6
    worst_grad = 0.0
    worst_hess = 0.0
    for x in X[:8]:
        gx = surface.gauge_grad(x)
        Hx = surface.gauge_hess(x)
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            fd_g = (surface.gauge(x + e) - surface.gauge(x - e)) / (2 * h)
            worst_grad = max(worst_grad, abs(fd_g - gx[k]))
            fd_H = (surface.gauge_grad(x + e) - surface.gauge_grad(x - e)) / (2 * h)
            worst_hess = max(worst_hess, float(np.max(np.abs(fd_H - Hx[:, k]))))

    report = {"homogeneity": float(hom), "euler": float(euler),
              "star_min": float(star), "grad_fd": worst_grad,
              "hess_fd": worst_hess}
    if hom > tol or euler > tol:
        raise ConstructionFailure(f"gauge homogeneity/Euler defect too large: {report}")
    if star <= 0:
        raise ConstructionFailure(f"surface is not star-shaped: {report}")
    if worst_grad > 1e-4 or worst_hess > 1e-3:
        raise ConstructionFailure(f"gauge derivatives inconsistent: {report}")
    return report


# ---------------------------------------------------------------------------
# radial profile (the auxiliary function family)


def _cubic(t0, t1, v0, v1, d0, d1) -> np.polynomial.Polynomial:
    """Cubic with prescribed values/slopes at t0, t1 (power basis in t)."""
    A = np.array([[1, t0, t0**2, t0**3],
                  [1, t1, t1**2, t1**3],
                  [0, 1, 2 * t0, 3 * t0**2],
                  [0, 1, 2 * t1, 3 * t1**2]], dtype=float)
    coef = np.linalg.solve(A, np.array([v0, v1, d0, d1], dtype=float))
    return np.polynomial.Polynomial(coef)


@dataclass(frozen=True)
class AuxFunction:
    """C^2 radial profile phi with strictly decreasing slope ratio phi'(t)/t.

    Structure in t >= 0 (knots t1 = 1 and t2):

    * germ  [0, 1]:   slope ratio interpolates from 1 down to 1 - theta,
    * band  [1, t2]:  phi(t) = c t^alpha exactly (slope ratio in [theta, 1-theta]),
    * tail  [t2, oo): slope ratio decays to theta/2.

    The germ is built in slope-ratio space as a monotone piecewise cubic
    whose weighted integral makes phi meet the band value exactly; this keeps
    the decreasing-ratio invariant enforceable by construction plus a dense
    verification sweep, which a direct polynomial join of phi does not.
    """

    theta: float
    alpha: float
    c: float
    knots: tuple
    germ_ratio: tuple          # ((t_lo, t_hi, Polynomial), ...)
    germ_phi: tuple            # ((t_lo, t_hi, Polynomial), ...)
    tail_floor: float          # limit of phi'(t)/t at infinity
    tail_kappa: float

    # -- slope ratio psi(t) = phi'(t)/t ------------------------------------
    def slope_ratio(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        t1, t2 = self.knots
        germ = t < t1
        band = (t >= t1) & (t <= t2)
        tail = t > t2
        for lo, hi, poly in self.germ_ratio:
            m = germ & (t >= lo) & (t < hi)
            out[m] = poly(t[m])
        out[band] = (1.0 - self.theta) * t[band]**(self.alpha - 2.0)
        lf, kap = self.tail_floor, self.tail_kappa
        out[tail] = lf + (self.theta - lf) * (t2 / t[tail])**kap
        return out if out.ndim else float(out)

    def _ratio_deriv(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        t1, t2 = self.knots
        germ = t < t1
        band = (t >= t1) & (t <= t2)
        tail = t > t2
        for lo, hi, poly in self.germ_ratio:
            m = germ & (t >= lo) & (t < hi)
            out[m] = poly.deriv()(t[m])
        out[band] = ((1.0 - self.theta) * (self.alpha - 2.0)
                     * t[band]**(self.alpha - 3.0))
        lf, kap = self.tail_floor, self.tail_kappa
        out[tail] = -(self.theta - lf) * kap * t2**kap * t[tail]**(-kap - 1.0)
        return out if out.ndim else float(out)

    # -- phi and derivatives -------------------------------------------------
    def phi(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        t1, t2 = self.knots
        germ = t < t1
        band = (t >= t1) & (t <= t2)
        tail = t > t2
        for lo, hi, poly in self.germ_phi:
            m = germ & (t >= lo) & (t < hi)
            out[m] = poly(t[m])
        out[band] = self.c * t[band]**self.alpha
        lf, kap = self.tail_floor, self.tail_kappa
        phi_t2 = self.c * t2**self.alpha
        s = t[tail]
        out[tail] = (phi_t2 + lf * (s**2 - t2**2) / 2.0
                     + (self.theta - lf) * t2**kap
                     * (s**(2.0 - kap) - t2**(2.0 - kap)) / (2.0 - kap))
        return out if out.ndim else float(out)

    def dphi(self, t):
        t = np.asarray(t, dtype=float)
        return t * self.slope_ratio(t) if t.ndim else float(t * self.slope_ratio(t))

    def d2phi(self, t):
        t = np.asarray(t, dtype=float)
        val = self.slope_ratio(t) + t * self._ratio_deriv(t)
        return val if val.ndim else float(val)

    def solve_slope_ratio(self, s: float) -> float:
        """Inverse of the slope ratio: the unique t > 0 with phi'(t)/t = s."""
        t1, t2 = self.knots
        lf = self.tail_floor
        if not lf < s < 1.0:
            raise InvalidArgument(
                f"slope ratio {s} outside attainable range ({lf}, 1)")
        if s >= 1.0 - self.theta:      # germ
            return float(scipy.optimize.brentq(
                lambda t: self.slope_ratio(t) - s, 1e-14, t1, xtol=1e-15))
        if s >= self.theta:            # band, closed form
            return float((s / (1.0 - self.theta))**(1.0 / (self.alpha - 2.0)))
        return float(t2 * ((self.theta - lf) / (s - lf))**(1.0 / self.tail_kappa))


def make_aux_function(theta: float, alpha: float) -> AuxFunction:
    """Construct the radial profile for given band parameters.

    Feasibility requires alpha in (2(1-theta), 2): the germ must carry
    weighted mass (1-theta)/alpha between the bounds forced by a monotone
    slope ratio falling from 1 to 1-theta on [0, 1].
    """
    if not 0.0 < theta < 1.0:
        raise InvalidArgument(f"theta must be in (0,1), got {theta}")
    if not 1.0 < alpha < 2.0:
        raise InvalidArgument(f"alpha must be in (1,2), got {alpha}")
    if alpha <= 2.0 * (1.0 - theta):
        raise ConstructionFailure(
            f"bands cannot be joined with a decreasing slope ratio: need "
            f"alpha > 2(1-theta) = {2*(1-theta):.6g}, got alpha = {alpha}")

    c = (1.0 - theta) / alpha
    target = (1.0 - theta) / alpha          # required integral of t*psi on [0,1]
    end_slope = (alpha - 2.0) * (1.0 - theta)
    t_mid = 0.5

    def build_ratio(v: float):
        s1 = (v - 1.0) / t_mid
        s2 = (1.0 - theta - v) / (1.0 - t_mid)
        d_mid = 2.0 * s1 * s2 / (s1 + s2) if s1 * s2 > 0 else 0.0
        p0 = _cubic(0.0, t_mid, 1.0, v, 0.0, d_mid)
        p1 = _cubic(t_mid, 1.0, v, 1.0 - theta, d_mid, end_slope)
        return ((0.0, t_mid, p0), (t_mid, 1.0, p1))

    def germ_integral(v: float) -> float:
        total = 0.0
        for lo, hi, poly in build_ratio(v):
            q = (poly * np.polynomial.Polynomial([0.0, 1.0])).integ()
            total += q(hi) - q(lo)
        return total

    lo_v = 1.0 - theta + 1e-9
    hi_v = 1.0 - 1e-9
    f_lo = germ_integral(lo_v) - target
    f_hi = germ_integral(hi_v) - target
    if f_lo * f_hi > 0:
        raise ConstructionFailure(
            f"germ integral target {target:.6g} not bracketed "
            f"(range [{germ_integral(lo_v):.6g}, {germ_integral(hi_v):.6g}]); "
            f"move alpha closer to 2 or enlarge theta")
    v = scipy.optimize.brentq(lambda vv: germ_integral(vv) - target,
                              lo_v, hi_v, xtol=1e-15, rtol=8.9e-16)
    ratio_pieces = build_ratio(v)

    # phi on the germ: piecewise antiderivative of t*psi(t), continuous from 0
    phi_pieces = []
    acc = 0.0
    for lo, hi, poly in ratio_pieces:
        q = (poly * np.polynomial.Polynomial([0.0, 1.0])).integ()
        phi_pieces.append((lo, hi, q - q(lo) + acc))
        acc += q(hi) - q(lo)

    tail_floor = theta / 2.0
    kappa = (2.0 - alpha) * theta / (theta - tail_floor)   # = 2(2 - alpha)
    t2 = ((1.0 - theta) / theta)**(1.0 / (2.0 - alpha))

    aux = AuxFunction(theta=theta, alpha=alpha, c=c, knots=(1.0, t2),
                      germ_ratio=tuple(ratio_pieces),
                      germ_phi=tuple(phi_pieces),
                      tail_floor=tail_floor, tail_kappa=kappa)

    # dense verification of the strict-decrease invariant
    grid = np.concatenate([np.linspace(1e-6, 1.0, 2001),
                           np.geomspace(1.0, t2 * 4.0, 2001)])
    dr = aux._ratio_deriv(grid)
    if np.any(dr >= 0.0):
        bad = grid[dr >= 0.0][:3]
        raise ConstructionFailure(
            f"slope ratio not strictly decreasing near t = {bad}; "
            f"parameters (theta={theta}, alpha={alpha}) rejected")
    return aux


# ---------------------------------------------------------------------------
# the Hamiltonian family


def _smoothstep3(u):
    """C^3 step: 0 -> 1 on [0, 1] with three vanishing derivatives at the ends."""
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (35.0 - 84.0 * u + 70.0 * u**2 - 20.0 * u**3)


def _smoothstep3_d1(u):
    u = np.asarray(u, dtype=float)
    v = np.clip(u, 0.0, 1.0)
    val = 140.0 * v**3 - 420.0 * v**4 + 420.0 * v**5 - 140.0 * v**6
    return np.where((u > 0.0) & (u < 1.0), val, 0.0)


def _smoothstep3_d2(u):
    u = np.asarray(u, dtype=float)
    v = np.clip(u, 0.0, 1.0)
    val = 420.0 * v**2 - 1680.0 * v**3 + 2100.0 * v**4 - 840.0 * v**5
    return np.where((u > 0.0) & (u < 1.0), val, 0.0)


@dataclass
class HamiltonianSpec:
    """The working Hamiltonian: a*phi(j(x)) inside, eps/2 |x|^2 far out,
    plus the K|x|^2/2 convexification and its Fenchel dual.

    The blend between the two regimes is a C^3 step in the gauge level
    between r_A (where a*phi = cutoff_A) and 2 r_A.
    """

    surface: Hypersurface
    aux: AuxFunction
    a: float
    period_T: float
    K: float
    eps_a: float
    cutoff_A: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.a <= 0 or self.period_T <= 0:
            raise InvalidArgument("a and period_T must be positive")
        if self.eps_a * self.period_T >= _TWO_PI:
            raise InvalidArgument(
                f"eps_a*T must be below 2*pi, got {self.eps_a * self.period_T}")
        frac = self.K * self.period_T / _TWO_PI
        if abs(self.K * self.period_T - _TWO_PI * round(frac)) < 1e-6:
            raise InvalidArgument(
                f"K*T = {self.K*self.period_T} is within 1e-6 of 2*pi*Z")
        level = self.cutoff_A / self.a
        if level <= self.aux.phi(1e-3):
            raise InvalidArgument("cutoff_A too small: blend would start at the origin")
        hi = 1.0
        while self.aux.phi(hi) < level:
            hi *= 2.0
            if hi > 1e30:
                raise InvalidArgument("cutoff_A unreachable")
        self.r_A = float(scipy.optimize.brentq(
            lambda t: self.aux.phi(t) - level, 1e-6, hi, xtol=1e-14))
        self.r_B = 2.0 * self.r_A
        self.J = standard_J(self.surface.dim_n)
        self._run_construction_checks()

    @classmethod
    def with_auto_K(cls, surface, aux, a, period_T, eps_a, cutoff_A,
                    rng_seed: int = 0):
        """Build the family with K chosen from a sampled curvature bound.

        A trial spec is assembled at an inflated K to probe the minimum
        eigenvalue of the K-free Hessian over the whole modeled region (the
        Hessian of the unconvexified part does not depend on K).
        """
        trial = cls(surface=surface, aux=aux, a=a, period_T=period_T,
                    K=_off_resonance(1e9, period_T), eps_a=eps_a,
                    cutoff_A=cutoff_A, rng_seed=rng_seed)
        rng = np.random.default_rng(rng_seed)
        X = trial._sample_cloud(rng)
        lam_min = float(np.min(np.linalg.eigvalsh(trial.hess(X))))
        K = _off_resonance(max(1.0, -1.5 * lam_min + 1.0), period_T)
        return cls(surface=surface, aux=aux, a=a, period_T=period_T, K=K,
                   eps_a=eps_a, cutoff_A=cutoff_A, rng_seed=rng_seed)

    # -- the unmodified a*phi(j) -------------------------------------------
    def htilde(self, x):
        return self.a * self.aux.phi(self.surface.gauge(x))

    # -- H_a with the outer modification -------------------------------------
    def value(self, x):
        x = np.asarray(x, dtype=float)
        r = self.surface.gauge(x)
        inner = self.a * self.aux.phi(r)
        quad = 0.5 * self.eps_a * np.sum(x * x, axis=-1)
        chi = _smoothstep3((r - self.r_A) / (self.r_A))
        return (1.0 - chi) * inner + chi * quad

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r = self.surface.gauge(x)
        g = self.surface.gauge_grad(x)
        aphi_d = self.a * self.aux.dphi(r)
        inner_grad = aphi_d[..., None] * g
        quad = 0.5 * self.eps_a * np.sum(x * x, axis=-1)
        u = (r - self.r_A) / self.r_A
        chi = _smoothstep3(u)
        chi_d = _smoothstep3_d1(u) / self.r_A
        B = quad - self.a * self.aux.phi(r)
        return (inner_grad + chi[..., None] * (self.eps_a * x - inner_grad)
                + (chi_d * B)[..., None] * g)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        r = self.surface.gauge(x)
        g = self.surface.gauge_grad(x)
        Hj = self.surface.gauge_hess(x)
        aphi_d = self.a * self.aux.dphi(r)
        aphi_dd = self.a * self.aux.d2phi(r)
        gg = g[..., :, None] * g[..., None, :]
        inner_hess = aphi_dd[..., None, None] * gg + aphi_d[..., None, None] * Hj
        u = (r - self.r_A) / self.r_A
        chi = _smoothstep3(u)
        chi_d = _smoothstep3_d1(u) / self.r_A
        chi_dd = _smoothstep3_d2(u) / self.r_A**2
        quad = 0.5 * self.eps_a * np.sum(x * x, axis=-1)
        B = quad - self.a * self.aux.phi(r)
        gradB = self.eps_a * x - aphi_d[..., None] * g
        eye = np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],))
        hessB = self.eps_a * eye - inner_hess
        sym = g[..., :, None] * gradB[..., None, :] + gradB[..., :, None] * g[..., None, :]
        return (inner_hess
                + (chi_dd * B)[..., None, None] * gg
                + (chi_d * B)[..., None, None] * Hj
                + chi_d[..., None, None] * sym
                + chi[..., None, None] * hessB)

    # -- convexified H_K ------------------------------------------------------
    def hk_value(self, x):
        x = np.asarray(x, dtype=float)
        return self.value(x) + 0.5 * self.K * np.sum(x * x, axis=-1)

    def hk_grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.grad(x) + self.K * x

    def hk_hess(self, x):
        x = np.asarray(x, dtype=float)
        eye = np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],))
        return self.hess(x) + self.K * eye

    # -- Fenchel dual ---------------------------------------------------------
    def fenchel_batch(self, Y, tol: float = 1e-12, max_iter: int = 80):
        """Legendre transform of H_K at the rows of Y.

        Returns (values, maximisers); the gradient of the dual at y is the
        maximiser x(y), the unique solution of grad H_K(x) = y.
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        npts, d = Y.shape
        scale = np.maximum(1.0, np.linalg.norm(Y, axis=1))
        X = Y / (self.K + self.eps_a)
        X[np.linalg.norm(X, axis=1) < 1e-12] = 1e-9    # keep off the gauge cone tip
        res = self.hk_grad(X) - Y
        rnorm = np.linalg.norm(res, axis=1)
        active = rnorm > tol * scale
        for _ in range(max_iter):
            if not np.any(active):
                break
            Xa = X[active]
            H = self.hk_hess(Xa)
            step = np.linalg.solve(H, res[active][..., None])[..., 0]
            alpha = np.ones(Xa.shape[0])
            base = rnorm[active]
            for _bt in range(30):
                trial = Xa - alpha[:, None] * step
                trial[np.linalg.norm(trial, axis=1) < 1e-12] = 1e-9
                tnorm = np.linalg.norm(self.hk_grad(trial) - Y[active], axis=1)
                bad = tnorm > (1.0 - 0.25 * alpha) * base
                if not np.any(bad):
                    break
                alpha[bad] *= 0.5
            X[active] = Xa - alpha[:, None] * step
            res[active] = self.hk_grad(X[active]) - Y[active]
            rnorm[active] = np.linalg.norm(res[active], axis=1)
            active = rnorm > tol * scale
        if np.any(active):
            raise NumericFailure("Fenchel Newton solve did not converge",
                                 residual=float(np.max(rnorm[active])),
                                 points=int(np.sum(active)))
        vals = np.sum(X * Y, axis=1) - self.hk_value(X)
        return vals, X

    def dual_hess_batch(self, X):
        """Hessian of the dual at y = grad H_K(x), i.e. (H_K''(x))^{-1}."""
        return np.linalg.inv(self.hk_hess(np.atleast_2d(X)))

    # -- construction-time gates ---------------------------------------------
    def _sample_cloud(self, rng, n_pts=400):
        d = self.surface.dim
        dirs = rng.normal(size=(n_pts, d))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        radii = np.geomspace(1e-3, 2.5 * self.r_B, n_pts)
        return dirs * radii[:, None]

    def _run_construction_checks(self):
        rng = np.random.default_rng(self.rng_seed)
        X = self._sample_cloud(rng)
        eigs = np.linalg.eigvalsh(self.hk_hess(X))
        m = float(np.min(eigs[:, 0]))
        if m <= 0:
            raise InvalidArgument(
                f"K = {self.K} leaves H_K non-convex (min Hessian eigenvalue {m:.3g}); "
                f"raise K")
        self.convexity_eps = m
        self.hess_sup = float(np.max(np.linalg.eigvalsh(self.hess(X))))
        # gradient must not vanish in the blend shell
        shell = X[(self.surface.gauge(X) > self.r_A)
                  & (self.surface.gauge(X) < self.r_B)]
        if shell.shape[0]:
            gn = np.linalg.norm(self.grad(shell), axis=1)
            if np.min(gn) < 1e-10:
                raise ConstructionFailure("gradient vanishes in the blend shell")
        # outer curvature bound (soft: recorded, warning-level)
        outer = X[self.surface.gauge(X) > self.r_A]
        if outer.shape[0]:
            self.outer_hess_sup = float(np.max(np.linalg.eigvalsh(self.hess(outer))))
        else:
            self.outer_hess_sup = 0.0


def fenchel_dual(spec: HamiltonianSpec, y):
    """Dual value and dual gradient (the maximiser) at a single point."""
    vals, X = spec.fenchel_batch(np.asarray(y, dtype=float)[None, :])
    return float(vals[0]), X[0]


def _off_resonance(K: float, period_T: float, gap: float = 1e-2) -> float:
    """Nudge K away from the 2*pi/T lattice by at least ``gap`` in K*T."""
    frac = K * period_T / _TWO_PI
    if abs(K * period_T - _TWO_PI * round(frac)) < gap:
        K += 2.0 * gap / period_T
    return K


def spec_for_period(surface: Hypersurface, tau: float, *, period_T: float = 1.0,
                    ratio: float = 0.8, theta: float = 0.08, alpha: float = 1.92,
                    K: float | None = None, eps_a: float | None = None,
                    cutoff_margin: float = 4.0, rng_seed: int = 0) -> HamiltonianSpec:
    """Convenience constructor placing the orbit of period ``tau`` inside the
    homogeneous band at slope ratio ``ratio``.

    ``a`` is set so that tau/(a T) = ratio; the orbit then sits at gauge level
    rho = (slope ratio)^{-1}(ratio), strictly inside the band.  The default
    far-field eps matches the quadratic to the inner level at the blend shell
    (capped below 2*pi/T), which keeps the convexification constant small.
    """
    if not 0.0 < ratio < 1.0 - theta:
        raise InvalidArgument("ratio must lie inside the band (0, 1-theta)")
    aux = make_aux_function(theta, alpha)
    a = tau / (ratio * period_T)
    rho = aux.solve_slope_ratio(ratio)
    r_A = cutoff_margin * rho
    cutoff_A = a * aux.phi(r_A)
    if eps_a is None:
        rng = np.random.default_rng(rng_seed)
        dirs = rng.normal(size=(128, surface.dim))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        sphere = dirs / surface.gauge(dirs)[:, None]
        s_mean = float(np.mean(np.sum(sphere * sphere, axis=1)))
        eps_match = 2.0 * cutoff_A / (r_A**2 * s_mean)
        eps_a = min(eps_match, 0.9 * _TWO_PI / period_T)
    if K is not None:
        return HamiltonianSpec(surface=surface, aux=aux, a=a, period_T=period_T,
                               K=K, eps_a=eps_a, cutoff_A=cutoff_A,
                               rng_seed=rng_seed)
    return HamiltonianSpec.with_auto_K(surface, aux, a, period_T, eps_a,
                                       cutoff_A, rng_seed=rng_seed)
