"""Fourier reduction of the dual action functional on T-periodic loops.

The loop space is complexified: x in R^{2n} becomes z in C^n with
z_j = x_j + i x_{n+j}, under which J acts as multiplication by i and the
operator u -> -J u' + K u is diagonal on the modes e^{i omega_k t},
omega_k = 2 pi k / T, with eigenvalue omega_k + K.  Its inverse M_K is the
corresponding diagonal multiplier.

The dual action of a loop u is

    Psi(u) = integral( -1/2 (M_K u . u) + H*(u) ) dt,

whose critical points are exactly the T-periodic solutions of the
Hamiltonian system via x = M_K u.  The reduction subspace G is spanned by
the modes whose -M_K eigenvalue -1/(omega_k + K) lies below -omega/2, where
omega is the monotonicity modulus of grad H*; on the complement the
functional is strictly convex with modulus omega/2, so the inner problem has
a unique minimiser h(g) and psi(g) = Psi(g + h(g)) is a finite-dimensional
functional whose Morse index and nullity at a critical point match those of
Psi.  Critical points are located by a bordered Newton iteration (the border
removes the time-shift circle direction); this finds exactly the critical
points of psi by the reduction's critical-point correspondence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (InvalidArgument, NumericFailure, SearchFailure)
from .flow import GaugeField, Trajectory
from .geometry import HamiltonianSpec, Hypersurface, spec_for_period
from .index import KShiftCheck, dimension_shift
from .orbits import ClosedCharacteristic

_TWO_PI = 2.0 * np.pi


def estimate_dual_modulus(spec, rng, n_pairs: int = 400, scale: float = None) -> float:
    """Sampled monotonicity modulus of grad H* (halved for safety).

    The geometric bound 1/(K + sup ||H''||) is intersected with a sampled
    minimum of the monotonicity quotient over random pairs.
    """
    geom = 1.0 / (spec.K + max(spec.hess_sup, 0.0))
    if scale is None:
        scale = 10.0 * (1.0 + spec.K)
    U = rng.normal(size=(n_pairs, spec.surface.dim)) * scale
    V = U + rng.normal(size=U.shape) * (0.1 * scale)
    _, XU = spec.fenchel_batch(U)
    _, XV = spec.fenchel_batch(V)
    num = np.sum((XU - XV) * (U - V), axis=1)
    den = np.sum((U - V)**2, axis=1)
    sampled = float(np.min(num / den))
    return 0.5 * min(geom, sampled)


@dataclass
class GalerkinSystem:
    """Truncated loop space with the reduction subspace G marked out."""

    spec: object                   # HamiltonianSpec or compatible
    mode_cut: int
    omega: float                   # convexity modulus used for the G threshold
    n_grid: int
    freqs: np.ndarray              # integer mode numbers, fft order, active only
    in_G: np.ndarray               # boolean mask on active modes
    n: int

    # ---- representation helpers -------------------------------------------
    @property
    def n_active(self) -> int:
        return len(self.freqs)

    @property
    def dim_vec(self) -> int:
        return 2 * self.n * self.n_active

    @property
    def G_dim(self) -> int:
        return 2 * self.n * int(np.sum(self.in_G))

    def vec_mask_G(self) -> np.ndarray:
        m = np.repeat(self.in_G, self.n)
        return np.concatenate([m, m])    # [all Re | all Im] layout

    def coeffs_from_vec(self, vec: np.ndarray) -> np.ndarray:
        half = self.dim_vec // 2
        re = vec[:half].reshape(self.n_active, self.n)
        im = vec[half:].reshape(self.n_active, self.n)
        return re + 1j * im

    def vec_from_coeffs(self, C: np.ndarray) -> np.ndarray:
        return np.concatenate([C.real.ravel(), C.imag.ravel()])

    def grid_z_from_coeffs(self, C: np.ndarray) -> np.ndarray:
        full = np.zeros((self.n_grid, self.n), dtype=complex)
        full[self.freqs % self.n_grid] = C
        return np.fft.ifft(full, axis=0)

    def coeffs_from_grid_z(self, z: np.ndarray) -> np.ndarray:
        full = np.fft.fft(z, axis=0)
        return full[self.freqs % self.n_grid]

    def x_from_z(self, z: np.ndarray) -> np.ndarray:
        return np.concatenate([z.real, z.imag], axis=-1)

    def z_from_x(self, x: np.ndarray) -> np.ndarray:
        return x[..., :self.n] + 1j * x[..., self.n:]

    def grid_x(self, vec: np.ndarray) -> np.ndarray:
        return self.x_from_z(self.grid_z_from_coeffs(self.coeffs_from_vec(vec)))

    # ---- the functional -----------------------------------------------------
    def _mk_multipliers(self) -> np.ndarray:
        T = self.spec.period_T
        return _TWO_PI * self.freqs / T + self.spec.K

    def value(self, vec: np.ndarray) -> float:
        T = self.spec.period_T
        C = self.coeffs_from_vec(vec)
        lam = self._mk_multipliers()
        quad = -0.5 * (T / self.n_grid**2) * float(
            np.sum(np.abs(C)**2 / lam[:, None]))
        X = self.grid_x(vec)
        vals, _ = self.spec.fenchel_batch(X)
        return quad + (T / self.n_grid) * float(np.sum(vals))

    def gradient(self, vec: np.ndarray) -> np.ndarray:
        """Euclidean gradient in vec coordinates (includes the T/N^2 metric)."""
        T = self.spec.period_T
        C = self.coeffs_from_vec(vec)
        lam = self._mk_multipliers()
        X = self.grid_x(vec)
        _, Xstar = self.spec.fenchel_batch(X)
        ghat = self.coeffs_from_grid_z(self.z_from_x(Xstar)) - C / lam[:, None]
        return (T / self.n_grid**2) * self.vec_from_coeffs(ghat)

    def hessian(self, vec: np.ndarray) -> np.ndarray:
        """Assembled Hessian of Psi in vec coordinates."""
        T = self.spec.period_T
        lam = self._mk_multipliers()
        X = self.grid_x(vec)
        _, Xstar = self.spec.fenchel_batch(X)
        W = np.linalg.inv(self.spec.hk_hess(Xstar))     # dual Hessian, pointwise
        dim = self.dim_vec
        half = dim // 2
        # all basis columns at once: delta grids for unit Re/Im coefficients
        phase = np.exp(2j * np.pi * np.outer(self.freqs, np.arange(self.n_grid))
                       / self.n_grid) / self.n_grid     # (n_active, n_grid)
        cols_z = np.zeros((dim, self.n_grid, self.n), dtype=complex)
        for a in range(self.n_active):
            for j in range(self.n):
                c = a * self.n + j
                cols_z[c, :, j] = phase[a]
                cols_z[half + c, :, j] = 1j * phase[a]
        cols_x = np.concatenate([cols_z.real, cols_z.imag], axis=-1)
        Wcols = np.einsum("mij,cmj->cmi", W, cols_x)
        wz = Wcols[..., :self.n] + 1j * Wcols[..., self.n:]
        what = np.fft.fft(wz, axis=1)[:, self.freqs % self.n_grid, :]
        re = what.real.reshape(dim, half)
        im = what.imag.reshape(dim, half)
        Hmat = np.concatenate([re, im], axis=1).T * (T / self.n_grid**2)
        # -M_K diagonal part
        dvals = np.repeat(-1.0 / lam, self.n)
        diag = np.concatenate([dvals, dvals]) * (T / self.n_grid**2)
        Hmat[np.arange(dim), np.arange(dim)] += diag
        Hmat = 0.5 * (Hmat + Hmat.T)
        return Hmat

    # ---- inner problem and the reduced functional ---------------------------
    def inner_solve(self, vec_g: np.ndarray, h0: np.ndarray | None = None,
                    tol: float = 1e-10, max_iter: int = 60) -> np.ndarray:
        """Minimise Psi(g + h) over the non-G modes (strictly convex)."""
        maskH = ~self.vec_mask_G()
        idxH = np.nonzero(maskH)[0]
        h = np.zeros(self.dim_vec) if h0 is None else h0.copy()
        h[~maskH] = 0.0
        metric = self.spec.period_T / self.n_grid**2
        for _ in range(max_iter):
            vec = vec_g + h
            g_full = self.gradient(vec)
            gH = g_full[idxH]
            resid = float(np.linalg.norm(gH)) / np.sqrt(metric)
            if resid <= tol:
                return h
            Hmat = self.hessian(vec)[np.ix_(idxH, idxH)]
            step = np.linalg.solve(Hmat, gH)
            val0 = self.value(vec)
            lam = 1.0
            for _bt in range(30):
                h_try = h.copy()
                h_try[idxH] -= lam * step
                if self.value(vec_g + h_try) < val0 + 1e-12 * abs(val0):
                    break
                lam *= 0.5
            h[idxH] -= lam * step
        raise NumericFailure("inner convex solve did not reach tolerance",
                             residual=resid)

    def psi_value(self, vec_g: np.ndarray, **kw) -> float:
        h = self.inner_solve(vec_g, **kw)
        return self.value(vec_g + h)

    def psi_gradient(self, vec_g: np.ndarray, **kw) -> np.ndarray:
        h = self.inner_solve(vec_g, **kw)
        g = self.gradient(vec_g + h)
        g[~self.vec_mask_G()] = 0.0
        return g

    # ---- critical points -----------------------------------------------------
    def newton_critical(self, vec0: np.ndarray, tol: float = 1e-10,
                        max_iter: int = 60) -> np.ndarray:
        """Bordered Newton for Psi'(u) = 0 with a time-shift phase pin."""
        metric = self.spec.period_T / self.n_grid**2
        l2 = lambda v: float(np.linalg.norm(v)) / np.sqrt(metric)
        C_ref = self.coeffs_from_vec(vec0)
        omega_k = _TWO_PI * self.freqs / self.spec.period_T
        phase_vec = self.vec_from_coeffs(1j * omega_k[:, None] * C_ref)
        pn = np.linalg.norm(phase_vec)
        if pn < 1e-14:
            raise SearchFailure("seed has no time dependence; cannot pin phase")
        phase_vec /= pn
        vec = vec0.copy()
        dim = self.dim_vec
        for it in range(max_iter):
            g = self.gradient(vec)
            resid = l2(g)
            if resid <= tol:
                return vec
            H = self.hessian(vec)
            A = np.zeros((dim + 1, dim + 1))
            A[:dim, :dim] = H
            A[:dim, dim] = phase_vec
            A[dim, :dim] = phase_vec
            rhs = np.concatenate([-g, [-np.dot(vec - vec0, phase_vec)]])
            sol = np.linalg.solve(A, rhs)
            step = sol[:dim]
            lam = 1.0
            for _bt in range(25):
                if l2(self.gradient(vec + lam * step)) < resid * (1 - 1e-4 * lam) + 1e-16:
                    break
                lam *= 0.5
            else:
                raise SearchFailure(f"critical-point Newton stalled at {resid:.3g}")
            vec = vec + lam * step
        raise SearchFailure(f"critical-point Newton did not converge ({resid:.3g})")

    def morse_data(self, vec_crit: np.ndarray, null_tol: float = 1e-7):
        """(morse index, nullity) of the reduced functional at a critical point.

        The reduced Hessian is the Schur complement of the non-G block of the
        full Hessian; its negative and null eigenvalue counts match the index
        and nullity of the dual action functional at the critical point.
        """
        H = self.hessian(vec_crit)
        maskG = self.vec_mask_G()
        iG = np.nonzero(maskG)[0]
        iH = np.nonzero(~maskG)[0]
        A = H[np.ix_(iG, iG)]
        B = H[np.ix_(iG, iH)]
        D = H[np.ix_(iH, iH)]
        red = A - B @ np.linalg.solve(D, B.T)
        ev = np.linalg.eigvalsh(red)
        scale = max(float(np.max(np.abs(ev))), 1e-300)
        morse = int(np.sum(ev < -null_tol * scale))
        nullity = int(np.sum(np.abs(ev) <= null_tol * scale))
        return morse, nullity, ev


def build_galerkin(spec, mode_cut: int, *, n_grid: int | None = None,
                   omega: float | None = None, rng=None) -> GalerkinSystem:
    """Assemble the truncated loop space for a Hamiltonian spec.

    Raises when ``mode_cut`` cannot contain the threshold set of G.
    """
    n = spec.surface.dim_n if hasattr(spec, "surface") else spec.dim_n
    T = spec.period_T
    if omega is None:
        rng = rng or np.random.default_rng(0)
        omega = estimate_dual_modulus(spec, rng)
    lo = -spec.K * T / _TWO_PI
    hi = (2.0 / omega - spec.K) * T / _TWO_PI
    k_needed = max(int(np.ceil(abs(lo))), int(np.ceil(abs(hi))))
    if mode_cut < k_needed:
        raise InvalidArgument(
            f"mode_cut {mode_cut} cannot contain the reduction threshold set "
            f"(need {k_needed})")
    if n_grid is None:
        n_grid = 1
        while n_grid < 4 * mode_cut or n_grid < 128:
            n_grid *= 2
    freqs = np.concatenate([np.arange(0, mode_cut + 1),
                            np.arange(-mode_cut, 0)])
    lam = _TWO_PI * freqs / T + spec.K
    in_G = (lam > 0) & (lam < 2.0 / omega)
    return GalerkinSystem(spec=spec, mode_cut=mode_cut, omega=float(omega),
                          n_grid=n_grid, freqs=freqs, in_G=in_G, n=n)


# ---------------------------------------------------------------------------
# orbit conversions


def seed_from_orbit(sys: GalerkinSystem, orbit: ClosedCharacteristic,
                    m: int = 1) -> np.ndarray:
    """Loop-space seed u = -J x' + K x for the m-th iterate representative."""
    spec = sys.spec
    aux = spec.aux
    tau_m = m * orbit.prime_period
    ratio = tau_m / (spec.a * spec.period_T)
    rho = aux.solve_slope_ratio(ratio)
    ts_grid = np.arange(sys.n_grid) * spec.period_T / sys.n_grid
    s = (tau_m * ts_grid / spec.period_T) % orbit.prime_period
    ots, oxs = orbit.trajectory.ts, orbit.trajectory.xs
    x = np.empty((sys.n_grid, 2 * sys.n))
    for j in range(2 * sys.n):
        x[:, j] = rho * np.interp(s, ots, oxs[:, j])
    C = sys.coeffs_from_grid_z(sys.z_from_x(x))
    lam = sys._mk_multipliers()
    return sys.vec_from_coeffs(C * lam[:, None])


def orbit_from_critical(sys: GalerkinSystem, vec: np.ndarray, orbit_id: str,
                        n_samples: int = 257, coeff_tol: float = 1e-8):
    """Convert a critical loop back to a canonical-clock characteristic.

    Returns (orbit, info) with the gauge level rho, the loop period read off
    the slope-ratio relation, the iterate multiplicity detected from the
    coefficient support, and the critical value of the dual action.
    """
    spec = sys.spec
    C = sys.coeffs_from_vec(vec)
    lam = sys._mk_multipliers()
    Xc = C / lam[:, None]
    z = sys.grid_z_from_coeffs(Xc)
    x = sys.x_from_z(z)
    levels = spec.surface.gauge(x)
    rho = float(np.mean(levels))
    level_spread = float(np.max(np.abs(levels - rho)))
    ratio = spec.aux.slope_ratio(rho)
    tau_total = spec.a * spec.period_T * float(ratio)
    weights = np.linalg.norm(Xc, axis=1)
    big = np.nonzero(weights > coeff_tol * np.max(weights))[0]
    mult = 0
    for i in big:
        mult = math.gcd(mult, abs(int(sys.freqs[i])))
    mult = max(mult, 1)
    tau_prime = tau_total / mult
    # resample one prime wrap of y(s) = x(s T / tau_total)/rho on [0, tau_prime)
    ss = np.linspace(0.0, tau_prime, n_samples)
    t_eval = ss * spec.period_T / tau_total
    phases = np.exp(2j * np.pi * np.outer(t_eval / spec.period_T, sys.freqs))
    y_z = phases @ Xc / sys.n_grid / rho
    ys = np.concatenate([y_z.real, y_z.imag], axis=-1)
    gf = GaugeField(spec.surface)
    traj = Trajectory(ts=ss, xs=ys, period_tau=float(tau_prime),
                      energy_level=1.0,
                      closure_residual=float(np.linalg.norm(ys[-1] - ys[0])),
                      energy_drift=0.0, hamiltonian=gf)
    orb = ClosedCharacteristic(orbit_id=orbit_id, prime_period=float(tau_prime),
                               trajectory=traj, provenance="galerkin", rho=rho,
                               critical_value=float(sys.value(vec)),
                               multiplicity_of_record=mult)
    info = {"rho": rho, "level_spread": level_spread, "multiplicity": mult,
            "tau_total": tau_total}
    return orb, info


def critical_value_formula(spec: HamiltonianSpec, rho: float) -> float:
    """Closed form of the dual action at a critical loop of gauge level rho."""
    T = spec.period_T
    return (0.5 * spec.a * spec.aux.dphi(rho) * rho * T
            - spec.a * spec.aux.phi(rho) * T)


def galerkin_critical_points(sys: GalerkinSystem, seeds, *, tol: float = 1e-10,
                             zero_tol: float = 1e-8) -> list:
    """Newton search from the given seed vectors; constant (zero) solutions
    are filtered out, duplicates folded."""
    found = []
    for k, s in enumerate(seeds):
        vec = sys.newton_critical(np.asarray(s, dtype=float), tol=tol)
        metric_norm = float(np.linalg.norm(vec))
        if metric_norm < zero_tol:
            continue
        orb, info = orbit_from_critical(sys, vec, orbit_id=f"g{k+1}")
        found.append((vec, orb, info))
    from .orbits import trajectory_distance
    out = []
    for vec, orb, info in found:
        dup = False
        for _, other, _ in out:
            if (abs(orb.prime_period - other.prime_period)
                    < 1e-6 * max(1.0, other.prime_period)
                    and trajectory_distance(orb, other) < 1e-4):
                dup = True
                break
        if not dup:
            out.append((vec, orb, info))
    return out


# ---------------------------------------------------------------------------
# K-shift audit


def suggest_K_grid(surface: Hypersurface, tau_m: float, *, period_T: float = 1.0,
                   n_points: int = 5, ratio: float = 0.8, theta: float = 0.08,
                   alpha: float = 1.92, rng_seed: int = 0) -> list:
    """A K grid starting at the auto-convexity floor and spanning at least one
    2 pi / T multiple (so the dimension shift d(K) jumps inside the grid)."""
    spec = spec_for_period(surface, tau_m, period_T=period_T, ratio=ratio,
                           theta=theta, alpha=alpha, rng_seed=rng_seed)
    step = _TWO_PI / period_T
    offsets = np.linspace(0.0, 1.25 * step, n_points)
    grid = []
    for off in offsets:
        K = spec.K + off
        frac = K * period_T / _TWO_PI
        if abs(K * period_T - _TWO_PI * round(frac)) < 1e-2:
            K += 0.05 * step
        grid.append(float(K))
    return grid


def k_shift_audit(surface: Hypersurface, orbit: ClosedCharacteristic,
                  K_values, *, iterate_m: int = 1, path_index: int = 0,
                  path_nullity: int = 1, period_T: float = 1.0,
                  ratio: float = 0.8, mode_cut: int | None = None,
                  theta: float = 0.08, alpha: float = 1.92,
                  rng_seed: int = 0) -> KShiftCheck:
    """Morse data of the reduced functional across a K grid.

    Verifies that the Morse index minus d(K) = 2n(floor(KT/2pi)+1) is
    constant across the grid and equals the path index i(y^m), and that the
    nullity is constant and matches the path nullity.
    """
    n = surface.dim_n
    taum = iterate_m * orbit.prime_period
    d_list, morse_list, null_list, shifted = [], [], [], []
    for K in K_values:
        spec = spec_for_period(surface, taum, period_T=period_T, ratio=ratio,
                               theta=theta, alpha=alpha, K=float(K),
                               rng_seed=rng_seed)
        rng = np.random.default_rng(rng_seed)
        omega = estimate_dual_modulus(spec, rng)
        need = int(np.ceil((2.0 / omega) * period_T / _TWO_PI)) + 2
        mc = mode_cut if mode_cut is not None else need + 8
        sys = build_galerkin(spec, mc, omega=omega)
        seed = seed_from_orbit(sys, orbit, m=iterate_m)
        vec = sys.newton_critical(seed)
        morse, nullity, _ = sys.morse_data(vec)
        d = dimension_shift(float(K), period_T, n)
        d_list.append(d)
        morse_list.append(morse)
        null_list.append(nullity)
        shifted.append(morse - d)
    consistent = (all(s == path_index for s in shifted)
                  and all(nu == path_nullity for nu in null_list))
    return KShiftCheck(K_values=list(map(float, K_values)), d_of_K=d_list,
                       morse_indices=morse_list, nullities=null_list,
                       shifted=shifted, path_index=path_index,
                       path_nullity=path_nullity, consistent=consistent)
