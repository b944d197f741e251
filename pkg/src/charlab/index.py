"""Maslov-type index, nullity, mean index and minimal period of an orbit path.

The integer index of the m-fold iterated path is accumulated from regular
crossings of ``det(R(t) - I) = 0``:

* the start contributes half the signature of the quadratic form S(0);
* each interior crossing contributes the signature of S(t) restricted to
  ker(R(t) - I);
* the endpoint contributes minus the number of negative eigenvalues of that
  restriction (the lower choice among nearby nondegenerate paths).

The same scan at ``det(R(t) - omega I) = 0`` for unit ``omega`` off the
monodromy spectrum yields a locally constant function of the angle; its
average over the circle is the mean index.  That average is a finite sum over
the arcs cut by the monodromy's unit eigenvalue angles, so the mean index
inherits eigenvalue accuracy (~1e-12) rather than the O(1/m) slope-fit rate.
The slope fit over the integer index table is kept as a certified cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.optimize

from .errors import (ConsistencyFailure, InvalidArgument, InvariantViolation,
                     NumericFailure)
from .flow import SymplecticPath

_TWO_PI = 2.0 * np.pi


@dataclass
class IndexRecord:
    """Index data of one iterate of one orbit."""

    orbit_id: str
    iterate_m: int
    index_i: int
    nullity_nu: int


@dataclass
class OrbitIndexData:
    """Aggregated index data of a prime orbit."""

    orbit_id: str
    dim_n: int
    records: list                     # IndexRecord for m = 1..m_max
    mean_index: float
    mean_index_fraction: Fraction | None
    mean_index_bar: float
    slope_estimate: float
    K_of_y: int
    method: str = "both"

    def index(self, m: int) -> int:
        return self.records[m - 1].index_i

    def nullity(self, m: int) -> int:
        return self.records[m - 1].nullity_nu

    @property
    def mean_index_exact(self):
        return (self.mean_index_fraction if self.mean_index_fraction is not None
                else self.mean_index)


class IndexComputer:
    """Incremental crossing scanner over iterates of a symplectic path."""

    def __init__(self, path: SymplecticPath, *, n_scan: int = 2048,
                 sigma_gate: float = 1e-7, reg_tol: float = 1e-8,
                 nullity_tol: float = 1e-6):
        self.path = path
        self.n = path.n
        self.d = 2 * path.n
        self.tau = path.period
        self.sigma_gate = sigma_gate
        self.reg_tol = reg_tol
        self.nullity_tol = nullity_tol
        ss = np.linspace(0.0, self.tau, n_scan + 1)
        margin = 1e-7 * self.tau
        ss[0] = margin
        ss[-1] = self.tau - margin
        self.scan_ts = ss
        if path.sol is not None:
            ys = path.sol(ss)
            self.scan_Rs = ys[self.d:].T.reshape(len(ss), self.d, self.d)
        else:
            self.scan_Rs = np.array([path.base_at(t) for t in ss])
        S0 = path.S_at(0.0)
        eig0 = np.linalg.eigvalsh(S0)
        if np.min(np.abs(eig0)) < self.reg_tol * np.max(np.abs(eig0)):
            raise NumericFailure("singular Hessian at the start of the path")
        sig0 = int(np.sum(eig0 > 0) - np.sum(eig0 < 0))
        if sig0 % 2:
            raise NumericFailure("odd start signature; path data inconsistent")
        self._start_half = sig0 // 2
        self._interior_cache: dict = {}       # k -> signature sum in (k tau, (k+1) tau)
        self._boundary_cache: dict = {}       # k -> signature at t = k tau (or 0)
        self._nullity_cache: dict = {}

    # -- kernels and crossing forms -----------------------------------------
    def _mono_power(self, k: int) -> np.ndarray:
        return self.path.monodromy_power(k)

    def nullity(self, m: int) -> int:
        if m not in self._nullity_cache:
            A = self._mono_power(m) - np.eye(self.d)
            s = np.linalg.svd(A, compute_uv=False)
            scale = max(1.0, float(s[0]))
            nu = int(np.sum(s < self.nullity_tol * scale))
            self._nullity_cache[m] = nu
        return self._nullity_cache[m]

    def _kernel(self, A: np.ndarray, complex_ok: bool):
        _, s, Vh = np.linalg.svd(A)
        scale = max(1.0, float(s[0]))
        mask = s < self.sigma_gate * scale
        if not np.any(mask):
            return None, float(s[-1] / scale)
        return Vh[mask].conj().T, float(s[-1] / scale)

    def _crossing_signature(self, t: float, A: np.ndarray, label: str,
                            probe=None):
        """Signature of the form v* S(t) v on ker(A); None if no kernel.

        Gray-zone singular values (above the kernel gate but small) trigger a
        local dip probe when ``probe`` is given: a genuine crossing limited by
        integration noise dips far below its neighbourhood, a near-tangency
        does not.  Persistent ambiguity raises with the time window.
        """
        B, smin = self._kernel(A, complex_ok=True)
        if B is None:
            if smin < 1e-5:
                if probe is not None:
                    h = 1e-5 * max(1.0, self.tau)
                    side = min(probe(t - h), probe(t + h))
                    if smin < 0.05 * side:
                        gate = self.sigma_gate
                        try:
                            self.sigma_gate = smin * 2.0 + 1e-300
                            B, _ = self._kernel(A, complex_ok=True)
                        finally:
                            self.sigma_gate = gate
                    if B is None:
                        raise NumericFailure(
                            f"ambiguous near-crossing ({label})",
                            window=(float(t - h), float(t + h)), sigma=smin)
                else:
                    raise NumericFailure(
                        f"ambiguous near-crossing ({label})", t=float(t),
                        sigma=smin)
            if B is None:
                return None
        S = self.path.S_at(t)
        form = B.conj().T @ S @ B
        form = 0.5 * (form + form.conj().T)
        mu = np.linalg.eigvalsh(form)
        scale = max(np.max(np.abs(mu)), 1e-30)
        if np.min(np.abs(mu)) < self.reg_tol * scale:
            raise NumericFailure(
                f"degenerate crossing form ({label})", t=float(t),
                eigenvalues=[float(v) for v in mu])
        return int(np.sum(mu > 0) - np.sum(mu < 0)), int(np.sum(mu < 0))

    # -- one-period scans ------------------------------------------------------
    def _refine_minimum(self, f, a: float, b: float) -> float:
        # normalised bracket coordinate: the bounded minimiser's sqrt(eps)|x|
        # term would otherwise cap accuracy at large absolute times
        res = scipy.optimize.minimize_scalar(
            lambda u: f(a + u * (b - a)), bounds=(0.0, 1.0), method="bounded",
            options={"xatol": 1e-11})
        return float(a + res.x * (b - a))

    def _scan_segment(self, k: int, omega: complex):
        """Crossings strictly inside (k tau, (k+1) tau); list of (t, sig, negs).

        Candidates come from local minima of the smallest singular value of
        R(t) - omega I on the scan grid (linear in |t - t*| near a crossing)
        plus, for real omega, determinant sign changes.  Each refined
        candidate is classified by its numerical kernel.
        """
        Mk = self._mono_power(k)
        Rk = (self.scan_Rs @ Mk if k else self.scan_Rs).astype(complex)
        A = Rk - omega * np.eye(self.d)
        svals = np.linalg.svd(A, compute_uv=False)
        smin = svals[:, -1]
        ts = self.scan_ts + k * self.tau

        def fmat(t):
            R = self.path.base_at(t - k * self.tau) @ Mk
            return R.astype(complex) - omega * np.eye(self.d)

        def fsig(t):
            return float(np.linalg.svd(fmat(t), compute_uv=False)[-1])

        ceiling = 0.25 * float(np.median(smin)) + 1e-300
        cands = []
        if abs(omega.imag) < 1e-15:
            dets = np.linalg.det(A).real
            flips = np.nonzero(dets[:-1] * dets[1:] < 0)[0]
            for i in flips:
                t = scipy.optimize.brentq(
                    lambda t: float(np.linalg.det(fmat(t)).real),
                    ts[i], ts[i + 1], xtol=1e-13 * max(1.0, self.tau))
                cands.append(float(t))
        mins = np.nonzero((smin[1:-1] < smin[:-2]) & (smin[1:-1] <= smin[2:])
                          & (smin[1:-1] < ceiling))[0] + 1
        for i in mins:
            cands.append(self._refine_minimum(fsig, ts[i - 1], ts[i + 1]))
        lo = k * self.tau + 1e-9 * max(1.0, self.tau)
        hi = (k + 1) * self.tau - 1e-9 * max(1.0, self.tau)
        merge = 1e-6 * max(1.0, self.tau)
        accepted = []
        out = []
        for t in sorted(cands):
            if not lo < t < hi:
                continue
            if accepted and abs(t - accepted[-1]) < merge:
                continue
            sig = self._crossing_signature(t, fmat(t), f"segment {k}",
                                           probe=fsig)
            if sig is None:
                continue
            accepted.append(t)
            out.append((t, sig[0], sig[1]))
        return out

    def _interior_signature(self, k: int) -> int:
        if k not in self._interior_cache:
            self._interior_cache[k] = sum(
                sig for _, sig, _ in self._scan_segment(k, 1.0 + 0.0j))
        return self._interior_cache[k]

    def _boundary_signature(self, k: int) -> int:
        """Full signature of the crossing at t = k tau (interior role)."""
        if k not in self._boundary_cache:
            A = self._mono_power(k) - np.eye(self.d)
            sig = self._crossing_signature(k * self.tau, A.astype(complex),
                                           f"boundary {k}")
            self._boundary_cache[k] = 0 if sig is None else sig[0]
        return self._boundary_cache[k]

    def _endpoint_negatives(self, m: int) -> int:
        A = self._mono_power(m) - np.eye(self.d)
        sig = self._crossing_signature(m * self.tau, A.astype(complex),
                                       f"endpoint {m}")
        return 0 if sig is None else sig[1]

    # -- public ---------------------------------------------------------------
    def index_pair(self, m: int):
        """(index, nullity) of the m-th iterate, in the surface normalisation."""
        if m < 1:
            raise InvalidArgument("iterate must be >= 1")
        nu = self.nullity(m)
        if nu < 1 or nu > self.d - 1:
            raise InvariantViolation(
                f"nullity {nu} outside [1, {self.d - 1}] at iterate {m}")
        total = self._start_half
        for k in range(m):
            total += self._interior_signature(k)
            if 0 < k:
                total += self._boundary_signature(k)
        total -= self._endpoint_negatives(m)
        return total - self.n, nu

    def omega_index(self, angle: float) -> int:
        """Index at unit parameter exp(i*angle); angle must avoid the
        monodromy's eigenvalue angles."""
        omega = complex(np.cos(angle), np.sin(angle))
        crossings = self._scan_segment(0, omega)
        A = self.path.end_monodromy.astype(complex) - omega * np.eye(self.d)
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] < self.sigma_gate * max(1.0, s[0]):
            raise NumericFailure("omega parameter hits the monodromy spectrum",
                                 angle=angle)
        return sum(sig for _, sig, _ in crossings)


def maslov_index(path: SymplecticPath, m: int, **kw):
    """Index and nullity of the m-fold iterate of the path."""
    return IndexComputer(path, **kw).index_pair(m)


def unit_spectrum_angles(path: SymplecticPath, *, circle_tol: float = 1e-7,
                         one_cluster_tol: float = 1e-4,
                         nullity_tol: float = 1e-6):
    """Angles in [0, 2pi) of the monodromy's unit-circle eigenvalues.

    Eigenvalues within ``one_cluster_tol`` of 1 are collapsed to angle 0:
    a defective 1-eigenvalue (the generic orbit case) splits numerically by
    the square root of the integration defect, far beyond ``circle_tol``.
    """
    M = path.end_monodromy
    vals = np.linalg.eigvals(M)
    angles = []
    for lam in vals:
        if abs(lam - 1.0) < one_cluster_tol:
            angles.append(0.0)
        elif abs(abs(lam) - 1.0) < circle_tol:
            angles.append(float(np.angle(lam)) % _TWO_PI)
    uniq = []
    for a in sorted(angles):
        if not uniq or min(abs(a - uniq[-1]), _TWO_PI - abs(a - uniq[-1])) > 1e-9:
            uniq.append(a)
    return uniq


@dataclass
class MeanIndexResult:
    value: float
    fraction: Fraction | None
    bar: float
    slope_estimate: float
    arc_table: list = field(default_factory=list)


def mean_index(comp: IndexComputer, records, *, q_max: int = 64,
               rational_tol: float = 1e-9, bott_check: bool = False):
    """Reconciled mean index from the arc average and the slope fit.

    ``records`` is the list of IndexRecord for m = 1..M (M >= 2n + 2).
    The certified window has half-width 2*(2n)/M around i(y^M)/M + n/M...;
    concretely the true mean index satisfies |i(y^m) - m*ihat| <= 2n for all
    m, which the reconciliation enforces.
    """
    path = comp.path
    n = comp.n
    M = len(records)
    if M < 2 * n + 2:
        raise InvalidArgument(f"need at least {2*n+2} iterates, got {M}")
    angles = unit_spectrum_angles(path)
    if not angles or angles[0] > 1e-12:
        angles = [0.0] + angles
    bounds = angles + [angles[0] + _TWO_PI]
    arc_table = []
    acc = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi - lo < 1e-9:
            continue
        mid = 0.5 * (lo + hi)
        i_om = comp.omega_index(mid)
        arc_table.append((lo, hi, i_om))
        acc += (hi - lo) * i_om
    ihat = acc / _TWO_PI

    ms = np.arange(1, M + 1)
    iy = np.array([r.index_i for r in records], dtype=float)
    slope = float(np.polyfit(ms, iy, 1)[0])
    bar = 2.0 * (2.0 * n) / M
    if abs(ihat - slope) > bar + 1e-9:
        raise NumericFailure("mean-index estimators disagree beyond the bar",
                             arc=ihat, slope=slope, bar=bar)
    dev = np.abs(iy - ms * ihat)
    if np.any(dev > 2.0 * n + 1e-6):
        raise ConsistencyFailure(
            f"iterated index leaves the 2n band around m*ihat "
            f"(max deviation {float(np.max(dev)):.3g})")
    if bott_check:
        for m in (2, 3):
            roots = [_TWO_PI * k / m for k in range(m)]
            if any(min(abs(r - a) for a in angles) < 1e-6 for r in roots[1:]):
                continue
            total = records[0].index_i + n   # omega = 1 term, path normalisation
            total += sum(comp.omega_index(r) for r in roots[1:])
            if total != records[m - 1].index_i + n:
                raise ConsistencyFailure(
                    f"iteration decomposition mismatch at m={m}: "
                    f"{total} vs {records[m-1].index_i + n}")

    frac = Fraction(ihat).limit_denominator(q_max)
    fraction = frac if abs(float(frac) - ihat) <= rational_tol else None
    return MeanIndexResult(value=float(ihat), fraction=fraction, bar=bar,
                           slope_estimate=slope, arc_table=arc_table)


def minimal_period_K(path: SymplecticPath, angle_tol: float = 1e-7,
                     q_max: int = 64) -> int:
    """Twice the lcm of denominators of rational rotation angles of the
    monodromy's unit-circle eigenvalues; 2 when none are rational."""
    angles = unit_spectrum_angles(path)
    dens = []
    for a in angles:
        ratio = a / _TWO_PI
        matches = set()
        for q in range(1, q_max + 1):
            p = round(ratio * q)
            err = abs(a - _TWO_PI * p / q)
            if err <= angle_tol:
                matches.add(Fraction(p % q, q))
        if len(matches) > 1:
            raise NumericFailure(
                "rotation angle matches several admissible rationals",
                angle=a, candidates=sorted(str(f) for f in matches))
        if matches:
            dens.append(next(iter(matches)).denominator)
    if not dens:
        return 2
    return 2 * math.lcm(*dens)


def compute_orbit_index_data(orbit_id: str, path: SymplecticPath, *,
                             m_max: int = 20, q_max: int = 64,
                             angle_tol: float = 1e-7,
                             bott_check: bool = False,
                             computer_kw: dict | None = None) -> OrbitIndexData:
    """Full index table for one orbit: records, mean index, minimal period."""
    comp = IndexComputer(path, **(computer_kw or {}))
    n = comp.n
    m_max = max(m_max, 2 * n + 2)
    records = []
    for m in range(1, m_max + 1):
        i_m, nu_m = comp.index_pair(m)
        records.append(IndexRecord(orbit_id, m, i_m, nu_m))
    mi = mean_index(comp, records, q_max=q_max, bott_check=bott_check)
    K_y = minimal_period_K(path, angle_tol=angle_tol, q_max=q_max)
    data = OrbitIndexData(orbit_id=orbit_id, dim_n=n, records=records,
                          mean_index=mi.value, mean_index_fraction=mi.fraction,
                          mean_index_bar=mi.bar, slope_estimate=mi.slope_estimate,
                          K_of_y=K_y)
    data._computer = comp
    return data


def extend_records(data: OrbitIndexData, m_upto: int):
    """Extend the per-iterate table in place (used by the series assembly)."""
    comp = getattr(data, "_computer", None)
    if comp is None:
        raise InvalidArgument("orbit index data lacks a live scanner")
    for m in range(len(data.records) + 1, m_upto + 1):
        i_m, nu_m = comp.index_pair(m)
        data.records.append(IndexRecord(data.orbit_id, m, i_m, nu_m))


@dataclass
class KShiftCheck:
    """d(K) bookkeeping across a K grid, against the path index."""

    K_values: list
    d_of_K: list
    morse_indices: list
    nullities: list
    shifted: list                 # morse index minus d(K)
    path_index: int
    path_nullity: int
    consistent: bool


def dimension_shift(K: float, period_T: float, n: int) -> int:
    """d(K) = 2n (floor(K T / 2 pi) + 1)."""
    return 2 * n * (int(np.floor(K * period_T / _TWO_PI)) + 1)


def k_shift_audit(*args, **kw) -> KShiftCheck:
    """Morse data of the reduced loop functional across a K grid; see the
    reduction module for the implementation."""
    from .galerkin import k_shift_audit as _impl
    return _impl(*args, **kw)
