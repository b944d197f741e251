"""Batch driver: surface spec in, orbit/index/resonance reports out.

``charlab run <config.json>`` executes the pipeline stages
(geometry -> orbits -> index -> resonance); each stage writes flat files
into the output directory and later stages consume only those files.
``charlab audit <config.json>`` re-examines a finished run (symplecticity,
dimension-shift bookkeeping across a K grid, iterated index bounds,
convexity probes) and writes one file per audit.

Exit codes: 0 all gates passed and identity residual within tolerance;
2 identity evaluated but conditional (incomplete degenerate data);
1 any hard failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import galerkin as gk
from .errors import CharlabError, InvalidArgument
from .flow import (GaugeField, integrate_flow, integrate_linearized,
                   index_form, path_max_defect)
from .geometry import surface_from_spec, check_surface_invariants, spec_for_period
from .index import compute_orbit_index_data, extend_records
from .orbits import (find_orbits, gate_orbit, load_registry, write_registry,
                     trajectory_distance)
from .resonance import (OrbitContribution, chi_partial_averages,
                        critical_type_numbers, euler_characteristics,
                        identity_check, series_ladder, write_series_csv)

_TWO_PI = 2.0 * np.pi

_DEFAULT_TOLERANCES = {
    "integrator": 1e-12,
    "closure": 1e-8,
    "angle_tol": 1e-7,
    "q_max": 64,
    "identity": 1e-6,
}

ALL_STAGES = ("geometry", "orbits", "index", "resonance")


@dataclass
class RunConfig:
    surface_spec: dict
    out_dir: Path
    seed: int = 0
    stages: tuple = ALL_STAGES
    tolerances: dict = field(default_factory=lambda: dict(_DEFAULT_TOLERANCES))
    index_opts: dict = field(default_factory=lambda: {"m_max": 20, "alpha": 1.5})
    galerkin_opts: dict = field(default_factory=lambda: {
        "enable": False, "K": None, "T": 1.0, "ratio": 0.8,
        "mode_cut": None, "theta": 0.08, "alpha": 1.92})
    morse_opts: dict = field(default_factory=lambda: {
        "enable": True, "N_list": [50, 100, 200]})
    k_tables_path: str | None = None
    orbit_seeds: list = field(default_factory=list)

    @classmethod
    def load(cls, path, overrides=None):
        path = Path(path)
        if not path.exists():
            raise InvalidArgument(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise InvalidArgument(
                f"malformed config {path}: line {e.lineno} col {e.colno}: {e.msg}")
        overrides = overrides or {}
        surface = raw.get("surface")
        if surface is None:
            raise InvalidArgument("config missing required field 'surface'")
        if isinstance(surface, str):
            surface = json.loads((path.parent / surface).read_text())
        tol = dict(_DEFAULT_TOLERANCES)
        tol.update(raw.get("tolerances", {}))
        if overrides.get("tol") is not None:
            tol["integrator"] = float(overrides["tol"])
        cfg = cls(
            surface_spec=surface,
            out_dir=Path(overrides.get("out_dir") or raw.get("out_dir", "out")),
            seed=int(overrides.get("seed") if overrides.get("seed") is not None
                     else raw.get("seed", 0)),
            stages=tuple(overrides.get("stages") or raw.get("stages", ALL_STAGES)),
            tolerances=tol,
            k_tables_path=raw.get("k_tables"),
            orbit_seeds=raw.get("seeds", []),
        )
        cfg.index_opts.update(raw.get("index", {}))
        cfg.galerkin_opts.update(raw.get("galerkin", {}))
        cfg.morse_opts.update(raw.get("morse", {}))
        for st in cfg.stages:
            if st not in ALL_STAGES:
                raise InvalidArgument(f"unknown stage {st!r}; valid: {ALL_STAGES}")
        K = cfg.galerkin_opts.get("K")
        T = float(cfg.galerkin_opts.get("T", 1.0))
        if K is not None:
            frac = float(K) * T / _TWO_PI
            if abs(float(K) * T - _TWO_PI * round(frac)) < 1e-6:
                raise InvalidArgument(
                    f"config field galerkin.K: K*T = {float(K)*T} is within "
                    f"1e-6 of a multiple of 2*pi")
        return cfg


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _orbit_paths(surface, orbits, cfg):
    """Rebuild the linearized index path for each registry orbit."""
    tol = cfg.tolerances["integrator"]
    alpha = cfg.index_opts["alpha"]
    gf = GaugeField(surface)
    S = index_form(surface, alpha)
    out = {}
    for orb in orbits:
        traj = integrate_flow(gf, orb.trajectory.x0, orb.prime_period, tol=tol)
        out[orb.orbit_id] = integrate_linearized(traj, S, tol=tol)
    return out


def _load_k_tables(cfg):
    if not cfg.k_tables_path:
        return {}
    entries = json.loads(Path(cfg.k_tables_path).read_text())
    tables = {}
    for e in entries:
        tables.setdefault(e["orbit_id"], {})[int(e["m"])] = e["k"]
    return tables


def stage_geometry(cfg) -> dict:
    surface = surface_from_spec(cfg.surface_spec)
    rng = np.random.default_rng(cfg.seed)
    report = check_surface_invariants(surface, rng=rng)
    _dump({"surface": cfg.surface_spec, "checks": report},
          cfg.out_dir / "surface_check.json")
    return {"surface": surface, "report": report}


def stage_orbits(cfg, surface) -> list:
    tol = cfg.tolerances
    orbits = find_orbits(surface, seeds=cfg.orbit_seeds,
                         tol=tol["closure"] * 1e-2, int_tol=tol["integrator"])
    gates = {}
    for orb in orbits:
        gates[orb.orbit_id] = gate_orbit(surface, orb,
                                         closure_tol=tol["closure"],
                                         int_tol=tol["integrator"])
    extra = {"gates": gates}
    if cfg.galerkin_opts.get("enable"):
        extra["galerkin"] = _galerkin_cross_validate(cfg, surface, orbits)
    write_registry(orbits, cfg.out_dir / "orbits.json", extra=extra)
    return orbits


def _galerkin_cross_validate(cfg, surface, orbits) -> dict:
    g = cfg.galerkin_opts
    out = {}
    for orb in orbits:
        spec = spec_for_period(surface, orb.prime_period,
                               period_T=float(g["T"]), ratio=float(g["ratio"]),
                               theta=float(g["theta"]), alpha=float(g["alpha"]),
                               K=g["K"], rng_seed=cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        omega = gk.estimate_dual_modulus(spec, rng)
        need = int(np.ceil((2.0 / omega) * spec.period_T / _TWO_PI)) + 2
        mc = g["mode_cut"] or need + 8
        system = gk.build_galerkin(spec, mc, omega=omega)
        vec = system.newton_critical(gk.seed_from_orbit(system, orb, m=1))
        gorb, info = gk.orbit_from_critical(system, vec, orb.orbit_id + "-g")
        formula = gk.critical_value_formula(spec, info["rho"])
        orb.rho = info["rho"]
        orb.critical_value = gorb.critical_value
        out[orb.orbit_id] = {
            "distance": trajectory_distance(orb, gorb),
            "period_diff": abs(orb.prime_period - gorb.prime_period),
            "critical_value": gorb.critical_value,
            "critical_value_formula": formula,
            "critical_value_negative": gorb.critical_value < 0,
            "rho": info["rho"],
        }
    return out


def stage_index(cfg, surface, orbits) -> dict:
    tol = cfg.tolerances
    paths = _orbit_paths(surface, orbits, cfg)
    data = {}
    report = {"orbits": {}}
    for orb in orbits:
        d = compute_orbit_index_data(
            orb.orbit_id, paths[orb.orbit_id],
            m_max=int(cfg.index_opts["m_max"]),
            q_max=int(tol["q_max"]), angle_tol=tol["angle_tol"])
        # periodicity gates for p <= 3 K(y)
        K = d.K_of_y
        extend_records(d, 4 * K)
        for p in range(1, 3 * K + 1):
            if d.nullity(p + K) != d.nullity(p):
                raise CharlabError(
                    f"orbit {orb.orbit_id}: nullity not K-periodic at p={p}")
            if (d.index(p + K) - d.index(p)) % 2 != 0:
                raise CharlabError(
                    f"orbit {orb.orbit_id}: index parity not K-periodic at p={p}")
        report["orbits"][orb.orbit_id] = {
            "records": [[r.iterate_m, r.index_i, r.nullity_nu]
                        for r in d.records],
            "mean_index": d.mean_index,
            "mean_index_exact": (f"{d.mean_index_fraction.numerator}/"
                                 f"{d.mean_index_fraction.denominator}"
                                 if d.mean_index_fraction is not None else None),
            "mean_index_bar": d.mean_index_bar,
            "slope_estimate": d.slope_estimate,
            "K_of_y": d.K_of_y,
            "symplecticity_defect": paths[orb.orbit_id].defect,
            "method": d.method,
        }
        data[orb.orbit_id] = d
    _dump(report, cfg.out_dir / "index_report.json")
    return data


def stage_resonance(cfg, surface, orbits, index_data) -> tuple:
    user_tables = _load_k_tables(cfg)
    contributions = []
    tables = {}
    per_orbit = {}
    for orb in orbits:
        d = index_data[orb.orbit_id]
        table = critical_type_numbers(d, user_tables.get(orb.orbit_id))
        tables[orb.orbit_id] = table
        chis, chi_hat = euler_characteristics(table, d)
        avgs = chi_partial_averages(table, d, 3 * d.K_of_y)
        hits = all(avgs[j * d.K_of_y - 1] == chi_hat
                   for j in range(1, 4) if j * d.K_of_y <= len(avgs))
        contributions.append(OrbitContribution(
            orbit_id=orb.orbit_id, mean_index=d.mean_index_exact,
            mean_index_bar=d.mean_index_bar, chi_hat=chi_hat, chis=chis,
            K_of_y=d.K_of_y, excluded=not table.complete,
            reason="" if table.complete else
            f"degenerate iterates {table.degenerate_ms} lack type data"))
        per_orbit[orb.orbit_id] = {
            "partial_average_hits_closed_form": bool(hits),
            "degenerate_iterates": table.degenerate_ms,
        }
    report = identity_check(contributions)
    payload = report.to_json_dict()
    payload["per_orbit_diagnostics"] = per_orbit

    if cfg.morse_opts.get("enable") and not report.conditional:
        included = [c.orbit_id for c in contributions
                    if not c.excluded and c.orbit_id not in report.zero_mean_orbits]
        datas = [index_data[i] for i in included]
        tabs = [tables[i] for i in included]
        taus = [next(o.prime_period for o in orbits if o.orbit_id == i)
                for i in included]
        if datas:
            rungs, C2, stable = series_ladder(
                datas, tabs, taus, N_list=tuple(cfg.morse_opts["N_list"]),
                s_plus=float(report.S_plus))
            payload["series"] = {
                "rungs": [{"N": r["N"], "eval_plus": r["series"].eval_plus,
                           "eval_minus": r["series"].eval_minus,
                           "ratio_plus": r["ratio_plus"],
                           "ratio_minus": r["ratio_minus"],
                           "deviation": r["deviation"],
                           "count_bound_ok": r["series"].count_bound_ok,
                           "C1": r["series"].C1}
                          for r in rungs],
                "C2": C2,
                "stable": stable,
            }
            write_series_csv(rungs[-1]["series"], cfg.out_dir / "morse_series.csv")
    _dump(payload, cfg.out_dir / "resonance_report.json")
    return report, payload


def run(cfg: RunConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    surface = None
    orbits = None
    index_data = None
    report = None
    if "geometry" in cfg.stages:
        surface = stage_geometry(cfg)["surface"]
    else:
        surface = surface_from_spec(cfg.surface_spec)
    if "orbits" in cfg.stages:
        orbits = stage_orbits(cfg, surface)
    elif {"index", "resonance"} & set(cfg.stages):
        reg = cfg.out_dir / "orbits.json"
        if not reg.exists():
            raise InvalidArgument(
                f"missing orbit registry {reg}; run the orbits stage first")
        orbits = load_registry(reg, surface)
    if "index" in cfg.stages:
        index_data = stage_index(cfg, surface, orbits)
    elif "resonance" in cfg.stages:
        index_data = stage_index_from_files(cfg, surface, orbits)
    if "resonance" in cfg.stages:
        report, _ = stage_resonance(cfg, surface, orbits, index_data)
        summary = {
            "identity_residual": report.S_plus_residual,
            "conditional": report.conditional,
            "tolerance": cfg.tolerances["identity"],
        }
        _dump(summary, cfg.out_dir / "run_summary.json")
        if report.conditional:
            return 2
        if report.S_plus_residual > cfg.tolerances["identity"]:
            return 1
    return 0


def stage_index_from_files(cfg, surface, orbits):
    """Recompute live index scanners consistently with the stored report."""
    report_path = cfg.out_dir / "index_report.json"
    if not report_path.exists():
        raise InvalidArgument(
            f"missing {report_path}; run the index stage first")
    stored = json.loads(report_path.read_text())
    data = stage_index(cfg, surface, orbits)
    for oid, block in stored["orbits"].items():
        d = data[oid]
        for m, i_m, nu_m in block["records"]:
            if m > len(d.records):
                break
            if d.index(m) != i_m or d.nullity(m) != nu_m:
                raise CharlabError(
                    f"stored index report disagrees with recomputation "
                    f"for orbit {oid} at m={m}")
    return data


def audit(cfg: RunConfig) -> int:
    reg = cfg.out_dir / "orbits.json"
    if not reg.exists():
        raise InvalidArgument(f"missing orbit registry {reg}; run the "
                              f"pipeline first")
    surface = surface_from_spec(cfg.surface_spec)
    orbits = load_registry(reg, surface)
    paths = _orbit_paths(surface, orbits, cfg)
    ok = True

    sympl = {oid: path_max_defect(p) for oid, p in paths.items()}
    sympl_ok = all(v <= 1e-8 for v in sympl.values())
    ok &= sympl_ok
    _dump({"max_defect_per_orbit": sympl, "gate": 1e-8, "pass": sympl_ok},
          cfg.out_dir / "audit_symplecticity.json")

    bott = {}
    bott_ok = True
    for orb in orbits:
        d = compute_orbit_index_data(orb.orbit_id, paths[orb.orbit_id],
                                     m_max=int(cfg.index_opts["m_max"]))
        extend_records(d, 100)
        worst = max(abs(r.index_i - r.iterate_m * d.mean_index)
                    for r in d.records)
        nu_ok = all(1 <= r.nullity_nu <= 2 * d.dim_n - 1 for r in d.records)
        bott[orb.orbit_id] = {"max_deviation": worst,
                              "bound": 2 * d.dim_n,
                              "violations": int(sum(
                                  abs(r.index_i - r.iterate_m * d.mean_index)
                                  > 2 * d.dim_n + 1e-9 for r in d.records)),
                              "nullity_bounds_ok": nu_ok}
        bott_ok &= (bott[orb.orbit_id]["violations"] == 0) and nu_ok
    ok &= bott_ok
    _dump({"orbits": bott, "pass": bott_ok}, cfg.out_dir / "audit_bott.json")

    g = cfg.galerkin_opts
    kshift = {}
    kshift_ok = True
    audit_orbits = orbits if surface.dim_n <= 2 else orbits[:1]
    for orb in audit_orbits:
        d = compute_orbit_index_data(orb.orbit_id, paths[orb.orbit_id],
                                     m_max=int(cfg.index_opts["m_max"]))
        grid = gk.suggest_K_grid(surface, orb.prime_period,
                                 period_T=float(g["T"]), ratio=float(g["ratio"]),
                                 theta=float(g["theta"]), alpha=float(g["alpha"]),
                                 rng_seed=cfg.seed)
        chk = gk.k_shift_audit(surface, orb, grid, iterate_m=1,
                               path_index=d.index(1), path_nullity=d.nullity(1),
                               period_T=float(g["T"]), ratio=float(g["ratio"]),
                               theta=float(g["theta"]), alpha=float(g["alpha"]),
                               rng_seed=cfg.seed)
        values = {}
        for K in grid[:3]:
            spec = spec_for_period(surface, orb.prime_period,
                                   period_T=float(g["T"]), ratio=float(g["ratio"]),
                                   theta=float(g["theta"]), alpha=float(g["alpha"]),
                                   K=float(K), rng_seed=cfg.seed)
            rng = np.random.default_rng(cfg.seed)
            omega = gk.estimate_dual_modulus(spec, rng)
            need = int(np.ceil((2.0 / omega) * spec.period_T / _TWO_PI)) + 2
            system = gk.build_galerkin(spec, need + 8, omega=omega)
            vec = system.newton_critical(gk.seed_from_orbit(system, orb, m=1))
            values[repr(float(K))] = system.value(vec)
        vlist = list(values.values())
        value_const = max(vlist) - min(vlist) <= 1e-8
        value_neg = all(v < 0 for v in vlist)
        kshift[orb.orbit_id] = {
            "K_values": chk.K_values, "d_of_K": chk.d_of_K,
            "morse_indices": chk.morse_indices, "nullities": chk.nullities,
            "shifted": chk.shifted, "path_index": chk.path_index,
            "consistent": chk.consistent,
            "critical_values": values,
            "critical_value_spread": max(vlist) - min(vlist),
            "critical_value_constant": value_const,
            "critical_value_negative": value_neg,
        }
        kshift_ok &= chk.consistent and value_const and value_neg
    ok &= kshift_ok
    _dump({"orbits": kshift, "pass": kshift_ok},
          cfg.out_dir / "audit_k_shift.json")

    rng = np.random.default_rng(cfg.seed)
    spec = spec_for_period(surface, orbits[0].prime_period,
                           period_T=float(g["T"]), ratio=float(g["ratio"]),
                           theta=float(g["theta"]), alpha=float(g["alpha"]),
                           rng_seed=cfg.seed)
    U = rng.normal(size=(10000, surface.dim)) * 3.0
    V = rng.normal(size=(10000, surface.dim)) * 3.0
    lhs = np.sum((spec.hk_grad(U) - spec.hk_grad(V)) * (U - V), axis=1)
    rhs = 0.5 * spec.convexity_eps * np.sum((U - V)**2, axis=1)
    margin = float(np.min(lhs - rhs))
    conv_ok = margin >= 0.0
    ok &= conv_ok
    _dump({"pairs": 10000, "eps": spec.convexity_eps,
           "min_margin": margin, "pass": conv_ok},
          cfg.out_dir / "audit_convexity.json")
    return 0 if ok else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="charlab",
        description="closed characteristics: orbits, indices, resonance identity")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "audit"):
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--tol", type=float, default=None,
                       help="override integrator tolerance")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--stages", default=None,
                       help="comma-separated stage subset")
    args = ap.parse_args(argv)
    overrides = {
        "tol": args.tol,
        "out_dir": args.out_dir,
        "seed": args.seed,
        "stages": args.stages.split(",") if args.stages else None,
    }
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "run":
            code = run(cfg)
        else:
            code = audit(cfg)
    except InvalidArgument as e:
        print(f"charlab: usage error: {e}", file=sys.stderr)
        return 1
    except CharlabError as e:
        print(f"charlab: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"charlab {args.command}: exit {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
