"""Batch command line interface.

Subcommands:
    profile build --b <val>      construct the profile family, emit JSON + CSV
    spectral check --M <int>     operator pairings and coercivity report
    simulate --config <file>     one modulated run -> timeseries.csv + summary.json
    sweep --config <file>        parallel runs over a b0 grid, merged summary
    verify-bounds --suite <name> inequality/identity suites -> JSON verdict

Outputs land under --out (or $KSLAB_OUT, default ./runs).  All randomness
flows through one seeded generator recorded in the summaries, so identical
configs reproduce bit-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import diagnostics, dynamics, operators, profiles
from .config import ConfigError, RunConfig, load_config
from .grid import FieldPair, RadialField, RadialGrid, field_to_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BOUNDS = 2


def _out_root(args):
    root = args.out or os.environ.get("KSLAB_OUT", "runs")
    os.makedirs(root, exist_ok=True)
    return root


def _dump_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def profile_grid_for(b, nodes_per_decade=48, h_core=0.05):
    B1 = abs(math.log(b)) / math.sqrt(b)
    return RadialGrid.make(4.5 * B1, h_core=h_core,
                           nodes_per_decade=nodes_per_decade, stencil_order=6)


def cmd_profile_build(args) -> int:
    try:
        b = float(args.b)
        grid = profile_grid_for(b) if args.r_max is None else RadialGrid.make(
            args.r_max, stencil_order=6)
        fam = profiles.build_profile_family(grid, b)
    except (profiles.ProfileError, ValueError) as exc:
        _dump_json(os.path.join(_out_root(args), "profile_error.json"),
                   {"error": str(exc)})
        print("profile build rejected: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    root = _out_root(args)
    outdir = os.path.join(root, "profile_b%.3e" % b)
    os.makedirs(outdir, exist_ok=True)
    payload = {
        "b": fam.b, "B0": fam.B0, "B1": fam.B1, "c_b": fam.c_b,
        "c1": fam.c1, "c2": fam.c2, "beta": list(fam.beta),
        "mass_excess": fam.mass_excess,
        "norm_report": fam.norm_report,
    }
    _dump_json(os.path.join(outdir, "profile.json"), payload)
    field_to_csv(fam.level1.T1, os.path.join(outdir, "T1.csv"))
    field_to_csv(fam.level1.S1_grad, os.path.join(outdir, "S1grad.csv"))
    field_to_csv(fam.level2.T2, os.path.join(outdir, "T2.csv"))
    field_to_csv(fam.level2.S2_grad, os.path.join(outdir, "S2grad.csv"))
    field_to_csv(fam.Psi1, os.path.join(outdir, "Psi1.csv"))
    field_to_csv(fam.Psi2_grad, os.path.join(outdir, "Psi2grad.csv"))
    # flag pathological residual scalings (measured against the coarse
    # expectation |Psi1|^2 ~ b^5, generous constant)
    if fam.norm_report["psi1_sq"] > 1e6 * fam.b ** 5:
        print("profile residual out of family", file=sys.stderr)
        return EXIT_BOUNDS
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_spectral(args) -> int:
    M = float(args.M)
    try:
        grid = operators.operator_grid(M, nodes_per_decade=args.nodes_per_decade,
                                       h_core=args.h_core)
        lvl1 = profiles.build_t1_s1(grid)
        phim = operators.build_phi_m(grid, M,
                                     FieldPair(lvl1.T1, lvl1.S1_grad))
    except operators.OperatorError as exc:
        print("spectral check rejected: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    bundle = operators.OperatorBundle(grid)
    cm = operators.coercivity_M(bundle)
    cl = operators.coercivity_L(bundle, phim)
    kg = operators.kernel_gap(bundle)
    payload = {
        "M": M,
        "pairing": {"PhiM_T1": phim.report["PhiM_T1"],
                    "PhiM_LambdaQ": phim.report["PhiM_LambdaQ"]},
        "c_M": phim.c_M,
        "delta0_M_hat": cm["delta0_M_hat"],
        "delta0_L_hat": cl["delta0_L_hat"],
        "delta0_L_normalized": cl["normalized"],
        "kernel_gap": {"mu0": kg["mu0"], "mu1": kg["mu1"],
                       "alignment": kg["alignment"]},
    }
    path = os.path.join(_out_root(args), "spectral_M%d.json" % int(M))
    _dump_json(path, payload)
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _evolve_params(cfg: RunConfig) -> dynamics.EvolveParams:
    return dynamics.EvolveParams(
        b0=cfg.profile.b0,
        M_param=cfg.profile.M,
        r_max=cfg.grid.r_max,
        h_core=cfg.grid.h_core,
        nodes_per_decade=cfg.grid.nodes_per_decade,
        stencil_order=cfg.grid.stencil_order,
        ds_init=cfg.solver.ds_init,
        ds_max=cfg.solver.ds_max,
        db_rel_cap=cfg.solver.db_rel_cap,
        cadence=cfg.output.cadence,
        lam_stop=cfg.solver.lam_stop,
        t_max=cfg.solver.t_max,
        s_max=cfg.solver.s_max,
        b_min=cfg.solver.b_min,
        frame=cfg.solver.frame,
    )


def run_one(cfg: RunConfig, outdir, seed_offset=0):
    """Execute one run per config; returns the summary dictionary."""
    os.makedirs(outdir, exist_ok=True)
    params = _evolve_params(cfg)
    pert = None
    seed = cfg.perturbation.seed + seed_offset
    if cfg.perturbation.delta > 0:
        grid = dynamics.dynamics_grid(params)
        rng = np.random.default_rng(seed)
        for _ in range(20):
            cand = dynamics.random_perturbation(grid, cfg.perturbation.delta, rng)
            try:
                dynamics.initial_state(grid, params, cand)
            except dynamics.SimulationError:
                continue
            pert = cand
            break
        if pert is None:
            raise dynamics.SimulationError("no positive perturbation found")
    series = dynamics.evolve(params, perturbation=pert)
    series.to_csv(os.path.join(outdir, "timeseries.csv"))
    laws = dynamics.measure_laws(series)
    summary = {
        "status": series.status,
        "seed": seed,
        "config": cfg.to_dict(),
        "records": len(series),
        "final": {"s": float(series.s[-1]), "t": float(series.t[-1]),
                  "lam": float(series.lam[-1]), "b": float(series.b[-1])},
        "laws": {
            "ratio_a_final": float(laws["ratio_a"][-2]) if len(series) > 2 else None,
            "ratio_b_mean": float(np.mean(laws["ratio_b"])) if len(laws["ratio_b"]) else None,
            "ratio_b_final": float(laws["ratio_b"][-1]) if len(laws["ratio_b"]) else None,
        },
        "mass_drift": float(np.max(np.abs(series.column("mass")
                                          - series.column("mass")[0]))
                            / series.column("mass")[0]),
    }
    try:
        fit = diagnostics.fit_rate_law(series)
        summary["rate_fit"] = fit
    except diagnostics.DiagnosticsError as exc:
        summary["rate_fit"] = {"error": str(exc)}
    _dump_json(os.path.join(outdir, "summary.json"), summary)
    return summary


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config).validate()
    except FileNotFoundError:
        print("config file not found: %s" % args.config, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(exc.to_json(), file=sys.stderr)
        return EXIT_USAGE
    outdir = os.path.join(_out_root(args), args.name or "run")
    summary = run_one(cfg, outdir)
    print(json.dumps({"outdir": outdir, "status": summary["status"]}))
    return EXIT_OK if summary["status"] != "modulation_failed" else EXIT_BOUNDS


def _sweep_job(packed):
    cfg_dict, outdir, idx = packed
    from .config import parse_config_json
    cfg = parse_config_json(json.dumps(cfg_dict))
    return run_one(cfg, outdir, seed_offset=idx)


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config).validate()
    except FileNotFoundError:
        print("config file not found: %s" % args.config, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(exc.to_json(), file=sys.stderr)
        return EXIT_USAGE
    b_values = [float(x) for x in args.b0.split(",")] if args.b0 else [cfg.profile.b0]
    root = _out_root(args)
    jobs = []
    for i, b0 in enumerate(b_values):
        job_cfg = RunConfig(**{k: replace(getattr(cfg, k)) for k in
                               ("grid", "profile", "solver", "perturbation",
                                "output")})
        job_cfg.profile.b0 = b0
        job_cfg.validate()
        outdir = os.path.join(root, "sweep_b%.3e" % b0)
        jobs.append((job_cfg.to_dict(), outdir, i))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(_sweep_job, jobs))
    else:
        summaries = [_sweep_job(j) for j in jobs]
    merged = {"runs": summaries,
              "all_ok": all(s["status"] != "modulation_failed"
                            for s in summaries)}
    _dump_json(os.path.join(root, "merged_summary.json"), merged)
    print(json.dumps({"n": len(summaries), "all_ok": merged["all_ok"]}))
    return EXIT_OK if merged["all_ok"] else EXIT_BOUNDS


def cmd_verify_bounds(args) -> int:
    suite = args.suite
    verdict = {"suite": suite, "checks": {}}
    ok = True
    if suite == "hardy":
        grid = RadialGrid.reference()
        r = grid.nodes
        battery = {
            "gauss": RadialField(grid, np.exp(-r ** 2)),
            "wide_gauss": RadialField(grid, np.exp(-r ** 2 / 9.0)),
            "r_exp": RadialField(grid, r * np.exp(-r), "none"),
        }
        for name, v in battery.items():
            rep = diagnostics.check_hardy_suite(v)
            verdict["checks"][name] = {
                k: {kk: float(vv) for kk, vv in d.items()}
                for k, d in rep.items()}
            if rep["power"]["ratio"] < rep["power"]["sharp"] - 1e-9:
                ok = False
    elif suite == "loghls":
        grid = RadialGrid.reference()
        r = grid.nodes
        battery = [profiles.q_density(r),
                   0.25 * profiles.q_density(0.5 * r),
                   4.0 * profiles.q_density(2.0 * r),
                   profiles.q_density(r) * (1 + 0.3 * np.exp(-(r - 1.5) ** 2)),
                   np.exp(-r ** 2)]
        for i, u in enumerate(battery):
            lhs, rhs, margin = diagnostics.check_logHLS(RadialField(grid, u))
            verdict["checks"]["u%d" % i] = {"lhs": lhs, "rhs": rhs,
                                            "margin": margin}
            if margin < -1e-6 * max(abs(rhs), 1.0):
                ok = False
    elif suite == "profiles":
        for b in (1e-3, 1e-4, 1e-5):
            grid = profile_grid_for(b)
            fam = profiles.build_profile_family(grid, b)
            verdict["checks"]["b%.0e" % b] = {
                "c_b_times_halflog": fam.c_b * abs(math.log(b)) / 2.0,
                **{k: float(v) for k, v in fam.norm_report.items()}}
    elif suite == "spectral":
        M = 50.0
        grid = operators.operator_grid(M, nodes_per_decade=32, h_core=0.1)
        bundle = operators.OperatorBundle(grid)
        lvl1 = profiles.build_t1_s1(grid)
        phim = operators.build_phi_m(grid, M, FieldPair(lvl1.T1, lvl1.S1_grad))
        cm = operators.coercivity_M(bundle)
        cl = operators.coercivity_L(bundle, phim)
        verdict["checks"] = {"delta0_M_hat": cm["delta0_M_hat"],
                             "delta0_L_hat": cl["delta0_L_hat"],
                             "PhiM_T1": phim.report["PhiM_T1"]}
        ok = cm["delta0_M_hat"] > 0 and cl["delta0_L_hat"] > 0
    else:
        print("unknown suite %r" % suite, file=sys.stderr)
        return EXIT_USAGE
    verdict["ok"] = bool(ok)
    _dump_json(os.path.join(_out_root(args), "verify_%s.json" % suite), verdict)
    print(json.dumps({"suite": suite, "ok": ok}))
    return EXIT_OK if ok else EXIT_BOUNDS


def build_parser():
    ap = argparse.ArgumentParser(prog="kslab",
                                 description="radial chemotaxis blow-up laboratory")
    ap.add_argument("--out", default=None,
                    help="output root (default $KSLAB_OUT or ./runs)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="profile family operations")
    psub = p.add_subparsers(dest="subcommand", required=True)
    pb = psub.add_parser("build", help="construct the family at one b")
    pb.add_argument("--b", required=True)
    pb.add_argument("--r-max", type=float, default=None)
    pb.set_defaults(func=cmd_profile_build)

    spct = sub.add_parser("spectral", help="linearized operator certification")
    ssub = spct.add_subparsers(dest="subcommand", required=True)
    sc = ssub.add_parser("check")
    sc.add_argument("--M", required=True)
    sc.add_argument("--nodes-per-decade", type=int, default=32)
    sc.add_argument("--h-core", type=float, default=0.1)
    sc.set_defaults(func=cmd_spectral)

    sim = sub.add_parser("simulate", help="one modulated run")
    sim.add_argument("--config", required=True)
    sim.add_argument("--name", default=None)
    sim.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", help="parallel b0 sweep")
    sw.add_argument("--config", required=True)
    sw.add_argument("--b0", default=None, help="comma-separated b0 list")
    sw.add_argument("--workers", type=int, default=2)
    sw.set_defaults(func=cmd_sweep)

    vb = sub.add_parser("verify-bounds", help="inequality suites")
    vb.add_argument("--suite", required=True,
                    choices=["hardy", "loghls", "profiles", "spectral"])
    vb.set_defaults(func=cmd_verify_bounds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
