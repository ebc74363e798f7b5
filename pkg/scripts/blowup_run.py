"""Run the modulated collapse from profile initial data and report the
measured blow-up laws.

Usage:
    python scripts/blowup_run.py --b0 1e-2 --b-min 5e-3 --out runs/blowup
"""

import argparse
import json
import os

import numpy as np

from kslab.diagnostics import DiagnosticsError, fit_rate_law
from kslab.dynamics import EvolveParams, evolve, measure_laws


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--b0", type=float, default=1e-2)
    ap.add_argument("--b-min", type=float, default=5e-3)
    ap.add_argument("--M", type=float, default=11.0)
    ap.add_argument("--s-max", type=float, default=2000.0)
    ap.add_argument("--cadence", type=int, default=10)
    ap.add_argument("--out", default="runs/blowup")
    args = ap.parse_args()

    params = EvolveParams(b0=args.b0, M_param=args.M, cadence=args.cadence,
                          b_min=args.b_min, s_max=args.s_max)
    series = evolve(params)
    os.makedirs(args.out, exist_ok=True)
    series.to_csv(os.path.join(args.out, "timeseries.csv"))

    laws = measure_laws(series)
    ra, rb = laws["ratio_a"], laws["ratio_b"]
    q = len(ra) // 4
    summary = {
        "status": series.status,
        "b_path": [float(series.b[0]), float(series.b[-1])],
        "lam_final": float(series.lam[-1]),
        "scale_law_ratio": {"median": float(np.median(ra[q:])),
                            "max_dev": float(np.max(np.abs(ra[q:] - 1)))},
        "b_law_ratio": {"start": float(rb[0]) if len(rb) else None,
                        "end": float(rb[-1]) if len(rb) else None},
        "lam43_rate_floor": float(np.min(laws["rate_lam43"]))
        if len(laws["rate_lam43"]) else None,
    }
    try:
        summary["rate_fit"] = fit_rate_law(series)
    except DiagnosticsError as exc:
        summary["rate_fit"] = {"error": str(exc)}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
