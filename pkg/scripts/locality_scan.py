#!/usr/bin/env python3
"""
Window-radius scan study
========================

How much of the certification window can the fitted gains actually cover?

The dissipation envelope cannot be fit on the full window: the transform
kills the barrier gradient at the rim, so the decrease margin goes to zero
there and no class-Kinf lower envelope exists.  Shrinking the window
restores feasibility, but shrinking too far inflates the fitted slopes
(the decrease data thins out near the obstacle) and the admissible
disturbance bound collapses.  Somewhere in between sits the radius the
pipeline selects.

This script sweeps a radius range much finer than the bundled spec and
writes the whole trade-off table, so the plateau and both cliffs are
visible.  Output: an aligned console table, ``scan.csv``, and (unless
--no-plot) ``scan.svg`` with the admissible bound against the radius and
the required-headroom line.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from issf import (
    RangeError,
    SafetyGeometry,
    build_gains,
    bundled_spec,
    compact_support_transform,
    disk,
    fit_issf_envelopes,
    gradient_control,
    input_sweep,
    load_spec,
    merged_W,
    planar_integrator,
)


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--spec", default="paper_sec4",
                    help="bundled spec name or path to a spec JSON")
    ap.add_argument("--out", type=Path, default=Path("out/locality_scan"),
                    help="output directory")
    ap.add_argument("--r-min", type=float, default=2.05)
    ap.add_argument("--r-max", type=float, default=3.0)
    ap.add_argument("--steps", type=int, default=39)
    ap.add_argument("--no-plot", action="store_true")
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    path = Path(args.spec)
    spec = load_spec(path) if path.is_file() else bundled_spec(args.spec)

    # assemble the closed loop exactly as the pipeline does
    fields = spec.build_fields()
    D, X = spec.geometry.regions()
    Bt = compact_support_transform(fields["B"], D, X)
    W = merged_W(fields["V"], Bt, spec.merge.k1, spec.merge.k2)
    closed = planar_integrator().with_feedback(gradient_control(W))
    Bf = Bt.as_field()
    sweep = input_sweep(2, spec.disturbance.bound,
                        norms=spec.grid.input_norms,
                        n_angles=spec.grid.n_angles)

    ics = np.asarray(spec.initial_conditions)
    d0_min = float(np.min(D.distance(ics)))
    required = spec.gains.headroom * spec.disturbance.bound
    print(f"spec {spec.name}: d0_min = {d0_min:.4f}, "
          f"required bound = {required:.2f} "
          f"(headroom {spec.gains.headroom:g} x "
          f"|u| <= {spec.disturbance.bound:g})\n")

    radii = np.linspace(args.r_min, args.r_max, args.steps)
    rows = []
    header = f"{'r':>6}  {'feasible':>8}  {'mu0':>10}  {'delta':>8}  {'k_adm':>10}"
    print(header)
    print("-" * len(header))
    for rp in radii:
        Xp = disk(spec.geometry.unsafe_center, float(rp))
        fit = fit_issf_envelopes(Bf, closed, D, Xp, sweep,
                                 n_r=spec.grid.n_r, n_theta=spec.grid.n_theta)
        row = {"r": float(rp), "feasible": fit.feasible,
               "mu0": np.nan, "delta": np.nan, "k_adm": np.nan}
        if fit.feasible:
            bundle = build_gains(fit.a1, fit.a2, fit.a3, fit.a4,
                                 spec.gains.theta, spec.gains.epsilon,
                                 SafetyGeometry(D, Xp))
            row["mu0"] = bundle.epsilon * float(
                bundle.alphas["a1"].inverse(bundle.alphas["a2"](d0_min)))
            row["delta"] = bundle.delta
            level = min(row["mu0"], row["delta"])
            try:
                row["k_adm"] = (float(bundle.phi.inverse(level))
                                if level > 0 else 0.0)
            except RangeError:
                row["k_adm"] = np.inf
        rows.append(row)
        mark = " <-- clears" if row["k_adm"] >= required else ""
        print(f"{row['r']:6.3f}  {str(row['feasible']):>8}  "
              f"{row['mu0']:10.4g}  {row['delta']:8.4g}  "
              f"{row['k_adm']:10.4g}{mark}")

    clearing = [r for r in rows if r["feasible"] and r["k_adm"] >= required]
    if clearing:
        sel = max(clearing, key=lambda r: r["r"])
        print(f"\nlargest clearing radius: {sel['r']:.3f} "
              f"(k_adm = {sel['k_adm']:.3f})")
    else:
        print("\nno radius clears the required bound", file=sys.stderr)

    args.out.mkdir(parents=True, exist_ok=True)
    csv = args.out / "scan.csv"
    with open(csv, "w", newline="\n") as fh:
        fh.write("r,feasible,mu0,delta,k_admissible\n")
        for r in rows:
            fh.write(f"{r['r']!r},{int(r['feasible'])},{r['mu0']!r},"
                     f"{r['delta']!r},{r['k_adm']!r}\n")
    print(f"wrote {csv}")

    if not args.no_plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        finite = [r for r in rows
                  if r["feasible"] and np.isfinite(r["k_adm"])]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.plot([r["r"] for r in finite], [r["k_adm"] for r in finite],
                "o-", ms=3, label="admissible bound")
        ax.axhline(required, color="tab:red", ls="--",
                   label=f"required ({required:g})")
        for r in rows:
            if not r["feasible"]:
                ax.axvline(r["r"], color="0.85", zorder=0)
        ax.set_xlabel("window radius r'")
        ax.set_ylabel("admissible disturbance bound")
        ax.set_yscale("log")
        ax.legend()
        ax.set_title("locality trade-off (grey: infeasible fit)")
        fig.tight_layout()
        fig.savefig(args.out / "scan.svg")
        print(f"wrote {args.out / 'scan.svg'}")
    return 0 if clearing else 1


if __name__ == "__main__":
    raise SystemExit(main())
