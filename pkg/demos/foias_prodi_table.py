#!/usr/bin/env python3
"""Tabulate how sharply the tangent flow contracts high shells.

Samples stationary base paths, restricts the time-1 tangent map to
shells above each cutoff, and writes the mean operator norm with its
standard error as `n_cut,norm_mean,norm_se` rows.  The resulting table
feeds the `foias_prodi` figure kind of cascade-plot:

    python3 demos/foias_prodi_table.py --out foias_prodi.csv
    cascade-plot foias_prodi --in foias_prodi.csv --out foias_prodi.svg
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from cascade.linearize import foias_prodi_estimate
from cascade.model import ShellParams


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nu", type=float, default=1e-4, help="viscosity")
    parser.add_argument("--c", type=float, default=1.0, help="coupling exponent")
    parser.add_argument("--sigma", type=float, default=1.0, help="forcing amplitude")
    parser.add_argument("--n-shells", type=int, default=19, help="truncation size")
    parser.add_argument(
        "--cuts",
        type=int,
        nargs="+",
        default=[4, 8, 12],
        help="low-shell cutoffs to compare",
    )
    parser.add_argument(
        "--n-samples", type=int, default=8, help="stationary base paths per cutoff"
    )
    parser.add_argument("--dt", type=float, default=1e-6, help="integrator step")
    parser.add_argument("--seed", type=int, default=5, help="noise seed")
    parser.add_argument(
        "--spin-up", type=float, default=20.0, help="equilibration time per path"
    )
    parser.add_argument(
        "--out", type=Path, default=Path("foias_prodi.csv"), help="output CSV path"
    )
    args = parser.parse_args(argv)

    params = ShellParams(
        nu=args.nu, c=args.c, sigma=args.sigma, n_shells=args.n_shells
    )
    rows = foias_prodi_estimate(
        params,
        tuple(args.cuts),
        n_samples=args.n_samples,
        dt=args.dt,
        seed=args.seed,
        spin_up=args.spin_up,
    )
    lines = ["n_cut,norm_mean,norm_se"]
    for n_cut, mean, se in rows:
        lines.append(f"{int(n_cut)},{float(mean)!r},{float(se)!r}")
        print(f"cutoff {int(n_cut):2d}: norm {mean:.6e} +- {se:.1e}")
    args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
