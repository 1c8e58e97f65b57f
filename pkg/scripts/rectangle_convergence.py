"""Eigenvalue convergence on the pi x 1 tank against separation of variables.

    python3 scripts/rectangle_convergence.py --levels 4 --out runs/convergence

Writes convergence.csv and convergence.svg (relative error of the first SN and
SD eigenvalues against mesh size) and prints observed orders.
"""
from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from sloshlab.geometry import build_rectangle, refine
from sloshlab.plotting import convergence_svg
from sloshlab.spectral import solve


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=16)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--modes", type=int, default=3)
    ap.add_argument("--out", default="runs/convergence")
    args = ap.parse_args(argv)

    k = np.arange(1, args.modes + 1)
    exact = {"sn": k * np.tanh(k), "sd": k / np.tanh(k)}
    mesh = build_rectangle(math.pi, 1.0, args.nx, max(2, args.nx // 2))
    h, errs = [], []
    for level in range(args.levels):
        row = []
        for kind, ref in exact.items():
            lam = solve(mesh, kind, args.modes + 1).lam
            lam = lam[1:] if kind == "sn" else lam[: args.modes]
            row += list(np.abs(lam - ref) / ref)
        h.append(math.pi / (args.nx * 2**level))
        errs.append(row)
        print(f"h={h[-1]:.4f}  " + "  ".join(f"{e:.3e}" for e in row))
        mesh = refine(mesh)
    errs = np.array(errs)
    orders = np.log2(errs[:-1] / errs[1:])
    print("observed orders (last refinement):", np.round(orders[-1], 2))

    labels = [f"{kind} k={j}" for kind in exact for j in k]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w") as fh:
        fh.write("h," + ",".join(labels) + "\n")
        for hv, row in zip(h, errs):
            fh.write(f"{hv:.6g}," + ",".join(f"{e:.6e}" for e in row) + "\n")
    (out / "convergence.svg").write_text(
        convergence_svg(h, errs, labels, "relative eigenvalue error, pi x 1 tank"))


if __name__ == "__main__":
    main()
