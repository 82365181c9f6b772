"""Eigenvalues of the degenerate operator across alpha, with mesh convergence.

Usage: python3 scripts/degenerate_spectra.py --out results/degenerate
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from stochobs.core import OperatorSpec
from stochobs.spectra import degenerate_basis, orthonormality_residual

# first zero of J0; alpha = 1 has lambda_1 = (j01 / 2)^2
J01 = 2.4048255576957724


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("results/degenerate"))
    p.add_argument("--modes", type=int, default=6)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 1.2, 1.5, 1.8])
    args = p.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    rows = []
    for alpha in args.alphas:
        b = degenerate_basis(OperatorSpec.degenerate(alpha), args.modes)
        rows.append([alpha, b.op.degeneracy.value, orthonormality_residual(b), *b.lambdas])
        print(f"alpha={alpha:4.2f} {b.op.degeneracy.value:6s} lambda_1..3 = {np.array2string(b.lambdas[:3], precision=4)}")
    header = ["alpha", "boundary", "orthonormality_residual"] + [f"lambda_{j}" for j in range(1, args.modes + 1)]
    with (args.out / "eigenvalues.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([header, *rows])

    exact = (J01 / 2) ** 2
    conv = []
    for n in (250, 500, 1000, 2000, 4000):
        lam = degenerate_basis(OperatorSpec.degenerate(1.0), 1, mesh_n=n).lambdas[0]
        conv.append([n, lam, abs(lam / exact - 1)])
        print(f"mesh {n:5d}: lambda_1 = {lam:.8f}, relative error {conv[-1][2]:.2e}")
    with (args.out / "mesh_convergence.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([["mesh_n", "lambda_1", "relative_error"], *conv])


if __name__ == "__main__":
    main()
