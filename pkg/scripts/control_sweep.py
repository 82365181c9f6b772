"""Null-control benchmark over operators and seeds: terminal residuals and control cost.

Usage: python3 scripts/control_sweep.py --out results/control --seeds 0 1 2
"""
import argparse
import csv
from pathlib import Path

from stochobs.config import ExperimentConfig
from stochobs.core import NoiseModel, OperatorSpec
from stochobs.pipelines import run_pipeline

CASES = {
    "heat": (OperatorSpec.heat(), 10),
    "fourth_order": (OperatorSpec.fourth_order(), 6),
    "degenerate_0.5": (OperatorSpec.degenerate(0.5), 6),
    "degenerate_1.5": (OperatorSpec.degenerate(1.5), 6),
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("results/control"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--steps", type=int, default=200)
    args = p.parse_args(argv)

    header = ["case", "seed", "m", "controlled", "spillover", "total", "deterministic", "cost_ratio"]
    rows = []
    for name, (op, m) in CASES.items():
        for seed in args.seeds:
            cfg = ExperimentConfig(
                pipeline="control",
                operator=op,
                m=m,
                m_values=(m,),
                noise=NoiseModel.constant(args.noise),
                n_paths=args.paths,
                n_steps=args.steps,
                seed=seed,
            )
            s = run_pipeline(cfg, args.out / "runs").summary
            rows.append([name, seed, m, s["terminal_ratio_controlled"], s["terminal_ratio_spillover"],
                         s["terminal_ratio_total"], s["deterministic_controlled_ratio"], s["cost_ratio"]])
            print(f"{name:15s} seed {seed}: controlled {rows[-1][3]:.2e}, total {rows[-1][5]:.2e}, cost {rows[-1][7]:.4g}")
    args.out.mkdir(parents=True, exist_ok=True)
    with (args.out / "control_sweep.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([header, *rows])


if __name__ == "__main__":
    main()
