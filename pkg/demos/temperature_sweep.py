# # How the softmax temperature shapes the result
#
# A one-axis sweep over the temperature of the adaptive balancer. Each cell
# trains several seeds and reports the median of the log validation MSE;
# small temperatures concentrate the scaling on the slowest-improving term,
# large ones approach equal weights.
#
#     python demos/temperature_sweep.py [--steps N] [--runs R]

import argparse

from pinnbal.harness import ExperimentConfig, SweepSpec, sweep

parser = argparse.ArgumentParser()
parser.add_argument("--problem", default="helmholtz")
parser.add_argument("--steps", type=int, default=300)
parser.add_argument("--runs", type=int, default=3)
parser.add_argument("--temperatures", type=float, nargs="+", default=[1e-5, 1e-3, 1e-1, 10.0])
parser.add_argument("--out", default="demo_runs/temperature")
args = parser.parse_args()

base = ExperimentConfig(args.problem, "forward", "relobralo", {"max_steps": args.steps},
                        list(range(args.runs)), args.out)
res = sweep(SweepSpec({"temperature": args.temperatures}, runs_per_cell=args.runs), base)

for cell in res.cells:
    print(f"T = {cell['temperature']:8.0e}   median log val_u = {cell['median_log_val_u']:8.3f}   {cell['status']}")
best = min(res.cells, key=lambda c: c["median_log_val_u"])
print(f"best temperature: {best['temperature']:g}; matrix written to {res.directory / 'matrix.csv'}")
