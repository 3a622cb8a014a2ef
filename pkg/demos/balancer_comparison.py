# # Comparing loss balancers on the Helmholtz problem
#
# Trains the same network with each balancing method from the same seeds and
# prints validation error, run time and the final scalings. The default
# budget is small enough to finish in minutes on one core; the full protocol
# uses 100000 steps.
#
#     python demos/balancer_comparison.py [--steps N] [--seeds 0 1] [--out DIR]

import argparse
import json

from pinnbal.harness import ExperimentConfig, report, run_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--problem", default="helmholtz")
parser.add_argument("--steps", type=int, default=500)
parser.add_argument("--seeds", type=int, nargs="+", default=[0])
parser.add_argument("--methods", nargs="+",
                    default=["manual", "softadapt", "relobralo", "lr_annealing", "gradnorm"])
parser.add_argument("--out", default="demo_runs/comparison")
args = parser.parse_args()

# ## Run
#
# The preset network and balancer settings for the problem apply; only the
# step budget changes. Learning-rate schedule and early stopping still run.

dirs = []
for method in args.methods:
    cfg = ExperimentConfig(args.problem, "forward", method, {"max_steps": args.steps},
                           args.seeds, f"{args.out}/{method}")
    res = run_experiment(cfg)
    dirs.append(res.directory)
    agg, timing = res.summary["aggregate"], res.summary["timing"]
    last = json.loads((res.directory / f"run_seed{args.seeds[0]}.json").read_text())
    print(f"{method:13s} val_u {agg['val_u']['median']:.3e}  rel_max_err {agg['rel_max_err']['median']:.3f}"
          f"  {timing['seconds_per_1000']['median']:7.1f} s/1000 steps"
          f"  sweeps/step {agg['sweeps_per_step']['median']:.0f}  ({last['metrics']['stop_reason']})")

# ## Scalings over time
#
# The report turns the runs into per-step tables: loss curves, the mean and
# spread of each term's scaling, and a field grid of the median run.

rep = report(dirs, f"{args.out}/report", field_grid=64)
print("\nreport files:")
for f in rep.files:
    print("  ", f)
