# # Recovering the wave number from data
#
# In inverse mode the wave number k is a trainable scalar, initialised at
# 0.5, and the loss has two terms: the PDE residual and the misfit to
# noise-free samples of the true field (k = 1). The script prints how the
# estimate moves as training progresses.
#
#     python demos/inverse_helmholtz.py [--steps N] [--balancer NAME]

import argparse

import numpy as np

from pinnbal.harness import PRESETS
from pinnbal.training import TrainConfig, train

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=1000)
parser.add_argument("--balancer", default="relobralo")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

cfg = TrainConfig(**{**PRESETS["helmholtz"], "balancer": args.balancer, "max_steps": args.steps,
                     "seed": args.seed})


def progress(step, record):
    if step % max(1, args.steps // 10) == 0:
        lam = ", ".join(f"{v:.3f}" for v in record.lambdas[-1])
        print(f"step {step:6d}  k = {record.mu[-1]:.5f}  loss = {np.sum(record.losses[-1]):.3e}"
              f"  lambda = [{lam}]")


rec = train("helmholtz", cfg, mode="inverse", progress=progress)
m = rec.metrics
print(f"\nfinal k = {m['mu']:.5f} (true 1), squared error {m['val_mu']:.2e}, "
      f"field MSE {m['val_u']:.3e}, {m['steps']} steps, stop: {m['stop_reason']}")
