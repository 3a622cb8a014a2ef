# # Reference solutions and how far to trust them
#
# Every error number this package reports is measured against a reference
# field. This script checks each reference with an independent route before
# anything gets trained, then writes the fields to CSV for plotting.
#
#     python demos/reference_solutions.py [--out DIR]

import argparse
from pathlib import Path

import numpy as np

from pinnbal.oracles import (burgers_fd_residual, cole_hopf_vs_crank_nicolson,
                             kirchhoff_edge_moments, reference_term_losses)
from pinnbal.problems import burgers_reference, export_reference, make_problem

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="reference_fields")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

# ## Burgers: Cole-Hopf quadrature against a grid solver
#
# The quadrature solution is compared with a Crank-Nicolson solve on 4097
# points. Agreement at (0.5, 0.5) is the headline number; the worst point
# sits on the steep front near x = 0, where the grid solver is least accurate.

at_point, worst = cole_hopf_vs_crank_nicolson()
print(f"Cole-Hopf vs Crank-Nicolson: |diff| at (0.5, 0.5) = {at_point:.2e}, max over x = {worst:.2e}")
print(f"u(0.5, 0.5) = {float(burgers_reference(0.5, 0.5)):.10f}")

# A third check that shares nothing with either solver: plug finite
# differences of the quadrature values into the PDE.

print(f"Burgers residual from 5-point differences: {burgers_fd_residual():.2e}")

# The front steepens over time; the largest slope shows how sharp it gets.

x = np.linspace(-1, 1, 2001)
for t in (0.25, 0.5, 1.0):
    u = burgers_reference(x, np.full_like(x, t))
    print(f"  t = {t:4.2f}: max |u_x| ~ {np.max(np.abs(np.diff(u))) / (x[1] - x[0]):8.1f}")

# ## Closed-form fields
#
# The plate and the Helmholtz solutions are closed forms. Substituting them
# for the network must zero every loss term, including the bending moments
# on the plate edges.

print(f"Kirchhoff edge bending moments: {kirchhoff_edge_moments():.2e}")
for name in ("burgers", "kirchhoff", "helmholtz"):
    print(f"{name:10s} largest term loss with the reference substituted: "
          f"{reference_term_losses(name):.2e}")

# ## Export

for name in ("burgers", "kirchhoff", "helmholtz"):
    path = out / f"reference_{name}.csv"
    export_reference(make_problem(name), path)
    print("wrote", path)
