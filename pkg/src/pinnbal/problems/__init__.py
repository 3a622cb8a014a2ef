"""Benchmark PDE problems in forward and inverse settings."""
from ..errors import ConfigurationError
from .base import (CollocationBatch, Problem, Region, SineProductField, export_measurements,
                   export_reference, grid, sample_collocation, term_losses)
from .burgers import (Burgers, burgers_crank_nicolson, burgers_reference,
                      burgers_reference_jet, burgers_residual)
from .helmholtz import Helmholtz, helmholtz_analytical, helmholtz_forcing, helmholtz_residual
from .kirchhoff import (Kirchhoff, KirchhoffMaterial, kirchhoff_analytical, kirchhoff_load,
                        kirchhoff_moments, kirchhoff_residual)

PROBLEMS = {"burgers": Burgers, "kirchhoff": Kirchhoff, "helmholtz": Helmholtz}


def make_problem(name: str, mode: str = "forward") -> Problem:
    try:
        cls = PROBLEMS[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return cls(mode)


__all__ = [
    "PROBLEMS", "make_problem", "Problem", "Region", "CollocationBatch", "SineProductField",
    "grid", "sample_collocation", "term_losses", "export_reference", "export_measurements",
    "Burgers", "burgers_reference", "burgers_reference_jet", "burgers_residual",
    "burgers_crank_nicolson",
    "Kirchhoff", "KirchhoffMaterial", "kirchhoff_analytical", "kirchhoff_load",
    "kirchhoff_moments", "kirchhoff_residual",
    "Helmholtz", "helmholtz_analytical", "helmholtz_forcing", "helmholtz_residual",
]
