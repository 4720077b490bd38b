"""Executables built on the library: mapping tester, solverdummy, heat1d and config viewer."""

from .cli import main
from .dummy import dummy_config, run_dummy
from .heat1d import (
    DirichletSide,
    Heat1dProblem,
    NeumannSide,
    heat1d_config,
    run_participant,
    solve_monolithic,
)
from .mapping_test import run_mapping_test

__all__ = [
    "main", "dummy_config", "run_dummy", "DirichletSide", "Heat1dProblem", "NeumannSide",
    "heat1d_config", "run_participant", "solve_monolithic", "run_mapping_test",
]
