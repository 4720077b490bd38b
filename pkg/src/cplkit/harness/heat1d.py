"""Partitioned 1D heat conduction with a monolithic reference solution.

The rod [0, 1] is split at x = 0.5.  Both halves use implicit Euler in time
and central differences in space on the same grid as the monolithic solve.
The left (Dirichlet) participant receives the interface temperature and
returns the heat flux q (positive in +x) leaving its domain through the
interface.  The right (Neumann) participant imposes q on its half-cell at the
interface node and returns the interface temperature.

The flux includes the storage term of the left half-cell,

    q = -alpha (u_M - u_(M-1)) / h - (h / 2) (u_M - u_M^old) / dt,

so the two half-cell balances add up to the monolithic equation at the
interface node and the converged partitioned solution equals the monolithic
one up to the coupling tolerance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ..api import Participant
from ..cplscheme import READ_CHECKPOINT, WRITE_CHECKPOINT
from ..errors import CouplingError

PARTICIPANTS = {"dirichlet": "Dirichlet", "neumann": "Neumann"}
INTERFACE = 0.5


@dataclass
class Heat1dProblem:
    alpha: float = 1.0
    points: int = 50  # grid points per side, interface node included
    dt: float = 1e-3
    windows: int = 20
    initial: str = "sin"  # "sin" or "constant:<value>"
    left: float = 0.0
    right: float = 1.0

    def __post_init__(self):
        if self.points < 3:
            raise CouplingError("heat1d needs at least 3 grid points per side")
        if not self.alpha > 0 or not self.dt > 0:
            raise CouplingError("alpha and dt must be positive")

    @property
    def cells(self) -> int:
        return self.points - 1

    @property
    def h(self) -> float:
        return INTERFACE / self.cells

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, 2 * self.cells + 1)

    def initial_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.initial == "sin":
            # sine bump on top of the straight line between the boundary values
            u = np.sin(np.pi * x) + self.left + (self.right - self.left) * x
        elif self.initial.startswith("constant:"):
            u = np.full_like(x, float(self.initial.split(":", 1)[1]))
        else:
            raise CouplingError(f"unknown initial condition {self.initial!r}")
        u[x == 0.0] = self.left
        u[x == 1.0] = self.right
        return u


def _tridiag_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system given its three diagonals (equal length, ends unused)."""
    ab = np.zeros((3, len(diag)))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def monolithic_step(problem: Heat1dProblem, u, dt):
    """One implicit Euler step of the whole rod (boundary values fixed)."""
    n = len(u) - 2
    k = problem.alpha / problem.h**2
    diag = np.full(n, 1.0 / dt + 2 * k)
    off = np.full(n, -k)
    rhs = u[1:-1] / dt
    rhs[0] += k * u[0]
    rhs[-1] += k * u[-1]
    out = u.copy()
    out[1:-1] = _tridiag_solve(off, diag, off, rhs)
    return out


def solve_monolithic(problem: Heat1dProblem):
    x = problem.grid()
    u = problem.initial_values(x)
    for _ in range(problem.windows):
        u = monolithic_step(problem, u, problem.dt)
    return x, u


class DirichletSide:
    """Left half; nodes 0..M with the interface temperature imposed at node M."""

    def __init__(self, problem: Heat1dProblem):
        self.p = problem
        self.x = problem.grid()[: problem.cells + 1]
        self.u = problem.initial_values(self.x)

    def step(self, dt, temperature) -> float:
        p, u_old = self.p, self.u
        k = p.alpha / p.h**2
        u = u_old.copy()
        u[-1] = temperature
        n = len(u) - 2
        diag = np.full(n, 1.0 / dt + 2 * k)
        off = np.full(n, -k)
        rhs = u_old[1:-1] / dt
        rhs[0] += k * u[0]
        rhs[-1] += k * u[-1]
        u[1:-1] = _tridiag_solve(off, diag, off, rhs)
        flux = -p.alpha * (u[-1] - u[-2]) / p.h - 0.5 * p.h * (u[-1] - u_old[-1]) / dt
        self.u = u
        return flux


class NeumannSide:
    """Right half; nodes M..2M with the interface flux imposed on the half-cell at node M."""

    def __init__(self, problem: Heat1dProblem):
        self.p = problem
        self.x = problem.grid()[problem.cells:]
        self.u = problem.initial_values(self.x)

    def step(self, dt, flux) -> float:
        p, u_old = self.p, self.u
        k = p.alpha / p.h**2
        n = len(u_old) - 1  # unknowns: interface node and interior nodes
        diag = np.full(n, 1.0 / dt + 2 * k)
        lower = np.full(n, -k)
        upper = np.full(n, -k)
        upper[0] = -2 * k
        rhs = u_old[:-1] / dt
        rhs[0] += 2 * flux / p.h
        rhs[-1] += k * u_old[-1]
        u = u_old.copy()
        u[:-1] = _tridiag_solve(lower, diag, upper, rhs)
        self.u = u
        return u[0]


def heat1d_config(scheme="serial-implicit", acceleration="iqn-ils", tol=1e-10, dt=1e-3, windows=20,
                  relaxation=0.5, max_iterations=100, exchange_directory=".", watchpoint=True) -> str:
    """Coupling configuration for the two heat1d participants."""
    acc = ""
    if acceleration != "none":
        name = {"constant": "constant", "aitken": "aitken", "iqn-ils": "IQN-ILS", "iqn-imvj": "IQN-IMVJ"}[acceleration]
        acc = (
            f'    <acceleration:{name}>\n'
            f'      <initial-relaxation value="{relaxation!r}"/>\n'
            f'    </acceleration:{name}>\n'
        )
    implicit = scheme.endswith("implicit")
    measures = ""
    if implicit:
        measures = (
            f'    <max-iterations value="{max_iterations}"/>\n'
            f'    <relative-convergence-measure data="Temperature" mesh="Neumann-Mesh" limit="{tol!r}"/>\n'
            f'    <relative-convergence-measure data="Heat-Flux" mesh="Neumann-Mesh" limit="{tol!r}"/>\n'
        )
    watch = '    <watch-point name="interface" mesh="Dirichlet-Mesh" coordinate="0.5;0.0"/>\n' if watchpoint else ""
    return (
        '<solver-interface dimensions="2">\n'
        '  <data:scalar name="Temperature"/>\n'
        '  <data:scalar name="Heat-Flux"/>\n'
        '  <mesh name="Dirichlet-Mesh">\n'
        '    <use-data name="Temperature"/>\n'
        '    <use-data name="Heat-Flux"/>\n'
        '  </mesh>\n'
        '  <mesh name="Neumann-Mesh">\n'
        '    <use-data name="Temperature"/>\n'
        '    <use-data name="Heat-Flux"/>\n'
        '  </mesh>\n'
        '  <participant name="Dirichlet">\n'
        '    <use-mesh name="Dirichlet-Mesh" provide="yes"/>\n'
        '    <use-mesh name="Neumann-Mesh" from="Neumann"/>\n'
        '    <write-data name="Heat-Flux" mesh="Dirichlet-Mesh"/>\n'
        '    <read-data name="Temperature" mesh="Dirichlet-Mesh"/>\n'
        '    <mapping:nearest-neighbor from="Dirichlet-Mesh" to="Neumann-Mesh" constraint="conservative"/>\n'
        '    <mapping:nearest-neighbor from="Neumann-Mesh" to="Dirichlet-Mesh" constraint="consistent"/>\n'
        f'{watch}'
        '  </participant>\n'
        '  <participant name="Neumann">\n'
        '    <use-mesh name="Neumann-Mesh" provide="yes"/>\n'
        '    <write-data name="Temperature" mesh="Neumann-Mesh"/>\n'
        '    <read-data name="Heat-Flux" mesh="Neumann-Mesh"/>\n'
        '  </participant>\n'
        f'  <m2n:sockets from="Dirichlet" to="Neumann" exchange-directory="{exchange_directory}"/>\n'
        f'  <coupling-scheme:{scheme}>\n'
        '    <participants first="Dirichlet" second="Neumann"/>\n'
        f'    <time-window-size value="{dt!r}"/>\n'
        f'    <max-time value="{dt * windows!r}"/>\n'
        '    <exchange data="Heat-Flux" mesh="Neumann-Mesh" from="Dirichlet" to="Neumann"/>\n'
        '    <exchange data="Temperature" mesh="Neumann-Mesh" from="Neumann" to="Dirichlet"/>\n'
        f'{measures}{acc}'
        f'  </coupling-scheme:{scheme}>\n'
        '</solver-interface>\n'
    )


@dataclass
class Heat1dResult:
    x: np.ndarray
    u: np.ndarray
    iterations: int
    windows: int
    max_iteration_windows: int


def run_participant(config, side, problem: Heat1dProblem, exchange_dir=None, output_dir=".",
                    substeps=1, timeout=30.0) -> Heat1dResult:
    """Run one heat1d participant (``side`` is ``dirichlet`` or ``neumann``) to the end."""
    if side not in PARTICIPANTS:
        raise CouplingError(f"participant must be dirichlet or neumann, got {side!r}")
    name = PARTICIPANTS[side]
    p = Participant(name, config, exchange_dir=exchange_dir, output_dir=output_dir, timeout=timeout)
    window = p.scheme_config.window_size
    problem.dt = window
    problem.windows = p.scheme_config.windows
    solver = DirichletSide(problem) if side == "dirichlet" else NeumannSide(problem)
    mesh = f"{name}-Mesh"
    read, write = ("Temperature", "Heat-Flux") if side == "dirichlet" else ("Heat-Flux", "Temperature")
    ids = p.set_mesh_vertices(mesh, [[INTERFACE, 0.0]])
    try:
        max_dt = p.initialize()
        solver_dt = window / substeps
        checkpoint = None
        while p.is_coupling_ongoing():
            if p.is_action_required(WRITE_CHECKPOINT):
                checkpoint = solver.u.copy()
                p.mark_action_fulfilled(WRITE_CHECKPOINT)
            value = p.read_data(mesh, read, ids)[0]
            dt = min(solver_dt, max_dt)
            out = solver.step(dt, value)
            p.write_data(mesh, write, ids, [out])
            max_dt = p.advance(dt)
            if p.is_action_required(READ_CHECKPOINT):
                solver.u = checkpoint.copy()
                p.mark_action_fulfilled(READ_CHECKPOINT)
        forced = p.scheme.max_iteration_windows
        result = Heat1dResult(solver.x, solver.u, p.total_iterations, p.completed_windows, forced)
    finally:
        if p.phase == "initialized":
            p.finalize()
    return result


def write_solution(path, x, u):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "u"])
        for xi, ui in zip(x, u):
            w.writerow([f"{xi:.17g}", f"{ui:.17g}"])


def read_solution(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]
