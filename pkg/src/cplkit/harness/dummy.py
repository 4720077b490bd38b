"""Minimal coupled solver: copies what it reads into what it writes."""

from __future__ import annotations

import numpy as np

from ..api import Participant
from ..cplscheme import READ_CHECKPOINT, WRITE_CHECKPOINT

DUMMY_CONFIG = """\
<solver-interface dimensions="{dims}">
  <data:vector name="Data-One"/>
  <data:vector name="Data-Two"/>
  <mesh name="SolverOne-Mesh">
    <use-data name="Data-One"/>
    <use-data name="Data-Two"/>
  </mesh>
  <mesh name="SolverTwo-Mesh">
    <use-data name="Data-One"/>
    <use-data name="Data-Two"/>
  </mesh>
  <participant name="SolverOne">
    <use-mesh name="SolverOne-Mesh" provide="yes"/>
    <use-mesh name="SolverTwo-Mesh" from="SolverTwo"/>
    <write-data name="Data-One" mesh="SolverOne-Mesh"/>
    <read-data name="Data-Two" mesh="SolverOne-Mesh"/>
    <mapping:nearest-neighbor from="SolverOne-Mesh" to="SolverTwo-Mesh" constraint="consistent"/>
    <mapping:nearest-neighbor from="SolverTwo-Mesh" to="SolverOne-Mesh" constraint="consistent"/>
  </participant>
  <participant name="SolverTwo">
    <use-mesh name="SolverTwo-Mesh" provide="yes"/>
    <write-data name="Data-Two" mesh="SolverTwo-Mesh"/>
    <read-data name="Data-One" mesh="SolverTwo-Mesh"/>
  </participant>
  <m2n:sockets from="SolverOne" to="SolverTwo" exchange-directory="{exchange_directory}"/>
  <coupling-scheme:{scheme}>
    <participants first="SolverOne" second="SolverTwo"/>
    <time-window-size value="{dt!r}"/>
    <max-time value="{max_time!r}"/>
    <exchange data="Data-One" mesh="SolverTwo-Mesh" from="SolverOne" to="SolverTwo"/>
    <exchange data="Data-Two" mesh="SolverTwo-Mesh" from="SolverTwo" to="SolverOne"/>
{extra}  </coupling-scheme:{scheme}>
</solver-interface>
"""


def dummy_config(scheme="serial-explicit", windows=5, dt=1.0, dims=3, exchange_directory=".",
                 acceleration=None) -> str:
    extra = ""
    if scheme.endswith("implicit"):
        extra = (
            '    <max-iterations value="10"/>\n'
            '    <relative-convergence-measure data="Data-Two" mesh="SolverTwo-Mesh" limit="1e-6"/>\n'
        )
        if acceleration:
            extra += f"    <acceleration:{acceleration}/>\n"
    return DUMMY_CONFIG.format(
        dims=dims, scheme=scheme, dt=float(dt), max_time=float(dt * windows),
        exchange_directory=exchange_directory, extra=extra,
    )


def run_dummy(config, name, vertices=5, exchange_dir=None, timeout=30.0) -> dict:
    """Run one solverdummy to the end; returns counters for the caller to report."""
    p = Participant(name, config, exchange_dir=exchange_dir, timeout=timeout)
    dims = p.dimensions
    ids = {}
    for mesh in p.pconf.provided:
        pts = np.zeros((vertices, dims))
        pts[:, 0] = np.arange(vertices, dtype=float)
        ids[mesh] = p.set_mesh_vertices(mesh, pts)
    advances = 0
    try:
        dt = p.initialize()
        while p.is_coupling_ongoing():
            if p.is_action_required(WRITE_CHECKPOINT):
                p.mark_action_fulfilled(WRITE_CHECKPOINT)
            reads = [(a, p.read_data(a.mesh, a.data, ids.get(a.mesh))) for a in p.pconf.read_data]
            for i, w in enumerate(p.pconf.write_data):
                values = np.zeros_like(p.buffers.values(w.data, w.mesh))
                if reads:
                    src = reads[i % len(reads)][1]
                    if src.shape == values.shape:
                        values = src
                p.write_data(w.mesh, w.data, ids.get(w.mesh), values)
            dt = p.advance(dt)
            advances += 1
            if p.is_action_required(READ_CHECKPOINT):
                p.mark_action_fulfilled(READ_CHECKPOINT)
        stats = {
            "windows": p.completed_windows,
            "advances": advances,
            "iterations": p.total_iterations,
        }
    finally:
        if p.phase == "initialized":
            p.finalize()
    return stats
