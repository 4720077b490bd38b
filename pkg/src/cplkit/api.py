"""Participant facade: the call sequence a coupled solver goes through.

    p = Participant("Fluid", "config.xml")
    ids = p.set_mesh_vertices("Fluid-Mesh", positions)
    dt = p.initialize()
    while p.is_coupling_ongoing():
        if p.is_action_required(WRITE_CHECKPOINT): ...; p.mark_action_fulfilled(WRITE_CHECKPOINT)
        u = p.read_data("Fluid-Mesh", "Displacement", ids)
        ...
        p.write_data("Fluid-Mesh", "Force", ids, forces)
        dt = p.advance(dt)
        if p.is_action_required(READ_CHECKPOINT): ...; p.mark_action_fulfilled(READ_CHECKPOINT)
    p.finalize()

Calls made out of order raise :class:`~cplkit.errors.PhaseError`.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np

from . import comm
from .config import CouplingConfig, load, parse, serialize
from .cplscheme import (
    READ_CHECKPOINT,
    TIME_TOL,
    WRITE_CHECKPOINT,
    CouplingScheme,
    required_actions,
)
from .errors import CommError, PhaseError, UsageError
from .mapping import build_mapping
from .mesh import Mesh, SpatialIndex

log = logging.getLogger(__name__)

ACTIONS = (WRITE_CHECKPOINT, READ_CHECKPOINT)
SHUTDOWN_WAIT = 5.0


class _Buffers:
    """Staged coupling data plus the mapping hooks the scheme calls."""

    def __init__(self):
        self.data = {}
        self.write_maps = []  # (op, from mesh, to mesh, data names)
        self.read_maps = []

    def values(self, data, mesh):
        return self.data[(data, mesh)]

    def set_values(self, data, mesh, array):
        self.data[(data, mesh)] = np.array(array, dtype=float).reshape(self.data[(data, mesh)].shape)

    def _run(self, maps):
        for op, src, dst, names in maps:
            for name in names:
                self.data[(name, dst)] = op.map_values(self.data[(name, src)]).reshape(
                    self.data[(name, dst)].shape
                )

    def map_write(self):
        self._run(self.write_maps)

    def map_read(self):
        self._run(self.read_maps)


class Participant:
    """One coupled solver.

    ``config`` is a path, XML text or a parsed :class:`CouplingConfig`.
    ``exchange_dir`` overrides the configured connection-token directory and
    ``output_dir`` is where watch-point CSV files go.
    """

    def __init__(self, name, config, rank=0, size=1, exchange_dir=None, output_dir=".",
                 timeout=comm.HANDSHAKE_TIMEOUT):
        if (rank, size) != (0, 1):
            raise UsageError(f"only serial participants are supported (rank 0 of 1), got rank {rank} of {size}")
        if isinstance(config, CouplingConfig):
            self.config = config
        elif isinstance(config, str) and config.lstrip().startswith("<"):
            self.config = parse(config)
        else:
            self.config = load(config)
        self.name = name
        self.pconf = self.config.participant(name)
        self.scheme_config = self.config.scheme
        self.peer = next(p.name for p in self.config.participants if p.name != name)
        self.exchange_dir = exchange_dir
        self.output_dir = Path(output_dir)
        self.timeout = timeout
        self.phase = "constructed"
        self.meshes = {m: None for m in self.pconf.provided}
        self.channel = None
        self.scheme = None
        self.buffers = _Buffers()
        self.pending = set()
        self.warnings = []
        self._watch = []

    # -- helpers -----------------------------------------------------------

    def _require(self, op, *phases):
        if self.phase not in phases:
            raise PhaseError(f"{op} is not allowed in phase {self.phase!r} (needs {' or '.join(phases)})")

    @property
    def dimensions(self) -> int:
        return self.config.dimensions

    def _provided(self, mesh):
        if mesh not in self.pconf.provided:
            raise UsageError(f"mesh {mesh!r} is not provided by participant {self.name!r}")

    # -- mesh setup ----------------------------------------------------------

    def set_mesh_vertices(self, mesh, positions) -> np.ndarray:
        """Register the vertices of a provided mesh; returns ids ``0..n-1``."""
        self._require("set_mesh_vertices", "constructed")
        self._provided(mesh)
        pts = np.asarray(positions, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.dimensions:
            raise UsageError(
                f"coordinates for mesh {mesh!r} must have shape (n, {self.dimensions}), got {pts.shape}"
            )
        return self.set_mesh(Mesh(mesh, pts))

    def set_mesh(self, mesh: Mesh) -> np.ndarray:
        """Register a provided mesh including its edges and triangles."""
        self._require("set_mesh", "constructed")
        self._provided(mesh.name)
        if self.meshes[mesh.name] is not None:
            raise PhaseError(f"mesh already set: {mesh.name!r}")
        if mesh.dim != self.dimensions:
            raise UsageError(f"mesh {mesh.name!r} has dimension {mesh.dim}, configuration uses {self.dimensions}")
        self.meshes[mesh.name] = mesh
        return np.arange(len(mesh))

    def get_mesh(self, mesh) -> Mesh:
        """Any mesh this participant uses; received meshes only after initialize."""
        if self.phase == "finalized":
            raise PhaseError("get_mesh is not allowed in phase 'finalized'")
        if mesh not in self.meshes or self.meshes[mesh] is None:
            if mesh in self.pconf.received and self.phase == "constructed":
                raise PhaseError(f"received mesh {mesh!r} is not available before initialize")
            raise UsageError(f"mesh {mesh!r} is not set for participant {self.name!r}")
        return self.meshes[mesh]

    # -- initialize ------------------------------------------------------------

    def _digest(self) -> str:
        return hashlib.sha256(serialize(self.config).encode()).hexdigest()

    def initialize(self) -> float:
        """Connect, exchange meshes, build mappings; returns the first allowed time step."""
        self._require("initialize", "constructed")
        missing = [m for m, v in self.meshes.items() if v is None]
        if missing:
            raise PhaseError(f"initialize requires all provided meshes to be set; missing {missing}")
        m2n = self.config.m2n[0]
        directory = self.exchange_dir if self.exchange_dir is not None else m2n.exchange_directory
        self.channel = comm.connect(directory, self.name, m2n.source, m2n.target, self.timeout)
        try:
            self._handshake()
            self._exchange_meshes()
            self._setup_buffers()
            self._setup_mappings()
            self._setup_watchpoints()
            self.scheme = CouplingScheme(self.scheme_config, self.name, self.channel, self.buffers)
            self.scheme.initialize()
        except BaseException:
            self.channel.close()
            raise
        self.phase = "initialized"
        self.pending = required_actions(self.scheme.state)
        return self._next_dt()

    def _handshake(self):
        tag = f"config:{self._digest()}"
        self.channel.send_frame(comm.ControlMessage(0, 0, False, tag).to_frame())
        frame = self.channel.recv_frame(self.timeout)
        if frame.kind != comm.Kind.CONTROL:
            raise CommError(f"handshake: expected control frame, received kind {frame.kind}")
        peer = comm.ControlMessage.from_frame(frame)
        if peer.tag != tag:
            raise CommError(
                f"configuration mismatch between {self.name!r} and {self.peer!r}: "
                "both processes must load the same coupling configuration"
            )

    def _exchange_meshes(self):
        peer = self.config.participant(self.peer)
        for mesh in self.pconf.provided:
            if mesh in peer.received:
                self.channel.send_frame(comm.mesh_to_frame(self.meshes[mesh]))
        for mesh in self.pconf.received:
            frame = self.channel.recv_frame(self.timeout)
            if frame.kind != comm.Kind.MESH:
                raise CommError(f"expected mesh {mesh!r}, received frame kind {frame.kind}")
            got = comm.mesh_from_frame(frame)
            if got.name != mesh:
                raise CommError(f"mesh exchange mismatch: expected {mesh!r}, received {got.name!r}")
            if got.dim != self.dimensions:
                raise CommError(f"mesh exchange mismatch: {mesh!r} has dimension {got.dim}")
            self.meshes[mesh] = got

    def _setup_buffers(self):
        keys = [(a.data, a.mesh) for a in self.pconf.write_data + self.pconf.read_data]
        keys += [(e.data, e.mesh) for e in self.scheme_config.exchanges if self.pconf.uses(e.mesh)]
        for data, mesh in keys:
            if (data, mesh) in self.buffers.data:
                continue
            n = len(self.meshes[mesh])
            c = self.config.components(data)
            self.buffers.data[(data, mesh)] = np.zeros(n) if c == 1 else np.zeros((n, c))

    def _setup_mappings(self):
        for m in self.pconf.mappings:
            direction = self.pconf.mapping_direction(m)
            src, dst = m.from_mesh, self.pconf.mapping_target(m)
            if direction == "write":
                names = [a.data for a in self.pconf.write_data if a.mesh == src and (a.data, dst) in self.buffers.data]
            else:
                names = [a.data for a in self.pconf.read_data if a.mesh == dst and (a.data, src) in self.buffers.data]
            if not names:
                log.warning("%s: mapping %s -> %s carries no data", self.name, src, dst)
                continue
            op = build_mapping(m.kind, self.meshes[src], self.meshes[dst], m.constraint,
                               m.support_radius, m.polynomial)
            target = self.buffers.write_maps if direction == "write" else self.buffers.read_maps
            target.append((op, src, dst, names))

    def _setup_watchpoints(self):
        for w in self.pconf.watchpoints:
            mesh = self.meshes[w.mesh]
            vertex = SpatialIndex(mesh).nearest_vertex(np.asarray(w.coordinate, dtype=float))
            names = [d for d in self.config.mesh_decl(w.mesh).use_data if (d, w.mesh) in self.buffers.data]
            header = ["time"]
            for d in names:
                c = self.config.components(d)
                header += [d] if c == 1 else [f"{d}_{i}" for i in range(c)]
            path = self.output_dir / f"{w.name}.csv"
            path.write_text(",".join(header) + "\n", encoding="utf-8")
            self._watch.append((path, w.mesh, vertex, names))

    def _record_watchpoints(self):
        t = self.scheme.state.time
        for path, mesh, vertex, names in self._watch:
            row = [t]
            for d in names:
                row += list(np.atleast_1d(self.buffers.values(d, mesh)[vertex]))
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    # -- data access ------------------------------------------------------------

    def _access(self, op, mesh, data, role, ids):
        self._require(op, "initialized")
        allowed = self.pconf.read_data if role == "read" else self.pconf.write_data
        if not any(a.data == data and a.mesh == mesh for a in allowed):
            other = self.pconf.write_data if role == "read" else self.pconf.read_data
            if any(a.data == data and a.mesh == mesh for a in other):
                raise UsageError(f"{data!r} on {mesh!r} is {('write' if role == 'read' else 'read')}-data "
                                 f"for {self.name!r}; {op} is not allowed")
            raise UsageError(f"{data!r} on {mesh!r} is not {role}-data of {self.name!r}")
        buf = self.buffers.values(data, mesh)
        if ids is None:
            return buf, slice(None)
        idx = np.asarray(ids, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= buf.shape[0]):
            raise UsageError(f"unknown vertex ids for mesh {mesh!r} (valid 0..{buf.shape[0] - 1})")
        return buf, idx

    def read_data(self, mesh, data, vertex_ids=None) -> np.ndarray:
        """Copy of the staged values (zero before the first exchange)."""
        buf, idx = self._access("read_data", mesh, data, "read", vertex_ids)
        return np.array(buf[idx])

    def write_data(self, mesh, data, vertex_ids, values) -> None:
        buf, idx = self._access("write_data", mesh, data, "write", vertex_ids)
        if not self.scheme.ongoing():
            raise PhaseError("write_data after the end of the coupled simulation")
        vals = np.asarray(values, dtype=float)
        target = buf[idx]
        try:
            vals = vals.reshape(target.shape)
        except ValueError:
            raise UsageError(f"values for {data!r} must have shape {target.shape}, got {vals.shape}") from None
        if not np.all(np.isfinite(vals)):
            raise UsageError(f"non-finite values written to {data!r}")
        buf[idx] = vals

    # -- time stepping ------------------------------------------------------------

    def _next_dt(self) -> float:
        st = self.scheme.state
        if st.accumulated > 0:
            return st.remaining()
        return max(min(st.window_size, self.scheme_config.max_time - st.time), 0.0)

    def advance(self, dt) -> float:
        """Advance by ``dt``; exchanges data when the window end is reached."""
        self._require("advance", "initialized")
        if not self.scheme.ongoing():
            raise PhaseError("advance after the end of the coupled simulation")
        if self.pending:
            raise PhaseError(f"required action(s) not fulfilled before advance: {sorted(self.pending)}")
        st = self.scheme.state
        dt = float(dt)
        if not dt > 0:
            raise UsageError("time step must be positive")
        if dt > st.remaining() + TIME_TOL * st.window_size:
            raise UsageError(f"dt overshoots window: {dt!r} > remaining {st.remaining()!r}")
        st.accumulated = min(st.accumulated + dt, st.window_size)
        if abs(st.window_size - st.accumulated) > TIME_TOL * st.window_size:
            return st.remaining()
        st.accumulated = st.window_size
        converged = self.scheme.window_end()
        if converged and self._watch:
            self._record_watchpoints()
        self.pending = required_actions(st)
        return self._next_dt()

    def is_coupling_ongoing(self) -> bool:
        self._require("is_coupling_ongoing", "initialized")
        return self.scheme.ongoing()

    def is_action_required(self, action) -> bool:
        self._require("is_action_required", "initialized")
        if action not in ACTIONS:
            raise UsageError(f"unknown action {action!r}")
        return action in self.pending

    def mark_action_fulfilled(self, action) -> None:
        self._require("mark_action_fulfilled", "initialized")
        if action not in ACTIONS:
            raise UsageError(f"unknown action {action!r}")
        if action not in self.pending:
            raise PhaseError(f"action {action!r} is not required")
        self.pending.discard(action)

    @property
    def time(self) -> float:
        return self.scheme.state.time if self.scheme else 0.0

    @property
    def total_iterations(self) -> int:
        return self.scheme.total_iterations if self.scheme else 0

    @property
    def completed_windows(self) -> int:
        return self.scheme.state.window if self.scheme else 0

    # -- shutdown ---------------------------------------------------------------

    def finalize(self) -> None:
        """Send the shutdown frame, wait for the peer's, close the connection."""
        if self.phase == "finalized":
            raise PhaseError("finalize is not allowed in phase 'finalized'")
        if self.phase == "constructed":
            self.phase = "finalized"
            return
        self.phase = "finalized"
        if self.scheme.state.accumulated > 0:
            msg = f"{self.name}: finalize with an unexchanged window in progress"
            self.warnings.append(msg)
            log.warning(msg)
        try:
            self.channel.send_frame(comm.SHUTDOWN)
            self.channel.flush()
            while True:
                frame = self.channel.recv_frame(SHUTDOWN_WAIT)
                if frame.kind == comm.Kind.SHUTDOWN:
                    break
                log.warning("%s: discarding frame kind %s received during finalize", self.name, frame.kind)
        except CommError as exc:
            log.debug("%s: peer gone during finalize: %s", self.name, exc)
        finally:
            self.channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.phase != "finalized":
            try:
                self.finalize()
            except Exception as err:  # pragma: no cover - best effort on error paths
                log.debug("finalize during exit failed: %s", err)
        return False

