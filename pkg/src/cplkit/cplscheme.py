"""Two-participant coupling schemes.

Serial or parallel, explicit or implicit.  Data is exchanged only when a
participant's accumulated time reaches the end of the current time window;
implicit schemes repeat a window until the convergence measures pass, with
the second participant running convergence checks and acceleration.
"""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .acceleration import DEFAULT_FILTER, DEFAULT_MAX_COLUMNS, DEFAULT_RELAXATION, Acceleration
from .comm import ControlMessage, FieldMessage, Kind
from .errors import CommError, CouplingError

log = logging.getLogger(__name__)

SCHEME_KINDS = ("serial-explicit", "parallel-explicit", "serial-implicit", "parallel-implicit")
TIME_TOL = 1e-12
CONVERGENCE_FLOOR = 1e-30
DEFAULT_MAX_ITERATIONS = 100
MAX_ITERATIONS_TAG = "max-iterations"

WRITE_CHECKPOINT = "write-iteration-checkpoint"
READ_CHECKPOINT = "read-iteration-checkpoint"


@dataclass(frozen=True)
class Exchange:
    data: str
    mesh: str
    source: str
    target: str


@dataclass(frozen=True)
class ConvergenceMeasure:
    data: str
    mesh: str
    limit: float


@dataclass(frozen=True)
class AccelerationConfig:
    kind: str = "none"
    initial_relaxation: float = DEFAULT_RELAXATION
    max_used_iterations: int = DEFAULT_MAX_COLUMNS
    filter_type: str = "QR1"
    filter_limit: float = DEFAULT_FILTER


@dataclass(frozen=True)
class SchemeConfig:
    kind: str
    first: str
    second: str
    window_size: float
    max_time: float
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    exchanges: tuple = ()
    measures: tuple = ()
    acceleration: AccelerationConfig = field(default_factory=AccelerationConfig)

    @property
    def implicit(self) -> bool:
        return self.kind.endswith("implicit")

    @property
    def serial(self) -> bool:
        return self.kind.startswith("serial")

    @property
    def windows(self) -> int:
        return int(round(self.max_time / self.window_size))

    def role(self, participant: str) -> str:
        if participant == self.first:
            return "first"
        if participant == self.second:
            return "second"
        raise CouplingError(f"{participant!r} does not take part in the coupling scheme")

    def digest(self) -> str:
        """Fingerprint both peers compare during the handshake."""
        parts = [
            self.kind, self.first, self.second, repr(float(self.window_size)),
            repr(float(self.max_time)), str(self.max_iterations),
        ]
        parts += [f"{e.data}@{e.mesh}:{e.source}>{e.target}" for e in self.exchanges]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()


@dataclass
class SchemeState:
    """Time bookkeeping of one participant."""

    window_size: float
    max_time: float
    window: int = 0
    iteration: int = 1
    accumulated: float = 0.0
    phase: str = "first-iteration"
    write_checkpoint: bool = False
    read_checkpoint: bool = False
    implicit: bool = False

    @property
    def window_start(self) -> float:
        return self.window * self.window_size

    @property
    def time(self) -> float:
        return self.window_start + self.accumulated

    def remaining(self) -> float:
        return max(self.window_size - self.accumulated, 0.0)


def clamp_dt(state: SchemeState, solver_dt: float) -> float:
    """Largest step the solver may take without leaving the window."""
    if not solver_dt > 0:
        raise CouplingError("time step must be positive")
    return min(solver_dt, state.remaining())


def window_boundary_reached(state: SchemeState) -> bool:
    return abs(state.window_size - state.accumulated) <= TIME_TOL * state.window_size


@dataclass
class ConvergenceResult:
    measures: dict
    converged: bool
    max_iterations_reached: bool = False


def check_convergence(measures, current, previous, iteration=1, max_iterations=None) -> ConvergenceResult:
    """Relative change test ``|x_k - x_(k-1)| <= limit * |x_k|`` for every measure.

    ``current`` and ``previous`` map ``(data, mesh)`` to value arrays.  When
    ``iteration`` reaches ``max_iterations`` the result is forced to converged
    and flagged.
    """
    per = {}
    for m in measures:
        key = (m.data, m.mesh)
        cur = np.asarray(current[key], dtype=float)
        prev = np.asarray(previous[key], dtype=float)
        change = np.linalg.norm(cur - prev)
        per[key] = bool(change <= m.limit * max(np.linalg.norm(cur), CONVERGENCE_FLOOR))
    ok = all(per.values())
    if not ok and max_iterations is not None and iteration >= max_iterations:
        return ConvergenceResult(per, True, True)
    return ConvergenceResult(per, ok)


def required_actions(state: SchemeState) -> set:
    if not state.implicit:
        return set()
    out = set()
    if state.write_checkpoint:
        out.add(WRITE_CHECKPOINT)
    if state.read_checkpoint:
        out.add(READ_CHECKPOINT)
    return out


class Action(str, enum.Enum):
    MAP_WRITE = "map-write"
    SEND = "send"
    RECEIVE = "receive"
    MAP_READ = "map-read"
    CHECK_CONVERGENCE = "check-convergence"
    ACCELERATE = "accelerate"
    ADVANCE_TIME = "advance-time"
    REPEAT_WINDOW = "repeat-window"


def step_schedule(kind, role, event, *, converged=True, final=False,
                  write_mapping=True, read_mapping=True) -> list:
    """Ordered actions a participant performs for ``event``.

    ``event`` is ``initialize`` or ``advance`` (at a window boundary).  For
    implicit schemes ``converged`` selects between advancing and repeating the
    window; ``final`` marks the last window, after which the serial second
    participant stops receiving.
    """
    if kind not in SCHEME_KINDS:
        raise CouplingError(f"unknown coupling scheme {kind!r}")
    if role not in ("first", "second"):
        raise CouplingError(f"unknown role {role!r}")
    implicit = kind.endswith("implicit")
    serial = kind.startswith("serial")
    A = Action
    mw = [A.MAP_WRITE] if write_mapping else []
    mr = [A.MAP_READ] if read_mapping else []
    tail = [A.ADVANCE_TIME if (converged or not implicit) else A.REPEAT_WINDOW]

    if event == "initialize":
        if serial and role == "second":
            return [A.RECEIVE] + mr
        return []
    if event != "advance":
        raise CouplingError(f"illegal event {event!r} for {role} participant")

    if role == "first":
        return mw + [A.SEND, A.RECEIVE] + mr + tail
    if not implicit:
        if serial:
            recv = [] if final else [A.RECEIVE] + mr
            return mw + [A.SEND] + recv + tail
        return mw + [A.SEND, A.RECEIVE] + mr + tail
    accel = [A.CHECK_CONVERGENCE] + ([] if converged else [A.ACCELERATE])
    if serial:
        recv = [] if (final and converged) else [A.RECEIVE] + mr
        return mw + accel + [A.SEND] + recv + tail
    return mw + [A.RECEIVE] + accel + [A.SEND] + mr + tail


class CouplingScheme:
    """Runtime side of a scheme for one participant.

    ``store`` supplies the data buffers: ``values(data, mesh)``,
    ``set_values(data, mesh, array)``, ``map_write()`` and ``map_read()``.
    """

    def __init__(self, config: SchemeConfig, local: str, channel, store):
        self.config = config
        self.local = local
        self.role = config.role(local)
        self.peer = config.second if self.role == "first" else config.first
        self.channel = channel
        self.store = store
        self.state = SchemeState(config.window_size, config.max_time, implicit=config.implicit)
        self.outgoing = [e for e in config.exchanges if e.source == local]
        self.incoming = [e for e in config.exchanges if e.target == local]
        self.total_iterations = 0
        self.max_iteration_windows = 0
        self.history = []
        self.acceleration = None
        self._previous = {}
        self._accel_input = None
        if config.implicit and self.role == "second":
            self.accelerated = self._accelerated_exchanges()
        else:
            self.accelerated = []

    def _accelerated_exchanges(self):
        cfg = self.config
        if cfg.serial:
            return [e for e in cfg.exchanges if e.source == cfg.second]
        return [e for e in cfg.exchanges if e.source == cfg.first] + [
            e for e in cfg.exchanges if e.source == cfg.second
        ]

    # -- setup ---------------------------------------------------------

    def initialize(self):
        """Set up buffers and acceleration; the serial second participant receives first data."""
        st = self.state
        if self.config.implicit:
            st.write_checkpoint = True
        if self.accelerated:
            sizes = [self.store.values(e.data, e.mesh).size for e in self.accelerated]
            acc = self.config.acceleration
            self.acceleration = Acceleration(
                acc.kind, sum(sizes), sizes, acc.initial_relaxation,
                acc.max_used_iterations, acc.filter_limit,
            )
            self._accel_input = self._gather(self.accelerated)
        self._snapshot_previous()
        if self.config.serial and self.role == "second":
            self._receive()
            self.store.map_read()

    def _gather(self, exchanges):
        if not exchanges:
            return np.zeros(0)
        return np.concatenate([self.store.values(e.data, e.mesh).reshape(-1) for e in exchanges])

    def _scatter(self, exchanges, vec):
        start = 0
        for e in exchanges:
            cur = self.store.values(e.data, e.mesh)
            n = cur.size
            self.store.set_values(e.data, e.mesh, vec[start:start + n].reshape(cur.shape))
            start += n

    def _snapshot_previous(self):
        keys = {(m.data, m.mesh) for m in self.config.measures}
        self._previous = {k: self.store.values(*k).copy() for k in keys}

    # -- communication ---------------------------------------------------

    def _send(self, control=None):
        for e in self.outgoing:
            vals = self.store.values(e.data, e.mesh)
            comps = 1 if vals.ndim == 1 else vals.shape[1]
            self.channel.send_frame(FieldMessage(e.data, e.mesh, comps, vals.reshape(-1)).to_frame())
        if control is not None:
            self.channel.send_frame(control.to_frame())

    def _expect(self, kind):
        frame = self.channel.recv_frame()
        if frame.kind == Kind.SHUTDOWN:
            raise CommError(f"peer {self.peer!r} finalized while {self.local!r} expected data")
        if frame.kind != kind:
            raise CommError(f"expected frame kind {int(kind)}, received {frame.kind}")
        return frame

    def _receive(self, control=False):
        for e in self.incoming:
            msg = FieldMessage.from_frame(self._expect(Kind.FIELD))
            if (msg.data, msg.mesh) != (e.data, e.mesh):
                raise CommError(
                    f"exchange mismatch: expected {e.data!r} on {e.mesh!r}, "
                    f"received {msg.data!r} on {msg.mesh!r}"
                )
            cur = self.store.values(e.data, e.mesh)
            if msg.values.size != cur.size:
                raise CommError(
                    f"exchange mismatch: {e.data!r} on {e.mesh!r} has {msg.values.size} "
                    f"values, expected {cur.size}"
                )
            self.store.set_values(e.data, e.mesh, msg.values.reshape(cur.shape))
        if control:
            return ControlMessage.from_frame(self._expect(Kind.CONTROL))
        return None

    # -- window end ----------------------------------------------------------

    def ongoing(self) -> bool:
        return self.state.window_start < self.config.max_time - TIME_TOL * self.config.window_size

    def window_end(self) -> bool:
        """Run the exchange at a window boundary; returns whether the window is accepted."""
        cfg = self.config
        st = self.state
        final = st.window + 1 >= cfg.windows
        self.store.map_write()
        converged = True
        forced = False

        if not cfg.implicit:
            if cfg.serial and self.role == "second":
                self._send()
                if not final:
                    self._receive()
                    self.store.map_read()
            else:
                self._send()
                self._receive()
                self.store.map_read()
        elif self.role == "first":
            self._send()
            ctrl = self._receive(control=True)
            converged = ctrl.converged
            forced = ctrl.tag == MAX_ITERATIONS_TAG
            self.store.map_read()
        else:
            if not cfg.serial:
                self._receive()
            result = self._convergence()
            converged = result.converged
            forced = result.max_iterations_reached
            self._snapshot_previous()
            if self.acceleration is not None:
                if converged:
                    self.acceleration.window_converged()
                else:
                    raw = self._gather(self.accelerated)
                    new = self.acceleration.perform(self._accel_input, raw)
                    self._scatter(self.accelerated, new)
                self._accel_input = self._gather(self.accelerated)
            ctrl = ControlMessage(st.window, st.iteration, converged, MAX_ITERATIONS_TAG if forced else "")
            self._send(ctrl)
            if not cfg.serial:
                self.store.map_read()
            elif not (final and converged):
                self._receive()
                self.store.map_read()

        self.total_iterations += 1
        self.history.append((st.window, st.iteration, converged))
        if forced:
            self.max_iteration_windows += 1
            log.warning(
                "%s: max-iterations reached in window %d, advancing anyway", self.local, st.window + 1
            )
        st.accumulated = 0.0
        if converged:
            st.window += 1
            st.iteration = 1
            st.phase = "first-iteration"
            st.read_checkpoint = False
            st.write_checkpoint = cfg.implicit and self.ongoing()
        else:
            st.iteration += 1
            st.phase = "iterating"
            st.write_checkpoint = False
            st.read_checkpoint = True
        return converged

    def _convergence(self) -> ConvergenceResult:
        cfg = self.config
        current = {k: self.store.values(*k) for k in self._previous}
        return check_convergence(
            cfg.measures, current, self._previous, self.state.iteration, cfg.max_iterations
        )
