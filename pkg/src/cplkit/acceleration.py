"""Post-processing of fixed-point iterates for implicit coupling.

All schemes work on a flat coupling vector ``x`` and the solver response
``Hx = H(x)``; the residual is ``R(x) = Hx - x``.  The quasi-Newton variants
keep residual differences ``V`` and output differences ``W`` (newest column
first) and compute

    x_next = Hx + (W - J_prev V) alpha - J_prev R,   alpha = argmin |V alpha + R|

in a block-weighted metric.  IQN-ILS uses ``J_prev = 0``; IQN-IMVJ carries
the inverse Jacobian approximation of the previous window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import AccelerationError

log = logging.getLogger(__name__)

DEFAULT_RELAXATION = 0.5
DEFAULT_MAX_COLUMNS = 40
DEFAULT_FILTER = 1e-2


@dataclass
class AccelerationState:
    """Iteration history of one accelerated coupling vector."""

    size: int
    blocks: list = None
    initial_relaxation: float = DEFAULT_RELAXATION
    max_columns: int = DEFAULT_MAX_COLUMNS
    filter_limit: float = DEFAULT_FILTER
    x_prev: np.ndarray | None = None
    r_prev: np.ndarray | None = None
    xt_prev: np.ndarray | None = None
    V: np.ndarray = None
    W: np.ndarray = None
    omega: float | None = None
    J_prev: np.ndarray | None = None
    weights: np.ndarray = None
    k: int = 0
    window: int = 0
    last_dropped: list = field(default_factory=list)

    def __post_init__(self):
        if self.blocks is None:
            self.blocks = [self.size]
        if sum(self.blocks) != self.size:
            raise AccelerationError(f"block sizes {self.blocks} do not add up to {self.size}")
        if not 0 < self.initial_relaxation <= 1:
            raise AccelerationError("initial relaxation must lie in (0, 1]")
        if self.max_columns < 1:
            raise AccelerationError("max columns must be >= 1")
        if self.V is None:
            self.V = np.zeros((self.size, 0))
            self.W = np.zeros((self.size, 0))
        if self.weights is None:
            self.weights = np.ones(len(self.blocks))

    @property
    def columns(self) -> int:
        return self.V.shape[1]

    def row_scaling(self) -> np.ndarray:
        """Per-entry weights expanded from the per-block weights."""
        return np.repeat(self.weights, self.blocks)

    def begin_window(self):
        """Forget the within-window history (columns are kept for reuse)."""
        self.x_prev = self.r_prev = self.xt_prev = None
        self.k = 0


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise AccelerationError("non-finite values in coupling data")


def constant_relax(state: AccelerationState | None, x, Hx, omega=None):
    """Return ``x + omega * (Hx - x)``."""
    if omega is None:
        omega = state.initial_relaxation if state is not None else DEFAULT_RELAXATION
    if not 0 < omega <= 1:
        raise AccelerationError("relaxation factor must lie in (0, 1]")
    x = np.asarray(x, dtype=float)
    Hx = np.asarray(Hx, dtype=float)
    _check_finite(x, Hx)
    if state is not None:
        state.k += 1
    return x + omega * (Hx - x)


def aitken(state: AccelerationState, x, Hx):
    """Dynamic (Aitken) under-relaxation.

    The first call of a window relaxes with the initial factor (in later
    windows with the previous factor's sign and at most the initial
    magnitude); later calls update ``omega <- -omega <r_prev, dr> / |dr|^2``.
    """
    x = np.asarray(x, dtype=float)
    Hx = np.asarray(Hx, dtype=float)
    _check_finite(x, Hx)
    r = Hx - x
    state.k += 1
    if not np.any(r):
        state.r_prev = r
        return x.copy()
    if state.r_prev is None:
        w0 = state.initial_relaxation
        if state.omega is None:
            state.omega = w0
        else:
            state.omega = float(np.sign(state.omega)) * min(w0, abs(state.omega))
    else:
        dr = r - state.r_prev
        denom = dr @ dr
        if denom == 0.0:
            raise AccelerationError("stagnated residual")
        state.omega = -state.omega * (state.r_prev @ dr) / denom
    state.r_prev = r
    return x + state.omega * r


def filter_columns(state: AccelerationState, limit=None) -> list:
    """QR1 filter: drop columns of V (and W) that are nearly dependent.

    Columns are visited in storage order (newest first) with modified
    Gram-Schmidt on the weighted V; a column whose orthogonal remainder is
    below ``limit`` times its own norm is removed.  Returns the dropped indices.
    """
    if limit is None:
        limit = state.filter_limit
    V = state.V * state.row_scaling()[:, None]
    basis = []
    dropped = []
    for j in range(V.shape[1]):
        v = V[:, j].copy()
        norm = np.linalg.norm(v)
        for q in basis:
            v -= (q @ v) * q
        rest = np.linalg.norm(v)
        if norm == 0.0 or rest < limit * norm:
            dropped.append(j)
        else:
            basis.append(v / rest)
    if dropped:
        keep = [j for j in range(V.shape[1]) if j not in dropped]
        state.V = state.V[:, keep]
        state.W = state.W[:, keep]
    state.last_dropped = dropped
    return dropped


def update_preconditioner(state: AccelerationState, residual, blocks=None) -> np.ndarray:
    """Residual-norm weighting: each block gets ``1 / |r_block|`` (1 for a zero block)."""
    if blocks is not None:
        state.blocks = list(blocks)
    r = np.asarray(residual, dtype=float)
    weights = []
    start = 0
    for size in state.blocks:
        norm = np.linalg.norm(r[start:start + size])
        weights.append(1.0 / norm if norm > 0 else 1.0)
        start += size
    state.weights = np.array(weights)
    return state.weights


def _least_squares(state, r):
    """alpha = argmin |P V alpha + P r| via QR of the weighted V."""
    s = state.row_scaling()
    Q, R = np.linalg.qr(state.V * s[:, None])
    return -sla.solve_triangular(R, Q.T @ (s * r))


def _weighted_pinv(state):
    s = state.row_scaling()
    return np.linalg.pinv(state.V * s[:, None]) * s[None, :]


def iqn_update(state: AccelerationState, x, Hx, variant="ils"):
    """One quasi-Newton step (``variant`` is ``ils`` or ``imvj``)."""
    if variant not in ("ils", "imvj"):
        raise AccelerationError(f"unknown quasi-Newton variant {variant!r}")
    x = np.asarray(x, dtype=float)
    Hx = np.asarray(Hx, dtype=float)
    _check_finite(x, Hx)
    r = Hx - x
    if variant == "imvj" and state.J_prev is None:
        state.J_prev = np.zeros((state.size, state.size))

    state.k += 1
    if state.r_prev is None:
        # first iteration of the window
        update_preconditioner(state, r)
        state.x_prev, state.r_prev, state.xt_prev = x, r, Hx
        return x + state.initial_relaxation * r

    if not np.any(r):
        state.x_prev, state.r_prev, state.xt_prev = x, r, Hx
        return x.copy()

    dr = r - state.r_prev
    dxt = Hx - state.xt_prev
    state.V = np.column_stack([dr, state.V])
    state.W = np.column_stack([dxt, state.W])
    cap = min(state.max_columns, state.size)
    state.V = state.V[:, :cap]
    state.W = state.W[:, :cap]
    filter_columns(state)
    state.x_prev, state.r_prev, state.xt_prev = x, r, Hx

    if state.columns == 0:
        log.debug("all columns filtered, falling back to constant relaxation")
        return x + state.initial_relaxation * r

    alpha = _least_squares(state, r)
    if variant == "ils":
        out = Hx + state.W @ alpha
    else:
        J = state.J_prev
        out = Hx + (state.W - J @ state.V) @ alpha - J @ r
    _check_finite(out)
    return out


def multi_secant_jacobian(state: AccelerationState) -> np.ndarray:
    """Inverse Jacobian approximation ``(W - J_prev V) V^+ + J_prev`` from the current columns."""
    J = state.J_prev if state.J_prev is not None else np.zeros((state.size, state.size))
    if state.columns == 0:
        return J.copy()
    return (state.W - J @ state.V) @ _weighted_pinv(state) + J


class Acceleration:
    """Stateful accelerator used by the coupling schemes.

    ``kind`` is one of ``none``, ``constant``, ``aitken``, ``iqn-ils``,
    ``iqn-imvj``.  Call :meth:`perform` once per coupling iteration and
    :meth:`window_converged` when a time window is accepted.
    """

    KINDS = ("none", "constant", "aitken", "iqn-ils", "iqn-imvj")

    def __init__(self, kind="none", size=0, blocks=None, initial_relaxation=DEFAULT_RELAXATION,
                 max_columns=DEFAULT_MAX_COLUMNS, filter_limit=DEFAULT_FILTER):
        kind = kind.lower()
        if kind not in self.KINDS:
            raise AccelerationError(f"unknown acceleration {kind!r}")
        self.kind = kind
        self.state = AccelerationState(
            size, blocks, initial_relaxation, max_columns, filter_limit
        )
        self.iterations = 0

    def perform(self, x, Hx):
        self.iterations += 1
        if self.kind == "none":
            return np.array(Hx, dtype=float)
        if self.kind == "constant":
            return constant_relax(self.state, x, Hx)
        if self.kind == "aitken":
            return aitken(self.state, x, Hx)
        return iqn_update(self.state, x, Hx, "ils" if self.kind == "iqn-ils" else "imvj")

    def window_converged(self):
        st = self.state
        if self.kind == "iqn-imvj":
            st.J_prev = multi_secant_jacobian(st)
            st.V = np.zeros((st.size, 0))
            st.W = np.zeros((st.size, 0))
        st.window += 1
        st.begin_window()
