import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cplkit.comm import SHUTDOWN, Channel, FieldMessage
from cplkit.cplscheme import (
    READ_CHECKPOINT,
    SCHEME_KINDS,
    WRITE_CHECKPOINT,
    AccelerationConfig,
    Action,
    ConvergenceMeasure,
    CouplingScheme,
    Exchange,
    SchemeConfig,
    SchemeState,
    check_convergence,
    clamp_dt,
    required_actions,
    step_schedule,
    window_boundary_reached,
)
from cplkit.errors import CommError, CouplingError

from conftest import DictStore, run_threads, tcp_pair

A = Action


class TestTime:
    def test_clamp(self):
        s = SchemeState(1e-3, 1e-2)
        assert clamp_dt(s, 4e-4) == 4e-4
        s.accumulated += 4e-4
        assert s.remaining() == pytest.approx(6e-4)
        assert clamp_dt(SchemeState(1e-3, 1e-2), 5e-3) == 1e-3
        s.accumulated += 4e-4
        assert clamp_dt(s, 4e-4) == pytest.approx(2e-4)

    def test_clamp_rejects_nonpositive(self):
        with pytest.raises(CouplingError):
            clamp_dt(SchemeState(1.0, 2.0), 0.0)

    def test_boundary(self):
        s = SchemeState(1e-3, 1e-2)
        s.accumulated = 6e-4
        assert not window_boundary_reached(s)
        s.accumulated = 1e-3
        assert window_boundary_reached(s)
        s.accumulated = 1e-3 * (1 - 1e-13)
        assert window_boundary_reached(s)

    @settings(max_examples=100)
    @given(st.floats(1e-6, 1e3), st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=30))
    def test_subcycling_stays_in_window(self, window, fractions):
        s = SchemeState(window, 10 * window)
        for f in fractions:
            if window_boundary_reached(s):
                break
            dt = clamp_dt(s, f * window)
            s.accumulated = min(s.accumulated + dt, window)
            assert 0.0 <= s.accumulated <= window * (1 + 1e-12)


class TestConvergence:
    M = [ConvergenceMeasure("T", "m", 1e-5)]

    def test_identical(self):
        r = check_convergence(self.M, {("T", "m"): [1.0, 2.0]}, {("T", "m"): [1.0, 2.0]})
        assert r.converged and not r.max_iterations_reached

    def test_not_converged(self):
        r = check_convergence(self.M, {("T", "m"): [1.0]}, {("T", "m"): [1.001]})
        assert not r.converged
        assert r.measures == {("T", "m"): False}

    def test_forced(self):
        r = check_convergence(self.M, {("T", "m"): [1.0]}, {("T", "m"): [2.0]}, 5, 5)
        assert r.converged and r.max_iterations_reached

    def test_zero_fields_converge(self):
        r = check_convergence(self.M, {("T", "m"): [0.0]}, {("T", "m"): [0.0]})
        assert r.converged

    def test_all_measures_required(self):
        ms = self.M + [ConvergenceMeasure("F", "m", 1e-5)]
        cur = {("T", "m"): [1.0], ("F", "m"): [1.0]}
        prev = {("T", "m"): [1.0], ("F", "m"): [0.0]}
        assert not check_convergence(ms, cur, prev).converged


class TestActions:
    def test_explicit_never(self):
        s = SchemeState(1.0, 2.0, write_checkpoint=True, read_checkpoint=True, implicit=False)
        assert required_actions(s) == set()

    def test_implicit(self):
        s = SchemeState(1.0, 2.0, write_checkpoint=True, implicit=True)
        assert required_actions(s) == {WRITE_CHECKPOINT}
        s.write_checkpoint, s.read_checkpoint = False, True
        assert required_actions(s) == {READ_CHECKPOINT}


class TestSchedule:
    def test_serial_second_initialize(self):
        assert step_schedule("serial-implicit", "second", "initialize")[0] == A.RECEIVE
        assert step_schedule("serial-explicit", "first", "initialize") == []

    def test_serial_first_advance(self):
        seq = step_schedule("serial-implicit", "first", "advance")
        assert seq[:2] == [A.MAP_WRITE, A.SEND]
        assert seq == [A.MAP_WRITE, A.SEND, A.RECEIVE, A.MAP_READ, A.ADVANCE_TIME]

    def test_parallel_explicit(self):
        for role in ("first", "second"):
            seq = step_schedule("parallel-explicit", role, "advance")
            assert seq == [A.MAP_WRITE, A.SEND, A.RECEIVE, A.MAP_READ, A.ADVANCE_TIME]
            assert A.ACCELERATE not in seq

    def test_implicit_second_accelerates_only_when_iterating(self):
        assert A.ACCELERATE in step_schedule("serial-implicit", "second", "advance", converged=False)
        seq = step_schedule("serial-implicit", "second", "advance", converged=False)
        assert seq[-1] == A.REPEAT_WINDOW
        assert A.ACCELERATE not in step_schedule("parallel-implicit", "first", "advance", converged=False)

    def test_illegal(self):
        with pytest.raises(CouplingError, match="illegal event"):
            step_schedule("serial-implicit", "first", "finalize")
        with pytest.raises(CouplingError):
            step_schedule("multi", "first", "advance")
        with pytest.raises(CouplingError):
            step_schedule("serial-implicit", "third", "advance")

    def test_enumerable_and_deterministic(self):
        for kind, role, ev, conv, fin in itertools.product(
            SCHEME_KINDS, ("first", "second"), ("initialize", "advance"), (True, False), (True, False)
        ):
            a = step_schedule(kind, role, ev, converged=conv, final=fin)
            b = step_schedule(kind, role, ev, converged=conv, final=fin)
            assert a == b
            assert all(isinstance(x, Action) for x in a)
            # every send is paired with the peer's receive in the same event
            if ev == "advance" and not (kind == "serial-explicit" and role == "second" and fin):
                assert A.SEND in a


# ---------------------------------------------------------------------------
#  Runtime with two schemes over a real socket
# ---------------------------------------------------------------------------


def make_config(kind, windows=4, accel="none", max_iterations=50, limit=1e-10):
    implicit = kind.endswith("implicit")
    measures = (ConvergenceMeasure("B", "M", limit),)
    if kind.startswith("parallel"):
        # Jacobi-type iteration: a measure on one direction alone can pass spuriously
        measures += (ConvergenceMeasure("A", "M", limit),)
    return SchemeConfig(
        kind, "One", "Two", 0.1, 0.1 * windows, max_iterations,
        exchanges=(Exchange("A", "M", "One", "Two"), Exchange("B", "M", "Two", "One")),
        measures=measures if implicit else (),
        acceleration=AccelerationConfig(accel) if implicit else AccelerationConfig(),
    )


def drive(scheme, solve):
    """Minimal participant loop: one solver step per window; returns an event log."""
    log = []
    scheme.initialize()
    st = scheme.state
    acts = required_actions(st)
    saved = None
    while scheme.ongoing():
        if WRITE_CHECKPOINT in acts:
            saved = st.window
            log.append(("write", st.window, st.time))
        solve(scheme.store, st.window)
        st.accumulated = st.window_size
        log.append(("exchange", st.window, st.time))
        converged = scheme.window_end()
        acts = required_actions(st)
        if READ_CHECKPOINT in acts:
            assert saved == st.window
            log.append(("read", st.window, st.time))
        log.append(("after", st.window, st.time, converged))
    return log


def solve_one(store, window):
    store.set_values("A", "M", 0.5 * store.values("B", "M") + 1.0)


def solve_two(store, window):
    store.set_values("B", "M", 0.4 * store.values("A", "M") + window)


def run_pair(cfg, n=3):
    sa, sb = tcp_pair()
    ca, cb = Channel(sa, "One", "Two"), Channel(sb, "Two", "One")
    fields = {("A", "M"): np.zeros(n), ("B", "M"): np.zeros(n)}
    s1 = CouplingScheme(cfg, "One", ca, DictStore(fields))
    s2 = CouplingScheme(cfg, "Two", cb, DictStore(fields))
    try:
        (l1, l2), _ = run_threads(lambda: drive(s1, solve_one), lambda: drive(s2, solve_two))
    finally:
        ca.close()
        cb.close()
    return s1, s2, l1, l2


@pytest.mark.parametrize("kind", SCHEME_KINDS)
def test_window_count(kind):
    s1, s2, l1, l2 = run_pair(make_config(kind, windows=4))
    for s in (s1, s2):
        assert s.state.window == 4
        assert sum(1 for w, i, c in s.history if c) == 4
        assert not s.ongoing()


@pytest.mark.parametrize("kind", ["serial-implicit", "parallel-implicit"])
def test_implicit_converges_to_fixed_point(kind):
    s1, s2, _, _ = run_pair(make_config(kind, windows=3))
    a = s1.store.values("A", "M")
    b = s2.store.values("B", "M")
    # last window (index 2): A = 0.5 B + 1, B = 0.4 A + 2
    a_star = (1 + 0.5 * 2) / (1 - 0.2)
    np.testing.assert_allclose(a, a_star, rtol=1e-8)
    np.testing.assert_allclose(b, 0.4 * a_star + 2, rtol=1e-8)
    assert s1.total_iterations == s2.total_iterations
    assert s1.history == s2.history


@pytest.mark.parametrize("kind", SCHEME_KINDS)
def test_time_monotonicity_and_action_pairing(kind):
    _, _, l1, l2 = run_pair(make_config(kind, windows=3))
    for log in (l1, l2):
        starts = {}
        last_t = 0.0
        for ev in log:
            if ev[0] == "write":
                starts[ev[1]] = ev[2]
            if ev[0] == "read":
                assert kind.endswith("implicit")
                assert ev[1] in starts
            if ev[0] == "after":
                _, w, t, conv = ev
                if conv:
                    assert t >= last_t
                else:
                    assert t == pytest.approx(starts[w])
                last_t = t
        if not kind.endswith("implicit"):
            assert not any(ev[0] in ("write", "read") for ev in log)


def test_determinism():
    cfg = make_config("serial-implicit", windows=3, accel="iqn-ils")
    runs = [run_pair(cfg) for _ in range(2)]
    (a1, b1, _, _), (a2, b2, _, _) = runs
    assert a1.history == a2.history
    np.testing.assert_array_equal(a1.store.values("A", "M"), a2.store.values("A", "M"))
    np.testing.assert_array_equal(b1.store.values("B", "M"), b2.store.values("B", "M"))


def test_acceleration_reduces_iterations():
    plain = run_pair(make_config("serial-implicit", windows=3))[0].total_iterations
    qn = run_pair(make_config("serial-implicit", windows=3, accel="iqn-ils"))[0].total_iterations
    assert qn < plain


def test_max_iterations_forced_on_both_sides():
    cfg = make_config("serial-implicit", windows=2, max_iterations=2, limit=1e-300)
    s1, s2, _, _ = run_pair(cfg)
    assert s1.max_iteration_windows == s2.max_iteration_windows == 2
    assert s1.state.window == 2


def test_serial_second_receives_in_initialize():
    sa, sb = tcp_pair()
    ca, cb = Channel(sa, "One", "Two"), Channel(sb, "Two", "One")
    cfg = make_config("serial-explicit")
    store = DictStore({("A", "M"): np.zeros(2), ("B", "M"): np.zeros(2)})
    ca.send_frame(FieldMessage("A", "M", 1, np.array([3.0, 4.0])).to_frame())
    CouplingScheme(cfg, "Two", cb, store).initialize()
    np.testing.assert_array_equal(store.values("A", "M"), [3.0, 4.0])
    assert store.mapped == ["read"]
    ca.close()
    cb.close()


def test_peer_shutdown_during_receive():
    sa, sb = tcp_pair()
    ca, cb = Channel(sa, "One", "Two"), Channel(sb, "Two", "One")
    store = DictStore({("A", "M"): np.zeros(2), ("B", "M"): np.zeros(2)})
    ca.send_frame(SHUTDOWN)
    with pytest.raises(CommError, match="finalized"):
        CouplingScheme(make_config("serial-explicit"), "Two", cb, store).initialize()
    ca.close()
    cb.close()


def test_exchange_mismatch():
    sa, sb = tcp_pair()
    ca, cb = Channel(sa, "One", "Two"), Channel(sb, "Two", "One")
    store = DictStore({("A", "M"): np.zeros(2), ("B", "M"): np.zeros(2)})
    ca.send_frame(FieldMessage("A", "M", 1, np.zeros(3)).to_frame())
    with pytest.raises(CommError, match="exchange mismatch"):
        CouplingScheme(make_config("serial-explicit"), "Two", cb, store).initialize()
    ca.close()
    cb.close()


def test_role_lookup():
    cfg = make_config("serial-explicit")
    assert cfg.role("One") == "first" and cfg.role("Two") == "second"
    with pytest.raises(CouplingError):
        cfg.role("Three")
    assert cfg.windows == 4
    assert cfg.digest() == make_config("serial-explicit").digest()
    assert cfg.digest() != make_config("parallel-explicit").digest()
