import io

import pytest
from hypothesis import given, settings, strategies as st

from ponslice.errors import SchedulingInPast
from ponslice.sim_core import EventKind, EventQueue


def test_pops_in_time_order():
    q = EventQueue()
    q.schedule(1.0, EventKind.ARRIVAL)
    q.schedule(0.5, EventKind.ARRIVAL)
    assert [q.pop_next().time, q.pop_next().time] == [0.5, 1.0]


def test_equal_times_keep_insertion_order():
    q = EventQueue()
    q.schedule(2.0, EventKind.ARRIVAL, "A")
    q.schedule(2.0, EventKind.ARRIVAL, "B")
    assert [q.pop_next().data, q.pop_next().data] == ["A", "B"]


def test_past_scheduling_rejected():
    q = EventQueue(start=5.0)
    with pytest.raises(SchedulingInPast):
        q.schedule(4.9, EventKind.ARRIVAL)


def test_pop_earlier_time_first_regardless_of_seq():
    q = EventQueue()
    q.schedule(3.0, EventKind.ARRIVAL)
    q.schedule(2.0, EventKind.ARRIVAL)
    ev = q.pop_next()
    assert ev.time == 2.0 and ev.seq == 1
    assert q.clock == 2.0


def test_empty_pop_leaves_clock():
    q = EventQueue(start=1.5)
    assert q.pop_next() is None
    assert q.clock == 1.5


def test_run_until_stops_and_sets_clock():
    q = EventQueue()
    for t in (1, 2, 9):
        q.schedule(t, EventKind.ARRIVAL)
    seen = []
    assert q.run_until(5, lambda ev: seen.append(ev.time)) == 5
    assert seen == [1, 2] and q.clock == 5


def test_run_until_without_events():
    q = EventQueue()
    assert q.run_until(3.0, lambda ev: None) == 3.0


def test_reentrant_scheduling():
    q = EventQueue()
    q.schedule(1.0, EventKind.ARRIVAL, "first")
    q.schedule(2.0, EventKind.ARRIVAL, "last")
    seen = []

    def handler(ev):
        seen.append(ev.data)
        if ev.data == "first":
            q.schedule(1.5, EventKind.ARRIVAL, "nested")

    q.run_until(10, handler)
    assert seen == ["first", "nested", "last"]


def test_trace_lines():
    buf = io.StringIO()
    q = EventQueue(trace=buf)
    q.schedule(0.25, EventKind.ROUND_END)
    q.pop_next()
    assert buf.getvalue() == "0.250000000,0,round-end\n"


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(0, 100, allow_nan=False)), max_size=60))
def test_pop_sequence_nondecreasing(ops):
    def play():
        q = EventQueue()
        popped = []
        for is_pop, dt in ops:
            if is_pop:
                ev = q.pop_next()
                if ev is not None:
                    popped.append((ev.time, ev.seq))
            else:
                q.schedule(q.clock + dt, EventKind.ARRIVAL)
        while (ev := q.pop_next()) is not None:
            popped.append((ev.time, ev.seq))
        return popped

    popped = play()
    assert all(a[0] <= b[0] for a, b in zip(popped, popped[1:]))
    for a, b in zip(popped, popped[1:]):
        if a[0] == b[0]:
            assert a[1] < b[1]
    assert play() == popped
