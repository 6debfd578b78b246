import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ponslice.errors import InvalidSlice, UnknownOnu
from ponslice.pon_model import (GapCalendar, PeriodicCalendar, PonConfig, WindowCalendar,
                                downlink_time, fill_windows, map_slice_to_cycles, prop_delay,
                                reserved_capacity_bits, slice_windows)
from ponslice.slice_planner import SliceSpec, UploadEntry

PON = PonConfig()


def _slice(B, t_s, t_e, uploads=()):
    return SliceSpec(t_s=t_s, t_e=t_e, B=B, capped=False, T_min=t_s, T_max=t_e, nabla=0.0,
                     anchor=0.0, uploads=tuple(uploads))


def test_prop_delay_20km():
    assert prop_delay(PON, 0) == pytest.approx(1.0e-4, rel=1e-12)


def test_prop_delay_zero_distance():
    assert prop_delay(PonConfig(distance_km=0.0), 3) == 0.0


def test_prop_delay_unknown_onu():
    with pytest.raises(UnknownOnu):
        prop_delay(PON, PON.num_onus)


def test_downlink_time_default_model():
    assert downlink_time(PON, 26.416e6, 0) == pytest.approx(2.7416e-3, rel=1e-12)


def test_downlink_time_zero_bits():
    assert downlink_time(PON, 0, 0) == pytest.approx(1.0e-4, rel=1e-12)


def test_downlink_time_zero_km():
    assert downlink_time(PonConfig(distance_km=0.0), 26.416e6, 0) == pytest.approx(2.6416e-3, rel=1e-12)


def test_reserved_fraction_slows_broadcast():
    cfg = PonConfig(downlink_reserved_fraction=0.5, distance_km=0.0)
    assert downlink_time(cfg, 1e9, 0) == pytest.approx(0.2)


def test_per_onu_distance():
    cfg = PonConfig(num_onus=3, distance_km=(0.0, 10.0, 20.0))
    assert [prop_delay(cfg, i) for i in range(3)] == pytest.approx([0, 5e-5, 1e-4])


@pytest.mark.parametrize("B, expect", [(1e9, 1.0e-4), (1e10, 1.0e-3), (13.199e6, 1.3199e-6)])
def test_window_per_full_cycle(B, expect):
    g = map_slice_to_cycles(PON, _slice(B, 0.0, 0.01))
    assert g.window == pytest.approx(expect, rel=1e-12)
    assert np.allclose(g.window_lengths(), expect, rtol=1e-9)


def test_partial_cycles_prorated():
    ks, s, e = slice_windows(PON, 5e9, 0.0005, 0.0025)
    assert list(ks) == [0, 1, 2]
    assert np.allclose(e - s, [0.25e-3, 0.5e-3, 0.25e-3])
    assert s[0] == pytest.approx(0.0005)


def test_invalid_slice_rejected():
    with pytest.raises(InvalidSlice):
        map_slice_to_cycles(PON, _slice(2e10, 0.0, 1.0))
    with pytest.raises(InvalidSlice):
        map_slice_to_cycles(PON, _slice(1e9, 1.0, 1.0))


def test_subslots_follow_upload_order_and_readiness():
    ups = [UploadEntry(7, 0, 1e6, 0.0), UploadEntry(3, 1, 1e6, 0.0015)]
    g = map_slice_to_cycles(PON, _slice(5e9, 0.0, 0.01, ups))
    first = [x for x in g.subslots if x[1] == 7]
    second = [x for x in g.subslots if x[1] == 3]
    assert sum(x[4] - x[3] for x in first) == pytest.approx(1e-4)
    assert sum(x[4] - x[3] for x in second) == pytest.approx(1e-4)
    assert min(x[3] for x in second) >= 0.0015 - 1e-15


def test_calendars_round_trip():
    cal = PeriodicCalendar(1e-3, 2e-4, 1e-4)
    v = np.array([0.0, 1e-4, 3.5e-4, 7e-4])
    assert np.allclose(cal.to_virtual(cal.to_wall_end(v)), v)
    win = WindowCalendar(np.array([0.0, 1.0]), np.array([0.5, 1.25]))
    assert win.capacity == pytest.approx(0.75)
    assert float(win.to_wall_end(0.6)) == pytest.approx(1.1)
    gap = GapCalendar(np.array([1.0]), np.array([2.0]))
    assert float(gap.to_virtual(3.0)) == pytest.approx(2.0)
    assert float(gap.to_wall_start(1.0)) == pytest.approx(2.0)


def test_fill_windows_priority_by_order():
    starts, ends = np.array([0.0, 1.0]), np.array([0.5, 1.5])
    s, e = fill_windows(starts, ends, np.array([0.0, 0.0]), np.array([0.4, 0.3]),
                        order=np.array([1, 0]))
    assert e[1] == pytest.approx(0.3)
    assert s[0] == pytest.approx(0.3) and e[0] == pytest.approx(1.2)


@settings(max_examples=1500, deadline=None)
@given(B=st.floats(1e6, 1e10), t0=st.floats(0, 10), span=st.floats(1e-4, 0.2),
       P=st.sampled_from([1e-4, 1e-3, 2e-3]))
def test_cycle_capacity_conservation(B, t0, span, P):
    cfg = PonConfig(polling_cycle=P)
    ks, s, e = slice_windows(cfg, B, t0, t0 + span)
    # windows never overlap and never leave their cycle
    assert np.all(e >= s)
    assert np.all(s[1:] >= e[:-1] - 1e-15)
    assert np.all(s >= ks * P - 1e-12) and np.all(e <= (ks + 1) * P + 1e-12)
    # per cycle: the window never takes more than its B/C share of the covered part
    overlap = np.minimum((ks + 1) * P, t0 + span) - np.maximum(ks * P, t0)
    assert np.all(e - s <= B / cfg.C * overlap + 1e-15)
    assert np.all(P - (e - s) >= -1e-12)
    # aggregate reserved capacity = B * span up to one cycle of rounding
    assert abs(reserved_capacity_bits(cfg, B, t0, t0 + span) - B * span) <= B * P + 1e-3
