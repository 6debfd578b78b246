from dataclasses import replace

import numpy as np
import pytest

from oracles import greedy_oracle, plan_oracle
from ponslice.errors import DegenerateWindow, EmptyCohort, InvalidSlice
from ponslice.pon_model import PonConfig
from ponslice.slice_planner import (ClientProfile, CohortInfo, build_upload_schedule,
                                    compute_delta, estimate_nabla, plan_slice,
                                    schedule_overrun, shift_slice, validate_round_threshold)

PON = PonConfig()
M = 26.416e6


def two_clients(T_round=8.0):
    return CohortInfo((ClientProfile(0, 0, 1.0), ClientProfile(1, 1, 5.0)), T_round=T_round)


def test_delta_single_client():
    t = compute_delta(CohortInfo((ClientProfile(0, 0, 3.0),)), PON)
    assert t.delta[0] == pytest.approx(3.0027416, abs=1e-12)


def test_delta_without_download_cost():
    t = compute_delta(CohortInfo((ClientProfile(0, 0, 1.0),), model_bits=0.0),
                      PonConfig(distance_km=0.0))
    assert t.delta[0] == 1.0


def test_descending_order():
    c = CohortInfo(tuple(ClientProfile(i, i, x) for i, x in enumerate((1.0, 5.0, 3.0))))
    t = compute_delta(c, PON)
    assert [c.clients[i].T_UD for i in t.order] == [5.0, 3.0, 1.0]


def test_nabla_with_and_without_distance():
    c = CohortInfo((ClientProfile(0, 0, 1.0),))
    assert estimate_nabla(compute_delta(c, PON), c, PON) == pytest.approx(2.7416e-3, rel=1e-12)
    pon0 = PonConfig(distance_km=0.0)
    assert estimate_nabla(compute_delta(c, pon0), c, pon0) == pytest.approx(2.6416e-3, rel=1e-12)


def test_tie_goes_to_lower_id():
    c = CohortInfo((ClientProfile(9, 0, 2.0), ClientProfile(4, 1, 2.0)))
    t = compute_delta(c, PON)
    assert t.straggler == 4
    assert estimate_nabla(t, c, PON) == pytest.approx(2.7416e-3)


def test_worked_example():
    s = plan_slice(two_clients(), PON)
    assert s.T_min == pytest.approx(1.0027416, abs=1e-12)
    assert s.nabla == pytest.approx(2.7416e-3, abs=1e-12)
    assert s.T_max == pytest.approx(5.0054832, abs=1e-12)
    assert s.tau == pytest.approx(4.0027416, abs=1e-12)
    assert s.B == pytest.approx(52.832e6 / 4.0027416, rel=1e-12)
    assert s.B == pytest.approx(13.199e6, rel=5e-5)
    assert not s.capped
    assert s.t_s == pytest.approx(9.0027416, abs=1e-12)
    assert s.t_e == pytest.approx(13.0054832, abs=1e-12)
    assert s.upload_order == (0, 1)


def test_single_client_forces_line_rate():
    pon0 = PonConfig(distance_km=0.0)
    s = plan_slice(CohortInfo((ClientProfile(0, 0, 2.0),)), pon0)
    assert s.tau == pytest.approx(M / 1e10, rel=1e-12)
    assert s.B == pytest.approx(1e10, rel=1e-12)
    assert s.B <= 1e10


def test_large_cohort_capped():
    n = 3072
    t_ud = np.linspace(1, 5, n)
    c = CohortInfo(tuple(ClientProfile(k, k % 128, float(t_ud[k])) for k in range(n)))
    s = plan_slice(c, PON)
    assert s.tau == pytest.approx(4.0027416, abs=1e-9)
    assert n * M / s.tau == pytest.approx(2.0273e10, rel=1e-4)
    assert s.capped and s.B == 1e10


def test_empty_cohort():
    with pytest.raises(EmptyCohort):
        CohortInfo(())


def test_degenerate_window():
    # zero-distance, zero-size straggler update would give tau = 0; emulate with C huge
    c = CohortInfo((ClientProfile(0, 0, 1.0, M_UD=1e-300),), C=1e10)
    with pytest.raises(DegenerateWindow):
        plan_slice(c, PonConfig(distance_km=0.0))


def test_threshold_feasible_at_8():
    c = two_clients(8.0)
    v = validate_round_threshold(c, plan_slice(c, PON), PON)
    assert v.feasible
    assert v.required == pytest.approx(7.0042, abs=1e-4)
    assert v.slack == pytest.approx(0.9958, abs=1e-4)
    assert v.straggler == 1


def test_threshold_infeasible_at_6():
    c = two_clients(6.0)
    v = validate_round_threshold(c, plan_slice(c, PON), PON)
    assert not v.feasible
    assert v.slack == pytest.approx(-1.0042, abs=1e-4)
    assert "T_UD" in v.note


def test_aggregation_time_zero_changes_nothing():
    c = two_clients()
    s = plan_slice(c, PON)
    assert validate_round_threshold(c, s, PON, 0.0) == validate_round_threshold(c, s, PON)


def test_two_client_schedule():
    s = plan_slice(two_clients(), PON)
    a, b = build_upload_schedule(s, round_start=0.0)
    assert (a.client_id, b.client_id) == (0, 1)
    assert a.start == pytest.approx(1.0027416, abs=1e-9)
    assert a.end == pytest.approx(3.0041, abs=1e-4)
    assert b.start == pytest.approx(5.0027416, abs=1e-9)
    assert b.end == pytest.approx(7.0041, abs=1e-4)
    over = schedule_overrun(s, [a, b], round_start=0.0)
    assert over == pytest.approx(1.9986, abs=1e-4)
    assert over <= M / s.B


def test_single_client_slot():
    c = CohortInfo((ClientProfile(0, 0, 2.0),))
    s = plan_slice(c, PON)
    (slot,) = build_upload_schedule(s, round_start=0.0)
    assert slot.start == pytest.approx(s.uploads[0].delta)
    assert slot.end == pytest.approx(slot.start + M / s.B)


def test_128_clients_against_greedy_oracle():
    t_ud = np.linspace(1, 5, 128)
    clients = [ClientProfile(k, k, float(t_ud[k])) for k in range(128)]
    s = plan_slice(CohortInfo(tuple(clients)), PON)
    slots = build_upload_schedule(s, round_start=0.0)
    ref = plan_oracle([(c.client_id, c.onu, c.T_UD, c.M_UD) for c in clients])
    expect = greedy_oracle([(ref["delta"][cid], M) for cid in ref["order"]], ref["B"], ref["T_min"])
    assert [x.client_id for x in slots] == ref["order"]
    for got, (es, ee) in zip(slots, expect):
        assert got.start == pytest.approx(es, abs=1e-9)
        assert got.end == pytest.approx(ee, abs=1e-9)
    assert slots[-1].end <= s.T_max + M / s.B


def test_shift_slice_keeps_offsets():
    s = plan_slice(two_clients(), PON)
    t = shift_slice(s, 100.0)
    assert t.t_s == pytest.approx(100 + s.T_min) and t.tau == pytest.approx(s.tau)


def test_schedule_needs_positive_rate():
    s = plan_slice(two_clients(), PON)
    with pytest.raises(InvalidSlice):
        build_upload_schedule(replace(s, B=0.0))
