import io
import math
from dataclasses import replace

import numpy as np
import pytest

from oracles import lerp, plan_oracle
from ponslice.errors import EmptyCohort, NoClients, UnknownInvolvement
from ponslice.fl_engine import (POOLED, AccuracyTrace, FlSimulation, FlTaskConfig,
                                MembershipEvent, Policy, accuracy_lookup, build_population,
                                handle_membership_change, load_accuracy_trace, run_round,
                                run_training, select_cohort)
from ponslice.pon_model import PonConfig, downlink_time
from ponslice.slice_planner import ClientProfile, CohortInfo, plan_slice
from ponslice.traffic_gen import BackgroundConfig

PON = PonConfig()
M = 26.416e6
QUIET = BackgroundConfig(0.0)
COARSE = 1e6


def population(n=128):
    return build_population(FlTaskConfig(), PonConfig(num_onus=n))


def test_full_involvement_cohort():
    c = select_cohort(population(), 100)
    assert len(c) == 128
    assert max(x.T_UD for x in c) == 5.0


def test_ten_percent_cohort():
    c = select_cohort(population(), 10)
    assert len(c) == 12
    # linear spacing over 128 clients puts the 12th fastest at 1 + 4*11/127
    assert max(x.T_UD for x in c) == pytest.approx(1 + 4 * 11 / 127)
    assert max(x.T_UD for x in c) <= 1.4


def test_single_client_population():
    c = select_cohort([ClientProfile(0, 0, 2.0)], 100)
    assert [x.client_id for x in c] == [0]


def test_no_clients():
    with pytest.raises(NoClients):
        select_cohort([], 50)


def test_fcfs_single_client_no_load():
    task = FlTaskConfig(fcfs_mode=POOLED)
    r = run_round([ClientProfile(0, 0, 1.0)], None, PON, QUIET, Policy.FCFS, task)
    assert r.sync_time == pytest.approx(2.7416e-3 + 1 + 2.6416e-3 + 1e-4, abs=1e-9)
    assert r.sync_time == pytest.approx(1.0054832, abs=1e-9)


def test_fcfs_onu_share_single_client_no_load():
    # each ONU owns polling_cycle / N of every cycle in both directions
    r = run_round([ClientProfile(0, 0, 1.0)], None, PON, QUIET, Policy.FCFS, FlTaskConfig())
    share = M * PON.num_onus / PON.C
    assert abs(r.sync_time - (share + 1e-4 + 1.0 + share + 1e-4)) <= PON.polling_cycle


def test_bs_two_client_round():
    c = CohortInfo((ClientProfile(0, 0, 1.0), ClientProfile(1, 1, 5.0)), T_round=8.0)
    s = plan_slice(c, PON)
    r = run_round(c.clients, s, PON, QUIET, Policy.BS, FlTaskConfig(T_round=8.0))
    assert abs(r.sync_time - 7.0042) <= PON.polling_cycle
    assert r.straggler == 1 and r.sliced
    assert r.overrun > 1.99


def test_bs_full_cohort_round():
    clients = select_cohort(population(), 100)
    s = plan_slice(CohortInfo(tuple(clients)), PON)
    r = run_round(clients, s, PON, QUIET, Policy.BS)
    assert 5.005 <= r.sync_time <= 5.10


def _task(**kw):
    base = dict(H=3, involvement_percent=25, policy=Policy.BS)
    base.update(kw)
    return FlTaskConfig(**base)


def test_total_equals_sum_of_rounds():
    rep = run_training(_task(), PON, BackgroundConfig(0.3, seed=1, coarse_unit_bits=COARSE))
    assert rep.total_time == math.fsum(r.sync_time for r in rep.records)
    for a, b in zip(rep.records, rep.records[1:]):
        assert b.start == pytest.approx(a.start + a.sync_time, abs=1e-9)


def test_rerun_is_bitwise_identical():
    bg = BackgroundConfig(0.5, seed=8, coarse_unit_bits=COARSE)
    t1, t2 = io.StringIO(), io.StringIO()
    a = run_training(_task(policy=Policy.FCFS), PON, bg, trace=t1)
    b = run_training(_task(policy=Policy.FCFS), PON, bg, trace=t2)
    assert [r.sync_time for r in a.records] == [r.sync_time for r in b.records]
    assert t1.getvalue() == t2.getvalue() and t1.getvalue()
    assert a.fingerprint == b.fingerprint


def test_bs_invariant_across_loads():
    syncs = []
    for load in (0.0, 0.3, 0.8):
        rep = run_training(_task(), PON, BackgroundConfig(load, seed=3, coarse_unit_bits=COARSE))
        syncs.append(np.mean(rep.sync_times[1:]))
    assert max(syncs) - min(syncs) <= 2 * PON.polling_cycle


def test_fcfs_mean_nondecreasing_in_load():
    means = []
    for load in (0.0, 0.3, 0.8):
        vals = [run_training(_task(H=2, policy=Policy.FCFS), PON,
                             BackgroundConfig(load, seed=s, coarse_unit_bits=COARSE)).sync_times[1]
                for s in range(10)]
        means.append(np.mean(vals))
    assert means[0] <= means[1] <= means[2]


@pytest.mark.parametrize("policy", [Policy.FCFS, Policy.BS])
def test_physical_lower_bound(policy):
    task = _task(policy=policy)
    rep = run_training(task, PON, BackgroundConfig(0.5, seed=2, coarse_unit_bits=COARSE))
    cohort = select_cohort(build_population(task, PON), task.involvement_percent)
    bound = max(downlink_time(PON, M, c.onu) + c.T_UD for c in cohort) + min(
        c.M_UD for c in cohort) / PON.C
    assert all(r.sync_time >= bound for r in rep.records)


def test_one_client_no_load_policies_agree():
    pon = PonConfig(num_onus=1)
    out = {}
    for p in Policy:
        task = FlTaskConfig(H=3, policy=p, fcfs_mode=POOLED)
        out[p] = run_training(task, pon, QUIET).sync_times[task.h:]
    for f, b in zip(out[Policy.FCFS], out[Policy.BS]):
        assert abs(f - b) <= pon.polling_cycle


def test_pre_activation_round_runs_fcfs():
    rep = run_training(_task(), PON, QUIET)
    assert not rep.records[0].sliced and rep.records[1].sliced
    assert rep.activation_round == 1


def _sim(n=4):
    cohort = [ClientProfile(k, k, 1.0 + k) for k in range(n)]
    return FlSimulation(PON, FlTaskConfig(H=4), QUIET, cohort=cohort)


def test_join_of_slower_client_widens_window():
    sim = _sim()
    before = sim.slice
    newcomer = ClientProfile(50, 50, 9.0)
    after = handle_membership_change(MembershipEvent("join", newcomer), sim)
    ref = plan_oracle([(c.client_id, c.onu, c.T_UD, c.M_UD) for c in sim.cohort])
    assert after.T_max > before.T_max and after.tau > before.tau
    assert after.tau == pytest.approx(ref["tau"], abs=1e-9)
    assert after.B == pytest.approx(ref["B"], rel=1e-12)


def test_no_membership_change_keeps_slice():
    sim = _sim()
    s = sim.slice
    sim.run_rounds(2)
    assert sim.slice is s


def test_last_client_leaving():
    sim = _sim(1)
    with pytest.raises(EmptyCohort):
        handle_membership_change(MembershipEvent("leave", 0), sim)


def test_scheduled_membership_replans_with_offset():
    sim = _sim()
    sim.schedule_membership(1, MembershipEvent("leave", 3))
    recs = sim.run_rounds(4)
    assert sim.active_from == 2
    assert recs[1].straggler == 2


def test_bundled_accuracy_endpoints():
    tr = load_accuracy_trace()
    assert accuracy_lookup(tr, 10, 5000) == pytest.approx(0.68)
    assert accuracy_lookup(tr, 100, 5000) == pytest.approx(0.82)
    assert accuracy_lookup(tr, 10, 2000) < accuracy_lookup(tr, 100, 2000)


def test_midpoint_interpolation():
    tr = AccuracyTrace({50.0: (np.array([10.0, 20.0]), np.array([0.5, 0.7]))})
    assert accuracy_lookup(tr, 50, 15) == pytest.approx(0.6)
    assert accuracy_lookup(tr, 50, 15) == pytest.approx(lerp(10, 0.5, 20, 0.7, 15))


def test_unknown_involvement_strict():
    with pytest.raises(UnknownInvolvement):
        accuracy_lookup(load_accuracy_trace(), 37, 10, nearest=False)


def test_task_validation():
    with pytest.raises(ValueError):
        FlTaskConfig(H=1)
    with pytest.raises(ValueError):
        replace(FlTaskConfig(), involvement_percent=0)
