"""Synchronous federated-learning rounds over the PON.

A round is: global-model broadcast, local compute, upload of every
cohort member's update, aggregation. Rounds run back to back. ``T_round``
feeds the planner and the feasibility check but never clamps a round.

Two uplink/downlink arbitration regimes are simulated:

* FCFS (the baseline). ``onu_share`` (default): every ONU owns a fixed
  TDMA slot of ``polling_cycle / num_onus`` in each direction and serves one
  FIFO in it, where its background units and training data queue together.
  ``pooled``: one FIFO at line rate shared by the whole PON.
* BS. Training uses the per-cycle slice windows at line rate, the global
  model goes out on the reserved downlink, and background traffic gets the
  rest. Rounds before the slice is activated run the FCFS regime.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import (EmptyCohort, InfeasibleConfig, NoClients, UnknownInvolvement)
from .metrics import TrainingReport
from .pon_model import (ContinuousCalendar, CycleGrantMap, GapCalendar, PonConfig,
                        downlink_time, onu_calendar, prop_delay, slice_windows)
from .sim_core import Event, EventKind, EventQueue
from .slice_planner import (DEFAULT_MODEL_BITS, ClientProfile, CohortInfo, SliceSpec,
                            plan_slice, shift_slice, validate_round_threshold)
from .traffic_gen import DOWNLINK, UPLINK, BackgroundConfig, BackgroundSource, make_rng
from .uplink_scheduler import (ItemBatch, NeedMoreBackground, serve_fcfs_elastic,
                               serve_on_calendar, serve_training_windows)

log = logging.getLogger(__name__)

ONU_SHARE = "onu_share"
POOLED = "pooled"


class Policy(str, Enum):
    FCFS = "fcfs"
    BS = "bs"


@dataclass(frozen=True)
class FlTaskConfig:
    H: int = 11
    T_round: float = 6.0
    model_bits: float = DEFAULT_MODEL_BITS
    T_a: float = 0.0
    involvement_percent: float = 100.0
    compute_time_range: tuple[float, float] = (1.0, 5.0)
    compute_rule: str = "linear"        # linear | uniform
    compute_jitter: float = 0.0         # relative per-round jitter, off by default
    clients_per_onu: int = 1
    h: int = 1
    policy: Policy = Policy.BS
    fcfs_mode: str = ONU_SHARE
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        object.__setattr__(self, "compute_time_range", tuple(self.compute_time_range))
        lo, hi = self.compute_time_range
        if self.H < 2:
            raise ValueError("H must be >= 2")
        if not self.T_round > 0:
            raise ValueError("T_round must be > 0")
        if not 0 < lo <= hi:
            raise ValueError("compute_time_range needs 0 < lo <= hi")
        if not 0 < self.involvement_percent <= 100:
            raise ValueError("involvement_percent must be in (0, 100]")
        if not 1 <= self.h < self.H:
            raise ValueError("need 1 <= h < H")
        if self.model_bits <= 0 or self.T_a < 0 or self.clients_per_onu < 1:
            raise ValueError("model_bits > 0, T_a >= 0 and clients_per_onu >= 1 required")
        if self.compute_rule not in ("linear", "uniform"):
            raise ValueError(f"unknown compute_rule {self.compute_rule!r}")
        if not 0 <= self.compute_jitter < 1:
            raise ValueError("compute_jitter must be in [0, 1)")
        if self.fcfs_mode not in (ONU_SHARE, POOLED):
            raise ValueError(f"unknown fcfs_mode {self.fcfs_mode!r}")


@dataclass
class ClientTiming:
    client_id: int
    onu: int
    T_DL: float
    T_UD: float
    arrival: float          # update eligible at the OLT scheduler
    upload_wait: float
    T_UL: float
    completion: float


@dataclass
class RoundRecord:
    index: int
    start: float
    sync_time: float
    overrun: float
    straggler: int
    sliced: bool
    clients: list[ClientTiming] = field(default_factory=list)


def build_population(task: FlTaskConfig, pon: PonConfig, seed: int = 0) -> list[ClientProfile]:
    """Every potential client; client ``k`` sits on ONU ``k mod num_onus``."""
    n = pon.num_onus * task.clients_per_onu
    lo, hi = task.compute_time_range
    if task.compute_rule == "linear":
        t_ud = np.linspace(lo, hi, n)
    else:
        t_ud = make_rng(seed, 2).uniform(lo, hi, n)
    return [ClientProfile(k, k % pon.num_onus, float(t_ud[k]), task.model_bits) for k in range(n)]


def select_cohort(all_clients, involvement_percent: float) -> list[ClientProfile]:
    """The ``floor(p% * N)`` fastest clients (at least one), in id order."""
    all_clients = list(all_clients)
    if not all_clients:
        raise NoClients("no clients to select from")
    if not 0 < involvement_percent <= 100:
        raise ValueError("involvement_percent must be in (0, 100]")
    n = max(1, math.floor(involvement_percent * len(all_clients) / 100 + 1e-9))
    chosen = sorted(all_clients, key=lambda c: (c.T_UD, c.client_id))[:n]
    return sorted(chosen, key=lambda c: c.client_id)


@dataclass(frozen=True)
class MembershipEvent:
    kind: str                       # "join" | "leave"
    client: ClientProfile | int     # profile to add, or id to remove


def scenario_fingerprint(*parts) -> str:
    text = "|".join(repr(asdict(p)) if hasattr(p, "__dataclass_fields__") else repr(p)
                    for p in parts)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class FlSimulation:
    """One simulation instance: PON, background sources, cohort and slice state."""

    def __init__(self, pon: PonConfig, task: FlTaskConfig, background: BackgroundConfig,
                 cohort: list[ClientProfile] | None = None, trace: TextIO | None = None,
                 keep_grants: bool = False):
        self.pon = pon
        self.task = task
        self.background = background
        self.seed = background.seed
        if cohort is None:
            cohort = select_cohort(build_population(task, pon, background.seed),
                                   task.involvement_percent)
        self.cohort: list[ClientProfile] = list(cohort)
        if not self.cohort:
            raise EmptyCohort("cohort has no clients")
        self.queue = EventQueue(trace=trace)
        self.sources = {UPLINK: BackgroundSource(background, pon, UPLINK),
                        DOWNLINK: BackgroundSource(background, pon, DOWNLINK)}
        self.free: dict[tuple, float] = {}
        self.keep_grants = keep_grants
        self.grant_logs: list = []
        self.slice: SliceSpec | None = None
        self.active_from: int | None = None
        self.records: list[RoundRecord] = []
        self.pending_membership: dict[int, list[MembershipEvent]] = {}
        self.verdict = None
        self._jitter_rng = make_rng(background.seed, 3)
        self._round = None
        self._rounds_left = 0
        self._elastic_state: dict = {}
        self._dl_training = None
        if task.policy is Policy.BS:
            self.replan(t_current=0.0, next_round=0)

    # ---------------------------------------------------------------- planning

    def cohort_info(self, t_current: float) -> CohortInfo:
        return CohortInfo(tuple(self.cohort), t_current=t_current, T_round=self.task.T_round,
                          C=self.pon.uplink_capacity, h=self.task.h, H=self.task.H,
                          model_bits=self.task.model_bits)

    def replan(self, t_current: float, next_round: int) -> SliceSpec:
        info = self.cohort_info(t_current)
        self.slice = plan_slice(info, self.pon)
        self.active_from = next_round + self.task.h
        self.verdict = validate_round_threshold(info, self.slice, self.pon, self.task.T_a)
        if not self.verdict.feasible:
            if self.task.strict:
                raise InfeasibleConfig(self.verdict.note)
            log.warning("round threshold infeasible: %s", self.verdict.note)
        return self.slice

    def schedule_membership(self, round_index: int, event: MembershipEvent) -> None:
        self.pending_membership.setdefault(round_index, []).append(event)

    # ------------------------------------------------------------------ links

    def _free_v(self, key, calendar) -> float:
        t = self.free.get(key)
        return -math.inf if t is None else float(calendar.to_virtual(t))

    def _set_free(self, key, calendar, v: float) -> None:
        if math.isfinite(v):
            self.free[key] = float(calendar.to_wall_end(v))

    def _link_rate(self, direction) -> float:
        return self.pon.uplink_capacity if direction == UPLINK else self.pon.downlink_capacity

    def _onu_share(self, direction, t0: float, uploads: dict[int, list]) -> dict:
        """Elastic transfers through per-ONU FIFOs. ``uploads[onu]`` holds
        ``(ready, bits, key)``; returns ``key -> (first start, completion)``."""
        src = self.sources[direction]
        C = self._link_rate(direction)
        share = self.pon.onu_slot / self.pon.polling_cycle
        slowest = max(sum(b for _, b, _ in ups) for ups in uploads.values()) / (C * share)
        horizon = max(r for ups in uploads.values() for r, _, _ in ups) + 2 * slowest + 0.1
        while True:
            times, onus = src.pending_before(horizon)
            groups = _group_by_onu(onus)
            out, state = {}, {}
            try:
                for onu in sorted(uploads):
                    ups = sorted(uploads[onu], key=lambda u: (u[0], u[2]))
                    idx = groups.get(onu, _EMPTY)
                    cal = onu_calendar(self.pon, onu)
                    spans, n_bg, *_rest, v_free = serve_fcfs_elastic(
                        times[idx], src.unit_bits, [(r, b) for r, b, _ in ups], C, cal,
                        src.unit_bits, self._free_v((direction, onu), cal), horizon)
                    for (_, _, key), span in zip(ups, spans):
                        out[key] = span
                    state[onu] = (n_bg, v_free)
            except NeedMoreBackground:
                horizon = t0 + 2 * (horizon - t0)
                continue
            self._elastic_state[direction] = state
            return out

    def _flush_onu_share(self, direction, round_end: float) -> None:
        src = self.sources[direction]
        C = self._link_rate(direction)
        times, onus = src.pending_before(round_end)
        groups = _group_by_onu(onus)
        state = self._elastic_state.pop(direction, {})
        for onu, idx in groups.items():
            cal = onu_calendar(self.pon, onu)
            n_done, v_free = state.get(onu, (0, self._free_v((direction, onu), cal)))
            rest = idx[n_done:]
            if rest.size:
                batch = ItemBatch.background(times[rest], onus[rest], src.unit_bits)
                glog, v_free = serve_on_calendar(batch, C, cal, v_free)
                if self.keep_grants:
                    self.grant_logs.append((direction, glog))
            self._set_free((direction, onu), cal, v_free)
        for onu, (_, v_free) in state.items():
            if onu not in groups:
                self._set_free((direction, onu), onu_calendar(self.pon, onu), v_free)
        src.consume_before(round_end)

    def _pooled(self, direction, training: ItemBatch, horizon: float, calendar) -> tuple:
        """FIFO of training plus background before ``horizon`` on a shared calendar."""
        src = self.sources[direction]
        times, onus = src.pending_before(horizon)
        bg = ItemBatch.background(times, onus, src.unit_bits)
        batch = ItemBatch.concat([bg, training]).sorted()
        key = (direction, "pool")
        glog, v_free = serve_on_calendar(batch, self._link_rate(direction), calendar,
                                         self._free_v(key, calendar))
        return glog, v_free

    def _flush_pooled(self, direction, round_end: float, training: ItemBatch, calendar) -> None:
        glog, v_free = self._pooled(direction, training, round_end, calendar)
        if self.keep_grants:
            self.grant_logs.append((direction, glog))
        self._set_free((direction, "pool"), calendar, v_free)
        self.sources[direction].consume_before(round_end)

    # ----------------------------------------------------------------- rounds

    def _compute_times(self) -> dict[int, float]:
        t = {c.client_id: c.T_UD for c in self.cohort}
        if self.task.compute_jitter > 0:
            j = self.task.compute_jitter
            for cid in sorted(t):
                t[cid] *= 1 + float(self._jitter_rng.uniform(-j, j))
        return t

    def _begin_round(self, index: int) -> None:
        q = self.queue
        t0 = q.clock
        for ev in self.pending_membership.pop(index, []):
            handle_membership_change(ev, self, next_round=index)
        sliced = (self.task.policy is Policy.BS and self.slice is not None
                  and self.active_from is not None and index >= self.active_from)
        self._elastic_state = {}
        cohort = sorted(self.cohort, key=lambda c: c.client_id)
        t_ud = self._compute_times()
        M = self.task.model_bits
        pon = self.pon
        mode = self.task.fcfs_mode

        # downlink
        if sliced:
            t_dl = {c.client_id: downlink_time(pon, M, c.onu) for c in cohort}
            dl_cal = GapCalendar([t0], [t0 + M / pon.downlink_capacity])
        elif mode == ONU_SHARE:
            onus = sorted({c.onu for c in cohort})
            spans = self._onu_share(DOWNLINK, t0, {o: [(t0, M, o)] for o in onus})
            t_dl = {c.client_id: spans[c.onu][1] - t0 + prop_delay(pon, c.onu) for c in cohort}
            dl_cal = None
        else:
            dl_cal = ContinuousCalendar()
            bcast = _training_batch([(t0, 0, M, -2)])
            glog, _ = self._pooled(DOWNLINK, bcast, t0 + 1e-12, dl_cal)
            done = float(glog.end[glog.items.training][0])
            t_dl = {c.client_id: done - t0 + prop_delay(pon, c.onu) for c in cohort}
        self._dl_training = None if sliced or mode == ONU_SHARE else bcast

        # compute + upload
        arrival = {c.client_id: t0 + t_dl[c.client_id] + t_ud[c.client_id] + prop_delay(pon, c.onu)
                   for c in cohort}
        ul_items = _training_batch([(arrival[c.client_id], c.onu, c.M_UD, c.client_id)
                                    for c in cohort])
        overrun_ref = None
        if sliced:
            spec = shift_slice(self.slice, t0)
            ks, ws, we = slice_windows(pon, spec.B, spec.t_s, spec.t_e)
            grants = CycleGrantMap(ks, ws, we, spec.B / pon.C * pon.polling_cycle, pon.polling_cycle)
            s, e, b_s, b_e = serve_training_windows(ul_items, spec, grants, pon.C)
            span = {int(c): (float(a), float(b)) for c, a, b in zip(ul_items.client, s, e)}
            ul_cal = GapCalendar(b_s, b_e)
            overrun_ref = spec.t_e
        elif mode == ONU_SHARE:
            ups: dict[int, list] = {}
            for c in cohort:
                ups.setdefault(c.onu, []).append((arrival[c.client_id], c.M_UD, c.client_id))
            span = self._onu_share(UPLINK, t0, ups)
            ul_cal = None
        else:
            ul_cal = ContinuousCalendar()
            glog, _ = self._pooled(UPLINK, ul_items, float(ul_items.arrival.max()) + 1e-12, ul_cal)
            tr = glog.items.training
            span = {int(c): (float(a), float(b)) for c, a, b in
                    zip(glog.items.client[tr], glog.start[tr], glog.end[tr])}

        timings = []
        for c in cohort:
            first, done = span[c.client_id]
            arr = arrival[c.client_id]
            timings.append(ClientTiming(c.client_id, c.onu, t_dl[c.client_id], t_ud[c.client_id],
                                        arr, first - arr, done - first, done))
        self._round = _RoundState(index, t0, sliced, timings, ul_items, ul_cal, dl_cal,
                                  overrun_ref, len(cohort))
        for ct in timings:
            q.schedule(t0 + ct.T_DL, EventKind.BROADCAST_DONE, ct)

    def _handle(self, ev: Event) -> None:
        q = self.queue
        rs = self._round
        ct = ev.data
        if ev.kind is EventKind.BROADCAST_DONE:
            ready = ct.arrival - prop_delay(self.pon, ct.onu)
            q.schedule(max(ready, q.clock), EventKind.COMPUTE_DONE, ct)
        elif ev.kind is EventKind.COMPUTE_DONE:
            q.schedule(max(ct.arrival, q.clock), EventKind.ARRIVAL, ct)
        elif ev.kind is EventKind.ARRIVAL:
            q.schedule(max(ct.arrival + ct.upload_wait, q.clock), EventKind.GRANT_START, ct)
        elif ev.kind is EventKind.GRANT_START:
            q.schedule(max(ct.completion, q.clock), EventKind.GRANT_END, ct)
        elif ev.kind is EventKind.GRANT_END:
            rs.pending -= 1
            if rs.pending == 0:
                last = max(t.completion for t in rs.timings)
                q.schedule(max(last + self.task.T_a, q.clock), EventKind.ROUND_END, rs.index)
        elif ev.kind is EventKind.ROUND_END:
            self._end_round()

    def _end_round(self) -> None:
        rs = self._round
        t_end = self.queue.clock
        if rs.sliced:
            self._flush_pooled(UPLINK, t_end, _training_batch([]), rs.ul_cal)
            self._flush_pooled(DOWNLINK, t_end, _training_batch([]), rs.dl_cal)
        elif self.task.fcfs_mode == ONU_SHARE:
            self._flush_onu_share(UPLINK, t_end)
            self._flush_onu_share(DOWNLINK, t_end)
        else:
            self._flush_pooled(UPLINK, t_end, rs.ul_items, rs.ul_cal)
            self._flush_pooled(DOWNLINK, t_end, self._dl_training, ContinuousCalendar())
        last = max(t.completion for t in rs.timings)
        straggler = min(rs.timings, key=lambda t: (-t.completion, t.client_id)).client_id
        overrun = max(0.0, last - rs.overrun_ref) if rs.overrun_ref is not None else 0.0
        self.records.append(RoundRecord(rs.index, rs.t0, t_end - rs.t0, overrun, straggler,
                                        rs.sliced, rs.timings))
        self._rounds_left -= 1
        if self._rounds_left > 0:
            self._begin_round(rs.index + 1)

    def run_rounds(self, n: int) -> list[RoundRecord]:
        if n <= 0:
            return []
        self._rounds_left = n
        self._begin_round(len(self.records))
        self.queue.run(self._handle)
        return self.records[-n:]

    def report(self, fingerprint: str = "", load: float = math.nan) -> TrainingReport:
        act = self.active_from if self.task.policy is Policy.BS else self.task.h
        return TrainingReport(self.task.policy.value, self.seed, list(self.records),
                              activation_round=act or 0, fingerprint=fingerprint, load=load,
                              background_load=self.background.background_load,
                              involvement=self.task.involvement_percent)


@dataclass
class _RoundState:
    index: int
    t0: float
    sliced: bool
    timings: list
    ul_items: ItemBatch
    ul_cal: object
    dl_cal: object
    overrun_ref: float | None
    pending: int


_EMPTY = np.empty(0, dtype=np.int64)


def _group_by_onu(onus: np.ndarray) -> dict[int, np.ndarray]:
    if onus.size == 0:
        return {}
    order = np.argsort(onus, kind="stable")
    keys, first = np.unique(onus[order], return_index=True)
    bounds = list(first[1:]) + [onus.size]
    return {int(k): order[a:b] for k, a, b in zip(keys, first, bounds)}


def _training_batch(rows) -> ItemBatch:
    """``rows`` of ``(arrival, onu, bits, client_id)``."""
    if not rows:
        return ItemBatch.empty()
    a, o, b, c = zip(*rows)
    n = len(rows)
    return ItemBatch(np.array(a, dtype=float), np.array(o, dtype=np.int64),
                     np.array(b, dtype=float), np.ones(n, dtype=bool),
                     np.array(c, dtype=np.int64)).sorted()


# ---------------------------------------------------------------------------
# public operations


def run_round(cohort, slice_spec: SliceSpec | None, pon: PonConfig,
              background: BackgroundConfig, policy: Policy | str,
              task: FlTaskConfig | None = None) -> RoundRecord:
    """Simulate a single round starting at t = 0.

    Under BS the given slice (re-anchored to the round start) is active
    immediately.
    """
    policy = Policy(policy)
    task = task or FlTaskConfig()
    task = FlTaskConfig(**{**asdict(task), "policy": Policy.FCFS})
    sim = FlSimulation(pon, task, background, cohort=list(cohort))
    if policy is Policy.BS:
        if slice_spec is None:
            raise ValueError("BS round needs a slice")
        sim.task = FlTaskConfig(**{**asdict(task), "policy": Policy.BS})
        sim.slice, sim.active_from = slice_spec, 0
    return sim.run_rounds(1)[0]


def run_training(task: FlTaskConfig, pon: PonConfig | None = None,
                 background: BackgroundConfig | None = None, *,
                 load: float = math.nan, fingerprint: str | None = None,
                 trace: TextIO | None = None,
                 membership: list[tuple[int, MembershipEvent]] | None = None) -> TrainingReport:
    """Run ``task.H`` back-to-back rounds; total time is the sum of sync times."""
    pon = pon or PonConfig()
    background = background or BackgroundConfig()
    sim = FlSimulation(pon, task, background, trace=trace)
    for round_index, ev in membership or []:
        sim.schedule_membership(round_index, ev)
    sim.run_rounds(task.H)
    if fingerprint is None:
        fingerprint = scenario_fingerprint(pon, task, background)
    return sim.report(fingerprint, load)


def handle_membership_change(event: MembershipEvent, state: FlSimulation,
                             next_round: int | None = None) -> SliceSpec | None:
    """Apply a join/leave and, under BS, replan with ``t_current = now``.

    The new slice becomes active ``h`` rounds after ``next_round``.
    """
    if next_round is None:
        next_round = len(state.records)
    if event.kind == "join":
        c = event.client
        if not isinstance(c, ClientProfile):
            raise TypeError("join needs a ClientProfile")
        state.pon.distance(c.onu)
        if any(x.client_id == c.client_id for x in state.cohort):
            raise ValueError(f"client {c.client_id} already in the cohort")
        state.cohort.append(c)
    elif event.kind == "leave":
        cid = event.client.client_id if isinstance(event.client, ClientProfile) else int(event.client)
        remaining = [x for x in state.cohort if x.client_id != cid]
        if len(remaining) == len(state.cohort):
            raise KeyError(f"client {cid} is not in the cohort")
        if not remaining:
            raise EmptyCohort("the last client left the task")
        state.cohort = remaining
    else:
        raise ValueError(f"unknown membership event {event.kind!r}")
    if state.task.policy is not Policy.BS:
        return None
    return state.replan(state.queue.clock, next_round)


# ---------------------------------------------------------------------------
# accuracy trace


@dataclass
class AccuracyTrace:
    levels: dict[float, tuple[np.ndarray, np.ndarray]]   # involvement -> (rounds, accuracy)


def load_accuracy_trace(path: str | Path | None = None) -> AccuracyTrace:
    """Read ``involvement_percent,round,accuracy`` CSV; the bundled trace by default."""
    if path is None:
        text = resources.files("ponslice").joinpath("data/accuracy_trace.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    rows = list(csv.DictReader(text.splitlines()))
    levels: dict[float, list] = {}
    for r in rows:
        acc = float(r["accuracy"])
        if not 0 <= acc <= 1:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        levels.setdefault(float(r["involvement_percent"]), []).append((float(r["round"]), acc))
    out = {}
    for p, pts in levels.items():
        rounds = np.array([x for x, _ in pts])
        if np.any(np.diff(rounds) <= 0):
            raise ValueError(f"rounds must increase strictly for involvement {p}")
        out[p] = (rounds, np.array([a for _, a in pts]))
    if not out:
        raise ValueError("empty accuracy trace")
    return AccuracyTrace(out)


def accuracy_lookup(trace: AccuracyTrace, involvement_percent: float, round_: float,
                    nearest: bool = True) -> float:
    """Linear interpolation in rounds, held flat past the last sample."""
    if involvement_percent in trace.levels:
        level = involvement_percent
    elif nearest:
        level = min(trace.levels, key=lambda p: (abs(p - involvement_percent), p))
    else:
        raise UnknownInvolvement(involvement_percent)
    rounds, acc = trace.levels[level]
    return float(np.interp(round_, rounds, acc))
