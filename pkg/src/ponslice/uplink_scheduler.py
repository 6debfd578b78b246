"""Uplink arbitration: the FCFS baseline and the slice-aware scheduler.

Queue items are held column-wise in an :class:`ItemBatch` since a single
round can carry 10^5 background units. ``arrival`` is when an item becomes
eligible at the OLT scheduler (generation time plus upstream propagation).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .errors import InvalidSlice
from .pon_model import (ContinuousCalendar, CycleGrantMap, GapCalendar, fifo_virtual,
                        fill_windows)

BACKGROUND = "background"
TRAINING = "training"


@dataclass(frozen=True)
class QueueItem:
    arrival: float
    onu: int
    bits: float
    cls: str = BACKGROUND
    seq: int = 0
    client_id: int = -1

    def __post_init__(self):
        if not self.bits > 0:
            raise ValueError("queue items must carry > 0 bits")
        if self.cls not in (BACKGROUND, TRAINING):
            raise ValueError(f"unknown traffic class {self.cls!r}")


@dataclass
class ItemBatch:
    arrival: np.ndarray
    onu: np.ndarray
    bits: np.ndarray
    training: np.ndarray     # bool mask
    client: np.ndarray       # client id, -1 for background

    def __len__(self):
        return int(self.arrival.size)

    @classmethod
    def empty(cls) -> "ItemBatch":
        return cls(np.empty(0), np.empty(0, dtype=np.int64), np.empty(0),
                   np.empty(0, dtype=bool), np.empty(0, dtype=np.int64))

    @classmethod
    def background(cls, arrival, onu, bits) -> "ItemBatch":
        arrival = np.asarray(arrival, dtype=float)
        n = arrival.size
        return cls(arrival, np.asarray(onu, dtype=np.int64), np.broadcast_to(
            np.asarray(bits, dtype=float), (n,)).copy(), np.zeros(n, dtype=bool),
            np.full(n, -1, dtype=np.int64))

    @classmethod
    def from_items(cls, items: Iterable[QueueItem]) -> "ItemBatch":
        items = sorted(items, key=lambda q: (q.arrival, q.seq))
        if not items:
            return cls.empty()
        return cls(np.array([q.arrival for q in items], dtype=float),
                   np.array([q.onu for q in items], dtype=np.int64),
                   np.array([q.bits for q in items], dtype=float),
                   np.array([q.cls == TRAINING for q in items]),
                   np.array([q.client_id for q in items], dtype=np.int64))

    def take(self, idx) -> "ItemBatch":
        return ItemBatch(self.arrival[idx], self.onu[idx], self.bits[idx],
                         self.training[idx], self.client[idx])

    @staticmethod
    def concat(batches) -> "ItemBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return ItemBatch.empty()
        return ItemBatch(*(np.concatenate([getattr(b, f) for b in batches])
                           for f in ("arrival", "onu", "bits", "training", "client")))

    def sorted(self) -> "ItemBatch":
        return self.take(np.argsort(self.arrival, kind="stable"))


@dataclass
class GrantLog:
    """Service interval ``[start, end]`` of every item (first bit to last bit)."""

    items: ItemBatch
    start: np.ndarray
    end: np.ndarray

    def __len__(self):
        return len(self.items)

    @staticmethod
    def concat(logs) -> "GrantLog":
        logs = [g for g in logs if len(g)]
        if not logs:
            return GrantLog(ItemBatch.empty(), np.empty(0), np.empty(0))
        return GrantLog(ItemBatch.concat([g.items for g in logs]),
                        np.concatenate([g.start for g in logs]),
                        np.concatenate([g.end for g in logs]))

    def waits(self) -> np.ndarray:
        return self.start - self.items.arrival

    def write_csv(self, fh: TextIO) -> None:
        fh.write("class,onu,arrival,start,end,bits\n")
        it = self.items
        order = np.lexsort((it.arrival, self.start))
        for i in order:
            cls = TRAINING if it.training[i] else BACKGROUND
            fh.write(f"{cls},{int(it.onu[i])},{it.arrival[i]:.9f},{self.start[i]:.9f},"
                     f"{self.end[i]:.9f},{it.bits[i]:.0f}\n")


def serve_on_calendar(items: ItemBatch, C: float, calendar, v_free: float = -math.inf):
    """FIFO service of ``items`` (arrival-ordered) on a transmit calendar.

    Returns ``(GrantLog, v_free)`` with ``v_free`` the server's virtual free
    time afterwards.
    """
    if len(items) == 0:
        return GrantLog(items, np.empty(0), np.empty(0)), v_free
    vs, ve = fifo_virtual(calendar.to_virtual(items.arrival), items.bits / C, v_free)
    return GrantLog(items, calendar.to_wall_start(vs), calendar.to_wall_end(ve)), float(ve[-1])


def serve_fcfs(items, C: float, free: float = -math.inf) -> GrantLog:
    """Single shared FIFO server at rate C, no class distinction.

    ``items`` is an :class:`ItemBatch` or an iterable of :class:`QueueItem`;
    equal arrivals keep their input (seq) order.
    """
    batch = items if isinstance(items, ItemBatch) else ItemBatch.from_items(items)
    if np.any(np.diff(batch.arrival) < 0):
        batch = batch.sorted()
    log, _ = serve_on_calendar(batch, C, ContinuousCalendar(), free)
    return log


class NeedMoreBackground(Exception):
    """The elastic upload outran the background arrivals it was handed."""

    def __init__(self, t):
        super().__init__(t)
        self.t = t


def serve_fcfs_elastic(bg_arrival, bg_bits, uploads, C: float, calendar, packet_bits: float,
                       v_free: float = -math.inf, horizon: float = math.inf):
    """One FIFO queue shared by background units and elastic training uploads.

    Each upload is cut into ``packet_bits`` packets and keeps one packet in
    the queue at a time: the next enters when the previous one departs, so
    background that arrived meanwhile is served first. Uploads of the same
    queue go one after another in the given order. ``bg_arrival`` must hold
    every background arrival before ``horizon``.

    Returns ``(spans, n_bg, bg_start, bg_end, v_free)``; ``spans`` has the
    ``(first start, completion)`` of each upload, and the first ``n_bg``
    background units were served (wall ``bg_start``/``bg_end``).
    """
    bg_arrival = np.asarray(bg_arrival, dtype=float)
    arr_list = bg_arrival.tolist()
    v_bg = calendar.to_virtual(bg_arrival)
    svc_bg = np.broadcast_to(np.asarray(bg_bits, dtype=float), bg_arrival.shape) / C
    vs_all = np.empty(bg_arrival.size)
    ve_all = np.empty(bg_arrival.size)
    i = 0
    spans = []
    t_done = -math.inf
    for ready, bits in uploads:
        t_enq = max(ready, t_done)
        first = None
        remaining = bits
        while remaining > 0:
            if t_enq >= horizon:
                raise NeedMoreBackground(t_enq)
            size = packet_bits if remaining > packet_bits else remaining
            j = bisect_right(arr_list, t_enq, i)
            if j > i:
                vs, ve = fifo_virtual(v_bg[i:j], svc_bg[i:j], v_free)
                vs_all[i:j], ve_all[i:j] = vs, ve
                v_free = float(ve[-1])
                i = j
            v_start = max(v_free, float(calendar.to_virtual(t_enq)))
            v_free = v_start + size / C
            if first is None:
                first = float(calendar.to_wall_start(v_start))
            t_enq = float(calendar.to_wall_end(v_free))
            remaining -= size
        t_done = t_enq
        spans.append((first, t_done))
    bg_start = calendar.to_wall_start(vs_all[:i]) if i else np.empty(0)
    bg_end = calendar.to_wall_end(ve_all[:i]) if i else np.empty(0)
    return spans, i, bg_start, bg_end, v_free


def _extend_grants(grants: CycleGrantMap, eligible_max: float, total_work: float) -> tuple:
    P = grants.polling_cycle
    starts, ends, cycles = grants.starts, grants.ends, grants.cycles
    last_end = float(ends[-1]) if ends.size else eligible_max
    k_last = int(cycles[-1]) if cycles.size else math.floor(eligible_max / P)
    extra = max(0, math.ceil((eligible_max - last_end) / P)) + math.ceil(total_work / grants.window) + 2
    kx = np.arange(k_last + 1, k_last + 1 + extra)
    return (np.concatenate([cycles, kx]), np.concatenate([starts, kx * P]),
            np.concatenate([ends, kx * P + grants.window]))


def serve_training_windows(items: ItemBatch, slice_spec, grants: CycleGrantMap, C: float):
    """Training items inside the slice windows at line rate.

    Returns ``(start, end, blocked_starts, blocked_ends)``: the reservation
    windows actually held, i.e. through ``t_e`` or through the last training
    bit if the upload overran.
    """
    rank = {cid: r for r, cid in enumerate(slice_spec.upload_order)}
    order = np.array([rank.get(int(c), len(rank) + k) for k, c in enumerate(items.client)])
    work = items.bits / C
    cycles, starts, ends = grants.cycles, grants.starts, grants.ends
    if len(items):
        cycles, starts, ends = _extend_grants(grants, float(items.arrival.max()), float(work.sum()))
        s, e = fill_windows(starts, ends, items.arrival, work, order)
        done = float(e.max())
    else:
        s = e = np.empty(0)
        done = -math.inf
    hold = max(slice_spec.t_e, done)
    keep = starts < hold
    return s, e, starts[keep], np.minimum(ends[keep], hold)


def serve_sliced(items, slice_spec, grants: CycleGrantMap | None, C: float,
                 free: float = -math.inf) -> GrantLog:
    """Training inside the slice windows, background FCFS in the remaining time.

    Background never uses slice-window time, even idle window time. With no
    slice (or ``B == 0``) this is exactly :func:`serve_fcfs`.
    """
    batch = items if isinstance(items, ItemBatch) else ItemBatch.from_items(items)
    if slice_spec is None or slice_spec.B == 0 or grants is None:
        return serve_fcfs(batch, C, free)
    if slice_spec.B < 0 or slice_spec.B > C * (1 + 1e-12) or not slice_spec.t_s < slice_spec.t_e:
        raise InvalidSlice("slice must satisfy 0 < B <= C and t_s < t_e")
    if np.any(np.diff(batch.arrival) < 0):
        batch = batch.sorted()
    tr = np.flatnonzero(batch.training)
    bg = np.flatnonzero(~batch.training)
    start = np.empty(len(batch))
    end = np.empty(len(batch))
    ts, te, b_s, b_e = serve_training_windows(batch.take(tr), slice_spec, grants, C)
    start[tr], end[tr] = ts, te
    gap = GapCalendar(b_s, b_e)
    bg_batch = batch.take(bg)
    free_v = float(gap.to_virtual(free)) if math.isfinite(free) else free
    log, _ = serve_on_calendar(bg_batch, C, gap, free_v)
    start[bg], end[bg] = log.start, log.end
    return GrantLog(batch, start, end)
