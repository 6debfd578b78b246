"""Static PON topology and upstream/downstream timing.

Besides the config and the two delay formulas, this module holds the
"calendar" arithmetic used by every scheduler. A calendar describes when a
server may transmit (a fixed TDMA slot every polling cycle, the slice windows,
or the complement of the slice windows). Each one maps wall time to *virtual*
time, the cumulative transmit time available since the origin. A FIFO queue
on a calendar then reduces to the plain Lindley recursion in virtual time.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSlice, UnknownOnu

PROP_DELAY_PER_KM = 5e-6  # light in fiber, n ~ 1.5


@dataclass(frozen=True)
class PonConfig:
    num_onus: int = 128
    uplink_capacity: float = 1e10
    downlink_capacity: float = 1e10
    distance_km: float | tuple[float, ...] = 20.0
    prop_delay_per_km: float = PROP_DELAY_PER_KM
    polling_cycle: float = 1e-3
    guard_time: float = 0.0
    # share of the downlink line rate reserved for the global-model broadcast
    downlink_reserved_fraction: float = 1.0

    def __post_init__(self):
        if isinstance(self.distance_km, (list, np.ndarray)):
            object.__setattr__(self, "distance_km", tuple(float(d) for d in self.distance_km))
        if self.num_onus < 1:
            raise ValueError("num_onus must be >= 1")
        if self.uplink_capacity <= 0 or self.downlink_capacity <= 0:
            raise ValueError("line rates must be > 0")
        if self.prop_delay_per_km < 0:
            raise ValueError("prop_delay_per_km must be >= 0")
        if self.guard_time < 0 or not self.polling_cycle > self.guard_time * self.num_onus:
            raise ValueError("need polling_cycle > guard_time * num_onus >= 0")
        if not 0 < self.downlink_reserved_fraction <= 1:
            raise ValueError("downlink_reserved_fraction must be in (0, 1]")
        if isinstance(self.distance_km, tuple):
            if len(self.distance_km) != self.num_onus:
                raise ValueError("per-ONU distance list must have num_onus entries")
            if min(self.distance_km) < 0:
                raise ValueError("distances must be >= 0")
        elif self.distance_km < 0:
            raise ValueError("distances must be >= 0")

    @property
    def C(self) -> float:
        return self.uplink_capacity

    def distance(self, onu: int) -> float:
        if not 0 <= onu < self.num_onus:
            raise UnknownOnu(f"ONU {onu} not in [0, {self.num_onus})")
        if isinstance(self.distance_km, tuple):
            return self.distance_km[onu]
        return float(self.distance_km)

    @property
    def onu_slot(self) -> float:
        """Usable length of one ONU's fixed TDMA slot per polling cycle."""
        return self.polling_cycle / self.num_onus - self.guard_time


def prop_delay(cfg: PonConfig, onu: int) -> float:
    """One-way ONU-OLT propagation delay in seconds."""
    return cfg.distance(onu) * cfg.prop_delay_per_km


def downlink_time(cfg: PonConfig, model_bits: float, onu: int) -> float:
    """Broadcast time of the global model to one ONU over the reserved downlink.

    One downstream transmission reaches every ONU, so only the propagation
    term differs between ONUs.
    """
    if model_bits < 0:
        raise ValueError("model_bits must be >= 0")
    rate = cfg.downlink_capacity * cfg.downlink_reserved_fraction
    return model_bits / rate + prop_delay(cfg, onu)


# --------------------------------------------------------------------------
# calendars


def fifo_virtual(v_arrival, service, v_free=-math.inf):
    """Lindley recursion ``D_n = max(A_n, D_{n-1}) + S_n`` in closed form.

    Returns ``(v_start, v_end)``. ``v_free`` is when the server frees up from
    earlier work.
    """
    v_arrival = np.asarray(v_arrival, dtype=float)
    service = np.asarray(service, dtype=float)
    if v_arrival.size == 0:
        return v_arrival.copy(), v_arrival.copy()
    s_cum = np.cumsum(service)
    x = np.maximum.accumulate(v_arrival - (s_cum - service))
    np.maximum(x, v_free, out=x)
    v_end = s_cum + x
    # start = max(arrival, previous end), exact rather than v_end - service
    prev = np.empty_like(v_end)
    prev[0] = v_free
    prev[1:] = v_end[:-1]
    return np.maximum(v_arrival, prev), v_end


class ContinuousCalendar:
    """Server that may transmit at any time."""

    def to_virtual(self, t):
        return np.asarray(t, dtype=float)

    def to_wall_start(self, v):
        return np.asarray(v, dtype=float)

    def to_wall_end(self, v):
        return np.asarray(v, dtype=float)


class PeriodicCalendar:
    """Transmit opportunity ``[k*period + offset, k*period + offset + length)``."""

    def __init__(self, period: float, offset: float, length: float):
        if not 0 < length <= period:
            raise ValueError("slot length must be in (0, period]")
        self.period = period
        self.offset = offset
        self.length = length

    def to_virtual(self, t):
        u = np.asarray(t, dtype=float) - self.offset
        k = np.floor(u / self.period)
        r = u - k * self.period
        return k * self.length + np.minimum(r, self.length)

    def to_wall_start(self, v):
        v = np.asarray(v, dtype=float)
        k = np.floor(v / self.length)
        rem = v - k * self.length
        return self.offset + k * self.period + rem

    def to_wall_end(self, v):
        v = np.asarray(v, dtype=float)
        k = np.floor(v / self.length)
        rem = v - k * self.length
        # exactly on a slot boundary: the work finished at the previous slot end
        return np.where(rem > 0,
                        self.offset + k * self.period + rem,
                        self.offset + (k - 1) * self.period + self.length)


class WindowCalendar:
    """Transmit only inside the given sorted, disjoint windows."""

    def __init__(self, starts, ends):
        self.starts = np.asarray(starts, dtype=float)
        self.ends = np.asarray(ends, dtype=float)
        lengths = self.ends - self.starts
        self.cum_end = np.cumsum(lengths)
        self.cum = self.cum_end - lengths
        self.capacity = float(self.cum_end[-1]) if lengths.size else 0.0

    def to_virtual(self, t):
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.starts, t, side="right") - 1
        ic = np.clip(i, 0, None)
        v = self.cum[ic] + np.minimum(t - self.starts[ic], self.ends[ic] - self.starts[ic])
        return np.where(i < 0, 0.0, v)

    def _wall(self, v, side):
        v = np.asarray(v, dtype=float)
        i = np.searchsorted(self.cum_end, v, side=side)
        ic = np.clip(i, 0, len(self.starts) - 1)
        t = self.starts[ic] + (v - self.cum[ic])
        return np.where(i >= len(self.starts), np.inf, t)

    def to_wall_start(self, v):
        return self._wall(v, "right")

    def to_wall_end(self, v):
        return self._wall(v, "left")


class GapCalendar:
    """Transmit at any time except inside the given blocked windows."""

    def __init__(self, starts, ends):
        self.starts = np.asarray(starts, dtype=float)
        self.ends = np.asarray(ends, dtype=float)
        lengths = self.ends - self.starts
        self.cum_blocked = np.cumsum(lengths) - lengths
        self.g = self.starts - self.cum_blocked
        self.total_blocked = float(lengths.sum())

    def to_virtual(self, t):
        t = np.asarray(t, dtype=float)
        if self.starts.size == 0:
            return t.copy()
        i = np.searchsorted(self.starts, t, side="right") - 1
        ic = np.clip(i, 0, None)
        after = t - (self.cum_blocked[ic] + (self.ends[ic] - self.starts[ic]))
        # inside a blocked window time stands still at exactly g[i]
        v = np.where(t < self.ends[ic], self.g[ic], after)
        return np.where(i < 0, t, v)

    def _wall(self, v, side):
        v = np.asarray(v, dtype=float)
        if self.starts.size == 0:
            return v.copy()
        i = np.searchsorted(self.g, v, side=side)
        blocked = np.append(self.cum_blocked, self.total_blocked)
        t = v + blocked[i]
        # rounding can leave t inside a blocked window; snap to its edge
        k = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, None)
        inside = (t > self.starts[k]) & (t < self.ends[k])
        edge = self.ends[k] if side == "right" else self.starts[k]
        return np.where(inside, edge, t)

    def to_wall_start(self, v):
        return self._wall(v, "right")

    def to_wall_end(self, v):
        return self._wall(v, "left")


def onu_calendar(cfg: PonConfig, onu: int) -> PeriodicCalendar:
    """The fixed per-cycle TDMA slot of one ONU."""
    cfg.distance(onu)  # range check
    return PeriodicCalendar(cfg.polling_cycle, onu * cfg.polling_cycle / cfg.num_onus, cfg.onu_slot)


# --------------------------------------------------------------------------
# slice windows


def slice_windows(cfg: PonConfig, B: float, t_start: float, t_end: float,
                  extra_cycles: int = 0):
    """Per-cycle slice windows over ``[t_start, t_end]``.

    Every polling cycle overlapping the range carries a window of
    ``(B / C) * polling_cycle`` at the start of its overlap, pro-rated
    linearly for partial first/last cycles. ``extra_cycles`` full windows are
    appended after ``t_end`` (reservation kept while training overruns).
    Returns ``(cycle_index, starts, ends)`` arrays.
    """
    P = cfg.polling_cycle
    frac = B / cfg.C
    if t_end > t_start:
        k0 = math.floor(t_start / P)
        k1 = max(math.ceil(t_end / P) - 1, k0)
        ks = np.arange(k0, k1 + 1)
        lo = np.maximum(ks * P, t_start)
        hi = np.minimum((ks + 1) * P, t_end)
        overlap = np.clip(hi - lo, 0.0, None)
        starts, lengths = lo, frac * overlap
        keep = lengths > 0
        ks, starts, lengths = ks[keep], starts[keep], lengths[keep]
        k_last = k1
    else:
        ks = np.empty(0, dtype=int)
        starts = lengths = np.empty(0)
        k_last = math.floor(t_start / P) - 1
    if extra_cycles > 0:
        kx = np.arange(k_last + 1, k_last + 1 + extra_cycles)
        ks = np.concatenate([ks, kx])
        starts = np.concatenate([starts, kx * P])
        lengths = np.concatenate([lengths, np.full(extra_cycles, frac * P)])
    return ks, starts, starts + lengths


@dataclass
class CycleGrantMap:
    cycles: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    window: float                      # slice window of one full cycle
    polling_cycle: float
    subslots: list[tuple] = field(default_factory=list)  # (cycle, client_id, onu, start, end)

    @property
    def first_cycle(self) -> int:
        return int(self.cycles[0])

    @property
    def last_cycle(self) -> int:
        return int(self.cycles[-1])

    def window_lengths(self) -> np.ndarray:
        return self.ends - self.starts

    def background_time(self) -> np.ndarray:
        """Time left to background traffic in each mapped cycle."""
        return self.polling_cycle - self.window_lengths()

    def reserved_bits(self, C: float) -> float:
        return float(self.window_lengths().sum() * C)


def fill_windows(starts, ends, eligible, work, order=None):
    """Serve items inside windows, non-preemptively, highest priority first.

    ``eligible`` are wall times at which each item may start, ``work`` the
    transmit time each needs, ``order`` the priority (lower first, defaults to
    list position). When the server frees up it takes the eligible item with
    the best priority; if none is eligible it idles until the next one is.
    Returns ``(start, end)`` wall-time arrays; ``inf`` if capacity ran out.
    """
    cal = WindowCalendar(starts, ends)
    eligible = np.asarray(eligible, dtype=float)
    work = np.asarray(work, dtype=float)
    n = eligible.size
    order = np.arange(n) if order is None else np.asarray(order)
    va = cal.to_virtual(eligible)
    by_time = sorted(range(n), key=lambda i: (va[i], order[i]))
    v_start = np.empty(n)
    v_end = np.empty(n)
    heap: list[tuple] = []
    v = -math.inf
    p = 0
    for _ in range(n):
        if not heap:
            v = max(v, va[by_time[p]])
        while p < n and va[by_time[p]] <= v:
            i = by_time[p]
            heapq.heappush(heap, (order[i], i))
            p += 1
        _, i = heapq.heappop(heap)
        v_start[i] = v
        v = v + work[i]
        v_end[i] = v
    over = v_end > cal.capacity * (1 + 1e-12)
    start = np.where(over, np.inf, cal.to_wall_start(v_start))
    end = np.where(over, np.inf, cal.to_wall_end(v_end))
    return start, end


def _split_pieces(starts, ends, s, e):
    """Pieces of a window-calendar transmission ``[s, e]`` per window."""
    i0 = int(np.searchsorted(ends, s, side="right"))
    i1 = int(np.searchsorted(starts, e, side="left"))
    out = []
    for i in range(i0, i1):
        lo, hi = max(s, starts[i]), min(e, ends[i])
        if hi > lo:
            out.append((i, lo, hi))
    return out


def map_slice_to_cycles(cfg: PonConfig, slice_spec) -> CycleGrantMap:
    """Lay a planned slice onto the polling-cycle grid.

    Each cycle overlapping ``[t_s, t_e]`` gets a window sized so the average
    rate is ``B``. Sub-slots go to clients in upload order, starting no earlier
    than each client's planned readiness; clients with nothing ready are
    skipped. A planned upload that outlives ``t_e`` keeps full windows
    until it finishes.
    """
    B, t_s, t_e = slice_spec.B, slice_spec.t_s, slice_spec.t_e
    if not (0 < B <= cfg.C * (1 + 1e-12)) or not t_s < t_e:
        raise InvalidSlice(f"need 0 < B <= C and t_s < t_e (B={B}, t_s={t_s}, t_e={t_e})")
    B = min(B, cfg.C)
    window = B / cfg.C * cfg.polling_cycle
    uploads = list(getattr(slice_spec, "uploads", ()) or ())
    work = np.array([u.bits / cfg.C for u in uploads])
    ready = np.array([slice_spec.anchor + u.delta for u in uploads])
    extra = 0
    if uploads:
        last = max(t_e, float(ready.max()))
        extra = math.ceil((last - t_e) / cfg.polling_cycle) + math.ceil(work.sum() / window) + 2
    ks, starts, ends = slice_windows(cfg, B, t_s, t_e, extra)
    grant = CycleGrantMap(ks, starts, ends, window, cfg.polling_cycle)
    if uploads:
        s, e = fill_windows(starts, ends, ready, work)
        done = float(e.max())
        for u, si, ei in zip(uploads, s, e):
            for idx, lo, hi in _split_pieces(starts, ends, si, ei):
                grant.subslots.append((int(ks[idx]), u.client_id, u.onu, lo, hi))
        # drop overrun windows that were never needed
        keep = (ends <= t_e + 1e-15) | (starts < done)
        grant.cycles, grant.starts, grant.ends = ks[keep], starts[keep], ends[keep]
        grant.subslots.sort(key=lambda x: (x[3], x[1]))
    return grant


def reserved_capacity_bits(cfg: PonConfig, B: float, t_start: float, t_end: float) -> float:
    _, s, e = slice_windows(cfg, B, t_start, t_end)
    return float((e - s).sum() * cfg.C)
