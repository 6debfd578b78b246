"""Bandwidth-slicing planner.

From the cohort's compute times and update sizes, the planner derives the
upload window during which training traffic reaches the OLT, the slice
capacity that drains the whole cohort's updates inside that window, and
the absolute activation window ``[t_s, t_e]``.

Per client, ``delta = T_DL + T_UD`` is the time from round start until its
update is ready. The window opens at the earliest ``delta`` and closes at the
latest ``delta`` plus ``nabla``, the time needed to push that last update to
the OLT (serialization at line rate plus propagation). The slice rate is the
total update volume over the window length, capped at the uplink capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import DegenerateWindow, EmptyCohort, InvalidSlice
from .pon_model import PonConfig, downlink_time, prop_delay

DEFAULT_MODEL_BITS = 26.416e6


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    onu: int
    T_UD: float
    M_UD: float = DEFAULT_MODEL_BITS

    def __post_init__(self):
        if not self.T_UD > 0:
            raise ValueError(f"client {self.client_id}: T_UD must be > 0")
        if not self.M_UD > 0:
            raise ValueError(f"client {self.client_id}: M_UD must be > 0")


@dataclass(frozen=True)
class CohortInfo:
    clients: tuple[ClientProfile, ...]
    t_current: float = 0.0
    T_round: float = 6.0
    C: float | None = None           # None: the PON uplink capacity
    h: int = 1
    H: int = 11
    model_bits: float = DEFAULT_MODEL_BITS   # global model broadcast each round

    def __post_init__(self):
        object.__setattr__(self, "clients", tuple(self.clients))
        if not self.clients:
            raise EmptyCohort("cohort has no clients")
        if not self.T_round > 0:
            raise ValueError("T_round must be > 0")
        if not 1 <= self.h < self.H:
            raise ValueError(f"need 1 <= h < H, got h={self.h}, H={self.H}")
        if self.C is not None and not self.C > 0:
            raise ValueError("C must be > 0")
        ids = [c.client_id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate client ids in cohort")

    def capacity(self, pon: PonConfig) -> float:
        return pon.uplink_capacity if self.C is None else self.C

    def total_bits(self) -> float:
        return sum(c.M_UD for c in self.clients)


@dataclass(frozen=True)
class DeltaTable:
    delta: dict[int, float]            # client_id -> T_DL + T_UD
    t_dl: dict[int, float]
    order: tuple[int, ...]             # client ids by descending T_UD
    T_min: float
    delta_max: float
    straggler: int                     # argmax delta, lowest id on ties
    nabla: float | None = None

    @property
    def T_max(self) -> float:
        return self.delta_max + (self.nabla or 0.0)

    @property
    def tau(self) -> float:
        return self.T_max - self.T_min


@dataclass(frozen=True)
class UploadEntry:
    client_id: int
    onu: int
    bits: float
    delta: float                       # readiness, relative to round start


@dataclass(frozen=True)
class SliceSpec:
    t_s: float
    t_e: float
    B: float
    capped: bool
    T_min: float
    T_max: float
    nabla: float
    anchor: float                      # start of the round the slice is first used in
    uploads: tuple[UploadEntry, ...] = field(default=())

    @property
    def tau(self) -> float:
        return self.T_max - self.T_min

    @property
    def upload_order(self) -> tuple[int, ...]:
        return tuple(u.client_id for u in self.uploads)

    def slot_lengths(self) -> dict[int, float]:
        return {u.client_id: u.bits / self.B for u in self.uploads}


@dataclass(frozen=True)
class RoundVerdict:
    feasible: bool
    slack: float
    required: float
    straggler: int
    note: str = ""


@dataclass(frozen=True)
class UploadSlot:
    client_id: int
    onu: int
    start: float
    end: float


def compute_delta(cohort: CohortInfo, pon: PonConfig) -> DeltaTable:
    if not cohort.clients:
        raise EmptyCohort("cohort has no clients")
    t_dl = {c.client_id: downlink_time(pon, cohort.model_bits, c.onu) for c in cohort.clients}
    delta = {c.client_id: t_dl[c.client_id] + c.T_UD for c in cohort.clients}
    order = tuple(c.client_id for c in sorted(cohort.clients, key=lambda c: (-c.T_UD, c.client_id)))
    straggler = min(delta, key=lambda i: (-delta[i], i))
    return DeltaTable(delta, t_dl, order, min(delta.values()), delta[straggler], straggler)


def estimate_nabla(table: DeltaTable, cohort: CohortInfo, pon: PonConfig) -> float:
    """Time to deliver the last-ready update: line-rate serialization plus propagation."""
    k = next(c for c in cohort.clients if c.client_id == table.straggler)
    return k.M_UD / cohort.capacity(pon) + prop_delay(pon, k.onu)


def plan_slice(cohort: CohortInfo, pon: PonConfig) -> SliceSpec:
    table = compute_delta(cohort, pon)
    nabla = estimate_nabla(table, cohort, pon)
    T_max = table.delta_max + nabla
    T_min = table.T_min
    tau = T_max - T_min
    if not tau > 0:
        raise DegenerateWindow(f"upload window has length {tau!r}")
    C = cohort.capacity(pon)
    raw = cohort.total_bits() / tau
    capped = raw > C
    B = C if capped else raw
    anchor = cohort.t_current + cohort.h * cohort.T_round
    ready_order = sorted(cohort.clients, key=lambda c: (table.delta[c.client_id], c.client_id))
    uploads = tuple(UploadEntry(c.client_id, c.onu, c.M_UD, table.delta[c.client_id])
                    for c in ready_order)
    return SliceSpec(t_s=anchor + T_min, t_e=anchor + T_max, B=B, capped=capped,
                     T_min=T_min, T_max=T_max, nabla=nabla, anchor=anchor, uploads=uploads)


def shift_slice(spec: SliceSpec, anchor: float) -> SliceSpec:
    """The same slice re-anchored to a round starting at ``anchor``."""
    return replace(spec, anchor=anchor, t_s=anchor + spec.T_min, t_e=anchor + spec.T_max)


def validate_round_threshold(cohort: CohortInfo, slice_spec: SliceSpec, pon: PonConfig,
                             aggregation_time: float = 0.0) -> RoundVerdict:
    """Check ``T_round >= max_i(T_DL + T_UD + M/B) + T_a``."""
    table = compute_delta(cohort, pon)
    need = {c.client_id: table.delta[c.client_id] + c.M_UD / slice_spec.B + aggregation_time
            for c in cohort.clients}
    worst = min(need, key=lambda i: (-need[i], i))
    required = need[worst]
    slack = cohort.T_round - required
    note = "" if slack >= 0 else (
        f"T_round {cohort.T_round:g} s is short by {-slack:.6f} s; "
        f"local compute time (T_UD) has to be reduced")
    return RoundVerdict(slack >= 0, slack, required, worst, note)


def build_upload_schedule(slice_spec: SliceSpec, cohort: CohortInfo | None = None,
                          pon: PonConfig | None = None,
                          round_start: float | None = None) -> list[UploadSlot]:
    """Back-to-back slots at rate B in ascending readiness.

    A slot starts at the latest of: the previous slot's end, the client's
    readiness and the window opening. Late readiness pushes slots past the
    window end instead of failing; the overrun is visible in the last end.
    """
    if not slice_spec.B > 0:
        raise InvalidSlice("slice capacity must be > 0")
    if round_start is None:
        round_start = slice_spec.anchor
    opening = round_start + slice_spec.T_min
    prev_end = opening
    slots = []
    for u in slice_spec.uploads:
        start = max(prev_end, round_start + u.delta, opening)
        end = start + u.bits / slice_spec.B
        slots.append(UploadSlot(u.client_id, u.onu, start, end))
        prev_end = end
    return slots


def schedule_overrun(slice_spec: SliceSpec, slots: list[UploadSlot],
                     round_start: float | None = None) -> float:
    if round_start is None:
        round_start = slice_spec.anchor
    if not slots:
        return 0.0
    return max(0.0, slots[-1].end - (round_start + slice_spec.T_max))
