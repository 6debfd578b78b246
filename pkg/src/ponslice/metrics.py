"""Round statistics, FCFS-vs-BS savings and report emission."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence, TextIO

import numpy as np

from .errors import EmptyReport

ROUNDS_CSV_HEADER = "round,policy,load,involvement,sync_time_s,overrun_s,straggler_id"


@dataclass
class TrainingReport:
    policy: str
    seed: int
    records: list
    activation_round: int = 0
    fingerprint: str = ""
    load: float = math.nan
    background_load: float = 0.0
    involvement: float = 100.0

    @property
    def sync_times(self) -> list[float]:
        return [r.sync_time for r in self.records]

    @property
    def total_time(self) -> float:
        return math.fsum(self.sync_times)


@dataclass(frozen=True)
class SyncSummary:
    rounds: int
    mean: float
    min: float
    max: float
    p95: float
    total: float


def summarize(report, include_pre_activation: bool = False) -> SyncSummary:
    """Sync-time statistics, skipping the rounds before slice activation.

    ``report`` may also be a plain sequence of sync times (nothing skipped).
    """
    if isinstance(report, TrainingReport):
        skip = 0 if include_pre_activation else report.activation_round
        times = report.sync_times[skip:]
    else:
        times = [float(x) for x in report]
    if not times:
        raise EmptyReport("no rounds to summarize")
    arr = np.asarray(times, dtype=float)
    return SyncSummary(len(times), math.fsum(times) / len(times), float(arr.min()),
                       float(arr.max()), float(np.percentile(arr, 95)), math.fsum(times))


def compute_savings(fcfs, bs) -> float:
    """``(T_FCFS - T_BS) / T_FCFS`` on totals; NaN when ``T_FCFS`` is 0. Never clamped."""
    t_f = fcfs.total if isinstance(fcfs, SyncSummary) else float(fcfs)
    t_b = bs.total if isinstance(bs, SyncSummary) else float(bs)
    if t_f == 0:
        return math.nan
    return (t_f - t_b) / t_f


@dataclass(frozen=True)
class ComparisonCell:
    load: float
    involvement: float
    seeds: tuple[int, ...]
    mean_sync_fcfs: float
    mean_sync_bs: float
    total_fcfs: float
    total_bs: float

    @property
    def savings(self) -> float:
        return compute_savings(self.total_fcfs, self.total_bs)


@dataclass
class ComparisonSummary:
    cells: list[ComparisonCell] = field(default_factory=list)

    def cell(self, load: float, involvement: float) -> ComparisonCell:
        for c in self.cells:
            if math.isclose(c.load, load) and math.isclose(c.involvement, involvement):
                return c
        raise KeyError((load, involvement))


def pair_reports(load: float, involvement: float, fcfs: Sequence[TrainingReport],
                 bs: Sequence[TrainingReport]) -> ComparisonCell:
    """Paired comparison: same seeds and round counts on both sides."""
    if [r.seed for r in fcfs] != [r.seed for r in bs]:
        raise ValueError("FCFS and BS runs must use the same seeds")
    f_sum = [summarize(r) for r in fcfs]
    b_sum = [summarize(r) for r in bs]
    if any(a.rounds != b.rounds for a, b in zip(f_sum, b_sum)):
        raise ValueError("paired runs must have equal round counts")
    n = sum(s.rounds for s in f_sum)
    t_f = math.fsum(s.total for s in f_sum)
    t_b = math.fsum(s.total for s in b_sum)
    return ComparisonCell(load, involvement, tuple(r.seed for r in fcfs), t_f / n, t_b / n, t_f, t_b)


# --------------------------------------------------------------------------
# emission; every float is printed with 9 decimals so output is byte-stable


def fmt(x: float) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return "null"
    return f"{x:.9f}"


def write_rounds_csv(reports: Sequence[TrainingReport], fh: TextIO) -> None:
    fh.write(ROUNDS_CSV_HEADER + "\n")
    for rep in reports:
        for r in rep.records:
            fh.write(f"{r.index},{rep.policy},{fmt(rep.load)},{fmt(rep.involvement)},"
                     f"{fmt(r.sync_time)},{fmt(r.overrun)},{r.straggler}\n")


def _json(obj: Any, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}"{k}": {_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj: Any) -> str:
    """JSON with insertion-ordered keys and fixed 9-decimal floats."""
    return _json(obj, 0) + "\n"


def summary_dict(s: SyncSummary) -> dict:
    return {"rounds": s.rounds, "mean_sync_s": s.mean, "min_sync_s": s.min,
            "max_sync_s": s.max, "p95_sync_s": s.p95, "total_time_s": s.total}


def comparison_dict(cmp: ComparisonSummary) -> list[dict]:
    return [{"load": c.load, "involvement": c.involvement, "seeds": list(c.seeds),
             "mean_sync_fcfs_s": c.mean_sync_fcfs, "mean_sync_bs_s": c.mean_sync_bs,
             "total_fcfs_s": c.total_fcfs, "total_bs_s": c.total_bs, "savings": c.savings}
            for c in cmp.cells]
