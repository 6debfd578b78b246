"""``ponslice`` command line: run, compare, sweep, plan."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .config import Scenario, dump_scenario, parse_config, parse_seeds
from .errors import PonSliceError
from .fl_engine import Policy, build_population, run_training, scenario_fingerprint, select_cohort
from .metrics import (ComparisonSummary, TrainingReport, comparison_dict, dumps_json, fmt,
                      pair_reports, summarize, summary_dict, write_rounds_csv)
from .slice_planner import CohortInfo, build_upload_schedule, plan_slice, validate_round_threshold

log = logging.getLogger("ponslice")

SCENARIO_ECHO = "scenario.cfg"
SUMMARY_JSON = "summary.json"
SWEEP_CSV = "sweep.csv"


def rounds_csv_name(seed: int) -> str:
    return f"rounds_seed{seed}.csv"


# --------------------------------------------------------------------------
# experiment runner


def cell_scenario(sc: Scenario, load: float | None, involvement: float | None,
                  background: bool = False) -> Scenario:
    """``sc`` with one grid cell applied; ``load`` is total load unless ``background``."""
    values = dict(sc.values)
    if involvement is not None:
        values["fl.involvement"] = involvement
    if load is not None:
        values.pop("traffic.total_load", None)
        values.pop("traffic.background_load", None)
        values["traffic.background_load" if background else "traffic.total_load"] = load
    return cfgmod.resolve(values)


def cell_load(sc: Scenario) -> float:
    if sc.total_load is not None:
        return sc.total_load
    return sc.background.background_load + sc.training_load()


def run_one(sc: Scenario, seed: int, policy: Policy | str) -> TrainingReport:
    """One simulation instance (picklable, so cells can go to worker processes)."""
    task = replace(sc.task, policy=Policy(policy))
    bg = replace(sc.background, seed=seed)
    fp = scenario_fingerprint(dump_scenario(sc, include_output=False), seed, Policy(policy).value)
    return run_training(task, sc.pon, bg, load=cell_load(sc), fingerprint=fp)


def _map(jobs: int, fn, args: list) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, *zip(*args)))


def run_compare(scenario: Scenario, loads, involvements, seeds, out_dir=None,
                jobs: int = 1, background: bool = False) -> ComparisonSummary:
    """Paired FCFS/BS runs per (load, involvement, seed).

    Writes ``rounds_seed<N>.csv`` per seed, ``summary.json`` and the scenario
    echo when ``out_dir`` is given. Results are merged in cell-key order, so
    ``jobs`` never changes the output.
    """
    loads, involvements, seeds = list(loads), list(involvements), list(seeds)
    if not loads or not involvements or not seeds:
        raise ValueError("loads, involvements and seeds must be nonempty")
    cells = [(ld, inv, cell_scenario(scenario, ld, inv, background))
             for ld in loads for inv in involvements]
    tasks = [(sc, s, p) for _, _, sc in cells for s in seeds for p in (Policy.FCFS, Policy.BS)]
    reports = iter(_map(jobs, run_one, tasks))
    summary = ComparisonSummary()
    per_seed: dict[int, list[TrainingReport]] = {s: [] for s in seeds}
    for ld, inv, sc in cells:
        fcfs, bs = [], []
        for s in seeds:
            f, b = next(reports), next(reports)
            fcfs.append(f)
            bs.append(b)
            per_seed[s] += [f, b]
        summary.cells.append(pair_reports(cell_load(sc), sc.task.involvement_percent, fcfs, bs))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for s in seeds:
            with open(out / rounds_csv_name(s), "w", newline="") as fh:
                write_rounds_csv(per_seed[s], fh)
        (out / SCENARIO_ECHO).write_text(dump_scenario(scenario))
        doc = {"fingerprint": scenario_fingerprint(dump_scenario(scenario, False), tuple(seeds)),
               "seeds": list(seeds), "rounds": scenario.rounds,
               "fcfs_mode": scenario.task.fcfs_mode, "cells": comparison_dict(summary)}
        (out / SUMMARY_JSON).write_text(dumps_json(doc))
    return summary


def run_single(scenario: Scenario, seeds, out_dir=None, jobs: int = 1) -> list[TrainingReport]:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds must be nonempty")
    reports = _map(jobs, run_one, [(scenario, s, scenario.policy) for s in seeds])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for rep in reports:
            with open(out / rounds_csv_name(rep.seed), "w", newline="") as fh:
                write_rounds_csv([rep], fh)
        (out / SCENARIO_ECHO).write_text(dump_scenario(scenario))
        runs = [{"seed": r.seed, "fingerprint": r.fingerprint, **summary_dict(summarize(r))}
                for r in reports]
        doc = {"fingerprint": scenario_fingerprint(dump_scenario(scenario, False), tuple(seeds)),
               "policy": scenario.policy.value, "load": cell_load(scenario),
               "involvement": scenario.task.involvement_percent, "runs": runs,
               "aggregate": summary_dict(summarize(
                   [t for r in reports for t in r.sync_times[r.activation_round:]]))}
        (out / SUMMARY_JSON).write_text(dumps_json(doc))
    return reports


def write_sweep_csv(summary: ComparisonSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("load,involvement,mean_sync_fcfs_s,mean_sync_bs_s,savings\n")
        for c in summary.cells:
            fh.write(f"{fmt(c.load)},{fmt(c.involvement)},{fmt(c.mean_sync_fcfs)},"
                     f"{fmt(c.mean_sync_bs)},{fmt(c.savings)}\n")


def plan_document(sc: Scenario) -> dict:
    cohort = select_cohort(build_population(sc.task, sc.pon, sc.seeds[0]),
                           sc.task.involvement_percent)
    info = CohortInfo(tuple(cohort), t_current=0.0, T_round=sc.task.T_round,
                      C=sc.pon.uplink_capacity, h=sc.task.h, H=sc.task.H,
                      model_bits=sc.task.model_bits)
    plan = plan_slice(info, sc.pon)
    verdict = validate_round_threshold(info, plan, sc.pon, sc.task.T_a)
    slots = build_upload_schedule(plan, info, sc.pon)
    return {
        "clients": len(cohort), "t_s": plan.t_s, "t_e": plan.t_e, "tau": plan.tau,
        "B_bps": plan.B, "capped": plan.capped, "T_min": plan.T_min, "T_max": plan.T_max,
        "nabla": plan.nabla, "feasible": verdict.feasible, "slack_s": verdict.slack,
        "straggler_id": verdict.straggler,
        "uploads": [{"client_id": s.client_id, "onu": s.onu, "start": s.start, "end": s.end}
                    for s in slots],
    }


# --------------------------------------------------------------------------
# argument handling


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = parse_seeds(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (key = value, or JSON)")
    common.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    common.add_argument("--seeds", type=_seed_list, help="seed list, e.g. 1-10 or 1,4,7")
    common.add_argument("--rounds", type=int, help="measured rounds after slice activation")
    common.add_argument("--load", type=float, action="append", help="total traffic load (repeatable)")
    common.add_argument("--background", action="store_true",
                        help="read --load as background-only load")
    common.add_argument("--involvement", type=float, action="append",
                        help="percent of clients involved (repeatable)")
    common.add_argument("--policy", choices=[p.value for p in Policy])
    common.add_argument("--fcfs-mode", choices=[cfgmod.ONU_SHARE, cfgmod.POOLED])
    common.add_argument("--coarse", action="store_true", help="1e6-bit background units")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ponslice", description="FL bandwidth slicing over a TDM-PON")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate one policy")
    sub.add_parser("compare", parents=[common], help="paired FCFS vs BS")
    sub.add_parser("sweep", parents=[common], help="FCFS vs BS over a load x involvement grid")
    sub.add_parser("plan", parents=[common], help="print the slice plan without simulating")
    return p


def scenario_from_args(args) -> Scenario:
    sc = parse_config(args.config) if args.config else cfgmod.resolve({})
    over = {"fl.rounds": args.rounds, "fl.fcfs_mode": args.fcfs_mode,
            "policy": Policy(args.policy) if args.policy else None,
            "traffic.coarse": True if args.coarse else None, "output.dir": args.out}
    seeds = list(args.seeds or ()) + list(args.seed or ())
    if args.seeds is not None or args.seed is not None:
        over["seeds"] = tuple(seeds)
    sc = sc.with_overrides(**over)
    if args.involvement and len(args.involvement) == 1:
        sc = sc.with_overrides(**{"fl.involvement": args.involvement[0]})
    if args.load and len(args.load) == 1:
        sc = cell_scenario(sc, args.load[0], None, args.background)
    return sc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.rounds is not None and args.rounds < 1:
        parser.error("--rounds must be >= 1")
    try:
        sc = scenario_from_args(args)
        out = args.out if args.out is not None else sc.output_dir
        if args.command == "plan":
            doc = plan_document(sc)
            text = dumps_json(doc)
            if args.out:
                Path(out).mkdir(parents=True, exist_ok=True)
                (Path(out) / "plan.json").write_text(text)
            sys.stdout.write(text)
            return 0
        if args.command == "run":
            if args.load and len(args.load) > 1 or args.involvement and len(args.involvement) > 1:
                parser.error("run takes a single --load and --involvement")
            reports = run_single(sc, sc.seeds, out, args.jobs)
            for r in reports:
                s = summarize(r)
                print(f"seed {r.seed} {r.policy}: mean sync {s.mean:.6f} s over {s.rounds} rounds, "
                      f"total {s.total:.6f} s")
            return 0
        loads = args.load or [None]
        if args.command == "sweep" and not args.load:
            loads = [0.3, 0.8]
        invs = args.involvement or ([10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
                                    if args.command == "sweep" else [sc.task.involvement_percent])
        summary = run_compare(sc, loads, invs, sc.seeds, out, args.jobs, args.background)
        if args.command == "sweep":
            write_sweep_csv(summary, Path(out) / SWEEP_CSV)
        print("load      involvement  mean_sync_fcfs  mean_sync_bs  savings")
        for c in summary.cells:
            sv = "nan" if math.isnan(c.savings) else f"{c.savings:.4f}"
            print(f"{c.load:<9.4f} {c.involvement:<12.1f} {c.mean_sync_fcfs:<15.6f} "
                  f"{c.mean_sync_bs:<13.6f} {sv}")
        return 0
    except (PonSliceError, ValueError, OSError) as e:
        print(f"ponslice: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
