"""Scenario files.

Flat ``key = value`` lines with dotted sections and ``#`` comments::

    policy = bs
    seeds = 1-10
    traffic.total_load = 0.8
    fl.involvement = 100

A JSON object with the same keys (flat, or nested by section) is accepted
as well. Missing keys take the defaults below. ``traffic.total_load``
is converted to a background load by subtracting the cohort's training load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConsistencyError, ParseError
from .fl_engine import ONU_SHARE, POOLED, FlTaskConfig, Policy
from .pon_model import PonConfig
from .slice_planner import DEFAULT_MODEL_BITS
from .traffic_gen import BackgroundConfig, solve_background_load

COARSE_UNIT_BITS = 1e6


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int(s) -> int:
    if isinstance(s, bool):
        raise ValueError("boolean where integer expected")
    f = float(s)
    if f != int(f):
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


def _distance(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(x) for x in s)
    parts = [p for p in str(s).split(",") if p.strip()]
    return float(parts[0]) if len(parts) == 1 else tuple(float(p) for p in parts)


def parse_seeds(s) -> tuple[int, ...]:
    """``"1,3,5-8"`` -> ``(1, 3, 5, 6, 7, 8)``."""
    if isinstance(s, (list, tuple)):
        return tuple(_int(x) for x in s)
    if isinstance(s, int):
        return (s,)
    out = []
    for part in str(s).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else (part, None)
            lo, hi = _int(a), _int(b)
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(_int(part))
    return tuple(out)


def _mode(s) -> str:
    s = str(s).strip()
    if s not in (ONU_SHARE, POOLED):
        raise ValueError(f"fcfs_mode must be {ONU_SHARE} or {POOLED}")
    return s


# key -> (converter, default)
SCHEMA = {
    "policy": (lambda s: Policy(str(s).strip().lower()), Policy.BS),
    "seeds": (parse_seeds, (1,)),
    "output.dir": (str, "out"),
    "pon.num_onus": (_int, 128),
    "pon.uplink_capacity": (float, 1e10),
    "pon.downlink_capacity": (float, 1e10),
    "pon.distance_km": (_distance, 20.0),
    "pon.prop_delay_per_km": (float, 5e-6),
    "pon.polling_cycle": (float, 1e-3),
    "pon.guard_time": (float, 0.0),
    "pon.downlink_reserved_fraction": (float, 1.0),
    "traffic.total_load": (float, None),
    "traffic.background_load": (float, None),
    "traffic.unit_bits": (float, 12000.0),
    "traffic.coarse": (_bool, False),
    "traffic.coarse_unit_bits": (float, COARSE_UNIT_BITS),
    "fl.rounds": (_int, 10),
    "fl.round_threshold": (float, 6.0),
    "fl.model_bits": (float, DEFAULT_MODEL_BITS),
    "fl.aggregation_time": (float, 0.0),
    "fl.involvement": (float, 100.0),
    "fl.compute_min": (float, 1.0),
    "fl.compute_max": (float, 5.0),
    "fl.compute_rule": (str, "linear"),
    "fl.compute_jitter": (float, 0.0),
    "fl.clients_per_onu": (_int, 1),
    "fl.activation_offset": (_int, 1),
    "fl.fcfs_mode": (_mode, ONU_SHARE),
    "fl.strict": (_bool, False),
}
ALIASES = {"seed": "seeds"}
_LOAD_KEYS = ("traffic.total_load", "traffic.background_load")


@dataclass(frozen=True)
class Scenario:
    pon: PonConfig
    background: BackgroundConfig
    task: FlTaskConfig
    seeds: tuple[int, ...] = (1,)
    total_load: float | None = None
    coarse: bool = False
    output_dir: str = "out"
    values: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def policy(self) -> Policy:
        return self.task.policy

    @property
    def rounds(self) -> int:
        return self.task.H - self.task.h

    def training_load(self) -> float:
        return training_load(self.pon, self.task)

    def with_overrides(self, **overrides) -> "Scenario":
        """Re-resolve with some keys replaced (CLI flags, sweep cells)."""
        values = dict(self.values)
        for k, v in overrides.items():
            if v is None:
                continue
            if k in _LOAD_KEYS:
                for other in _LOAD_KEYS:
                    values.pop(other, None)
            values[k] = v
        return resolve(values)


def cohort_size(pon: PonConfig, task: FlTaskConfig) -> int:
    n = pon.num_onus * task.clients_per_onu
    return max(1, math.floor(task.involvement_percent * n / 100 + 1e-9))


def training_load(pon: PonConfig, task: FlTaskConfig) -> float:
    return cohort_size(pon, task) * task.model_bits / (task.T_round * pon.uplink_capacity)


def resolve(values: dict) -> Scenario:
    """Build a Scenario from already-converted values (missing keys -> defaults)."""
    v = {k: d for k, (_, d) in SCHEMA.items()}
    v.update(values)
    try:
        pon = PonConfig(num_onus=v["pon.num_onus"], uplink_capacity=v["pon.uplink_capacity"],
                        downlink_capacity=v["pon.downlink_capacity"],
                        distance_km=v["pon.distance_km"],
                        prop_delay_per_km=v["pon.prop_delay_per_km"],
                        polling_cycle=v["pon.polling_cycle"], guard_time=v["pon.guard_time"],
                        downlink_reserved_fraction=v["pon.downlink_reserved_fraction"])
        h = v["fl.activation_offset"]
        task = FlTaskConfig(H=v["fl.rounds"] + h, T_round=v["fl.round_threshold"],
                            model_bits=v["fl.model_bits"], T_a=v["fl.aggregation_time"],
                            involvement_percent=v["fl.involvement"],
                            compute_time_range=(v["fl.compute_min"], v["fl.compute_max"]),
                            compute_rule=v["fl.compute_rule"],
                            compute_jitter=v["fl.compute_jitter"],
                            clients_per_onu=v["fl.clients_per_onu"], h=h, policy=v["policy"],
                            fcfs_mode=v["fl.fcfs_mode"], strict=v["fl.strict"])
    except ValueError as e:
        raise ConsistencyError(str(e)) from None
    total, bg = v["traffic.total_load"], v["traffic.background_load"]
    if total is not None and bg is not None:
        raise ConsistencyError("set traffic.total_load or traffic.background_load, not both")
    if total is not None:
        rho = solve_background_load(total, cohort_size(pon, task) * task.model_bits,
                                    task.T_round, pon.uplink_capacity)
    else:
        rho = bg or 0.0
    seeds = v["seeds"]
    if not seeds:
        raise ConsistencyError("seed list is empty")
    try:
        background = BackgroundConfig(
            background_load=rho, unit_bits=v["traffic.unit_bits"],
            coarse_unit_bits=v["traffic.coarse_unit_bits"] if v["traffic.coarse"] else None,
            seed=seeds[0])
    except ValueError as e:
        raise ConsistencyError(str(e)) from None
    return Scenario(pon, background, task, tuple(seeds), total, v["traffic.coarse"],
                    v["output.dir"], values={k: x for k, x in values.items()})


def _convert(key: str, raw, line: int | None):
    key = ALIASES.get(key, key)
    if key not in SCHEMA:
        raise ParseError("unknown key", key=key, line=line)
    try:
        return key, SCHEMA[key][0](raw)
    except (ValueError, TypeError) as e:
        raise ParseError(f"bad value {raw!r}: {e}", key=key, line=line) from None


def _flatten(obj: dict, prefix: str = "") -> dict:
    out = {}
    for k, val in obj.items():
        name = f"{prefix}{k}"
        if isinstance(val, dict):
            out.update(_flatten(val, name + "."))
        else:
            out[name] = val
    return out


def parse_text(text: str) -> Scenario:
    values = {}
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", line=e.lineno) from None
        for k, raw in _flatten(data).items():
            key, val = _convert(k, raw, None)
            values[key] = val
        return resolve(values)
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=n)
        k, raw = (p.strip() for p in line.split("=", 1))
        key, val = _convert(k, raw, n)
        if key in values:
            raise ParseError("duplicate key", key=key, line=n)
        values[key] = val
    return resolve(values)


def parse_config(path) -> Scenario:
    return parse_text(Path(path).read_text("utf-8"))


def _fmt_value(x) -> str:
    if isinstance(x, Policy):
        return x.value
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, tuple):
        return ",".join(_fmt_value(e) for e in x)
    return str(x)


def dump_scenario(sc: Scenario, include_output: bool = True) -> str:
    """Fully resolved scenario as a config file; ``parse_text`` reads it back.

    ``include_output=False`` leaves out the output directory, which is what
    scenario fingerprints hash.
    """
    p, t, b = sc.pon, sc.task, sc.background
    rows = [("policy", t.policy), ("seeds", sc.seeds)]
    if include_output:
        rows.append(("output.dir", sc.output_dir))
    rows += [
        ("pon.num_onus", p.num_onus), ("pon.uplink_capacity", p.uplink_capacity),
        ("pon.downlink_capacity", p.downlink_capacity), ("pon.distance_km", p.distance_km),
        ("pon.prop_delay_per_km", p.prop_delay_per_km), ("pon.polling_cycle", p.polling_cycle),
        ("pon.guard_time", p.guard_time),
        ("pon.downlink_reserved_fraction", p.downlink_reserved_fraction),
    ]
    if sc.total_load is not None:
        rows.append(("traffic.total_load", sc.total_load))
    else:
        rows.append(("traffic.background_load", b.background_load))
    rows += [
        ("traffic.unit_bits", b.unit_bits), ("traffic.coarse", sc.coarse),
        ("traffic.coarse_unit_bits", sc.values.get("traffic.coarse_unit_bits", COARSE_UNIT_BITS)),
        ("fl.rounds", t.H - t.h), ("fl.round_threshold", t.T_round),
        ("fl.model_bits", t.model_bits), ("fl.aggregation_time", t.T_a),
        ("fl.involvement", t.involvement_percent), ("fl.compute_min", t.compute_time_range[0]),
        ("fl.compute_max", t.compute_time_range[1]), ("fl.compute_rule", t.compute_rule),
        ("fl.compute_jitter", t.compute_jitter), ("fl.clients_per_onu", t.clients_per_onu),
        ("fl.activation_offset", t.h), ("fl.fcfs_mode", t.fcfs_mode), ("fl.strict", t.strict),
    ]
    return "".join(f"{k} = {_fmt_value(v)}\n" for k, v in rows)
