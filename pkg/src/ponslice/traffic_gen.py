"""Seeded Poisson background traffic.

The whole PON sees one Poisson stream of fixed-size units with rate
``rho_bg * C / unit_bits``; each arrival picks its ONU uniformly (or by
``onu_weights``). Arrival times are taken to be at the OLT scheduler
already, since shifting a Poisson stream by a constant leaves it Poisson.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError
from .pon_model import PonConfig

UPLINK, DOWNLINK = 0, 1
_BLOCK = 16384


@dataclass(frozen=True)
class BackgroundConfig:
    background_load: float = 0.0
    unit_bits: float = 12000.0
    coarse_unit_bits: float | None = None
    seed: int = 0
    onu_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0 <= self.background_load < 1:
            raise ValueError(f"background_load must be in [0, 1), got {self.background_load}")
        if self.unit_bits <= 0 or (self.coarse_unit_bits is not None and self.coarse_unit_bits <= 0):
            raise ValueError("unit sizes must be > 0")

    @property
    def effective_unit_bits(self) -> float:
        return self.coarse_unit_bits if self.coarse_unit_bits is not None else self.unit_bits

    def arrival_rate(self, capacity: float) -> float:
        return self.background_load * capacity / self.effective_unit_bits


def make_rng(seed: int, stream: int = UPLINK) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**64 - 1), stream])


def sample_interarrival(cfg: BackgroundConfig, rng: np.random.Generator,
                        capacity: float = 1e10) -> float:
    """One exponential interarrival; ``inf`` when the load is zero (no arrivals ever)."""
    lam = cfg.arrival_rate(capacity)
    if lam <= 0:
        return math.inf
    return float(rng.exponential(1.0 / lam))


def solve_background_load(total_load: float, training_bits_per_round: float,
                          round_threshold: float, capacity: float) -> float:
    """Background share of a stated total load.

    Training contributes ``bits per round / (T_round * C)``; the remainder is
    background.
    """
    training = training_bits_per_round / (round_threshold * capacity)
    rho = total_load - training
    if rho < 0:
        raise ConsistencyError(
            f"total load {total_load:g} is below the training load {training:.4f}")
    if rho >= 1:
        raise ConsistencyError(f"background load {rho:g} must stay below 1")
    return rho


class BackgroundSource:
    """Lazily extended background arrival stream for one link direction.

    Draws happen in fixed-size blocks, so the stream depends only on
    ``(seed, stream, cfg)`` and not on how far or how often it is extended.
    Arrivals before ``cursor`` have already been served.
    """

    def __init__(self, cfg: BackgroundConfig, pon: PonConfig, stream: int = UPLINK,
                 capacity: float | None = None):
        if capacity is None:
            capacity = pon.uplink_capacity if stream == UPLINK else pon.downlink_capacity
        self.cfg = cfg
        self.num_onus = pon.num_onus
        self.unit_bits = cfg.effective_unit_bits
        self.rate = cfg.arrival_rate(capacity)
        self._rng = make_rng(cfg.seed, stream)
        self._p = None
        if cfg.onu_weights is not None:
            w = np.asarray(cfg.onu_weights, dtype=float)
            if w.size != pon.num_onus or w.min() < 0 or w.sum() <= 0:
                raise ValueError("onu_weights must be num_onus nonnegative weights")
            self._p = w / w.sum()
        self.times = np.empty(0)
        self.onus = np.empty(0, dtype=np.int64)
        self._last = 0.0 if self.rate > 0 else math.inf
        self.cursor = 0

    @property
    def horizon(self) -> float:
        """Every arrival up to this time has been drawn."""
        return self._last

    def ensure(self, t: float) -> None:
        new_t, new_o = [], []
        last = self._last
        while last < t:
            gaps = self._rng.exponential(1.0 / self.rate, _BLOCK)
            if self._p is None:
                onus = self._rng.integers(0, self.num_onus, _BLOCK)
            else:
                onus = self._rng.choice(self.num_onus, _BLOCK, p=self._p)
            times = last + np.cumsum(gaps)
            new_t.append(times)
            new_o.append(onus)
            last = float(times[-1])
        if new_t:
            self.times = np.concatenate([self.times, *new_t])
            self.onus = np.concatenate([self.onus, *new_o])
            self._last = last

    def pending_before(self, t: float):
        """Unserved arrivals with time < t as ``(times, onus)`` views."""
        self.ensure(t)
        j = int(np.searchsorted(self.times, t, side="left"))
        return self.times[self.cursor:j], self.onus[self.cursor:j]

    def consume_before(self, t: float) -> None:
        self.ensure(t)
        self.cursor = max(self.cursor, int(np.searchsorted(self.times, t, side="left")))
        if self.cursor > 1 << 20:
            self.times = self.times[self.cursor:].copy()
            self.onus = self.onus[self.cursor:].copy()
            self.cursor = 0


def generate_background(cfg: BackgroundConfig, pon: PonConfig, horizon: float,
                        stream: int = UPLINK):
    """All background arrivals in ``[0, horizon)`` as ``(times, onus, bits)`` arrays."""
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    src = BackgroundSource(cfg, pon, stream)
    times, onus = src.pending_before(horizon)
    return times.copy(), onus.copy(), np.full(times.size, src.unit_bits)
