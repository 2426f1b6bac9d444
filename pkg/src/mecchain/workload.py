"""Per-slot user request generation.

Each slot a truncated Poisson number of users submits one request each with a
uniformly distributed package size. The slot's CPU-cycle demand and block size
follow from those draws.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class DemandFormula(str, enum.Enum):
    """How the per-slot CPU demand is assembled from request sizes.

    ``AS_WRITTEN`` multiplies the summed sizes by the request count once more,
    ``SUM_ONLY`` uses ``kappa_sp * sum(sizes)``.
    """

    AS_WRITTEN = "AS_WRITTEN"
    SUM_ONLY = "SUM_ONLY"


@dataclass(frozen=True)
class WorkloadConfig:
    lambda_bar: float = 20.0
    size_min: int = 1_000
    size_max: int = 10_000
    kappa_sp: float = 330.0
    ell_c: int = 8
    ell_h: int = 80
    arrival_cap: int | None = None
    slot_duration: float = 1e-3
    demand_formula: DemandFormula = DemandFormula.SUM_ONLY

    def __post_init__(self):
        if self.arrival_cap is None:
            cap = math.ceil(self.lambda_bar + 5.0 * math.sqrt(self.lambda_bar))
            object.__setattr__(self, "arrival_cap", cap)
        object.__setattr__(self, "demand_formula", DemandFormula(self.demand_formula))
        if self.lambda_bar <= 0:
            raise ValueError("lambda_bar must be positive")
        if not 0 < self.size_min <= self.size_max:
            raise ValueError("need 0 < size_min <= size_max")
        if self.kappa_sp <= 0 or self.ell_c <= 0 or self.ell_h <= 0 or self.slot_duration <= 0:
            raise ValueError("kappa_sp, ell_c, ell_h and slot_duration must be positive")
        if self.arrival_cap < 0:
            raise ValueError("arrival_cap must be non-negative")

    @property
    def mean_block_size(self) -> float:
        return self.ell_h + self.ell_c * self.lambda_bar

    @property
    def mean_request_size(self) -> float:
        return 0.5 * (self.size_min + self.size_max)

    @property
    def max_block_size(self) -> int:
        return block_size(self, self.arrival_cap)


@dataclass(frozen=True)
class SlotDemand:
    slot: int
    num_requests: int
    request_sizes: tuple[int, ...] = field(repr=False)
    f_r: float
    block_size: int

    def __post_init__(self):
        assert self.num_requests == len(self.request_sizes)


def block_size(cfg: WorkloadConfig, num_requests: int) -> int:
    """Header plus ``ell_c`` bytes per request record."""
    return cfg.ell_h + cfg.ell_c * num_requests


def cpu_demand(cfg: WorkloadConfig, sizes) -> float:
    total = float(sum(sizes))
    if cfg.demand_formula is DemandFormula.AS_WRITTEN:
        return cfg.kappa_sp * len(sizes) * total
    return cfg.kappa_sp * total


def draw_slot_demand(cfg: WorkloadConfig, rng: np.random.Generator, slot: int = 0) -> SlotDemand:
    n = min(int(rng.poisson(cfg.lambda_bar)), cfg.arrival_cap)
    sizes = tuple(int(s) for s in rng.integers(cfg.size_min, cfg.size_max + 1, size=n))
    return SlotDemand(
        slot=slot,
        num_requests=n,
        request_sizes=sizes,
        f_r=cpu_demand(cfg, sizes),
        block_size=block_size(cfg, n),
    )


def empty_demand(cfg: WorkloadConfig, slot: int = 0) -> SlotDemand:
    return SlotDemand(slot=slot, num_requests=0, request_sizes=(), f_r=0.0, block_size=cfg.ell_h)


def max_demand(cfg: WorkloadConfig) -> float:
    """Largest CPU demand any slot can produce under the arrival cap."""
    return cpu_demand(cfg, [cfg.size_max] * cfg.arrival_cap)
