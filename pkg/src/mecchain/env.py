"""Service-rate allocation environment for the serving (miner) BS.

Each slot the agent picks a service rate for the slot's requests. The rate is
held until the slot's blockchain and service work has finished, so allocations
stack up and shrink the capacity available to later slots. Denying a slot
(rate 0) costs 1; serving it earns the negative normalised latency.

Rates are integer CPU cycles per slot so that capacity bookkeeping is exact.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .ledger import ConsensusCost, transmission_slots
from .workload import SlotDemand, WorkloadConfig, max_demand

logger = logging.getLogger(__name__)

ConsensusProvider = Callable[[int, int], ConsensusCost]


class RhoMode(str, enum.Enum):
    WORK = "WORK"  # remaining work / F, in slots
    LITERAL = "LITERAL"  # sum of remaining slots / F


class CapacityError(AssertionError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    capacity: int
    min_rate: int
    gamma_r: float = 0.95
    gamma_c: float = 0.95
    epsilon_max: float = 0.02
    tau_max: float = 1.0
    T_max: int = 1
    rho_mode: RhoMode = RhoMode.WORK

    def __post_init__(self):
        object.__setattr__(self, "rho_mode", RhoMode(self.rho_mode))
        if not 0 < self.min_rate <= self.capacity:
            raise ValueError("need 0 < min_rate <= capacity")
        if self.tau_max <= 0 or self.T_max < 1:
            raise ValueError("tau_max must be positive and T_max >= 1")
        for g in (self.gamma_r, self.gamma_c):
            if not 0.0 < g < 1.0:
                raise ValueError("discount factors must lie in (0, 1)")

    @property
    def e_max(self) -> float:
        """Bound on the long-term discounted DoS cost."""
        return self.epsilon_max / (1.0 - self.gamma_c)


def derive_env_config(workload: WorkloadConfig, capacity: int, min_rate: int, *, kappa_bc: float,
                      n_bs: int, rate_bps: float, gamma_r: float = 0.95, gamma_c: float = 0.95,
                      epsilon_max: float = 0.02, rho_mode: RhoMode = RhoMode.WORK) -> EnvConfig:
    """Fill in ``T_max`` and ``tau_max`` from the workload bounds.

    The worst blockchain latency is taken at the largest block, the largest
    possible committee and the minimum service rate.
    """
    f_r_max = max_demand(workload)
    T_max = max(1, math.ceil(f_r_max / min_rate))
    l_max = workload.max_block_size
    n_v = n_bs - 1
    hop = transmission_slots(l_max, rate_bps, workload.slot_duration)
    tau_bc_max = kappa_bc * l_max * (2 + n_v) / min_rate + 3 * hop
    tau_max = math.ceil(tau_bc_max + f_r_max / min_rate)
    return EnvConfig(capacity=int(capacity), min_rate=int(min_rate), gamma_r=gamma_r,
                     gamma_c=gamma_c, epsilon_max=epsilon_max, tau_max=float(tau_max),
                     T_max=T_max, rho_mode=rho_mode)


@dataclass(frozen=True)
class AllocationRecord:
    slot_allocated: int
    rate: int
    remaining: int


@dataclass(frozen=True)
class EnvState:
    slot: int
    records: tuple[AllocationRecord, ...]
    available: int

    def compressed(self, cfg: EnvConfig) -> np.ndarray:
        return np.array([self.available / cfg.capacity, compress(self.records, cfg)])


def initial_state(cfg: EnvConfig) -> EnvState:
    return EnvState(slot=0, records=(), available=cfg.capacity)


@dataclass(frozen=True)
class SlotOutcome:
    slot: int
    u: float
    action: int
    available: int
    rho: float
    reward: float
    cost: int
    tau_bc: float | None
    tau_sp: float | None
    tau_total: float | None
    dos: bool
    forced: bool = False

    def trace_row(self):
        """``slot, u, a, f_a, rho, r, c, tau_bc, tau_sp``."""
        return (self.slot, self.u, self.action, self.available, self.rho, self.reward,
                self.cost, self.tau_bc, self.tau_sp)


TRACE_HEADER = ("slot", "u", "a", "f_a", "rho", "r", "c", "tau_bc", "tau_sp")


def map_action(u: float, available: int, min_rate: int, capacity: int) -> int:
    """Map an actor output in [0, 1] onto ``{0} U [min_rate, capacity]``.

    Outputs whose rate would fall below ``min_rate`` deny the slot, as does
    a BS with less than ``min_rate`` left.
    """
    u = min(1.0, max(0.0, float(u)))
    candidate = int(u * capacity)
    if candidate < min_rate or available < min_rate:
        return 0
    return min(candidate, available)


def compress(records: Sequence[AllocationRecord], cfg: EnvConfig) -> float:
    if not records:
        return 0.0
    if cfg.rho_mode is RhoMode.LITERAL:
        tau_min = sum(r.remaining for r in records) / cfg.capacity
    else:
        tau_min = sum(r.remaining * r.rate for r in records) / cfg.capacity
    return min(1.0, max(0.0, tau_min / cfg.tau_max))


def discounted_cost_oracle(costs: Sequence[float], gamma_c: float) -> float:
    return math.fsum(c * gamma_c**k for k, c in enumerate(costs))


@dataclass
class Telemetry:
    reward_clamps: int = 0
    forced_denials: int = 0
    capacity_checks: int = 0


def step(state: EnvState, u: float, demand: SlotDemand, consensus: ConsensusProvider,
         cfg: EnvConfig, rng: np.random.Generator | None = None, denial_prob: float = 0.0,
         telemetry: Telemetry | None = None) -> tuple[EnvState, SlotOutcome]:
    """Advance one slot.

    ``consensus(block_size, rate)`` returns the blockchain cost of mining the
    slot's block when the committee serves at ``rate``. ``denial_prob`` is the
    chance that a malicious miner throws the allocation away.
    """
    a = map_action(u, state.available, cfg.min_rate, cfg.capacity)
    forced = False
    if a > 0 and denial_prob > 0.0:
        if rng.random() < denial_prob:
            a, forced = 0, True
            if telemetry is not None:
                telemetry.forced_denials += 1

    records = list(state.records)
    tau_bc = tau_sp = tau_total = None
    if a == 0:
        reward, cost = 0.0, 1
    else:
        tau_bc = consensus(demand.block_size, a).tau_bc
        tau_sp = demand.f_r / a
        tau_total = tau_bc + tau_sp
        reward = -tau_total / cfg.tau_max
        if reward < -1.0:
            reward = -1.0
            if telemetry is not None:
                telemetry.reward_clamps += 1
            logger.debug("slot %d: latency %.3f exceeds tau_max", state.slot, tau_total)
        cost = 0
        hold = min(max(1, math.ceil(tau_total)), cfg.T_max)
        records.append(AllocationRecord(slot_allocated=state.slot, rate=a, remaining=hold))

    aged = tuple(replace(r, remaining=r.remaining - 1) for r in records if r.remaining > 1)
    used = sum(r.rate for r in aged)
    nxt = EnvState(slot=state.slot + 1, records=aged, available=cfg.capacity - used)
    if nxt.available < 0 or used + nxt.available != cfg.capacity:
        raise CapacityError(f"capacity violated at slot {state.slot}: used={used}")
    if telemetry is not None:
        telemetry.capacity_checks += 1
    assert (a == 0) == (cost == 1) == (reward == 0.0)
    outcome = SlotOutcome(slot=state.slot, u=float(u), action=a, available=state.available,
                          rho=compress(state.records, cfg), reward=reward, cost=cost,
                          tau_bc=tau_bc, tau_sp=tau_sp, tau_total=tau_total, dos=a == 0,
                          forced=forced)
    return nxt, outcome


class MECEnv:
    """Stateful wrapper around :func:`step` for a single serving BS."""

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng()
        self.telemetry = Telemetry()
        self.state = initial_state(cfg)

    def reset(self) -> np.ndarray:
        self.state = initial_state(self.cfg)
        return self.observe()

    def observe(self) -> np.ndarray:
        return self.state.compressed(self.cfg)

    def step(self, u: float, demand: SlotDemand, consensus: ConsensusProvider,
             denial_prob: float = 0.0) -> SlotOutcome:
        self.state, out = step(self.state, u, demand, consensus, self.cfg, self.rng,
                               denial_prob, self.telemetry)
        return out
