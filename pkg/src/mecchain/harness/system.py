"""One slot of the full blockchain-secured MEC loop.

Per slot: draw the users' requests, elect the committee from current
reputations, pick the miner, let the agent's action drive the miner's
allocation, append the block, then feed user feedback back into the miner's
reputation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..env import EnvConfig, MECEnv, SlotOutcome
from ..ledger import Ledger, uniform_consensus_latency
from ..reputation import (CommitteeSelection, MinerPolicy, ReputationConfig, elect_committee,
                          generate_feedback, make_profiles, select_miner, update_reputation)
from ..workload import WorkloadConfig, draw_slot_demand


@dataclass
class SystemSpec:
    workload: WorkloadConfig
    reputation: ReputationConfig
    env: EnvConfig
    n_bs: int = 10
    policy: MinerPolicy = MinerPolicy.RPOS_RANDOM
    malicious_bs_ids: Sequence[int] = ()
    denial_prob: float = 0.0
    malicious_user_fraction: float = 0.0
    kappa_bc: float = 2e3
    rate_bps: float = 1e10
    keep_ledger: bool = False
    keep_history: bool = False


class BCSystem:
    def __init__(self, spec: SystemSpec, seed: int | np.random.SeedSequence = 0):
        self.spec = spec
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        demand_ss, miner_ss, feedback_ss, env_ss = ss.spawn(4)
        self.demand_rng = np.random.default_rng(demand_ss)
        self.miner_rng = np.random.default_rng(miner_ss)
        self.feedback_rng = np.random.default_rng(feedback_ss)
        self.env = MECEnv(spec.env, np.random.default_rng(env_ss))
        self.profiles = make_profiles(spec.n_bs, spec.reputation, spec.malicious_bs_ids,
                                      spec.denial_prob)
        self.ledger = Ledger(spec.workload.ell_h, spec.workload.ell_c) if spec.keep_ledger else None
        self.selections: list[CommitteeSelection] = []
        self.tau_bc: list[float] = []
        self.slot = 0
        self.last_selection: CommitteeSelection | None = None
        self.last_block_size = 0

    def reset(self):
        self.env.reset()

    def observe(self) -> np.ndarray:
        return self.env.observe()

    def advance(self, u: float) -> SlotOutcome:
        spec = self.spec
        demand = draw_slot_demand(spec.workload, self.demand_rng, self.slot)
        sel = elect_committee(self.profiles, spec.reputation, self.slot)
        sel = select_miner(sel, spec.policy, self.miner_rng)
        miner = self.profiles[sel.miner]
        n_v = sel.n_validators

        def consensus(block_size, rate):
            return uniform_consensus_latency(block_size, rate, n_v, spec.rate_bps,
                                             spec.workload.slot_duration, spec.kappa_bc)

        out = self.env.step(u, demand, consensus, miner.denial_prob if miner.is_malicious else 0.0)
        if self.ledger is not None:
            self.ledger.append_block(demand)
        batch = generate_feedback(not out.dos, demand.num_requests, spec.malicious_user_fraction,
                                  self.feedback_rng, spec.reputation.truth_likelihood,
                                  bs_id=miner.id, slot=self.slot)
        for p in self.profiles:
            update_reputation(p, batch if p.id == miner.id else None, spec.reputation, self.slot)
        if out.tau_bc is not None:
            self.tau_bc.append(out.tau_bc)
        if spec.keep_history:
            self.selections.append(sel)
        self.last_selection = sel
        self.last_block_size = demand.block_size
        self.slot += 1
        return out
