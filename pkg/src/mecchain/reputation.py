"""Base-station reputation, committee election and miner selection.

Reputations are driven by binary user feedback (0 = served, 1 = denied)
through a Bayesian posterior on whether the BS actually served its slot,
blended with a discounted average of the BS's own reputation history.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Discount(str, enum.Enum):
    EXP = "EXP"  # e^(-k)
    HALF = "HALF"  # (1/2)^k
    INV = "INV"  # 1/k

    def weight(self, k: int) -> float:
        if self is Discount.EXP:
            return math.exp(-k)
        if self is Discount.HALF:
            return 0.5**k
        return 1.0 / k


class HistoryNorm(str, enum.Enum):
    """Normalisation of the historical term.

    ``LITERAL`` divides the discounted sum by the window length, which makes a
    perfectly behaved BS settle well below 1. ``NORMALIZED`` divides by the sum
    of the discount weights so the history term is a weighted mean.
    """

    LITERAL = "LITERAL"
    NORMALIZED = "NORMALIZED"


class MinerPolicy(str, enum.Enum):
    RPOS_RANDOM = "RPOS_RANDOM"
    POS_MAX_STAKE = "POS_MAX_STAKE"


class Attacker(str, enum.Enum):
    ARGMAX_STAKE = "ARGMAX_STAKE"
    UNIFORM_COMMITTEE = "UNIFORM_COMMITTEE"


class NoFeedbackError(ValueError):
    pass


class EmptyCommitteeError(ValueError):
    pass


@dataclass(frozen=True)
class ReputationConfig:
    prior_served: float = 0.8
    truth_likelihood: float = 0.9
    weight_inference: float = 0.2
    history_window: int = 5
    discount: Discount = Discount.EXP
    eta: float = 1.0
    history_norm: HistoryNorm = HistoryNorm.NORMALIZED

    def __post_init__(self):
        object.__setattr__(self, "discount", Discount(self.discount))
        object.__setattr__(self, "history_norm", HistoryNorm(self.history_norm))
        for name in ("prior_served", "truth_likelihood", "weight_inference"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.history_window < 1:
            raise ValueError("history_window must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass
class BaseStationProfile:
    id: int
    history_window: int = 5
    is_malicious: bool = False
    denial_prob: float = 0.0
    reputation_history: deque = field(default=None, repr=False)

    def __post_init__(self):
        if self.reputation_history is None:
            self.reputation_history = deque([1.0], maxlen=max(self.history_window, 1))
        elif not isinstance(self.reputation_history, deque):
            self.reputation_history = deque(self.reputation_history, maxlen=max(self.history_window, 1))
        if not self.reputation_history:
            raise ValueError("profile needs at least one historical reputation")

    @property
    def reputation(self) -> float:
        return self.reputation_history[-1]


@dataclass(frozen=True)
class FeedbackBatch:
    bs_id: int
    entries: tuple[int, ...]
    slot: int = 0

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class CommitteeSelection:
    slot: int
    threshold: float
    committee: tuple[int, ...]
    reputations: dict = field(repr=False)
    miner: int | None = None

    @property
    def validators(self) -> tuple[int, ...]:
        return tuple(i for i in self.committee if i != self.miner)

    @property
    def n_validators(self) -> int:
        return len(self.committee) - 1


def make_profiles(n_bs: int, cfg: ReputationConfig, malicious_ids: Iterable[int] = (),
                  denial_prob: float = 0.0) -> list[BaseStationProfile]:
    """All BSs start honest-looking with reputation 1."""
    bad = set(malicious_ids)
    if any(i < 0 or i >= n_bs for i in bad):
        raise ValueError("malicious id out of range")
    return [
        BaseStationProfile(id=i, history_window=cfg.history_window, is_malicious=i in bad,
                           denial_prob=denial_prob if i in bad else 0.0)
        for i in range(n_bs)
    ]


def generate_feedback(served: bool, num_users: int, malicious_fraction: float,
                      rng: np.random.Generator, truth_likelihood: float = 0.9,
                      bs_id: int = 0, slot: int = 0) -> FeedbackBatch:
    """Simulate one slot of user feedback about a BS.

    Honest users report the true bit with probability ``truth_likelihood``;
    malicious users always report the inverted bit.
    """
    if not 0.0 <= malicious_fraction <= 1.0:
        raise ValueError("malicious_fraction must lie in [0, 1]")
    if num_users <= 0:
        return FeedbackBatch(bs_id=bs_id, entries=(), slot=slot)
    true_bit = 0 if served else 1
    malicious = rng.random(num_users) < malicious_fraction
    flip = rng.random(num_users) >= truth_likelihood
    honest_bits = np.where(flip, 1 - true_bit, true_bit)
    bits = np.where(malicious, 1 - true_bit, honest_bits)
    return FeedbackBatch(bs_id=bs_id, entries=tuple(int(b) for b in bits), slot=slot)


def dos_inference(batch: FeedbackBatch | Sequence[int], cfg: ReputationConfig) -> float:
    """Posterior probability that the BS served its requests given the feedback."""
    entries = batch.entries if isinstance(batch, FeedbackBatch) else tuple(batch)
    if len(entries) == 0:
        raise NoFeedbackError("no-feedback")
    n1 = sum(entries)
    n0 = len(entries) - n1
    p, q = cfg.truth_likelihood, 1.0 - cfg.truth_likelihood
    with np.errstate(divide="ignore"):
        log_p, log_q = np.log(p), np.log(q)
        log_prior, log_anti = np.log(cfg.prior_served), np.log(1.0 - cfg.prior_served)

    def _w(count, log_lik):
        # 0 * log(0) is a zero contribution, not nan
        return count * log_lik if count else 0.0

    log_served = log_prior + _w(n0, log_p) + _w(n1, log_q)
    log_denied = log_anti + _w(n0, log_q) + _w(n1, log_p)
    if log_served == -np.inf and log_denied == -np.inf:
        # feedback impossible under both hypotheses; nothing learned
        return cfg.prior_served
    return float(np.exp(log_served - np.logaddexp(log_served, log_denied)))


def historical_reputation(history: Sequence[float], cfg: ReputationConfig) -> float:
    """Discounted influence of the last ``history_window`` reputations.

    ``history`` is ordered oldest to newest; the newest value sits at lag 1.
    """
    recent = list(history)[-cfg.history_window:][::-1]
    weights = [cfg.discount.weight(k) for k in range(1, len(recent) + 1)]
    total = math.fsum(w * x for w, x in zip(weights, recent))
    if cfg.history_norm is HistoryNorm.LITERAL:
        return total / cfg.history_window
    return total / math.fsum(weights)


def update_reputation(profile: BaseStationProfile, batch: FeedbackBatch | None,
                      cfg: ReputationConfig, slot: int = 0) -> float:
    if batch is None or len(batch) == 0:
        value = profile.reputation
    else:
        inference = dos_inference(batch, cfg)
        hist = historical_reputation(profile.reputation_history, cfg)
        value = cfg.weight_inference * inference + (1.0 - cfg.weight_inference) * hist
        value = min(1.0, max(0.0, value))
    profile.reputation_history.append(value)
    return value


def elect_committee(profiles: Sequence[BaseStationProfile], cfg: ReputationConfig,
                    slot: int = 0) -> CommitteeSelection:
    if not profiles:
        raise ValueError("need at least one BS")
    reps = {p.id: p.reputation for p in profiles}
    threshold = cfg.eta * math.fsum(reps.values()) / len(reps)
    # tolerance keeps equal reputations in the committee despite rounding in the mean
    slack = 1e-12 * max(1.0, abs(threshold))
    committee = tuple(sorted(i for i, x in reps.items() if x >= threshold - slack))
    if not committee:
        raise EmptyCommitteeError("empty-committee")
    return CommitteeSelection(slot=slot, threshold=threshold, committee=committee, reputations=reps)


def max_stake_member(selection: CommitteeSelection) -> int:
    """Highest-reputation committee member, lowest id on ties."""
    return min(selection.committee, key=lambda i: (-selection.reputations[i], i))


def select_miner(selection: CommitteeSelection, policy: MinerPolicy,
                 rng: np.random.Generator | None = None) -> CommitteeSelection:
    if not selection.committee:
        raise EmptyCommitteeError("empty-committee")
    policy = MinerPolicy(policy)
    if policy is MinerPolicy.POS_MAX_STAKE:
        miner = max_stake_member(selection)
    else:
        if rng is None:
            raise ValueError("RPOS_RANDOM needs a random source")
        miner = selection.committee[int(rng.integers(len(selection.committee)))]
    return CommitteeSelection(slot=selection.slot, threshold=selection.threshold,
                              committee=selection.committee, reputations=selection.reputations,
                              miner=miner)


def miner_hit_probability(history: Sequence[CommitteeSelection],
                          attacker: Attacker = Attacker.ARGMAX_STAKE,
                          rng: np.random.Generator | None = None) -> float:
    """Fraction of slots in which the attacker's guess names the actual miner."""
    if not history:
        raise ValueError("need at least one slot of history")
    attacker = Attacker(attacker)
    hits = 0
    for sel in history:
        if attacker is Attacker.ARGMAX_STAKE:
            guess = max_stake_member(sel)
        else:
            guess = sel.committee[int(rng.integers(len(sel.committee)))]
        hits += guess == sel.miner
    return hits / len(history)


def reputation_rows(selection: CommitteeSelection, profiles: Sequence[BaseStationProfile]):
    """CSV rows ``slot, bs_id, reputation, committee_flag, miner_flag``."""
    members = set(selection.committee)
    return [
        (selection.slot, p.id, p.reputation, int(p.id in members), int(p.id == selection.miner))
        for p in profiles
    ]
