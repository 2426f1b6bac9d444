"""Training and evaluation loops for the primal-dual agent.

The environment only needs ``reset()``, ``observe()`` returning the 2-feature
state, and ``advance(u)`` returning an outcome with ``reward``, ``cost``,
``dos`` and ``tau_total`` attributes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import Agent, Mode, OUNoise, ReplayBuffer, save_checkpoint

logger = logging.getLogger(__name__)

LOG_HEADER = ("episode", "mean_reward", "mean_cost", "discounted_cost", "lambda_L", "mean_latency",
              "probe_cost")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, checkpoint=None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class EpisodeLog:
    episode: int
    mean_reward: float
    mean_cost: float
    discounted_cost: float
    lambda_L: float
    mean_latency: float
    probe_cost: float = math.nan  # greedy-policy discounted cost after the episode

    def row(self):
        return (self.episode, self.mean_reward, self.mean_cost, self.discounted_cost,
                self.lambda_L, self.mean_latency, self.probe_cost)


@dataclass
class TrainingLog:
    episodes: list
    updates: int = 0
    dual_checks: int = 0
    min_lambda: float = math.inf

    def __len__(self):
        return len(self.episodes)

    def rows(self):
        return [e.row() for e in self.episodes]

    def first_satisfying(self, e_max: float, patience: int = 1) -> int | None:
        """1-based episode from which ``patience`` consecutive episodes meet the bound.

        Judged on the greedy probe when one ran, else on the exploring episode itself.
        """
        run = 0
        for e in self.episodes:
            cost = e.discounted_cost if math.isnan(e.probe_cost) else e.probe_cost
            run = run + 1 if cost <= e_max else 0
            if run >= patience:
                return e.episode - patience + 1
        return None


def _sigma_at(agent: Agent, episode: int, episodes: int) -> float:
    c = agent.cfg
    if episodes <= 1:
        return c.ou_sigma
    frac = episode / (episodes - 1)
    return c.ou_sigma + frac * (c.ou_sigma_final - c.ou_sigma)


def train(env, agent: Agent, episodes: int, steps: int, mode: Mode = Mode.CONSTRAINED,
          buffer: ReplayBuffer | None = None, checkpoint_dir=None, warmup: int | None = None,
          probe_env=None, probe_slots: int = 0) -> TrainingLog:
    """Run the primal-dual DDPG loop for ``episodes`` x ``steps`` slots.

    One gradient update follows every environment step once the buffer holds
    a mini-batch (or ``warmup`` transitions, if larger). With ``probe_env``
    each episode ends with a ``probe_slots``-slot greedy rollout on it.
    """
    mode = Mode(mode)
    c = agent.cfg
    buffer = buffer if buffer is not None else ReplayBuffer(c.buffer_capacity, agent.rng)
    noise = OUNoise(c.ou_theta, c.ou_sigma, c.ou_mu, agent.rng)
    warmup = max(c.batch_size, warmup or 0)
    log = TrainingLog(episodes=[])
    gamma_c = c.gamma_c
    for ep in range(episodes):
        noise.sigma = _sigma_at(agent, ep, episodes)
        noise.reset()
        env.reset()
        s = env.observe()
        rewards, costs, lat = [], [], []
        for _ in range(steps):
            u = agent.act(s, noise, explore=True)
            out = env.advance(u)
            s_next = env.observe()
            buffer.store(s, u, out.reward, out.cost, s_next)
            rewards.append(out.reward)
            costs.append(out.cost)
            if not out.dos:
                lat.append(-out.reward)
            s = s_next
            if len(buffer) >= warmup:
                try:
                    agent.update(buffer.sample(c.batch_size), mode)
                except FloatingPointError as exc:
                    raise _diverged(agent, checkpoint_dir, str(exc)) from None
                log.updates += 1
                if agent.lambda_L < 0.0:
                    raise AssertionError("dual variable went negative")
                log.dual_checks += 1
                log.min_lambda = min(log.min_lambda, agent.lambda_L)
        if not agent.all_finite():
            raise _diverged(agent, checkpoint_dir, f"non-finite parameters after episode {ep + 1}")
        mean_cost = float(np.mean(costs)) if costs else 0.0
        entry = EpisodeLog(
            episode=ep + 1,
            mean_reward=float(np.mean(rewards)) if rewards else 0.0,
            mean_cost=mean_cost,
            discounted_cost=mean_cost / (1.0 - gamma_c),
            lambda_L=agent.lambda_L,
            mean_latency=float(np.mean(lat)) if lat else math.nan,
        )
        if probe_env is not None and probe_slots > 0:
            entry.probe_cost = evaluate(probe_env, agent, probe_slots, gamma_c).discounted_cost
        log.episodes.append(entry)
        logger.info("episode %d: reward=%.4f cost=%.4f C=%.3f lambda=%.4f", entry.episode,
                    entry.mean_reward, entry.mean_cost, entry.discounted_cost, entry.lambda_L)
    return log


def _diverged(agent, checkpoint_dir, msg):
    path = None
    if checkpoint_dir is not None:
        try:
            path = save_checkpoint(agent, Path(checkpoint_dir) / "diverged.json")
        except (TypeError, ValueError, OSError):
            logger.exception("could not dump checkpoint")
    return TrainingDiverged(msg, path)


@dataclass
class Evaluation:
    slots: int
    mean_cost: float
    discounted_cost: float
    mean_latency: float  # normalised, over served slots
    mean_latency_slots: float
    served: int


def evaluate(env, agent: Agent, n_slots: int = 2000, gamma_c: float | None = None) -> Evaluation:
    """Greedy rollout of the deterministic policy."""
    gamma_c = agent.cfg.gamma_c if gamma_c is None else gamma_c
    env.reset()
    costs, norm, slots = [], [], []
    for _ in range(n_slots):
        out = env.advance(agent.act(env.observe(), explore=False))
        costs.append(out.cost)
        if not out.dos:
            norm.append(-out.reward)
            slots.append(out.tau_total)
    mean_cost = float(np.mean(costs))
    return Evaluation(
        slots=n_slots,
        mean_cost=mean_cost,
        discounted_cost=mean_cost / (1.0 - gamma_c),
        mean_latency=float(np.mean(norm)) if norm else math.nan,
        mean_latency_slots=float(np.mean(slots)) if slots else math.nan,
        served=len(norm),
    )
