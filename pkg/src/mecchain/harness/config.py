"""Scenario configuration and its INI-style file format.

A config file has up to six sections, each optional::

    [scenario]   name, seed, n_bs, n_slots, policy, malicious_bs_ids, denial_prob,
                 malicious_user_fraction, fractions, priors, lambdas, consensus_lambdas, out
    [workload]   WorkloadConfig fields
    [reputation] ReputationConfig fields
    [env]        capacity, min_rate_divisor, kappa_bc, rate_bps, gamma_r, gamma_c,
                 epsilon_max, rho_mode
    [agent]      AgentConfig fields
    [training]   mode, episodes, eval_slots, probe_slots, e_max_list, warm_start, workers

Lists are comma separated; ``none`` clears an optional value.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..drl import AgentConfig, Mode
from ..env import EnvConfig, RhoMode, derive_env_config
from ..reputation import MinerPolicy, ReputationConfig
from ..workload import WorkloadConfig

# Full-scale values; the desk defaults below shrink the load and the CPU budget.
FULL_SCALE = {
    "workload": {"lambda_bar": 1000.0, "size_min": 1000, "size_max": 10_000, "kappa_sp": 330.0,
                 "ell_c": 8},
    "env": {"capacity": 1_600_000_000, "min_rate_divisor": 160, "kappa_bc": 1e6,
            "epsilon_max": 0.02, "gamma_r": 0.95, "gamma_c": 0.95},
    "agent": {"lr_reward_critic": 5e-4, "lr_cost_critic": 5e-4, "lr_actor": 2e-4, "lr_dual": 0.1,
              "batch_size": 512, "soft_rate": 5e-3, "buffer_capacity": 200_000,
              "optimizer": "sgd"},
    "scenario": {"n_bs": 10, "n_slots": 1000},
    "reputation": {"prior_served": 0.8, "eta": 1.0, "weight_inference": 0.2},
}


def _desk_agent() -> AgentConfig:
    return AgentConfig(batch_size=128, optimizer="adam")


@dataclass
class ScenarioConfig:
    name: str = "default"
    seed: int = 1
    n_bs: int = 10
    n_slots: int = 1000
    policy: MinerPolicy = MinerPolicy.RPOS_RANDOM
    malicious_bs_ids: tuple[int, ...] = ()
    denial_prob: float = 0.0
    malicious_user_fraction: float = 0.0
    fractions: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    priors: tuple[float, ...] = (0.5, 0.8, 0.9)
    lambdas: tuple[float, ...] = (20.0, 50.0, 100.0)
    consensus_lambdas: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)
    out: str = "runs"

    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    reputation: ReputationConfig = field(default_factory=ReputationConfig)

    capacity: int = 50_000_000
    min_rate_divisor: int = 160
    kappa_bc: float = 2e3
    rate_bps: float = 1e10
    gamma_r: float = 0.95
    gamma_c: float = 0.95
    epsilon_max: float = 0.02
    rho_mode: RhoMode = RhoMode.WORK

    agent: AgentConfig = field(default_factory=_desk_agent)
    mode: Mode = Mode.CONSTRAINED
    episodes: int = 60
    eval_slots: int = 5000
    probe_slots: int = 2000
    e_max_list: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0, math.inf)
    warm_start: bool = True
    workers: int = 1

    def __post_init__(self):
        self.policy = MinerPolicy(self.policy)
        self.mode = Mode(self.mode)
        self.rho_mode = RhoMode(self.rho_mode)
        self.malicious_bs_ids = tuple(int(i) for i in self.malicious_bs_ids)
        if self.n_bs < 1:
            raise ValueError("n_bs must be >= 1")
        bad = [i for i in self.malicious_bs_ids if not 0 <= i < self.n_bs]
        if bad:
            raise ValueError(f"malicious BS ids {bad} outside 0..{self.n_bs - 1}")
        if not 0.0 <= self.denial_prob <= 1.0:
            raise ValueError("denial_prob must lie in [0, 1]")

    @property
    def min_rate(self) -> int:
        return self.capacity // self.min_rate_divisor

    def env_config(self, epsilon_max: float | None = None) -> EnvConfig:
        return derive_env_config(
            self.workload, self.capacity, self.min_rate, kappa_bc=self.kappa_bc, n_bs=self.n_bs,
            rate_bps=self.rate_bps, gamma_r=self.gamma_r, gamma_c=self.gamma_c,
            epsilon_max=self.epsilon_max if epsilon_max is None else epsilon_max,
            rho_mode=self.rho_mode)

    @property
    def e_max(self) -> float:
        return self.epsilon_max / (1.0 - self.gamma_c)

    def agent_config(self, e_max: float | None = None) -> AgentConfig:
        return dataclasses.replace(self.agent, gamma_r=self.gamma_r, gamma_c=self.gamma_c,
                                   e_max=self.e_max if e_max is None else e_max)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["workload"] = WorkloadConfig(**d.get("workload", {}))
        d["reputation"] = ReputationConfig(**d.get("reputation", {}))
        d["agent"] = AgentConfig(**d.get("agent", {}))
        for k in ("malicious_bs_ids", "fractions", "priors", "lambdas", "consensus_lambdas",
                  "e_max_list"):
            if k in d:
                d[k] = tuple(_num(x) for x in d[k])
        return cls(**d)


def _num(x):
    if isinstance(x, str) and x.lower() in ("inf", "infinity"):
        return math.inf
    return x


def _plain(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def _coerce(text: str, default: Any, name: str):
    text = text.strip()
    if text.lower() == "none":
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(default, enum.Enum):
        return type(default)(text.upper())
    if isinstance(default, tuple):
        elem = type(default[0]) if default else float
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_coerce(p, elem(0), name) for p in parts)
    if isinstance(default, int):
        return int(float(text)) if "e" in text.lower() else int(text)
    if isinstance(default, float):
        return float(text)
    if default is None:
        # only optional ints (arrival_cap) carry a None default
        return int(text)
    return text


def _apply(obj, items, section):
    kinds = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for key, text in items:
        if key not in kinds:
            raise ValueError(f"[{section}] unknown key {key!r}")
        updates[key] = _coerce(text, getattr(obj, key), f"{section}.{key}")
    return dataclasses.replace(obj, **updates)


_SCENARIO_KEYS = {"name", "seed", "n_bs", "n_slots", "policy", "malicious_bs_ids", "denial_prob",
                  "malicious_user_fraction", "fractions", "priors", "lambdas", "consensus_lambdas",
                  "out"}
_ENV_KEYS = {"capacity", "min_rate_divisor", "kappa_bc", "rate_bps", "gamma_r", "gamma_c",
             "epsilon_max", "rho_mode"}
_TRAINING_KEYS = {"mode", "episodes", "eval_slots", "probe_slots", "e_max_list", "warm_start",
                  "workers"}


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    cfg = base or ScenarioConfig()
    flat = {}
    for section, keys in (("scenario", _SCENARIO_KEYS), ("env", _ENV_KEYS),
                          ("training", _TRAINING_KEYS)):
        if not cp.has_section(section):
            continue
        for key, value in cp.items(section):
            if key not in keys:
                raise ValueError(f"[{section}] unknown key {key!r}")
            flat[key] = _coerce(value, getattr(cfg, key), f"{section}.{key}")
    nested = {}
    for section, attr in (("workload", "workload"), ("reputation", "reputation"), ("agent", "agent")):
        if cp.has_section(section):
            nested[attr] = _apply(getattr(cfg, attr), cp.items(section), section)
    unknown = set(cp.sections()) - {"scenario", "env", "training", "workload", "reputation", "agent"}
    if unknown:
        raise ValueError(f"unknown sections: {sorted(unknown)}")
    return dataclasses.replace(cfg, **flat, **nested)


def load_config(path: str | Path | None, **overrides) -> ScenarioConfig:
    cfg = ScenarioConfig()
    if path is not None:
        cfg = parse_config(Path(path).read_text(), cfg)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def full_scale_config() -> ScenarioConfig:
    """Full-scale parameter set, for reference runs (slow)."""
    f = FULL_SCALE
    return dataclasses.replace(
        ScenarioConfig(),
        workload=WorkloadConfig(**f["workload"]),
        reputation=ReputationConfig(**f["reputation"]),
        agent=AgentConfig(**f["agent"]),
        **f["env"], **f["scenario"])
