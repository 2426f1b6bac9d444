"""Primal-dual DDPG agent: actor, reward and cost critics, targets, dual variable."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nets import DenseNet, OutputActivation, make_optimizer

CHECKPOINT_VERSION = 1
STATE_DIM = 2


class Mode(str, enum.Enum):
    CONSTRAINED = "CONSTRAINED"
    MIN_LATENCY = "MIN_LATENCY"
    MIN_DOS = "MIN_DOS"
    WEIGHTED_SUM = "WEIGHTED_SUM"


class CheckpointError(ValueError):
    pass


@dataclass
class AgentConfig:
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)
    lr_reward_critic: float = 5e-4
    lr_cost_critic: float = 5e-4
    lr_actor: float = 2e-4
    lr_dual: float = 0.1
    soft_rate: float = 5e-3
    gamma_r: float = 0.95
    gamma_c: float = 0.95
    e_max: float = 0.4
    batch_size: int = 512
    buffer_capacity: int = 200_000
    optimizer: str = "sgd"
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_mu: float = 0.0
    ou_sigma_final: float = 0.02
    lambda_init: float = 0.0
    weight: float = 0.5  # reward weight for WEIGHTED_SUM

    def __post_init__(self):
        self.actor_hidden = tuple(int(w) for w in self.actor_hidden)
        self.critic_hidden = tuple(int(w) for w in self.critic_hidden)


class OUNoise:
    """Ornstein-Uhlenbeck exploration noise, one scalar channel."""

    def __init__(self, theta: float = 0.15, sigma: float = 0.2, mu: float = 0.0,
                 rng: np.random.Generator | None = None, x0: float | None = None):
        self.theta, self.sigma, self.mu = theta, sigma, mu
        self.rng = rng if rng is not None else np.random.default_rng()
        self.x = mu if x0 is None else x0

    def reset(self):
        self.x = self.mu

    def sample(self) -> float:
        gauss = self.rng.standard_normal() if self.sigma else 0.0
        self.x = self.x + self.theta * (self.mu - self.x) + self.sigma * gauss
        return self.x


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    s_next: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    def __init__(self, capacity: int, rng: np.random.Generator | None = None):
        self.capacity = int(capacity)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.s = np.zeros((self.capacity, STATE_DIM))
        self.a = np.zeros(self.capacity)
        self.r = np.zeros(self.capacity)
        self.c = np.zeros(self.capacity)
        self.s_next = np.zeros((self.capacity, STATE_DIM))
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def store(self, s, a, r, c, s_next):
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(s_next)) and math.isfinite(a)
                and math.isfinite(r)):
            raise ValueError("non-finite transition")
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.c[i], self.s_next[i] = s, a, r, c, s_next
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, m: int) -> Batch:
        if m > self.size:
            raise ValueError(f"cannot sample {m} from {self.size} transitions")
        idx = self.rng.integers(0, self.size, size=m)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.c[idx], self.s_next[idx])


def _critic_input(s, a):
    return np.hstack([np.atleast_2d(s), np.reshape(a, (-1, 1))])


def critic_loss_and_grad(critic: DenseNet, s, a, y):
    """Mean squared TD error and its gradient w.r.t. the critic parameters."""
    q, cache = critic.forward(_critic_input(s, a))
    err = q[:, 0] - y
    m = len(y)
    loss = float(np.mean(err**2))
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite critic loss {loss}")
    grads, _ = critic.backward(cache, (2.0 / m) * err[:, None])
    return loss, grads


def objective_weights(mode: Mode, lam: float, weight: float = 0.5) -> tuple[float, float]:
    """Coefficients ``(w_r, w_c)`` of the actor objective ``w_r Q_R - w_c Q_C``."""
    mode = Mode(mode)
    if mode is Mode.CONSTRAINED:
        return 1.0, lam
    if mode is Mode.MIN_LATENCY:
        return 1.0, 0.0
    if mode is Mode.MIN_DOS:
        return 0.0, 1.0
    return weight, 1.0 - weight


def actor_objective_and_grad(actor: DenseNet, critic_r: DenseNet, critic_c: DenseNet, s,
                             w_r: float, w_c: float):
    """``J = mean(w_r Q_R(s, mu(s)) - w_c Q_C(s, mu(s)))`` and dJ/d(actor params).

    Also returns the batch of ``Q_C(s, mu(s))`` used by the dual step.
    """
    s = np.atleast_2d(s)
    m = len(s)
    u, a_cache = actor.forward(s)
    x = _critic_input(s, u)
    qr, r_cache = critic_r.forward(x)
    qc, c_cache = critic_c.forward(x)
    J = float(np.mean(w_r * qr - w_c * qc))
    ones = np.full((m, 1), 1.0 / m)
    _, gx_r = critic_r.backward(r_cache, ones)
    _, gx_c = critic_c.backward(c_cache, ones)
    du = w_r * gx_r[:, -1:] - w_c * gx_c[:, -1:]
    grads, _ = actor.backward(a_cache, du)
    return J, grads, qc[:, 0]


def lagrangian(actor: DenseNet, critic_r: DenseNet, critic_c: DenseNet, s, lam: float,
               e_max: float) -> float:
    u = actor(s)
    x = _critic_input(s, u)
    return float(np.mean(critic_r(x)) - lam * (np.mean(critic_c(x)) - e_max))


def dual_gradient(actor: DenseNet, critic_c: DenseNet, s, e_max: float) -> float:
    """Ascent direction for the dual variable: mean Q_C(s, mu(s)) - E_max."""
    return float(np.mean(critic_c(_critic_input(s, actor(s)))) - e_max)


def project_dual(lam: float, lr: float, grad: float) -> float:
    return max(0.0, lam + lr * grad)


class Agent:
    def __init__(self, cfg: AgentConfig | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg or AgentConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        c = self.cfg
        self.actor = DenseNet((STATE_DIM, *c.actor_hidden, 1), OutputActivation.UNIT_SIGMOID, self.rng)
        self.critic_r = DenseNet((STATE_DIM + 1, *c.critic_hidden, 1), OutputActivation.LINEAR, self.rng)
        self.critic_c = DenseNet((STATE_DIM + 1, *c.critic_hidden, 1), OutputActivation.LINEAR, self.rng)
        self.actor_t = self.actor.copy()
        self.critic_r_t = self.critic_r.copy()
        self.critic_c_t = self.critic_c.copy()
        self.lambda_L = float(c.lambda_init)
        self.e_max = float(c.e_max)
        self._make_optimizers()

    def _make_optimizers(self):
        c = self.cfg
        self.opt_actor = make_optimizer(c.optimizer, c.lr_actor)
        self.opt_r = make_optimizer(c.optimizer, c.lr_reward_critic)
        self.opt_c = make_optimizer(c.optimizer, c.lr_cost_critic)

    @property
    def networks(self) -> dict[str, DenseNet]:
        return {"actor": self.actor, "critic_r": self.critic_r, "critic_c": self.critic_c,
                "actor_t": self.actor_t, "critic_r_t": self.critic_r_t, "critic_c_t": self.critic_c_t}

    def policy(self, s) -> float:
        return float(self.actor(np.asarray(s, dtype=float))[0, 0])

    def act(self, s, noise: OUNoise | None = None, explore: bool = True) -> float:
        u = self.policy(s)
        if explore and noise is not None:
            u += noise.sample()
        return min(1.0, max(0.0, u))

    def td_targets(self, batch: Batch):
        u_next = self.actor_t(batch.s_next)
        x = _critic_input(batch.s_next, u_next)
        y_r = batch.r + self.cfg.gamma_r * self.critic_r_t(x)[:, 0]
        y_c = batch.c + self.cfg.gamma_c * self.critic_c_t(x)[:, 0]
        return y_r, y_c

    def critic_update(self, batch: Batch):
        y_r, y_c = self.td_targets(batch)
        loss_r, g_r = critic_loss_and_grad(self.critic_r, batch.s, batch.a, y_r)
        loss_c, g_c = critic_loss_and_grad(self.critic_c, batch.s, batch.a, y_c)
        if not (math.isfinite(loss_r) and math.isfinite(loss_c)):
            raise FloatingPointError(f"non-finite critic loss: reward={loss_r} cost={loss_c}")
        self.opt_r.step(self.critic_r.params, g_r)
        self.opt_c.step(self.critic_c.params, g_c)
        return loss_r, loss_c

    def actor_dual_update(self, batch: Batch, mode: Mode = Mode.CONSTRAINED) -> float:
        mode = Mode(mode)
        w_r, w_c = objective_weights(mode, self.lambda_L, self.cfg.weight)
        J, grads, qc = actor_objective_and_grad(self.actor, self.critic_r, self.critic_c,
                                                batch.s, w_r, w_c)
        self.opt_actor.step(self.actor.params, [-g for g in grads])
        if mode is Mode.CONSTRAINED:
            self.lambda_L = project_dual(self.lambda_L, self.cfg.lr_dual,
                                         float(np.mean(qc)) - self.e_max)
        if self.lambda_L < 0.0:
            raise AssertionError("dual variable went negative")
        return J

    def soft_update(self, phi: float | None = None):
        phi = self.cfg.soft_rate if phi is None else phi
        for online, target in ((self.actor, self.actor_t), (self.critic_r, self.critic_r_t),
                               (self.critic_c, self.critic_c_t)):
            for p, pt in zip(online.params, target.params):
                pt *= 1.0 - phi
                pt += phi * p

    def update(self, batch: Batch, mode: Mode = Mode.CONSTRAINED):
        losses = self.critic_update(batch)
        self.actor_dual_update(batch, mode)
        self.soft_update()
        return losses

    def all_finite(self) -> bool:
        return all(net.all_finite() for net in self.networks.values()) and math.isfinite(self.lambda_L)


def save_checkpoint(agent: Agent, path) -> Path:
    path = Path(path)
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(agent.cfg),
        "lambda_L": agent.lambda_L,
        "e_max": agent.e_max,
        "rng_state": agent.rng.bit_generator.state,
        "networks": {
            name: {"widths": list(net.widths), "output": net.output.value,
                   "params": [p.tolist() for p in net.params]}
            for name, net in agent.networks.items()
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)
    return path


def _read_checkpoint(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    return doc


def load_checkpoint(path, cfg: AgentConfig | None = None) -> Agent:
    """Rebuild an agent from ``path``.

    When ``cfg`` is given its network widths must match the stored ones;
    nothing is loaded otherwise.
    """
    doc = _read_checkpoint(path)
    stored = AgentConfig(**doc["config"])
    cfg = cfg or stored
    agent = Agent(cfg, np.random.default_rng())
    try:
        staged = {}
        for name, net in agent.networks.items():
            entry = doc["networks"][name]
            if tuple(entry["widths"]) != net.widths:
                raise CheckpointError(f"{name}: widths {entry['widths']} != {list(net.widths)}")
            staged[name] = [np.array(p, dtype=float) for p in entry["params"]]
            if [p.shape for p in staged[name]] != [p.shape for p in net.params]:
                raise CheckpointError(f"{name}: parameter shapes do not match")
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing field {exc}") from None
    for name, net in agent.networks.items():
        net.params = staged[name]
    agent.lambda_L = float(doc["lambda_L"])
    agent.e_max = float(doc["e_max"])
    agent.rng.bit_generator.state = doc["rng_state"]
    return agent


def load_warm_start(path, e_max: float, cfg: AgentConfig | None = None) -> Agent:
    """Load a trained agent and retarget it at a new long-term DoS bound."""
    agent = load_checkpoint(path, cfg)
    agent.e_max = float(e_max)
    agent.cfg.e_max = float(e_max)
    return agent
