"""Experiment families run by the CLI, each writing CSV tables and a manifest.

Every sweep point gets its own random stream derived from ``(seed, index)``,
so points can run in any order or in parallel without changing results.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .. import __version__
from ..drl import (Agent, Evaluation, Mode, TrainingLog, evaluate, load_warm_start,
                   save_checkpoint, train)
from ..drl.train import LOG_HEADER
from ..ledger import miner_cycles, tamper_time
from ..reputation import (BaseStationProfile, MinerPolicy, generate_feedback,
                          miner_hit_probability, update_reputation)
from .config import ScenarioConfig
from .system import BCSystem, SystemSpec

logger = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)


@dataclass
class RunArtifact:
    out_dir: Path
    tables: dict[str, Path] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)


def point_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(index,))


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    if hasattr(x, "value"):
        return x.value
    return x


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(art: RunArtifact, command: str, cfg: ScenarioConfig, args: dict | None = None) -> Path:
    doc = {
        "command": command,
        "args": args or {},
        "seed": cfg.seed,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "tables": {k: {"path": p.name, "sha256": _sha256(p)} for k, p in art.tables.items()},
        "checks": [dataclasses.asdict(c) for c in art.checks],
    }
    path = art.out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# reputation sweep

def steady_state_reputation(cfg: ScenarioConfig, reputation, lambda_bar: float, fraction: float,
                            ss: np.random.SeedSequence) -> tuple[float, float]:
    """Mean and std of an always-serving BS's reputation over the second half of the run."""
    rng = np.random.default_rng(ss)
    prof = BaseStationProfile(id=0, history_window=reputation.history_window)
    trace = []
    for t in range(cfg.n_slots):
        n = int(rng.poisson(lambda_bar))
        batch = generate_feedback(True, n, fraction, rng, reputation.truth_likelihood, 0, t)
        trace.append(update_reputation(prof, batch, reputation, t))
    tail = np.asarray(trace[cfg.n_slots // 2:])
    return float(tail.mean()), float(tail.std())


def _sweep_point(job):
    cfg, setting, prior, lam, frac, key = job
    rep = dataclasses.replace(cfg.reputation, prior_served=prior)
    ss = np.random.SeedSequence(cfg.seed, spawn_key=key)
    mean, std = steady_state_reputation(cfg, rep, lam, frac, ss)
    return (setting, prior, lam, frac, mean, std)


def _points(cfg: ScenarioConfig):
    """Sweep points; the stream depends only on (lambda, fraction), so curves that
    differ in the prior alone see the same feedback."""
    pts = []
    for li, lam in enumerate(cfg.lambdas):
        for fi, frac in enumerate(cfg.fractions):
            pts.append(("lambda", cfg.reputation.prior_served, lam, frac, (li, fi)))
    li_ref = int(np.argmax(cfg.lambdas))
    for prior in cfg.priors:
        for fi, frac in enumerate(cfg.fractions):
            pts.append(("prior", prior, cfg.lambdas[li_ref], frac, (li_ref, fi)))
    return [(cfg, *p) for p in pts]


REPUTATION_HEADER = ("setting", "prior", "lambda_bar", "malicious_fraction", "reputation", "std")


def run_reputation_sweep(cfg: ScenarioConfig, out_dir) -> RunArtifact:
    out = _prepare(out_dir)
    rows = _map(_sweep_point, _points(cfg), cfg.workers)
    art = RunArtifact(out)
    art.tables["reputation"] = write_csv(out / "reputation_sweep.csv", REPUTATION_HEADER, rows)
    art.checks = reputation_checks(rows, cfg)
    art.extra["rows"] = rows
    return art


def reputation_checks(rows, cfg: ScenarioConfig) -> list[Check]:
    checks = [Check("reputation_in_unit_interval", all(0.0 <= r[4] <= 1.0 for r in rows))]
    for (setting, key), curve in _curves(rows).items():
        fr, rep = zip(*curve)
        if len(fr) >= 3 and np.ptp(rep) > 0:
            rho = stats.spearmanr(fr, rep).statistic
            checks.append(Check(f"non_increasing[{setting}={key}]", rho < -0.95, f"spearman={rho:.4f}"))
        if fr[0] == 0.0 and cfg.reputation.truth_likelihood >= 0.9 and setting == "lambda" \
                and key >= 100:
            checks.append(Check(f"honest_near_one[lambda={key}]", rep[0] >= 0.99, f"{rep[0]:.5f}"))
    priors = sorted({r[1] for r in rows if r[0] == "prior"})
    if len(priors) >= 2:
        lo = dict((r[3], r[4]) for r in rows if r[0] == "prior" and r[1] == priors[0])
        hi = dict((r[3], r[4]) for r in rows if r[0] == "prior" and r[1] == priors[-1])
        worst = min(hi[f] - lo[f] for f in lo)
        checks.append(Check(f"prior_{priors[-1]}_dominates_{priors[0]}", worst >= -1e-12,
                            f"min gap {worst:.4f}"))
    return checks


def _curves(rows):
    out: dict = {}
    for setting, prior, lam, frac, mean, _ in rows:
        key = lam if setting == "lambda" else prior
        out.setdefault((setting, key), []).append((frac, mean))
    return {k: sorted(v) for k, v in out.items()}


# consensus comparison

CONSENSUS_HEADER = ("policy", "lambda_bar", "mean_body_size", "mean_validators", "mean_miner_cycles",
                    "fit_validators", "slope", "mean_tau_bc", "tamper_time", "hit_probability",
                    "mean_inverse_committee")


def system_spec(cfg: ScenarioConfig, policy=None, workload=None, keep_ledger=False,
                 keep_history=False, epsilon_max=None) -> SystemSpec:
    if workload is not None:
        cfg = dataclasses.replace(cfg, workload=workload)
    return SystemSpec(
        workload=cfg.workload, reputation=cfg.reputation,
        env=cfg.env_config(epsilon_max), n_bs=cfg.n_bs, policy=policy or cfg.policy,
        malicious_bs_ids=cfg.malicious_bs_ids, denial_prob=cfg.denial_prob,
        malicious_user_fraction=cfg.malicious_user_fraction, kappa_bc=cfg.kappa_bc,
        rate_bps=cfg.rate_bps, keep_ledger=keep_ledger, keep_history=keep_history)


def _consensus_point(job):
    cfg, policy, lam, index, share, ledger_path = job
    workload = dataclasses.replace(cfg.workload, lambda_bar=lam, arrival_cap=None)
    spec = system_spec(cfg, policy, workload, keep_ledger=ledger_path is not None, keep_history=True)
    sysm = BCSystem(spec, point_seed(cfg.seed, index))
    body, nv, cyc, exact = [], [], [], True
    for _ in range(cfg.n_slots):
        # ask for a fixed share of what is still free
        sysm.advance(share * sysm.observe()[0])
        lb, n_v = sysm.last_block_size, sysm.last_selection.n_validators
        c = miner_cycles(lb, n_v, cfg.kappa_bc)
        exact &= c == cfg.kappa_bc * lb * (1 + n_v)
        body.append(lb - cfg.workload.ell_h)
        nv.append(n_v)
        cyc.append(c)
    if ledger_path is not None:
        sysm.ledger.export(ledger_path)
    mean_tau = float(np.mean(sysm.tau_bc)) if sysm.tau_bc else 0.0
    # fit cycles against body size over the slots with the most common validator count
    body, nv, cyc = map(np.asarray, (body, nv, cyc))
    nv_fit = int(np.bincount(nv).argmax())
    keep = nv == nv_fit
    slope = float(np.polyfit(body[keep], cyc[keep], 1)[0]) if np.ptp(body[keep]) > 0 else math.nan
    row = (MinerPolicy(policy).value, lam, float(body.mean()), float(nv.mean()), float(cyc.mean()),
           nv_fit, slope, mean_tau, tamper_time(cfg.n_bs, mean_tau),
           miner_hit_probability(sysm.selections),
           float(np.mean([1.0 / len(s.committee) for s in sysm.selections])))
    return row, exact


def run_consensus_comparison(cfg: ScenarioConfig, out_dir, share: float = 0.5,
                             export_ledger: bool = True) -> RunArtifact:
    out = _prepare(out_dir)
    jobs = []
    for pi, policy in enumerate((MinerPolicy.RPOS_RANDOM, MinerPolicy.POS_MAX_STAKE)):
        for li, lam in enumerate(cfg.consensus_lambdas):
            idx = pi * len(cfg.consensus_lambdas) + li
            path = out / f"ledger_{policy.value.lower()}_{li}.ndjson" if export_ledger else None
            jobs.append((cfg, policy, lam, idx, share, path))
    results = _map(_consensus_point, jobs, cfg.workers)
    rows = [r for r, _ in results]
    art = RunArtifact(out)
    art.tables["consensus"] = write_csv(out / "consensus_compare.csv", CONSENSUS_HEADER, rows)
    art.extra["rows"] = rows
    art.checks.append(Check("miner_cycles_formula", all(ok for _, ok in results)))
    for r in rows:
        policy, lam, nv_fit, slope, tau, tam, hit, inv = r[0], r[1], r[5], r[6], r[7], r[8], r[9], r[10]
        want = cfg.kappa_bc * (1 + nv_fit)
        slope_ok = math.isnan(slope) or math.isclose(slope, want, rel_tol=1e-9)
        art.checks.append(Check(f"slope[{policy},{lam}]", slope_ok, f"{slope!r} vs {want!r}"))
        art.checks.append(Check(f"tamper[{policy},{lam}]", tam == cfg.n_bs / 2 * tau))
        if policy == MinerPolicy.POS_MAX_STAKE.value:
            art.checks.append(Check(f"pos_hit[{lam}]", hit == 1.0, f"{hit}"))
        else:
            # the attacker's guess lands with probability 1/|committee| in each slot
            tol = max(0.02, 3 * math.sqrt(inv * (1 - inv) / cfg.n_slots))
            art.checks.append(Check(f"rpos_hit[{lam}]", abs(hit - inv) <= tol,
                                    f"{hit:.4f} vs {inv:.4f}"))
    return art


# training

TRAIN_EVAL_HEADER = ("mode", "e_max", "seed", "mean_cost", "discounted_cost", "mean_latency",
                     "mean_latency_slots", "served", "lambda_L")


def _streams(seed: int):
    # train, eval, agent, probe; children are keyed by index, not by the count
    return np.random.SeedSequence(seed).spawn(4)


def train_agent(cfg: ScenarioConfig, seed: int, mode: Mode, e_max: float,
                warm_from: Path | None = None, episodes: int | None = None,
                checkpoint_dir: Path | None = None) -> tuple[Agent, TrainingLog, Evaluation]:
    train_ss, eval_ss, agent_ss, probe_ss = _streams(seed)
    agent_cfg = cfg.agent_config(e_max)
    if warm_from is not None:
        agent = load_warm_start(warm_from, e_max, agent_cfg)
        agent.rng = np.random.default_rng(agent_ss)
    else:
        agent = Agent(agent_cfg, np.random.default_rng(agent_ss))
    eps = cfg.episodes if episodes is None else episodes
    probe = BCSystem(system_spec(cfg), probe_ss) if cfg.probe_slots > 0 else None
    log = train(BCSystem(system_spec(cfg), train_ss), agent, eps, cfg.n_slots, mode,
                checkpoint_dir=checkpoint_dir, probe_env=probe, probe_slots=cfg.probe_slots)
    ev = evaluate(BCSystem(system_spec(cfg), eval_ss), agent, cfg.eval_slots)
    return agent, log, ev


def _eval_row(mode, e_max, seed, ev: Evaluation, agent: Agent):
    return (Mode(mode).value, e_max, seed, ev.mean_cost, ev.discounted_cost, ev.mean_latency,
            ev.mean_latency_slots, ev.served, agent.lambda_L)


def run_training(cfg: ScenarioConfig, out_dir, seed: int | None = None, mode: Mode | None = None,
                 e_max: float | None = None, warm_from: Path | None = None,
                 episodes: int | None = None) -> RunArtifact:
    out = _prepare(out_dir)
    seed = cfg.seed if seed is None else seed
    mode = Mode(mode or cfg.mode)
    e_max = cfg.e_max if e_max is None else e_max
    agent, log, ev = train_agent(cfg, seed, mode, e_max, warm_from, episodes, out)
    art = RunArtifact(out)
    art.tables["training"] = write_csv(out / "training_log.csv", LOG_HEADER, log.rows())
    art.tables["evaluation"] = write_csv(out / "evaluation.csv", TRAIN_EVAL_HEADER,
                                         [_eval_row(mode, e_max, seed, ev, agent)])
    ck = save_checkpoint(agent, out / "checkpoint.json")
    art.extra.update(agent=agent, log=log, evaluation=ev, checkpoint=ck)
    art.checks.append(Check("dual_non_negative", agent.lambda_L >= 0.0, f"{agent.lambda_L}"))
    if mode is Mode.CONSTRAINED and math.isfinite(e_max):
        art.checks.append(Check("constraint_satisfied", ev.discounted_cost <= 1.1 * e_max,
                                f"{ev.discounted_cost:.4f} <= {1.1 * e_max:.4f}"))
    return art


# trade-off sweep

TRADEOFF_HEADER = ("mode", "e_max", "warm_start", "episodes_to_satisfy", "mean_latency",
                   "mean_latency_slots", "discounted_cost", "lambda_L")


def run_tradeoff_sweep(cfg: ScenarioConfig, out_dir, e_max_list: Sequence[float] | None = None,
                       episodes: int | None = None) -> RunArtifact:
    out = _prepare(out_dir)
    e_list = sorted(cfg.e_max_list if e_max_list is None else e_max_list)
    rows, prev = [], None
    for i, e in enumerate(e_list):
        ck_dir = out / f"e_max_{i}"
        warm = prev if cfg.warm_start else None
        agent, log, ev = train_agent(cfg, cfg.seed, Mode.CONSTRAINED, e, warm, episodes, ck_dir)
        prev = save_checkpoint(agent, ck_dir / "checkpoint.json")
        rows.append((Mode.CONSTRAINED.value, e, warm is not None, log.first_satisfying(e),
                     ev.mean_latency, ev.mean_latency_slots, ev.discounted_cost, agent.lambda_L))
    for mode in (Mode.WEIGHTED_SUM, Mode.MIN_LATENCY):
        agent, log, ev = train_agent(cfg, cfg.seed, mode, cfg.e_max, None, episodes)
        rows.append((mode.value, math.nan, False, None, ev.mean_latency, ev.mean_latency_slots,
                     ev.discounted_cost, agent.lambda_L))
    art = RunArtifact(out)
    art.tables["tradeoff"] = write_csv(out / "tradeoff.csv", TRADEOFF_HEADER, rows)
    art.extra["rows"] = rows
    for r in rows:
        if r[0] == Mode.CONSTRAINED.value and math.isfinite(r[1]):
            art.checks.append(Check(f"cost_within_bound[{r[1]}]", r[6] <= 1.1 * r[1],
                                    f"{r[6]:.4f}"))
    return art
