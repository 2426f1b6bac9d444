"""Command line entry point: ``mecchain <verb> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from ..drl import Mode
from ..ledger import Ledger, verify_chain
from .config import ScenarioConfig, load_config
from .scenarios import (Check, RunArtifact, _sha256, run_consensus_comparison,
                        run_reputation_sweep, run_training, run_tradeoff_sweep, write_csv,
                        system_spec, write_manifest)
from .system import BCSystem

logger = logging.getLogger("mecchain")

def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=Path, default=None, help="INI file overriding the defaults")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mecchain", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)
    _common(sub.add_parser("reputation-sweep", help="steady-state reputation vs malicious feedback"))
    p = sub.add_parser("consensus-compare", help="RPoS vs max-stake PoS costs and exposure")
    _common(p)
    p.add_argument("--share", type=float, default=0.5,
                   help="fraction of the free capacity requested each slot")
    p = sub.add_parser("train", help="train and evaluate one agent")
    _common(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--e-max", type=float, default=None)
    p.add_argument("--warm-start", type=Path, default=None, help="checkpoint to start from")
    p = sub.add_parser("tradeoff", help="latency vs DoS bound sweep with warm starts")
    _common(p)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--e-max", type=float, nargs="+", default=None)
    p = sub.add_parser("verify-ledger", help="check a ledger file, or simulate and check one")
    _common(p)
    p.add_argument("ledger", nargs="?", type=Path)
    p = sub.add_parser("replay", help="re-run a manifest and compare its tables")
    _common(p)
    p.add_argument("manifest", type=Path)
    return ap


def _config(args) -> ScenarioConfig:
    return load_config(args.config, seed=args.seed)


def _out(args, cfg: ScenarioConfig) -> Path:
    if args.out is not None:
        return args.out
    return Path(cfg.out) / f"{args.verb}-seed{cfg.seed}"


def _run(verb: str, cfg: ScenarioConfig, out: Path, opts: dict) -> RunArtifact:
    if verb == "reputation-sweep":
        return run_reputation_sweep(cfg, out)
    if verb == "consensus-compare":
        return run_consensus_comparison(cfg, out, share=opts.get("share", 0.5))
    if verb == "train":
        warm = opts.get("warm_start")
        return run_training(cfg, out, mode=opts.get("mode"), e_max=opts.get("e_max"),
                            warm_from=Path(warm) if warm else None,
                            episodes=opts.get("episodes"))
    if verb == "tradeoff":
        return run_tradeoff_sweep(cfg, out, e_max_list=opts.get("e_max"),
                                  episodes=opts.get("episodes"))
    if verb == "verify-ledger":
        return _verify_ledger(cfg, out, opts.get("ledger"))
    raise ValueError(f"unknown verb {verb!r}")


def _verify_ledger(cfg: ScenarioConfig, out: Path, path) -> RunArtifact:
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifact(out)
    if path is None:
        spec = dataclasses.replace(system_spec(cfg), keep_ledger=True)
        sysm = BCSystem(spec, cfg.seed)
        for _ in range(cfg.n_slots):
            sysm.advance(0.5 * sysm.observe()[0])
        path = out / "ledger.ndjson"
        sysm.ledger.export(path)
        art.tables["ledger"] = Path(path)
    ledger = Ledger.load(path)
    bad = verify_chain(ledger)
    art.tables["verification"] = write_csv(out / "verification.csv", ("ledger", "blocks", "first_bad"),
                                           [(Path(path).name, len(ledger), "" if bad is None else bad)])
    art.checks.append(Check("chain_intact", bad is None, f"first bad block: {bad}"))
    return art


def _report(art: RunArtifact) -> int:
    for c in art.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.name} {c.detail}".rstrip())
    for name, path in art.tables.items():
        print(f"wrote {name}: {path}")
    return 0 if art.ok else 1


def _replay(args) -> int:
    doc = json.loads(args.manifest.read_text())
    cfg = ScenarioConfig.from_dict(doc["config"])
    out = args.out or args.manifest.parent / "replay"
    if out.resolve() == args.manifest.parent.resolve():
        raise SystemExit("replay must write to a fresh directory")
    art = _run(doc["command"], cfg, out, doc.get("args", {}))
    for key, meta in doc["tables"].items():
        same = key in art.tables and _sha256(art.tables[key]) == meta["sha256"]
        art.checks.append(Check(f"identical[{key}]", same, meta["path"]))
    write_manifest(art, doc["command"], cfg, doc.get("args", {}))
    return _report(art)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.verb == "replay":
        return _replay(args)
    cfg = _config(args)
    out = _out(args, cfg)
    opts = {k: v for k, v in vars(args).items()
            if k in ("share", "mode", "episodes", "e_max", "warm_start", "ledger") and v is not None}
    opts = {k: str(v) if isinstance(v, Path) else v for k, v in opts.items()}
    art = _run(args.verb, cfg, out, opts)
    write_manifest(art, args.verb, cfg, opts)
    return _report(art)


if __name__ == "__main__":
    sys.exit(main())
