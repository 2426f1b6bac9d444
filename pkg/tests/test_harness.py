import csv
import dataclasses
import json
import math

import pytest

from mecchain.drl import Mode
from mecchain.harness.cli import main
from mecchain.harness.config import ScenarioConfig, full_scale_config, load_config, parse_config
from mecchain.harness.scenarios import run_reputation_sweep, train_agent
from mecchain.ledger import Ledger


def test_parse_config_sections(tmp_path):
    text = """
[scenario]
seed = 7
fractions = 0.0, 0.5
policy = pos_max_stake
[workload]
lambda_bar = 5
[env]
capacity = 1e8
[agent]
batch_size = 16
[training]
episodes = 2
e_max_list = 0.2, inf
warm_start = no
"""
    cfg = parse_config(text)
    assert cfg.seed == 7 and cfg.fractions == (0.0, 0.5)
    assert cfg.policy.value == "POS_MAX_STAKE"
    assert cfg.workload.lambda_bar == 5.0
    assert cfg.capacity == 100_000_000
    assert cfg.agent.batch_size == 16
    assert cfg.e_max_list == (0.2, math.inf) and cfg.warm_start is False
    path = tmp_path / "c.ini"
    path.write_text(text)
    assert load_config(path, seed=9).seed == 9


@pytest.mark.parametrize("text", ["[scenario]\nbogus = 1\n", "[nope]\nx = 1\n",
                                  "[agent]\nwidth = 3\n"])
def test_parse_config_rejects_unknown(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_config_dict_round_trip():
    for cfg in (ScenarioConfig(seed=3, malicious_bs_ids=(1, 2)), full_scale_config()):
        doc = json.loads(json.dumps(cfg.to_dict()))
        assert ScenarioConfig.from_dict(doc) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(n_bs=3, malicious_bs_ids=(5,))
    with pytest.raises(ValueError):
        ScenarioConfig(denial_prob=1.5)


def test_e_max_from_epsilon():
    assert ScenarioConfig().e_max == pytest.approx(0.4)


def _small_ini(tmp_path, **extra):
    lines = ["[scenario]", "n_slots = 60", "fractions = 0.0, 0.3, 0.6, 0.9", "lambdas = 20, 100",
             "consensus_lambdas = 5, 10", "[training]", "episodes = 2", "eval_slots = 50",
             "e_max_list = 0.4, 1.0", "[agent]", "batch_size = 16"]
    for k, v in extra.items():
        lines.append(f"{k} = {v}")
    path = tmp_path / "small.ini"
    path.write_text("\n".join(lines) + "\n")
    return path


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_cli_reputation_sweep_and_replay(tmp_path, capsys):
    ini = _small_ini(tmp_path)
    out = tmp_path / "rep"
    main(["reputation-sweep", "--config", str(ini), "--out", str(out), "--seed", "4"])
    rows = _read_csv(out / "reputation_sweep.csv")
    assert rows[0][0] == "setting" and len(rows) == 1 + 2 * 4 + 3 * 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["command"] == "reputation-sweep"
    assert main(["replay", str(out / "manifest.json")]) == 0
    assert "PASS identical[reputation]" in capsys.readouterr().out


def test_cli_consensus_compare(tmp_path):
    ini = _small_ini(tmp_path)
    out = tmp_path / "cons"
    assert main(["consensus-compare", "--config", str(ini), "--out", str(out)]) == 0
    rows = _read_csv(out / "consensus_compare.csv")
    assert {r[0] for r in rows[1:]} == {"RPOS_RANDOM", "POS_MAX_STAKE"}
    assert len(list(out.glob("ledger_*.ndjson"))) == 4


def test_cli_verify_ledger_detects_tampering(tmp_path):
    ini = _small_ini(tmp_path)
    out = tmp_path / "ver"
    assert main(["verify-ledger", "--config", str(ini), "--out", str(out)]) == 0
    ledger = Ledger.load(out / "ledger.ndjson")
    blk = ledger.blocks[4]
    body = bytearray(blk.body)
    body[0] ^= 1
    ledger.blocks[4] = dataclasses.replace(blk, body=bytes(body))
    bad = tmp_path / "bad.ndjson"
    ledger.export(bad)
    assert main(["verify-ledger", str(bad), "--out", str(tmp_path / "ver2")]) == 1
    assert _read_csv(tmp_path / "ver2" / "verification.csv")[1] == ["bad.ndjson", str(len(ledger)), "4"]


def test_cli_train_and_warm_start(tmp_path):
    ini = _small_ini(tmp_path)
    out = tmp_path / "tr"
    main(["train", "--config", str(ini), "--out", str(out), "--e-max", "1.0"])
    assert (out / "checkpoint.json").exists()
    assert len(_read_csv(out / "training_log.csv")) == 3
    out2 = tmp_path / "tr2"
    main(["train", "--config", str(ini), "--out", str(out2), "--warm-start",
          str(out / "checkpoint.json"), "--episodes", "1"])
    assert len(_read_csv(out2 / "training_log.csv")) == 2


def test_cli_tradeoff(tmp_path):
    ini = _small_ini(tmp_path)
    out = tmp_path / "to"
    main(["tradeoff", "--config", str(ini), "--out", str(out), "--episodes", "1"])
    rows = _read_csv(out / "tradeoff.csv")
    assert [r[0] for r in rows[1:]] == ["CONSTRAINED", "CONSTRAINED", "WEIGHTED_SUM", "MIN_LATENCY"]
    assert rows[1][2] == "False" and rows[2][2] == "True"


def test_training_is_deterministic():
    cfg = parse_config("[scenario]\nn_slots = 40\n[training]\neval_slots = 30\n"
                       "[agent]\nbatch_size = 8\n")
    runs = [train_agent(cfg, 5, Mode.CONSTRAINED, cfg.e_max, episodes=2) for _ in range(2)]
    (a1, l1, e1), (a2, l2, e2) = runs
    assert l1.rows() == l2.rows() and e1 == e2 and a1.lambda_L == a2.lambda_L


def test_reputation_sweep_checks(tmp_path):
    cfg = parse_config("[scenario]\nn_slots = 200\nfractions = 0.0, 0.2, 0.5, 0.8\n")
    art = run_reputation_sweep(cfg, tmp_path)
    by_name = {c.name: c for c in art.checks}
    assert by_name["reputation_in_unit_interval"].passed
    assert by_name["prior_0.9_dominates_0.5"].passed
