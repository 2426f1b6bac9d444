import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mecchain.ledger import (GENESIS_PREV, Block, Ledger, ZeroRateError, append_block,
                             consensus_latency, decode_requests, encode_requests, miner_cycles,
                             tamper_time, transmission_slots, uniform_consensus_latency,
                             verify_chain)
from mecchain.workload import SlotDemand, WorkloadConfig, draw_slot_demand, empty_demand


def _chain(n_blocks=10, seed=0):
    cfg = WorkloadConfig()
    rng = np.random.default_rng(seed)
    led = Ledger(cfg.ell_h, cfg.ell_c)
    for t in range(n_blocks - 1):
        led.append_block(draw_slot_demand(cfg, rng, t))
    return led


def _flip(block: Block, byte: int, bit: int = 0) -> Block:
    body = bytearray(block.body)
    body[byte] ^= 1 << bit
    return Block(block.index, block.prev_hash, bytes(body), block.header_size, block.body_size,
                 block.hash)


def test_genesis():
    led = Ledger()
    assert len(led) == 1
    assert led[0].prev_hash == GENESIS_PREV
    assert verify_chain(led) is None


def test_empty_demand_header_only_block():
    led = Ledger(80, 8)
    b = append_block(led, empty_demand(WorkloadConfig()))
    assert b.body_size == 0
    assert b.size == 80


def test_prev_hash_links():
    led = Ledger()
    a = led.append_block(SlotDemand(0, 1, (1500,), 1, 88))
    b = led.append_block(SlotDemand(1, 2, (1000, 2000), 1, 96))
    assert b.prev_hash == a.hash
    assert b.body_size == 16
    assert decode_requests(b.body) == [(1, 1000), (2, 2000)]


def test_untouched_chain_ok():
    assert verify_chain(_chain()) is None


def test_bit_flip_in_block_three():
    led = _chain(10, seed=1)
    blocks = list(led.blocks)
    assert blocks[3].body, "block 3 should carry requests"
    blocks[3] = _flip(blocks[3], 0, 5)
    assert verify_chain(blocks) == 3


def test_relinked_prev_hash_detected():
    led = _chain()
    blocks = list(led.blocks)
    b = blocks[5]
    blocks[5] = Block(b.index, blocks[3].hash, b.body, b.header_size, b.body_size, b.hash)
    assert verify_chain(blocks) == 5


def test_rehashed_block_breaks_next_link():
    led = _chain()
    blocks = list(led.blocks)
    forged = _flip(blocks[4], 1)
    forged.hash = forged.recompute_hash()
    blocks[4] = forged
    assert verify_chain(blocks) == 5


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_every_single_bit_mutation_found(seed):
    led = _chain(8, seed=seed % 7)
    rng = np.random.default_rng(seed)
    blocks = list(led.blocks)
    carriers = [i for i, b in enumerate(blocks) if b.body]
    i = int(rng.choice(carriers))
    blocks[i] = _flip(blocks[i], int(rng.integers(len(blocks[i].body))), int(rng.integers(8)))
    assert verify_chain(blocks) == i


def test_export_load_round_trip(tmp_path):
    led = _chain(6)
    p = tmp_path / "chain.ndjson"
    led.export(p)
    back = Ledger.load(p)
    assert [b.hash for b in back.blocks] == [b.hash for b in led.blocks]
    assert verify_chain(back) is None


def test_encode_decode():
    assert decode_requests(encode_requests([5, 6], first_id=10)) == [(10, 5), (11, 6)]
    assert len(encode_requests([1, 2, 3])) == 3 * 8


# consensus cost

def test_miner_cycles_examples():
    assert miner_cycles(1000, 4, 1e6) == 5e9
    assert miner_cycles(1000, 4, 1e6, is_miner=False) == 0
    assert miner_cycles(1000, 0, 1e6) == 1e9


@settings(max_examples=200, deadline=None)
@given(lb=st.integers(80, 100_000), nv=st.integers(0, 50), k=st.floats(1, 1e7))
def test_miner_cycles_formula(lb, nv, k):
    assert miner_cycles(lb, nv, k) == k * lb * (1 + nv)


def test_uniform_rate_collapse():
    k, lb, nv = 1e6, 1000, 4
    c = uniform_consensus_latency(lb, k * lb, nv, math.inf, 1e-3, k)
    assert (c.tau_g, c.tau_v, c.tau_c) == (1.0, 1.0, float(nv))
    assert c.tau_bc == nv + 2
    assert c.miner_cycles == miner_cycles(lb, nv, k)


def test_transmission_term():
    assert transmission_slots(8080, 1e10, 1e-3) == pytest.approx(0.006464, rel=1e-12)


def test_no_validators_prepare_is_transmission_only():
    hop = transmission_slots(1000, 1e10, 1e-3)
    c = consensus_latency(1000, 5e6, [], 1e10, 1e-3, 2e3)
    assert c.tau_v == pytest.approx(hop)
    assert c.tau_c == pytest.approx(hop)
    assert c.tau_g == pytest.approx(2e6 / 5e6 + hop)


def test_slowest_validator_dominates():
    c = consensus_latency(1000, 4e6, [2e6, 1e6], math.inf, 1e-3, 1e3)
    assert c.tau_v == pytest.approx(1.0)
    assert c.tau_c == pytest.approx(2.0)


@pytest.mark.parametrize("miner, vals", [(0, [1.0]), (1.0, [0.0]), (-1.0, [])])
def test_zero_rate_rejected(miner, vals):
    with pytest.raises(ZeroRateError, match="zero-rate"):
        consensus_latency(100, miner, vals, 1e10, 1e-3, 1e3)


def test_tamper_time():
    assert tamper_time(10, 3.0) == 15.0
    assert tamper_time(10, 0.0) == 0.0
