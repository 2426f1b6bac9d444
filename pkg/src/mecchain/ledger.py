"""Hash-chained block store and the RPoS consensus cost model."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .workload import SlotDemand

HASH_NAME = "sha256"
GENESIS_PREV = bytes(32)
_RECORD = struct.Struct("<II")  # request id, size in bytes


class ZeroRateError(ValueError):
    pass


def _digest(index: int, prev_hash: bytes, body: bytes) -> bytes:
    h = hashlib.new(HASH_NAME)
    h.update(index.to_bytes(8, "big"))
    h.update(prev_hash)
    h.update(body)
    return h.digest()


@dataclass
class Block:
    index: int
    prev_hash: bytes
    body: bytes
    header_size: int
    body_size: int
    hash: bytes

    @property
    def size(self) -> int:
        return self.header_size + self.body_size

    def recompute_hash(self) -> bytes:
        return _digest(self.index, self.prev_hash, self.body)

    def to_json(self) -> str:
        return json.dumps({
            "index": self.index,
            "prev_hash": self.prev_hash.hex(),
            "body": self.body.hex(),
            "header_size": self.header_size,
            "body_size": self.body_size,
            "hash": self.hash.hex(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Block":
        d = json.loads(line)
        return cls(index=int(d["index"]), prev_hash=bytes.fromhex(d["prev_hash"]),
                   body=bytes.fromhex(d["body"]), header_size=int(d["header_size"]),
                   body_size=int(d["body_size"]), hash=bytes.fromhex(d["hash"]))


def encode_requests(sizes: Iterable[int], first_id: int = 0) -> bytes:
    return b"".join(_RECORD.pack(first_id + k, s) for k, s in enumerate(sizes))


def decode_requests(body: bytes) -> list[tuple[int, int]]:
    return [rec for rec in _RECORD.iter_unpack(body)]


class Ledger:
    """Append-only chain of blocks; block 0 is an empty genesis block."""

    def __init__(self, header_size: int = 80, ell_c: int = 8, blocks: Sequence[Block] | None = None):
        self.header_size = header_size
        self.ell_c = ell_c
        self._next_request_id = 0
        if blocks is not None:
            self.blocks = list(blocks)
        else:
            genesis = Block(0, GENESIS_PREV, b"", header_size, 0, _digest(0, GENESIS_PREV, b""))
            self.blocks = [genesis]

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i) -> Block:
        return self.blocks[i]

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def append_block(self, demand: SlotDemand) -> Block:
        body = encode_requests(demand.request_sizes, self._next_request_id)
        self._next_request_id += demand.num_requests
        index = self.tip.index + 1
        prev = self.tip.hash
        block = Block(index=index, prev_hash=prev, body=body, header_size=self.header_size,
                      body_size=self.ell_c * demand.num_requests, hash=_digest(index, prev, body))
        self.blocks.append(block)
        return block

    def export(self, path) -> None:
        with open(path, "w") as fh:
            for b in self.blocks:
                fh.write(b.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Ledger":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        blocks = [Block.from_json(ln) for ln in lines]
        if not blocks:
            raise ValueError(f"{path}: no blocks")
        return cls(header_size=blocks[0].header_size, blocks=blocks)


def append_block(ledger: Ledger, demand: SlotDemand) -> Block:
    return ledger.append_block(demand)


def verify_chain(ledger: Ledger | Sequence[Block]) -> int | None:
    """Return ``None`` if the chain is intact, else the first offending index."""
    blocks = ledger.blocks if isinstance(ledger, Ledger) else list(ledger)
    if not blocks:
        raise ValueError("empty chain")
    for pos, b in enumerate(blocks):
        if b.index != pos or b.recompute_hash() != b.hash:
            return pos
        if pos > 0 and b.prev_hash != blocks[pos - 1].hash:
            return pos
    return None


@dataclass(frozen=True)
class ConsensusCost:
    f_bc_g: float
    f_bc_c: float
    f_bc_v: float
    tau_g: float
    tau_v: float
    tau_c: float

    @property
    def tau_bc(self) -> float:
        return self.tau_g + self.tau_v + self.tau_c

    @property
    def miner_cycles(self) -> float:
        return self.f_bc_g + self.f_bc_c


def miner_cycles(block_size: float, n_validators: int, kappa_bc: float, is_miner: bool = True) -> float:
    """CPU cycles the miner spends generating and committing one block."""
    if not is_miner:
        return 0.0
    return kappa_bc * block_size * (1 + n_validators)


def transmission_slots(block_size: float, rate_bps: float, slot_duration: float) -> float:
    if math.isinf(rate_bps):
        return 0.0
    return 8.0 * block_size / (rate_bps * slot_duration)


def consensus_latency(block_size: float, miner_rate: float, validator_rates: Sequence[float],
                      rate_bps: float, slot_duration: float, kappa_bc: float) -> ConsensusCost:
    """Three-phase latency (in slots) of one RPoS round.

    Every inter-BS link runs at ``rate_bps``; ``validator_rates`` are the
    service rates of the committee members other than the miner.
    """
    rates = [miner_rate, *validator_rates]
    if any(r <= 0 for r in rates):
        raise ZeroRateError("zero-rate")
    n_v = len(validator_rates)
    sig = kappa_bc * block_size
    f_g = sig
    f_c = sig * n_v
    hop = transmission_slots(block_size, rate_bps, slot_duration)
    tau_g = f_g / miner_rate + hop
    tau_v = max((sig / a for a in validator_rates), default=0.0) + hop
    tau_c = max(f_c / a for a in rates) + hop
    return ConsensusCost(f_bc_g=f_g, f_bc_c=f_c, f_bc_v=sig if n_v else 0.0,
                         tau_g=tau_g, tau_v=tau_v, tau_c=tau_c)


def uniform_consensus_latency(block_size: float, rate: float, n_validators: int, rate_bps: float,
                              slot_duration: float, kappa_bc: float) -> ConsensusCost:
    """Committee members all serve at ``rate``."""
    return consensus_latency(block_size, rate, [rate] * n_validators, rate_bps, slot_duration, kappa_bc)


def tamper_time(n_bs: int, mean_tau_bc: float) -> float:
    """Slots needed to rewrite the replicas held by half of the network."""
    if n_bs < 1:
        raise ValueError("n_bs must be >= 1")
    return n_bs / 2 * mean_tau_bc
