"""Blocks, the block store with longest-chain fork choice, difficulty
retargeting and the balance/stake ledger."""
import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from protocol.crypto import ED25519, HASH_SIZE, Hash32, NodeId, hash32
from protocol.poi import (
    PoIProof,
    ProofFormatError,
    SignRequest,
    check_poi,
    visited_nodes,
)

HEADER_FORMAT = ">IIII32s32s32s"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
BLOCK_VERSION = 1
ZERO_HASH = bytes(HASH_SIZE)
CLAMP_FACTOR = 4


class MissingParent(LookupError):
    def __init__(self, block_id: Hash32):
        super().__init__(f"parent block {block_id.hex()[:16]} is unknown")
        self.block_id = block_id


class BlockFormatError(ValueError):
    pass


class TxKind(IntEnum):
    OPAQUE = 0
    FRAUD_CLAIM = 1


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    payload: bytes = b""
    requests: Tuple[SignRequest, ...] = ()
    accused: Optional[NodeId] = None
    claimant: Optional[NodeId] = None

    @classmethod
    def opaque(cls, payload: bytes) -> "Transaction":
        return cls(TxKind.OPAQUE, payload)

    @classmethod
    def fraud_claim(cls, first: SignRequest, second: SignRequest, claimant: NodeId) -> "Transaction":
        return cls(TxKind.FRAUD_CLAIM, requests=(first, second), accused=first.initiator, claimant=claimant)

    def serialize(self) -> bytes:
        if self.kind == TxKind.OPAQUE:
            return bytes([self.kind]) + self.payload
        return (
            bytes([self.kind]) + self.accused.pubkey + self.claimant.pubkey
            + b"".join(req.serialize() for req in self.requests)
        )

    @classmethod
    def deserialize(cls, data: bytes) -> "Transaction":
        if not data:
            raise BlockFormatError("empty transaction")
        kind = data[0]
        if kind == TxKind.OPAQUE:
            return cls.opaque(bytes(data[1:]))
        if kind != TxKind.FRAUD_CLAIM:
            raise BlockFormatError(f"unknown transaction kind {kind}")
        if len(data) < 65:
            raise BlockFormatError("truncated fraud claim")
        try:
            accused, claimant = NodeId(bytes(data[1:33])), NodeId(bytes(data[33:65]))
            first, offset = SignRequest.read_from(data, 65)
            second, offset = SignRequest.read_from(data, offset)
        except ProofFormatError as exc:
            raise BlockFormatError(str(exc)) from exc
        if offset != len(data):
            raise BlockFormatError("trailing bytes after fraud claim")
        return cls(TxKind.FRAUD_CLAIM, requests=(first, second), accused=accused, claimant=claimant)

    @property
    def tx_id(self) -> Hash32:
        return hash32(self.serialize())


def verify_fraud_claim(tx: Transaction, scheme=ED25519) -> bool:
    """Two requests signed by the accused with the same d and different m."""
    if tx.kind != TxKind.FRAUD_CLAIM or len(tx.requests) != 2:
        return False
    first, second = tx.requests
    if tx.accused is None or tx.claimant is None or tx.accused == tx.claimant:
        return False
    if first.initiator != tx.accused or second.initiator != tx.accused:
        return False
    if first.d != second.d or first.m == second.m:
        return False
    return first.verify(scheme) and second.verify(scheme)


def merkle_root(txs: Sequence[Transaction]) -> Hash32:
    if not txs:
        return hash32(b"")
    level = [hash32(tx.serialize()) for tx in txs]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [hash32(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class BlockHeader:
    version: int
    time: int
    difficulty: int
    extra: int
    prev_hash: Hash32
    merkle_root: Hash32
    proof_hash: Hash32

    def serialize(self) -> bytes:
        return struct.pack(
            HEADER_FORMAT, self.version, self.time, self.difficulty, self.extra,
            self.prev_hash, self.merkle_root, self.proof_hash,
        )

    @classmethod
    def deserialize(cls, data: bytes) -> "BlockHeader":
        if len(data) != HEADER_SIZE:
            raise BlockFormatError(f"header must be {HEADER_SIZE} bytes, got {len(data)}")
        return cls(*struct.unpack(HEADER_FORMAT, data))

    @property
    def block_id(self) -> Hash32:
        return hash32(self.serialize())


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: Tuple[Transaction, ...]
    proof: PoIProof
    producer: Optional[NodeId]

    @property
    def block_id(self) -> Hash32:
        return self.header.block_id

    @property
    def prev_hash(self) -> Hash32:
        return self.header.prev_hash

    def serialize(self) -> bytes:
        producer = self.producer.pubkey if self.producer else ZERO_HASH
        out = [self.header.serialize(), producer, struct.pack(">I", len(self.transactions))]
        for tx in self.transactions:
            raw = tx.serialize()
            out.append(struct.pack(">I", len(raw)))
            out.append(raw)
        out.append(self.proof.serialize())
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "Block":
        if len(data) < HEADER_SIZE + 36:
            raise BlockFormatError(f"block file too short ({len(data)} bytes)")
        header = BlockHeader.deserialize(data[:HEADER_SIZE])
        raw_producer = bytes(data[HEADER_SIZE:HEADER_SIZE + 32])
        producer = None if raw_producer == ZERO_HASH else NodeId(raw_producer)
        offset = HEADER_SIZE + 32
        (count,) = struct.unpack_from(">I", data, offset)
        offset += 4
        txs = []
        for index in range(count):
            if offset + 4 > len(data):
                raise BlockFormatError(f"truncated length of transaction {index}")
            (size,) = struct.unpack_from(">I", data, offset)
            offset += 4
            if offset + size > len(data):
                raise BlockFormatError(f"truncated transaction {index}")
            txs.append(Transaction.deserialize(data[offset:offset + size]))
            offset += size
        try:
            proof, offset = PoIProof.read_from(data, offset)
        except ProofFormatError as exc:
            raise BlockFormatError(str(exc)) from exc
        if offset != len(data):
            raise BlockFormatError("trailing bytes after block")
        return cls(header, tuple(txs), proof, producer)


def make_block(prev_hash: Hash32, time: int, difficulty: int, txs: Sequence[Transaction],
               proof: PoIProof, producer: NodeId, extra: int = 0) -> Block:
    header = BlockHeader(
        version=BLOCK_VERSION,
        time=time,
        difficulty=difficulty,
        extra=extra,
        prev_hash=prev_hash,
        merkle_root=merkle_root(txs),
        proof_hash=hash32(proof.serialize()),
    )
    return Block(header, tuple(txs), proof, producer)


def genesis_block(initial_difficulty: int) -> Block:
    return make_block(ZERO_HASH, 0, initial_difficulty, (), PoIProof(), None)


@dataclass(frozen=True)
class Ledger:
    balances: Dict[NodeId, int] = field(default_factory=dict)
    stakes: Dict[NodeId, int] = field(default_factory=dict)
    excluded: FrozenSet[NodeId] = frozenset()

    @classmethod
    def initial(cls, roster: Sequence[NodeId], stake: int) -> "Ledger":
        return cls({u: 0 for u in roster}, {u: stake for u in roster})

    def balance(self, node_id: NodeId) -> int:
        return self.balances.get(node_id, 0)

    def stake(self, node_id: NodeId) -> int:
        return self.stakes.get(node_id, 0)

    def is_excluded(self, node_id: NodeId) -> bool:
        return node_id in self.excluded

    def total(self) -> int:
        return sum(self.balances.values()) + sum(self.stakes.values())


def reward_recipients(block: Block, roster: Sequence[NodeId]) -> List[NodeId]:
    """Distinct tour participants in first-visit order, producer first."""
    recipients = [block.producer]
    for node_id in visited_nodes(block.proof, block.header.merkle_root, roster):
        if node_id not in recipients:
            recipients.append(node_id)
    return recipients


def apply_rewards(block: Block, ledger: Ledger, roster: Sequence[NodeId], reward: int) -> Ledger:
    recipients = reward_recipients(block, roster)
    share, remainder = divmod(reward, len(recipients))
    balances = dict(ledger.balances)
    for node_id in recipients:
        balances[node_id] = balances.get(node_id, 0) + share
    balances[block.producer] += remainder
    return replace(ledger, balances=balances)


def apply_fraud_claim(tx: Transaction, ledger: Ledger) -> Ledger:
    balances, stakes = dict(ledger.balances), dict(ledger.stakes)
    balances[tx.claimant] = balances.get(tx.claimant, 0) + stakes.get(tx.accused, 0)
    stakes[tx.accused] = 0
    return Ledger(balances, stakes, ledger.excluded | {tx.accused})


def apply_block(block: Block, ledger: Ledger, roster: Sequence[NodeId], reward: int) -> Ledger:
    for tx in block.transactions:
        if tx.kind == TxKind.FRAUD_CLAIM:
            ledger = apply_fraud_claim(tx, ledger)
    return apply_rewards(block, ledger, roster, reward)


def retarget(old_mean: int, observed: int, period: int, target_interval: int) -> int:
    """Scale the mean by expected/observed period duration, clamped to x4 either way."""
    proposed = old_mean * period * target_interval // max(observed, 1)
    return max(1, min(old_mean * CLAMP_FACTOR, max(old_mean // CLAMP_FACTOR, proposed)))


def difficulty_for_interval(target_interval: float, com: float, n: int) -> int:
    """Mean whose uniform range is [1, k(n+1) - 1] with k = ceil(B / (2 Com)).

    With that range the shortest of n tours is about k hops, and a hop is a
    request plus a response.
    """
    hops = max(1, math.ceil(target_interval / (2 * com)))
    return max(1, math.ceil(hops * (n + 1) / 2))


@dataclass(frozen=True)
class ChainParams:
    roster: Tuple[NodeId, ...]
    initial_difficulty: int
    reward: int = 100
    stake: int = 1000
    retarget_period: int = 100
    target_interval: int = 100


class InsertKind(Enum):
    DUPLICATE = "duplicate"
    HEAD_UNCHANGED = "head-unchanged"
    NEW_HEAD = "new-head"
    REORG = "reorg"


@dataclass(frozen=True)
class InsertResult:
    kind: InsertKind
    depth: int = 0
    reverted: Tuple[Hash32, ...] = ()
    applied: Tuple[Hash32, ...] = ()

    @property
    def head_changed(self) -> bool:
        return self.kind in (InsertKind.NEW_HEAD, InsertKind.REORG)


class ChainStore:
    """Block tree with longest-chain head selection.

    Each stored block carries the ledger of the chain ending at it, so the head
    ledger follows the head through reorgs. Single writer.
    """

    def __init__(self, params: ChainParams):
        self.params = params
        self.genesis = genesis_block(params.initial_difficulty)
        genesis_id = self.genesis.block_id
        self.blocks: Dict[Hash32, Block] = {genesis_id: self.genesis}
        self.heights: Dict[Hash32, int] = {genesis_id: 0}
        self.children: Dict[Hash32, List[Hash32]] = {genesis_id: []}
        self.ledgers: Dict[Hash32, Ledger] = {genesis_id: Ledger.initial(params.roster, params.stake)}
        self.tips: List[Hash32] = [genesis_id]
        self.head: Hash32 = genesis_id

    def __contains__(self, block_id: Hash32) -> bool:
        return block_id in self.blocks

    def __len__(self):
        return len(self.blocks)

    def get(self, block_id: Hash32) -> Optional[Block]:
        return self.blocks.get(block_id)

    @property
    def head_block(self) -> Block:
        return self.blocks[self.head]

    @property
    def height(self) -> int:
        return self.heights[self.head]

    @property
    def ledger(self) -> Ledger:
        return self.ledgers[self.head]

    def ledger_at(self, block_id: Hash32) -> Ledger:
        return self.ledgers[block_id]

    def longest_tips(self) -> List[Hash32]:
        best = self.heights[self.head]
        return [tip for tip in self.tips if self.heights[tip] == best]

    def is_longest_tip(self, block_id: Hash32) -> bool:
        return block_id in self.blocks and block_id in self.tips and self.heights[block_id] == self.height

    def path(self, block_id: Optional[Hash32] = None) -> List[Hash32]:
        """Block ids from genesis to block_id (the head by default)."""
        block_id = self.head if block_id is None else block_id
        ids = []
        while block_id != ZERO_HASH:
            ids.append(block_id)
            block_id = self.blocks[block_id].prev_hash
        return ids[::-1]

    def ancestor_at(self, block_id: Hash32, height: int) -> Hash32:
        while self.heights[block_id] > height:
            block_id = self.blocks[block_id].prev_hash
        return block_id

    def expected_difficulty(self, parent_id: Hash32) -> int:
        """Difficulty required of a child of parent_id."""
        height = self.heights[parent_id] + 1
        parent = self.blocks[parent_id]
        period = self.params.retarget_period
        if height <= period:
            return self.params.initial_difficulty
        if (height - 1) % period:
            return parent.header.difficulty
        start = self.blocks[self.ancestor_at(parent_id, height - 1 - period)]
        observed = parent.header.time - start.header.time
        return retarget(parent.header.difficulty, observed, period, self.params.target_interval)

    def validate_block(self, block: Block, scheme=ED25519) -> bool:
        parent = self.blocks.get(block.prev_hash)
        if parent is None:
            raise MissingParent(block.prev_hash)
        header = block.header
        roster = self.params.roster
        if header.version != BLOCK_VERSION or block.producer not in roster:
            return False
        if header.merkle_root != merkle_root(block.transactions):
            return False
        if header.proof_hash != hash32(block.proof.serialize()):
            return False
        if header.time <= parent.header.time:
            return False
        if header.difficulty != self.expected_difficulty(block.prev_hash):
            return False
        if self.ledgers[block.prev_hash].is_excluded(block.producer):
            return False
        for tx in block.transactions:
            if tx.kind == TxKind.FRAUD_CLAIM and not verify_fraud_claim(tx, scheme):
                return False
        return check_poi(block.proof, block.producer, block.prev_hash, header.merkle_root,
                         header.difficulty, roster, scheme)

    def insert_block(self, block: Block) -> InsertResult:
        block_id = block.block_id
        if block_id in self.blocks:
            return InsertResult(InsertKind.DUPLICATE)
        parent_id = block.prev_hash
        if parent_id not in self.blocks:
            raise MissingParent(parent_id)

        self.blocks[block_id] = block
        self.heights[block_id] = self.heights[parent_id] + 1
        self.children[block_id] = []
        self.children[parent_id].append(block_id)
        self.ledgers[block_id] = apply_block(
            block, self.ledgers[parent_id], self.params.roster, self.params.reward
        )
        if parent_id in self.tips:
            self.tips.remove(parent_id)
        self.tips.append(block_id)

        # first seen wins ties: only a strictly higher tip moves the head
        if self.heights[block_id] <= self.heights[self.head]:
            return InsertResult(InsertKind.HEAD_UNCHANGED)

        old_head = self.head
        self.head = block_id
        if parent_id == old_head:
            return InsertResult(InsertKind.NEW_HEAD, applied=(block_id,))
        old_path, new_path = self.path(old_head), self.path(block_id)
        common = 0
        while common < len(old_path) and old_path[common] == new_path[common]:
            common += 1
        reverted = tuple(old_path[common:])
        return InsertResult(InsertKind.REORG, len(reverted), reverted, tuple(new_path[common:]))

    def fold_ledger(self, block_id: Optional[Hash32] = None) -> Ledger:
        """Recompute the ledger of a chain from genesis, ignoring the cache."""
        ledger = Ledger.initial(self.params.roster, self.params.stake)
        for bid in self.path(block_id)[1:]:
            ledger = apply_block(self.blocks[bid], ledger, self.params.roster, self.params.reward)
        return ledger
