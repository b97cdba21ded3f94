import json
from collections import Counter
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from protocol.chain import Block, ChainStore, InsertKind, InsertResult, TxKind, reward_recipients
from protocol.crypto import Hash32, NodeId
from protocol.messages import INTERACTION_KINDS
from protocol.poi import TourState, service_count


def jsonable(value: Any) -> Any:
    if isinstance(value, NodeId):
        return value.pubkey.hex()
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (list, tuple, set, frozenset)):
        items = [jsonable(v) for v in value]
        return sorted(items) if isinstance(value, (set, frozenset)) else items
    if isinstance(value, dict):
        return {str(jsonable(k)): jsonable(v) for k, v in value.items()}
    return value


class Metrics:
    """Append-only measurements of one run, emitted as JSON lines plus a summary."""

    def __init__(self, snapshot_every_blocks: int = 10):
        self.snapshot_every_blocks = snapshot_every_blocks
        self.records: List[Dict[str, Any]] = []
        self.blocks: List[Dict[str, Any]] = []
        self.messages_by_type: Counter = Counter()
        self.bytes_by_type: Counter = Counter()
        self.messages_by_sender: Counter = Counter()
        self.dropped_deliveries = 0
        self.events: Counter = Counter()
        self.heights_produced: Counter = Counter()
        self.reorg_depths: List[int] = []
        self.stuck_tours: Set[Tuple[NodeId, Hash32, Hash32]] = set()
        self.tours_started = 0
        self.tours_unstuck_at_begin = 0
        self.max_height = 0

    def message_sent(self, sender: NodeId, kind: str, size: int):
        self.messages_by_type[kind] += 1
        self.bytes_by_type[kind] += size
        self.messages_by_sender[sender] += 1

    def delivery_dropped(self, to: NodeId, kind: str, request_key: Optional[Tuple] = None):
        self.dropped_deliveries += 1
        if request_key is not None:
            self.stuck_tours.add(request_key)

    def tour_started(self, node_id: NodeId, state: TourState, crashed: Iterable[NodeId]):
        self.tours_started += 1
        if not set(state.services.members) & set(crashed):
            self.tours_unstuck_at_begin += 1

    def block_produced(self, now_ms: float, node_id: NodeId, block: Block, parent: Block, height: int,
                       tour_length: int):
        self.heights_produced[height] += 1
        record = {
            "type": "block",
            "height": height,
            "block_id": block.block_id.hex(),
            "parent": block.prev_hash.hex(),
            "producer": node_id.pubkey.hex(),
            "tour_length": tour_length,
            "difficulty": block.header.difficulty,
            "time_ms": block.header.time,
            "interval_ms": block.header.time - parent.header.time,
            "produced_at_ms": now_ms,
            "transactions": len(block.transactions),
        }
        self.blocks.append(record)
        self.records.append(record)
        if len(self.blocks) % self.snapshot_every_blocks == 0:
            self.snapshot(now_ms)

    def block_inserted(self, result: InsertResult, height: int):
        self.max_height = max(self.max_height, height)
        if result.kind == InsertKind.REORG:
            self.reorg_depths.append(result.depth)

    def event(self, now_ms: float, kind: str, fields: Mapping[str, Any]):
        self.events[kind] += 1
        self.records.append({"type": "event", "kind": kind, "time_ms": now_ms, **jsonable(dict(fields))})

    def snapshot(self, now_ms: float):
        self.records.append({
            "type": "snapshot",
            "time_ms": now_ms,
            "blocks_produced": len(self.blocks),
            "max_height": self.max_height,
            "messages": dict(sorted(self.messages_by_type.items())),
            "interaction_messages": self.interaction_messages,
            "reorgs": len(self.reorg_depths),
            "stuck_tours": len(self.stuck_tours),
        })

    @property
    def interaction_messages(self) -> int:
        return sum(count for kind, count in self.messages_by_type.items() if kind in INTERACTION_KINDS)

    @property
    def forks(self) -> int:
        return sum(count - 1 for count in self.heights_produced.values() if count > 1)

    def write_records(self, path: Path):
        with open(path, "w", encoding="utf-8") as f:
            for record in self.records:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def common_prefix(chains: Sequence[ChainStore]) -> Tuple[int, int]:
    """Height of the deepest block shared by every head chain, and the largest head height beyond it."""
    paths = [chain.path() for chain in chains]
    shared = 0
    while all(len(path) > shared for path in paths) and len({path[shared] for path in paths}) == 1:
        shared += 1
    prefix_height = shared - 1
    return prefix_height, max(len(path) - 1 for path in paths) - prefix_height


def reference_chain(chains: Sequence[ChainStore]) -> ChainStore:
    """First chain, in roster order, among those with the highest head."""
    best = max(chain.height for chain in chains)
    return next(chain for chain in chains if chain.height == best)


def coalition_shares(chain: ChainStore, coalition: Set[NodeId]) -> Dict[str, float]:
    """Reward share of a coalition on a chain next to its share of tour participations."""
    participations = Counter()
    for block_id in chain.path()[1:]:
        for node_id in reward_recipients(chain.get(block_id), chain.params.roster):
            participations[node_id] += 1
    ledger = chain.ledger
    earned = {u: ledger.balance(u) for u in chain.params.roster}
    total_earned = sum(earned.values())
    total_participations = sum(participations.values())
    return {
        "reward_share": sum(earned[u] for u in coalition) / total_earned if total_earned else 0.0,
        "participation_share": (
            sum(participations[u] for u in coalition) / total_participations if total_participations else 0.0
        ),
    }


def summarize(metrics: Metrics, chains: Mapping[NodeId, ChainStore], honest: Sequence[NodeId],
              counters: Mapping[NodeId, Tuple[int, int]], coalition: Set[NodeId], n: int,
              com_mean_ms: float, end_ms: float) -> Dict[str, Any]:
    honest_chains = [chains[u] for u in honest] or list(chains.values())
    reference = reference_chain(honest_chains)
    prefix_height, divergence = common_prefix(honest_chains)
    head = reference.head_block
    ledger = reference.ledger
    claims = [
        tx for block_id in reference.path()[1:] for tx in reference.get(block_id).transactions
        if tx.kind == TxKind.FRAUD_CLAIM
    ]
    interaction = metrics.interaction_messages
    com_units = end_ms / com_mean_ms if end_ms else 0.0
    summary = {
        "height": reference.height,
        "blocks_produced": len(metrics.blocks),
        "end_time_ms": end_ms,
        "mean_block_interval_ms": head.header.time / reference.height if reference.height else None,
        "messages_by_type": dict(sorted(metrics.messages_by_type.items())),
        "bytes_by_type": dict(sorted(metrics.bytes_by_type.items())),
        "interaction_messages": interaction,
        "block_messages": sum(metrics.messages_by_type.values()) - interaction,
        "messages_per_node_per_com": interaction / n / com_units if com_units else 0.0,
        "services_plus_one": service_count(n) + 1,
        "dropped_deliveries": metrics.dropped_deliveries,
        "forks": metrics.forks,
        "reorgs": len(metrics.reorg_depths),
        "max_reorg_depth": max(metrics.reorg_depths, default=0),
        "stuck_tours": len(metrics.stuck_tours),
        "tours_started": metrics.tours_started,
        "unstuck_fraction": (
            metrics.tours_unstuck_at_begin / metrics.tours_started if metrics.tours_started else None
        ),
        "common_prefix_height": prefix_height,
        "divergence": divergence,
        "fraud_claims_detected": metrics.events["double_touring_detected"],
        "fraud_claims_on_chain": len(claims),
        "excluded": sorted(u.pubkey.hex() for u in ledger.excluded),
        "balances": {u.pubkey.hex(): ledger.balance(u) for u in reference.params.roster},
        "stakes": {u.pubkey.hex(): ledger.stake(u) for u in reference.params.roster},
        "signatures": {u.pubkey.hex(): counters[u][0] for u in reference.params.roster},
        "verifications": {u.pubkey.hex(): counters[u][1] for u in reference.params.roster},
        "events": dict(sorted(metrics.events.items())),
    }
    if coalition:
        summary["coalition"] = coalition_shares(reference, coalition)
    return summary
