import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Set, Tuple

import numpy as np
from tudelft_utilities_logging.ReportToLogger import ReportToLogger

from nodes.honest_node.honest_node import HonestNode, NodeSettings
from protocol.chain import Block, ChainParams, ChainStore, InsertKind, InsertResult
from protocol.crypto import CountingScheme, Hash32, KeyPair, NodeId, make_scheme, node_seed
from protocol.messages import BlockAnnounce, BlockResponse, Message, SignRequestMsg, encode_message
from protocol.poi import TourState
from simnet.adversaries import build_nodes, coalition_of
from simnet.config import SimConfig
from simnet.metrics import Metrics, summarize

DELIVER = "deliver"
TIMER = "timer"
START = "start"
CRASH = "crash"
REBOOT = "reboot"
HALT = "halt"


@dataclass(order=True, frozen=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    node: Optional[NodeId] = field(default=None, compare=False)
    sender: Optional[NodeId] = field(default=None, compare=False)
    payload: Any = field(default=None, compare=False)


@dataclass
class SimResult:
    config: SimConfig
    metrics: Metrics
    summary: Dict[str, Any]
    nodes: Dict[NodeId, HonestNode]
    roster: Tuple[NodeId, ...]

    @property
    def chains(self) -> Dict[NodeId, ChainStore]:
        return {node_id: node.chain for node_id, node in self.nodes.items()}


def make_node_keys(config: SimConfig) -> Tuple[KeyPair, ...]:
    """One counting wrapper per node over a shared base scheme."""
    base = make_scheme(config.signer)
    return tuple(CountingScheme(base).keypair(node_seed(config.seed, i)) for i in range(config.n))


class Simulator:
    """
    Discrete-event network of nodes under one virtual clock (integer microseconds).

    Events run in (time, insertion sequence) order, so a config and its seed fix
    the whole run. The simulator is also the network handle the nodes talk to.
    """

    def __init__(self, config: SimConfig):
        self.config = config.validate()
        self.keys = make_node_keys(config)
        self.roster = tuple(keys.node_id for keys in self.keys)
        self.params = ChainParams(
            roster=self.roster,
            initial_difficulty=config.initial_difficulty,
            reward=config.reward,
            stake=config.stake,
            retarget_period=config.retarget_period,
            target_interval=config.target_block_interval_ms,
        )
        self.settings = NodeSettings(
            com_estimate_us=int(config.com_mean_ms * 1000),
            retry_factor=config.retry_factor,
            stale_hints=config.stale_hints,
            max_block_txs=config.max_block_txs,
            processing_delay_us=int(config.processing_delay_ms * 1000),
        )
        self.rng = np.random.default_rng(config.seed)
        self.logger = ReportToLogger("poi.simnet")
        self.metrics = Metrics(config.snapshot_every_blocks)
        self.queue: List[SimEvent] = []
        self.seq = 0
        self.now_us = 0
        self.halted = False
        self.crashed: Set[NodeId] = set()
        self.coalition = coalition_of(config, self.roster)
        self._block_sizes: Dict[Hash32, int] = {}
        self.nodes = build_nodes(config, self.keys, self.params, self, self.settings)

    # --- network handle ---------------------------------------------------

    def now(self) -> int:
        return self.now_us

    def latency_us(self) -> int:
        mean = self.config.com_mean_ms * 1000
        cap = self.config.delta_max_ms * 1000
        if self.config.latency_model == "fixed":
            sample = mean
        else:
            sigma = self.config.com_jitter
            sample = self.rng.lognormal(math.log(mean) - sigma ** 2 / 2, sigma)
        return max(1, int(min(sample, cap)))

    def message_size(self, msg: Message) -> int:
        if isinstance(msg, (BlockAnnounce, BlockResponse)):
            block_id = msg.block.block_id
            if block_id not in self._block_sizes:
                self._block_sizes[block_id] = len(msg.block.serialize())
            return 1 + self._block_sizes[block_id]
        return len(encode_message(msg))

    def send(self, sender: NodeId, to: NodeId, msg: Message):
        self.metrics.message_sent(sender, msg.kind, self.message_size(msg))
        delay = self.settings.processing_delay_us
        if to != sender:
            delay += self.latency_us()
        self.schedule(self.now_us + delay, DELIVER, to, sender, msg)

    def set_timer(self, node_id: NodeId, delay_us: int, tag):
        self.schedule(self.now_us + delay_us, TIMER, node_id, payload=tag)

    def record(self, kind: str, **fields):
        self.metrics.event(self.now_us / 1000, kind, fields)

    def record_tour(self, node_id: NodeId, state: TourState):
        self.metrics.tour_started(node_id, state, self.crashed)

    def record_block_produced(self, node_id: NodeId, block: Block, state: TourState):
        chain = self.nodes[node_id].chain
        parent = chain.get(block.prev_hash)
        height = chain.heights[block.prev_hash] + 1
        self.metrics.block_produced(self.now_us / 1000, node_id, block, parent, height, state.target_len)

    def record_insert(self, node_id: NodeId, block: Block, result: InsertResult):
        chain = self.nodes[node_id].chain
        self.metrics.block_inserted(result, chain.heights[block.block_id])
        if result.kind == InsertKind.REORG:
            self.record("reorg", node=node_id, depth=result.depth)
        if self.metrics.max_height >= self.config.max_blocks:
            self.halted = True

    # --- event loop -------------------------------------------------------

    def schedule(self, time_us: int, kind: str, node: Optional[NodeId] = None,
                 sender: Optional[NodeId] = None, payload: Any = None):
        heapq.heappush(self.queue, SimEvent(time_us, self.seq, kind, node, sender, payload))
        self.seq += 1

    def crash_schedule(self):
        for fault in self.config.faults:
            node_id = self.roster[fault.node]
            self.schedule(int(fault.crash_at_ms * 1000), CRASH, node_id)
            if fault.reboot_at_ms is not None:
                self.schedule(int(fault.reboot_at_ms * 1000), REBOOT, node_id)

    def run(self) -> SimResult:
        self.crash_schedule()
        for node_id in self.roster:
            self.schedule(0, START, node_id)
        self.schedule(int(self.config.max_time_ms * 1000), HALT)
        while self.queue and not self.halted:
            event = heapq.heappop(self.queue)
            self.now_us = event.time
            self.dispatch(event)
        self.metrics.snapshot(self.now_us / 1000)
        self.logger.log(logging.INFO, f"halted at t={self.now_us / 1000:.3f}ms, height {self.metrics.max_height}")
        return SimResult(self.config, self.metrics, self.summary(), self.nodes, self.roster)

    def dispatch(self, event: SimEvent):
        if event.kind == HALT:
            self.halted = True
            return
        node = self.nodes[event.node]
        if event.kind == CRASH:
            self.crashed.add(event.node)
            node.logger.log(logging.INFO, "crashed")
            self.record("crash", node=event.node)
        elif event.kind == REBOOT:
            self.crashed.discard(event.node)
            self.record("reboot", node=event.node)
            node.reboot()
        elif event.node in self.crashed:
            if event.kind == DELIVER:
                msg = event.payload
                key = None
                if isinstance(msg, SignRequestMsg):
                    key = (msg.request.initiator, msg.request.d, msg.request.m)
                self.metrics.delivery_dropped(event.node, msg.kind, key)
        elif event.kind == START:
            node.start()
        elif event.kind == DELIVER:
            node.receive(event.sender, event.payload)
        elif event.kind == TIMER:
            node.on_timer(event.payload)

    def summary(self) -> Dict[str, Any]:
        honest = [u for u in self.roster if u not in self.coalition]
        counters = {u: (keys.scheme.signatures, keys.scheme.verifications) for u, keys in zip(self.roster, self.keys)}
        return summarize(self.metrics, self.chains, honest, counters, self.coalition, self.config.n,
                         self.config.com_mean_ms, self.now_us / 1000)

    @property
    def chains(self) -> Dict[NodeId, ChainStore]:
        return {node_id: node.chain for node_id, node in self.nodes.items()}


def run(config: SimConfig) -> SimResult:
    return Simulator(config).run()


class LoopbackNetwork:
    """Synchronous FIFO transport for driving nodes without a clock.

    Messages are delivered in send order by `drain`; timers are kept but never
    fire. Kinds listed in `drop_kinds` are counted and discarded.
    """

    def __init__(self, drop_kinds=()):
        self.nodes: Dict[NodeId, HonestNode] = {}
        self.inbox: Deque[Tuple[NodeId, NodeId, Message]] = deque()
        self.drop_kinds = frozenset(drop_kinds)
        self.sent: List[Tuple[NodeId, NodeId, Message]] = []
        self.timers: List[Tuple[NodeId, int, Any]] = []
        self.events: List[Tuple[str, Dict[str, Any]]] = []
        self.produced: List[Block] = []

    def attach(self, node: HonestNode):
        self.nodes[node.id] = node

    def now(self) -> int:
        return 0

    def send(self, sender: NodeId, to: NodeId, msg: Message):
        self.sent.append((sender, to, msg))
        if msg.kind not in self.drop_kinds:
            self.inbox.append((sender, to, msg))

    def set_timer(self, node_id: NodeId, delay_us: int, tag):
        self.timers.append((node_id, delay_us, tag))

    def record(self, kind: str, **fields):
        self.events.append((kind, fields))

    def record_tour(self, node_id: NodeId, state: TourState):
        self.events.append(("tour", {"node": node_id, "state": state}))

    def record_block_produced(self, node_id: NodeId, block: Block, state: TourState):
        self.produced.append(block)

    def record_insert(self, node_id: NodeId, block: Block, result: InsertResult):
        pass

    def events_of(self, kind: str) -> List[Dict[str, Any]]:
        return [fields for event_kind, fields in self.events if event_kind == kind]

    def drain(self, max_deliveries: int = 100_000) -> int:
        delivered = 0
        while self.inbox and delivered < max_deliveries:
            sender, to, msg = self.inbox.popleft()
            self.nodes[to].receive(sender, msg)
            delivered += 1
        return delivered
