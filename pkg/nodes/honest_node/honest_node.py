import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

from protocol.chain import (
    Block,
    ChainParams,
    ChainStore,
    InsertKind,
    InsertResult,
    Transaction,
    TxKind,
    make_block,
    merkle_root,
)
from protocol.crypto import Hash32, KeyPair, NodeId
from protocol.messages import (
    BlockAnnounce,
    BlockRequest,
    BlockResponse,
    Message,
    SignRequestMsg,
    SignResponseMsg,
)
from protocol.poi import (
    BadResponse,
    Completed,
    SignRequest,
    TourState,
    answer_request,
    tour_advance,
    tour_begin,
)
from utils.logger import node_logger


class CheckResult(Enum):
    ACCEPT = "accept"
    REJECT_CONFLICT = "reject-conflict"
    NEED_BLOCK = "need-block"
    STALE = "stale"
    IGNORE = "ignore"


@dataclass(frozen=True)
class NodeSettings:
    com_estimate_us: int = 10_000
    retry_factor: float = 4.0
    stale_hints: bool = True
    max_block_txs: int = 16
    processing_delay_us: int = 0
    # heights behind the head after which parked blocks and relay marks are forgotten
    prune_depth: int = 6


class HonestNode:
    """
    A participant following the protocol: it runs one tour at a time on top of
    its current head, answers the sign requests of others when they build on one
    of the longest branches, and relays blocks.

    All interaction goes through `receive` and `on_timer`; the network object
    delivers messages and timers one at a time.
    """

    def __init__(self, keys: KeyPair, params: ChainParams, network, settings: NodeSettings = NodeSettings()):
        self.keys = keys
        self.id: NodeId = keys.node_id
        self.scheme = keys.scheme
        self.params = params
        self.roster = params.roster
        self.network = network
        self.settings = settings
        self.chain = ChainStore(params)
        self.logger = node_logger(self.id.short(), network.now)

        self.current_tour: Optional[TourState] = None
        self.outstanding: Optional[SignRequest] = None
        self.candidate: Tuple[Transaction, ...] = ()
        # the head the candidate was built on; one (initiator, d) never commits to two m
        self.candidate_d: Optional[Hash32] = None
        self.tour_difficulty = params.initial_difficulty
        self.tour_seq = 0

        self.mempool: List[Transaction] = []
        # (initiator, d) -> first request seen, as in the Received table
        self.received: Dict[Tuple[NodeId, Hash32], SignRequest] = {}
        self.pending: Dict[Hash32, List[Tuple[NodeId, SignRequest]]] = {}
        self.orphans: Dict[Hash32, List[Block]] = {}
        # block id -> peers already asked for it
        self.requested_blocks: Dict[Hash32, Set[NodeId]] = {}
        self.announced: Set[Hash32] = set()
        # missing block id -> head height when it was first wanted
        self.wanted_since: Dict[Hash32, int] = {}

    # --- entry points -----------------------------------------------------

    def start(self):
        self.on_new_head()

    def receive(self, sender: NodeId, msg: Message):
        """Dispatch one inbound message on its type."""
        if isinstance(msg, SignRequestMsg):
            self.on_sign_request(sender, msg.request)
        elif isinstance(msg, SignResponseMsg):
            self.on_sign_response(sender, msg)
        elif isinstance(msg, (BlockAnnounce, BlockResponse)):
            self.on_block(sender, msg.block)
        elif isinstance(msg, BlockRequest):
            self.on_block_request(sender, msg.block_id)
        else:
            self.logger.log(logging.WARNING, f"ignoring unknown message {msg!r}")

    def on_timer(self, tag):
        kind, tour_seq, step = tag
        if kind != "retry" or self.current_tour is None or tour_seq != self.tour_seq:
            return
        if self.current_tour.step != step or self.outstanding is None:
            return
        self.logger.log(logging.DEBUG, f"resending step {step} to {self.current_tour.addressee.short()}")
        self.network.record("retry", node=self.id, step=step)
        self.send_request(self.outstanding, self.current_tour.addressee)

    def reboot(self):
        """Chain survives a crash, volatile protocol state does not."""
        self.received.clear()
        self.pending.clear()
        self.orphans.clear()
        self.requested_blocks.clear()
        self.wanted_since.clear()
        self.current_tour = None
        self.outstanding = None
        self.logger.log(logging.INFO, f"rebooted at height {self.chain.height}")
        self.on_new_head()

    def send_message(self, to: NodeId, msg: Message):
        self.network.send(self.id, to, msg)

    def broadcast(self, msg: Message, exclude: Tuple[NodeId, ...] = ()):
        for node_id in self.roster:
            if node_id != self.id and node_id not in exclude:
                self.send_message(node_id, msg)

    # --- tour generation --------------------------------------------------

    def is_excluded(self) -> bool:
        return self.chain.ledger.is_excluded(self.id)

    def build_candidate(self) -> Tuple[Transaction, ...]:
        """Mempool in arrival order plus a note naming the producer and height."""
        ledger = self.chain.ledger
        self.mempool = [
            tx for tx in self.mempool
            if tx.kind != TxKind.FRAUD_CLAIM or not ledger.is_excluded(tx.accused)
        ]
        note = Transaction.opaque(b"note" + self.id.pubkey + (self.chain.height + 1).to_bytes(4, "big"))
        return tuple(self.mempool[:self.settings.max_block_txs - 1]) + (note,)

    def on_new_head(self):
        """Drop the running tour and start one on the current head, keeping the block version already used for it."""
        self.gc_received()
        self.current_tour = None
        self.outstanding = None
        self.tour_seq += 1
        if self.is_excluded():
            return
        if self.candidate_d != self.chain.head:
            self.candidate = self.build_candidate()
            self.candidate_d = self.chain.head
        self.tour_difficulty = self.chain.expected_difficulty(self.chain.head)
        self.start_tour(self.candidate)

    def start_tour(self, txs: Tuple[Transaction, ...]):
        d, m = self.chain.head, merkle_root(txs)
        state, request = tour_begin(self.keys, self.roster, d, m, self.tour_difficulty)
        self.current_tour = state
        self.network.record_tour(self.id, state)
        self.logger.log(logging.DEBUG, f"tour of length {state.target_len} on {d.hex()[:8]}")
        self.dispatch_request(state, request)

    def dispatch_request(self, state: TourState, request: SignRequest):
        self.outstanding = request
        self.send_request(request, state.addressee)

    def send_request(self, request: SignRequest, to: NodeId):
        self.send_message(to, SignRequestMsg(request))
        delay = int(self.settings.retry_factor * self.settings.com_estimate_us)
        self.network.set_timer(self.id, delay, ("retry", self.tour_seq, self.current_tour.step))

    def on_sign_response(self, sender: NodeId, msg: SignResponseMsg):
        tour = self.current_tour
        if tour is None or msg.h != tour.current_hash or msg.d != tour.dependency or msg.m != tour.message:
            self.logger.log(logging.DEBUG, f"dropping stale response from {sender.short()}")
            return
        try:
            state, outcome = tour_advance(tour, self.keys, msg.signature)
        except BadResponse as exc:
            self.logger.log(logging.WARNING, str(exc))
            return
        self.current_tour = state
        if isinstance(outcome, Completed):
            self.finish_tour(state, outcome)
        else:
            self.dispatch_request(state, outcome)

    def finish_tour(self, state: TourState, outcome: Completed):
        parent = self.chain.get(state.dependency)
        time_ms = max(self.network.now() // 1000, parent.header.time + 1)
        block = make_block(state.dependency, time_ms, self.tour_difficulty, self.candidate_for(state),
                           outcome.proof, self.id)
        if not self.chain.validate_block(block, self.scheme):
            # a fresh tour here would have to sign a second m on the same d
            self.logger.log(logging.ERROR, "own block failed validation, waiting for the next head")
            self.network.record("own_block_invalid", node=self.id, d=state.dependency)
            self.current_tour = None
            self.outstanding = None
            return
        self.logger.log(logging.INFO, f"produced block at height {self.chain.height + 1} (L={state.target_len})")
        self.network.record_block_produced(self.id, block, state)
        self.current_tour = None
        self.outstanding = None
        self.integrate(block)
        self.publish_block(block)
        self.after_insert(True)

    def candidate_for(self, state: TourState) -> Tuple[Transaction, ...]:
        return self.candidate

    def publish_block(self, block: Block):
        self.announced.add(block.block_id)
        self.broadcast(BlockAnnounce(block))

    # --- answering others -------------------------------------------------

    def check_message(self, req: SignRequest) -> CheckResult:
        if req.initiator not in self.roster or not req.verify(self.scheme):
            return CheckResult.IGNORE
        if self.chain.ledger.is_excluded(req.initiator):
            return CheckResult.IGNORE
        if req.d not in self.chain:
            return CheckResult.NEED_BLOCK
        if not self.chain.is_longest_tip(req.d):
            return CheckResult.STALE
        key = (req.initiator, req.d)
        seen = self.received.get(key)
        if seen is not None and seen.m != req.m:
            self.raise_alarm(seen, req)
            return CheckResult.REJECT_CONFLICT
        self.received[key] = req
        return CheckResult.ACCEPT

    def raise_alarm(self, first: SignRequest, second: SignRequest):
        accused = first.initiator
        if any(tx.kind == TxKind.FRAUD_CLAIM and tx.accused == accused for tx in self.mempool):
            return
        self.logger.log(logging.WARNING, f"double touring by {accused.short()} on {first.d.hex()[:8]}")
        self.mempool.append(Transaction.fraud_claim(first, second, self.id))
        self.network.record("double_touring_detected", detector=self.id, accused=accused, d=first.d)

    def on_sign_request(self, sender: NodeId, req: SignRequest):
        result = self.check_message(req)
        if result == CheckResult.ACCEPT:
            signature = answer_request(self.keys, req)
            self.send_message(sender, SignResponseMsg(req.h, req.d, req.m, signature))
        elif result == CheckResult.NEED_BLOCK:
            parked = self.pending.setdefault(req.d, [])
            if (sender, req) not in parked:
                parked.append((sender, req))
            self.want(req.d)
            self.fetch_block(sender, req.d)
        elif result == CheckResult.STALE and self.settings.stale_hints:
            self.stale_hint(sender)
        return result

    def stale_hint(self, sender: NodeId):
        self.send_message(sender, BlockAnnounce(self.chain.head_block))

    def gc_received(self):
        tips = set(self.chain.longest_tips())
        self.received = {key: req for key, req in self.received.items() if key[1] in tips}

    # --- blocks -----------------------------------------------------------

    def fetch_block(self, sender: NodeId, block_id: Hash32):
        asked = self.requested_blocks.setdefault(block_id, set())
        if sender in asked:
            return
        asked.add(sender)
        self.send_message(sender, BlockRequest(block_id))

    def on_block_request(self, sender: NodeId, block_id: Hash32):
        block = self.chain.get(block_id)
        if block is not None:
            self.send_message(sender, BlockResponse(block))

    def on_block(self, sender: NodeId, block: Block):
        if block.block_id in self.chain:
            return
        if block.prev_hash not in self.chain:
            waiting = self.orphans.setdefault(block.prev_hash, [])
            if block not in waiting:
                waiting.append(block)
            self.want(block.prev_hash)
            self.fetch_block(sender, block.prev_hash)
            return
        if not self.chain.validate_block(block, self.scheme):
            producer = block.producer.short() if block.producer else "?"
            self.logger.log(logging.WARNING, f"invalid block from producer {producer}")
            self.network.record("invalid_block", node=self.id, producer=block.producer)
            return
        head_changed = self.integrate(block, relay_from=sender)
        self.after_insert(head_changed)

    def integrate(self, block: Block, relay_from: Optional[NodeId] = None) -> bool:
        """Insert a valid block and every orphan waiting on it."""
        head_changed = False
        queue = [(block, relay_from)]
        while queue:
            current, source = queue.pop(0)
            result: InsertResult = self.chain.insert_block(current)
            self.requested_blocks.pop(current.block_id, None)
            self.wanted_since.pop(current.block_id, None)
            self.network.record_insert(self.id, current, result)
            if result.kind == InsertKind.REORG:
                self.logger.log(logging.INFO, f"reorg of depth {result.depth} to height {self.chain.height}")
            head_changed = head_changed or result.head_changed
            if source is not None:
                self.relay(current, source)
            for child in self.orphans.pop(current.block_id, []):
                if child.block_id not in self.chain and self.chain.validate_block(child, self.scheme):
                    queue.append((child, source))
        return head_changed

    def relay(self, block: Block, source: NodeId):
        if block.block_id in self.announced:
            return
        self.announced.add(block.block_id)
        self.broadcast(BlockAnnounce(block), exclude=(source,))

    def after_insert(self, head_changed: bool):
        if head_changed:
            self.logger.log(logging.DEBUG, f"new head at height {self.chain.height}")
            self.prune()
            self.on_new_head()
        self.retry_pending()

    def retry_pending(self):
        for block_id in [bid for bid in self.pending if bid in self.chain]:
            for sender, req in self.pending.pop(block_id):
                self.on_sign_request(sender, req)

    def want(self, block_id: Hash32):
        self.wanted_since.setdefault(block_id, self.chain.height)

    def prune(self):
        """Forget blocks still missing and relay marks more than prune_depth heights behind the head."""
        horizon = self.chain.height - self.settings.prune_depth
        stale = [bid for bid, since in self.wanted_since.items() if since < horizon]
        for block_id in stale:
            del self.wanted_since[block_id]
            self.orphans.pop(block_id, None)
            self.requested_blocks.pop(block_id, None)
            self.pending.pop(block_id, None)
        self.announced = {bid for bid in self.announced if self.chain.heights.get(bid, horizon + 1) > horizon}
        if stale:
            self.logger.log(logging.DEBUG, f"dropped {len(stale)} blocks that never arrived")
