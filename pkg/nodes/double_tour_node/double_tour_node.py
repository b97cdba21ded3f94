import logging
from typing import Dict, Tuple

from nodes.honest_node.honest_node import CheckResult, HonestNode, NodeSettings
from protocol.chain import ChainParams, Transaction, merkle_root
from protocol.crypto import Hash32, KeyPair
from protocol.messages import SignRequestMsg, SignResponseMsg
from protocol.poi import BadResponse, Completed, SignRequest, TourState, tour_advance, tour_begin


class DoubleTourNode(HonestNode):
    """
    Runs several tours on the same dependency at once, each committing to a
    different version of its block (the versions differ by one dummy
    transaction). Whichever tour finishes first is published.
    """

    def __init__(self, keys: KeyPair, params: ChainParams, network, settings: NodeSettings = NodeSettings(),
                 tours: int = 2):
        super().__init__(keys, params, network, settings)
        self.tour_count = tours
        self.tours: Dict[Hash32, TourState] = {}
        self.candidates: Dict[Hash32, Tuple[Transaction, ...]] = {}
        self.outstanding_by_m: Dict[Hash32, SignRequest] = {}

    def on_new_head(self):
        self.gc_received()
        self.tours.clear()
        self.candidates.clear()
        self.outstanding_by_m.clear()
        self.current_tour = None
        self.tour_seq += 1
        if self.is_excluded():
            return
        base = self.build_candidate()
        self.tour_difficulty = self.chain.expected_difficulty(self.chain.head)
        d = self.chain.head
        for index in range(self.tour_count):
            txs = base + (Transaction.opaque(b"version" + index.to_bytes(4, "big")),)
            m = merkle_root(txs)
            state, request = tour_begin(self.keys, self.roster, d, m, self.tour_difficulty)
            self.tours[m] = state
            self.candidates[m] = txs
            self.network.record_tour(self.id, state)
            self.send_tour_request(state, request)
        self.network.record("double_tour_started", node=self.id, d=d, tours=self.tour_count)

    def send_tour_request(self, state: TourState, request: SignRequest):
        self.outstanding_by_m[state.message] = request
        self.send_message(state.addressee, SignRequestMsg(request))
        self.network.record("double_tour_request", node=self.id, d=state.dependency, m=state.message,
                            to=state.addressee)
        delay = int(self.settings.retry_factor * self.settings.com_estimate_us)
        self.network.set_timer(self.id, delay, ("retry", self.tour_seq, (state.message, state.step)))

    def on_timer(self, tag):
        kind, tour_seq, (m, step) = tag
        state = self.tours.get(m)
        if kind != "retry" or tour_seq != self.tour_seq or state is None or state.step != step:
            return
        self.send_tour_request(state, self.outstanding_by_m[m])

    def on_sign_response(self, sender, msg: SignResponseMsg):
        state = self.tours.get(msg.m)
        if state is None or msg.d != state.dependency or msg.h != state.current_hash:
            return
        try:
            state, outcome = tour_advance(state, self.keys, msg.signature)
        except BadResponse as exc:
            self.logger.log(logging.WARNING, str(exc))
            return
        self.tours[msg.m] = state
        if isinstance(outcome, Completed):
            self.finish_tour(state, outcome)
        else:
            self.send_tour_request(state, outcome)

    def candidate_for(self, state: TourState) -> Tuple[Transaction, ...]:
        return self.candidates[state.message]

    def check_message(self, req: SignRequest) -> CheckResult:
        # its own versions visiting itself are not evidence against anyone
        if req.initiator == self.id:
            return CheckResult.ACCEPT if req.verify(self.scheme) else CheckResult.IGNORE
        return super().check_message(req)
