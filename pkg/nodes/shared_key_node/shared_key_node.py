from typing import Mapping, Optional, Tuple, Union

from nodes.honest_node.honest_node import HonestNode, NodeSettings
from protocol.chain import ChainParams, Transaction, merkle_root
from protocol.crypto import KeyPair, NodeId
from protocol.messages import SignResponseMsg
from protocol.poi import (
    BadResponse,
    Completed,
    SignRequest,
    TourState,
    answer_request,
    tour_advance,
    tour_begin,
)


def run_locally(state: TourState, request: SignRequest, keys: KeyPair,
                shared: Mapping[NodeId, KeyPair]) -> Tuple[TourState, Union[SignRequest, Completed], int]:
    """Answer every step addressed to a key holder without touching the network.

    Returns the state reached, the next outstanding request (or Completed) and
    the number of hops answered locally.
    """
    hops = 0
    outcome: Union[SignRequest, Completed] = request
    while isinstance(outcome, SignRequest) and state.addressee in shared:
        signature = answer_request(shared[state.addressee], outcome)
        state, outcome = tour_advance(state, keys, signature)
        hops += 1
    return state, outcome, hops


class SharedKeyNode(HonestNode):
    """Member of a coalition that pooled its private keys."""

    def __init__(self, keys: KeyPair, params: ChainParams, network, settings: NodeSettings = NodeSettings(),
                 shared_keys: Mapping[NodeId, KeyPair] = None):
        super().__init__(keys, params, network, settings)
        self.shared = dict(shared_keys or {})
        self.shared[self.id] = keys
        self.completed: Optional[Completed] = None

    def start_tour(self, txs: Tuple[Transaction, ...]):
        d, m = self.chain.head, merkle_root(txs)
        state, request = tour_begin(self.keys, self.roster, d, m, self.tour_difficulty)
        self.current_tour = state
        self.network.record_tour(self.id, state)
        self.continue_tour(state, request, first=True)

    def continue_tour(self, state: TourState, request: Union[SignRequest, Completed], first: bool = False):
        state, outcome, hops = run_locally(state, request, self.keys, self.shared)
        self.current_tour = state
        if hops:
            self.network.record("local_hops", node=self.id, hops=hops)
        if first:
            self.network.record("shared_key_tour", node=self.id, d=state.dependency,
                                offline=isinstance(outcome, Completed), length=state.target_len)
        if isinstance(outcome, Completed):
            # finishing waits for a timer so back-to-back local tours still advance the clock
            self.completed = outcome
            delay = max(1, self.settings.processing_delay_us)
            self.network.set_timer(self.id, delay, ("complete", self.tour_seq, state.step))
        else:
            self.dispatch_request(state, outcome)

    def on_timer(self, tag):
        kind, tour_seq, step = tag
        if kind != "complete":
            super().on_timer(tag)
            return
        tour = self.current_tour
        if tour_seq == self.tour_seq and tour is not None and tour.step == step and self.completed is not None:
            completed, self.completed = self.completed, None
            self.finish_tour(tour, completed)

    def on_sign_response(self, sender: NodeId, msg: SignResponseMsg):
        tour = self.current_tour
        if tour is None or msg.h != tour.current_hash or msg.d != tour.dependency or msg.m != tour.message:
            return
        try:
            state, outcome = tour_advance(tour, self.keys, msg.signature)
        except BadResponse:
            return
        self.continue_tour(state, outcome)
