import logging
from typing import FrozenSet, Set

from nodes.honest_node.honest_node import HonestNode, NodeSettings
from protocol.chain import Block, ChainParams
from protocol.crypto import Hash32, KeyPair, NodeId
from protocol.messages import BlockAnnounce, BlockResponse
from protocol.poi import Completed, TourState, visited_nodes


class SelfishNode(HonestNode):
    """Withholds the blocks of its coalition and shows them only to fellow members.

    A withheld block only becomes public when an honest node asks for it, which
    happens as soon as a coalition tour builds on it and visits an honest node.
    With `serve_requests` off such requests are ignored and the tour stalls.
    """

    def __init__(self, keys: KeyPair, params: ChainParams, network, settings: NodeSettings = NodeSettings(),
                 colluders: FrozenSet[NodeId] = frozenset(), serve_requests: bool = True):
        super().__init__(keys, params, network, settings)
        self.colluders = frozenset(colluders) | {self.id}
        self.serve_requests = serve_requests
        self.private: Set[Hash32] = set()

    def publish_block(self, block: Block):
        self.announced.add(block.block_id)
        self.private.add(block.block_id)
        self.network.record("block_withheld", node=self.id, block=block.block_id)
        self.share_privately(block)

    def share_privately(self, block: Block):
        for node_id in sorted(self.colluders):
            if node_id != self.id:
                self.send_message(node_id, BlockAnnounce(block))

    def relay(self, block: Block, source: NodeId):
        if block.block_id in self.announced:
            return
        if block.producer in self.colluders:
            self.announced.add(block.block_id)
            self.private.add(block.block_id)
            self.share_privately(block)
            return
        super().relay(block, source)

    def stale_hint(self, sender: NodeId):
        if self.chain.head not in self.private or sender in self.colluders:
            super().stale_hint(sender)

    def on_block_request(self, sender: NodeId, block_id: Hash32):
        if block_id not in self.private or sender in self.colluders:
            super().on_block_request(sender, block_id)
            return
        if not self.serve_requests:
            self.logger.log(logging.DEBUG, f"refusing withheld block to {sender.short()}")
            return
        self.logger.log(logging.INFO, f"withheld block {block_id.hex()[:8]} forced public by {sender.short()}")
        self.network.record("forced_public", node=self.id, block=block_id, requester=sender)
        self.private.discard(block_id)
        self.send_message(sender, BlockResponse(self.chain.get(block_id)))

    def finish_tour(self, state: TourState, outcome: Completed):
        visits = visited_nodes(outcome.proof, state.message, self.roster)
        self.network.record("withholder_tour_completed", node=self.id, d=state.dependency,
                            visited_honest=any(v not in self.colluders for v in visits))
        super().finish_tour(state, outcome)
