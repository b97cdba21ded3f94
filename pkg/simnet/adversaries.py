"""Strategy constructors and the per-run oracles that check adversary outcomes."""
from collections import defaultdict
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Set, Tuple

from nodes.double_tour_node.double_tour_node import DoubleTourNode
from nodes.honest_node.honest_node import HonestNode, NodeSettings
from nodes.selfish_node.selfish_node import SelfishNode
from nodes.shared_key_node.shared_key_node import SharedKeyNode
from protocol.chain import ChainParams
from protocol.crypto import Hash32, KeyPair, NodeId
from protocol.poi import Completed, answer_request, tour_advance, tour_begin


def coalition_of(config, roster: Sequence[NodeId]) -> FrozenSet[NodeId]:
    if config.adversary is None:
        return frozenset()
    return frozenset(roster[i] for i in config.adversary.nodes)


def build_nodes(config, keys: Sequence[KeyPair], params: ChainParams, network,
                settings: NodeSettings) -> Dict[NodeId, HonestNode]:
    """Instantiate one node per key, swapping in the configured strategy for the coalition."""
    adversary = config.adversary
    members = coalition_of(config, params.roster)
    shared = {pair.node_id: pair for pair in keys if pair.node_id in members}
    nodes: Dict[NodeId, HonestNode] = {}
    for pair in keys:
        if pair.node_id not in members:
            node = HonestNode(pair, params, network, settings)
        elif adversary.strategy == "double_tour":
            node = DoubleTourNode(pair, params, network, settings, tours=adversary.tours)
        elif adversary.strategy == "selfish":
            node = SelfishNode(pair, params, network, settings, colluders=members,
                               serve_requests=adversary.serve_requests)
        else:
            node = SharedKeyNode(pair, params, network, settings, shared_keys=shared)
        nodes[pair.node_id] = node
    return nodes


def tour_path(keys: KeyPair, keyring: Mapping[NodeId, KeyPair], roster: Sequence[NodeId], d: Hash32,
              m: Hash32, difficulty: int) -> List[NodeId]:
    """Every hop of a tour, assuming each addressee signs.

    Signatures are deterministic, so this is the path a real tour follows as long
    as nobody refuses.
    """
    state, outcome = tour_begin(keys, roster, d, m, difficulty)
    visits = []
    while not isinstance(outcome, Completed):
        visits.append(state.addressee)
        signature = answer_request(keyring[state.addressee], outcome)
        state, outcome = tour_advance(state, keys, signature)
    return visits


def all_colluder_tour(path: Iterable[NodeId], coalition: Set[NodeId]) -> bool:
    return all(node_id in coalition for node_id in path)


def expected_all_colluder_probability(services: Sequence[NodeId], coalition: Set[NodeId], length: int) -> float:
    """(c / n_S)^L for the realized service set."""
    inside = sum(1 for node_id in services if node_id in coalition)
    return (inside / len(services)) ** length


def conflicting_deliveries(requests: Iterable[Tuple[NodeId, Hash32, Hash32, NodeId]],
                           honest: Set[NodeId]) -> Set[Tuple[NodeId, Hash32]]:
    """(receiver, d) pairs at which an honest node was sent two versions of one tour.

    requests holds (initiator, d, m, receiver) for every sign request sent.
    """
    versions = defaultdict(set)
    for initiator, d, m, receiver in requests:
        if receiver in honest:
            versions[(receiver, initiator, d)].add(m)
    return {(receiver, d) for (receiver, _, d), ms in versions.items() if len(ms) > 1}


def withheld_blocks_used_in_private(records: Iterable[Mapping]) -> List[str]:
    """Withheld blocks a coalition tour built on through an honest node before anyone forced them public.

    Works on the event records of one run, in emission order. An empty list means
    every such block was served to an honest requester first.
    """
    withheld: Set[str] = set()
    forced: Set[str] = set()
    violations = []
    for record in records:
        kind = record.get("kind")
        if kind == "block_withheld":
            withheld.add(record["block"])
        elif kind == "forced_public":
            forced.add(record["block"])
        elif kind == "withholder_tour_completed":
            d = record["d"]
            if record["visited_honest"] and d in withheld and d not in forced:
                violations.append(d)
    return violations
