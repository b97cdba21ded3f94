"""Closed forms for the protocol's headline quantities and Monte Carlo drivers that measure them."""
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.stats import hypergeom
from sklearn.linear_model import LinearRegression

from nodes.double_tour_node.double_tour_node import DoubleTourNode
from nodes.honest_node.honest_node import HonestNode
from nodes.shared_key_node.shared_key_node import run_locally
from protocol.chain import ChainParams, Ledger, apply_fraud_claim, genesis_block, retarget, verify_fraud_claim
from protocol.crypto import TransparentScheme, derive_keys, hash32
from protocol.messages import SignRequestMsg
from protocol.poi import Completed, create_services, service_count, tour_begin, tour_length
from simnet.adversaries import (
    all_colluder_tour,
    conflicting_deliveries,
    expected_all_colluder_probability,
    tour_path,
)
from simnet.simulator import LoopbackNetwork


# --- closed forms ---------------------------------------------------------

def expected_min_tour_length(mean: int, drawers: int) -> float:
    """Exact E[min] of `drawers` independent lengths uniform on [1, 2*mean - 1]."""
    top = 2 * mean - 1
    return float(sum((i / top) ** drawers for i in range(1, top + 1)))


def approx_min_tour_length(mean: int, drawers: int) -> float:
    return 2 * mean / (drawers + 1)


def expected_block_interval(mean: int, n: int, com: float) -> float:
    # the shortest of n concurrent tours wins; each hop is a request and a response
    return 2 * expected_min_tour_length(mean, n) * com


def unstuck_probability(n: int, crashed: int) -> float:
    """Chance a service set avoids every crashed node (sampling without replacement)."""
    return float(hypergeom.pmf(0, n, crashed, service_count(n)))


def coin_flip_unstuck_probability(n: int) -> float:
    """At least one of n service sets is crash free when half the nodes are down,
    treating membership as independent coin flips."""
    return 1 - (1 - 0.5 ** service_count(n)) ** n


def all_colluder_probability(n: int, colluders: int, mean: int) -> float:
    """Exact chance that a tour only visits coalition members.

    Averages (c/n_S)^L over the hypergeometric coalition count c of the service
    set and the uniform tour length L.
    """
    n_s = service_count(n)
    top = 2 * mean - 1
    lengths = np.arange(1, top + 1)
    total = 0.0
    for inside in range(0, min(colluders, n_s) + 1):
        weight = hypergeom.pmf(inside, n, colluders, n_s)
        total += weight * float(np.mean((inside / n_s) ** lengths))
    return total


def fraction_power_probability(n: int, colluders: int, mean: int) -> float:
    return (colluders / n) ** mean


def retarget_trajectory(initial_mean: int, com: float, n: int, period: int, target_interval: float,
                        periods: int) -> List[int]:
    """Difficulty means over successive periods when every period takes its expected duration."""
    means = [initial_mean]
    for _ in range(periods):
        observed = max(1, round(period * expected_block_interval(means[-1], n, com)))
        means.append(retarget(means[-1], observed, period, target_interval))
    return means


def fit_message_rate(ns: Sequence[int], rates: Sequence[float]) -> Dict[str, float]:
    """Linear fit of network message rate against network size."""
    x = np.asarray(ns, dtype=float).reshape(-1, 1)
    y = np.asarray(rates, dtype=float)
    model = LinearRegression().fit(x, y)
    return {"slope": float(model.coef_[0]), "intercept": float(model.intercept_), "r2": float(model.score(x, y))}


# --- Monte Carlo ----------------------------------------------------------

def _trial_seed(seed: int, index: int) -> bytes:
    return hash32(seed.to_bytes(8, "big") + index.to_bytes(8, "big"))


def sample_tour_lengths(mean: int, trials: int, seed: int = 0) -> np.ndarray:
    return np.array([tour_length(mean, _trial_seed(seed, i)) for i in range(trials)])


def sample_min_tour_length(mean: int, drawers: int, trials: int, seed: int = 0) -> np.ndarray:
    lengths = sample_tour_lengths(mean, trials * drawers, seed).reshape(trials, drawers)
    return lengths.min(axis=1)


def crash_trial(seed: int, n: int, crashed: int) -> Tuple[float, bool]:
    """Fraction of live nodes whose first service set avoids the crashed ones, and whether any does."""
    keys = derive_keys(TransparentScheme(), seed, n)
    roster = tuple(pair.node_id for pair in keys)
    down = set(np.random.default_rng(seed).choice(n, size=crashed, replace=False).tolist())
    d = genesis_block(1).block_id
    unstuck = []
    for index, pair in enumerate(keys):
        if index in down:
            continue
        services = create_services(roster, pair.sign(d))
        unstuck.append(not any(roster.index(u) in down for u in services.members))
    return float(np.mean(unstuck)), any(unstuck)


def crash_experiment(n: int, crashed: int, seeds: Sequence[int]) -> Dict[str, float]:
    results = [crash_trial(seed, n, crashed) for seed in seeds]
    fractions = np.array([fraction for fraction, _ in results])
    return {
        "unstuck_fraction": float(fractions.mean()),
        "stderr": float(fractions.std(ddof=1) / math.sqrt(len(fractions))) if len(fractions) > 1 else 0.0,
        "oracle": unstuck_probability(n, crashed),
        "any_unstuck": float(np.mean([any_ for _, any_ in results])),
        "coin_flip_any_unstuck": coin_flip_unstuck_probability(n),
    }


def double_tour_trial(seed: int, n: int, difficulty: int, tours: int = 2) -> Dict[str, object]:
    """Let one node run parallel tours on genesis against honest peers that never move on.

    Blocks are not propagated, so every honest receiver keeps genesis as its only
    tip and sees every request sent to it.
    """
    scheme = TransparentScheme()
    keys = derive_keys(scheme, seed, n)
    roster = tuple(pair.node_id for pair in keys)
    params = ChainParams(roster, difficulty)
    network = LoopbackNetwork(drop_kinds={"block_announce", "block_request", "block_response"})
    adversary = DoubleTourNode(keys[0], params, network, tours=tours)
    network.attach(adversary)
    for pair in keys[1:]:
        network.attach(HonestNode(pair, params, network))
    genesis = adversary.chain.head
    adversary.start()
    network.drain()

    requests = [
        (msg.request.initiator, msg.request.d, msg.request.m, to)
        for _, to, msg in network.sent
        if isinstance(msg, SignRequestMsg) and msg.request.d == genesis
    ]
    predicted = {receiver for receiver, _ in conflicting_deliveries(requests, set(roster[1:]))}
    detectors = {e["detector"] for e in network.events_of("double_touring_detected") if e["d"] == genesis}
    claims = [tx for u in detectors for tx in network.nodes[u].mempool if tx.accused == adversary.id]
    slashed = [apply_fraud_claim(tx, Ledger.initial(roster, params.stake)) for tx in claims]
    return {
        "detected": bool(detectors),
        "predicted": bool(predicted),
        "detectors": detectors,
        "predicted_detectors": predicted,
        "claims_valid": all(verify_fraud_claim(tx, scheme) for tx in claims),
        "stake_moved": all(
            ledger.stake(adversary.id) == 0 and ledger.balance(tx.claimant) == params.stake
            for tx, ledger in zip(claims, slashed)
        ),
    }


def shared_key_trial(seed: int, n: int, colluders: int, difficulty: int) -> Dict[str, object]:
    """One tour by a coalition member holding `colluders` keys, with the per-run oracles."""
    keys = derive_keys(TransparentScheme(), seed, n)
    roster = tuple(pair.node_id for pair in keys)
    keyring = {pair.node_id: pair for pair in keys}
    shared = {pair.node_id: pair for pair in keys[:colluders]}
    d, m = _trial_seed(seed, 0), _trial_seed(seed, 1)
    state, request = tour_begin(keys[0], roster, d, m, difficulty)
    _, outcome, hops = run_locally(state, request, keys[0], shared)
    path = tour_path(keys[0], keyring, roster, d, m, difficulty)
    return {
        "offline": isinstance(outcome, Completed),
        "oracle": all_colluder_tour(path, set(shared)),
        "expected": expected_all_colluder_probability(state.services.members, set(shared), state.target_len),
        "local_hops": hops,
    }


def shared_key_experiment(n: int, colluders: int, difficulty: int, seeds: Sequence[int]) -> Dict[str, float]:
    trials = [shared_key_trial(seed, n, colluders, difficulty) for seed in seeds]
    offline = np.array([t["offline"] for t in trials], dtype=float)
    expected = np.array([t["expected"] for t in trials])
    return {
        "offline_frequency": float(offline.mean()),
        "oracle_agreement": float(np.mean([t["offline"] == t["oracle"] for t in trials])),
        "per_run_expectation": float(expected.mean()),
        "exact": all_colluder_probability(n, colluders, difficulty),
        "fraction_power": fraction_power_probability(n, colluders, difficulty),
        "stderr": float(offline.std(ddof=1) / math.sqrt(len(offline))) if len(offline) > 1 else 0.0,
    }
