import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from protocol.chain import ChainParams  # noqa: E402
from protocol.crypto import ED25519, TransparentScheme, derive_keys  # noqa: E402


@pytest.fixture
def ed_keys():
    return derive_keys(ED25519, 7, 6)


@pytest.fixture
def transparent():
    return TransparentScheme()


@pytest.fixture
def fast_keys(transparent):
    return derive_keys(transparent, 3, 10)


@pytest.fixture
def roster(fast_keys):
    return tuple(pair.node_id for pair in fast_keys)


@pytest.fixture
def params(roster):
    return ChainParams(roster, initial_difficulty=3, retarget_period=5, target_interval=100)


def complete_tour(keys, keyring, roster, d, m, difficulty):
    """Drive a tour to completion with every addressee signing; returns (final state, proof)."""
    from protocol.poi import Completed, answer_request, tour_advance, tour_begin

    state, outcome = tour_begin(keys, roster, d, m, difficulty)
    while not isinstance(outcome, Completed):
        signature = answer_request(keyring[state.addressee], outcome)
        state, outcome = tour_advance(state, keys, signature)
    return state, outcome.proof


@pytest.fixture
def prove():
    return complete_tour


@pytest.fixture
def keyring(fast_keys):
    return {pair.node_id: pair for pair in fast_keys}


@pytest.fixture
def build(fast_keys, roster, keyring):
    """Build a valid block on top of parent_id in store."""
    from protocol.chain import Transaction, make_block, merkle_root

    def _build(store, parent_id, producer=0, time=None, txs=None, difficulty=None):
        keys = fast_keys[producer]
        parent = store.get(parent_id)
        time = parent.header.time + 100 if time is None else time
        if txs is None:
            txs = (Transaction.opaque(b"note" + keys.node_id.pubkey + time.to_bytes(4, "big")),)
        difficulty = store.expected_difficulty(parent_id) if difficulty is None else difficulty
        _, proof = complete_tour(keys, keyring, roster, parent_id, merkle_root(txs), difficulty)
        return make_block(parent_id, time, difficulty, txs, proof, keys.node_id)

    return _build
