import random

import pytest

from protocol.crypto import ED25519, CountingScheme, NodeId, TransparentScheme, derive_keys, hash32
from protocol.poi import (
    BadResponse,
    Completed,
    InvalidDifficulty,
    InvalidRoster,
    PoIProof,
    ProofFormatError,
    ServiceSet,
    SignRequest,
    answer_request,
    check_poi,
    create_services,
    explain_poi,
    next_hop,
    request_payload,
    service_count,
    tour_advance,
    tour_begin,
    tour_length,
    visited_nodes,
)
from simnet.analysis import expected_min_tour_length, sample_min_tour_length, sample_tour_lengths

D = hash32(b"dependency")
M = hash32(b"message")


def keyring_of(keys):
    return {pair.node_id: pair for pair in keys}


def test_service_count():
    assert service_count(2) == 1
    assert service_count(7) == 3
    assert service_count(40) == 20
    assert service_count(100) == 20


def test_create_services_size_and_membership(roster):
    services = create_services(roster, b"seed")
    assert len(services) == 5
    assert len(set(services.members)) == 5
    assert all(u in roster for u in services.members)


def test_create_services_ignores_roster_order(roster):
    assert create_services(roster, b"seed") == create_services(tuple(reversed(roster)), b"seed")


def test_create_services_depends_on_seed(roster):
    sets = {create_services(roster, bytes([i])).members for i in range(20)}
    assert len(sets) > 1


def test_create_services_two_nodes(roster):
    services = create_services(roster[:2], b"seed")
    assert len(services) == 1


def test_create_services_rejects_small_or_duplicate_roster(roster):
    with pytest.raises(InvalidRoster):
        create_services(roster[:1], b"seed")
    with pytest.raises(InvalidRoster):
        create_services(roster[:3] + roster[:1], b"seed")


def test_tour_length_range():
    assert {tour_length(1, bytes([i])) for i in range(50)} == {1}
    lengths = [tour_length(3, bytes([i])) for i in range(200)]
    assert min(lengths) >= 1 and max(lengths) <= 5
    assert len(set(lengths)) == 5


def test_tour_length_rejects_zero_mean():
    with pytest.raises(InvalidDifficulty):
        tour_length(0, b"seed")


def test_tour_length_sample_mean():
    lengths = sample_tour_lengths(10, 10_000, seed=1)
    assert 9.8 <= lengths.mean() <= 10.2


def test_shortest_of_ten_tours():
    minima = sample_min_tour_length(27, 10, 20_000, seed=2)
    exact = expected_min_tour_length(27, 10)
    assert abs(minima.mean() - exact) / exact < 0.05
    # the continuous approximation 2*mean/(n+1) sits about 8.7% under the exact value
    assert abs(minima.mean() - 2 * 27 / 11) / (2 * 27 / 11) < 0.12


def test_create_services_frozen_vector():
    roster = tuple(NodeId(bytes([i]) * 32) for i in (6, 2, 5, 1, 4, 3))
    services = create_services(roster, b"golden")
    assert services.members == tuple(NodeId(bytes([i]) * 32) for i in (4, 5, 3))


def test_tour_length_frozen_vector():
    assert tour_length(27, b"golden") == 15


def test_next_hop_frozen_vector():
    services = ServiceSet(tuple(NodeId(bytes([i]) * 32) for i in range(20)))
    # H("hop") starts 87a0acaec00fa34a, which is 10 mod 20
    assert next_hop(hash32(b"hop"), services) == NodeId(bytes([10]) * 32)


def test_next_hop_decodes_first_eight_bytes(roster):
    services = ServiceSet(roster[:3])
    current = (5).to_bytes(8, "big") + bytes(24)
    assert next_hop(current, services) == roster[2]
    assert next_hop(hash32(b"x"), ServiceSet(roster[:1])) == roster[0]


def test_tour_begin(fast_keys, roster):
    state, request = tour_begin(fast_keys[0], roster, D, M, 4)
    assert len(state.partial) == 1
    assert state.step == 0
    assert state.current_hash == hash32(state.partial[0] + M)
    assert (request.d, request.m, request.h) == (D, M, state.current_hash)
    assert request.verify(fast_keys[0].scheme)
    again_state, again = tour_begin(fast_keys[0], roster, D, M, 4)
    assert again == request
    assert again_state.target_len == state.target_len


def test_tour_begin_requires_initiator_in_roster(fast_keys, roster):
    with pytest.raises(InvalidRoster):
        tour_begin(fast_keys[0], roster[1:], D, M, 4)


def test_single_step_tour(fast_keys, roster):
    keyring = keyring_of(fast_keys)
    state, request = tour_begin(fast_keys[0], roster, D, M, 1)
    assert state.target_len == 1
    state, outcome = tour_advance(state, fast_keys[0], answer_request(keyring[state.addressee], request))
    assert isinstance(outcome, Completed)
    assert len(outcome.proof) == 3


def test_wrong_signer_is_bad_response(fast_keys, roster):
    keyring = keyring_of(fast_keys)
    state, request = tour_begin(fast_keys[0], roster, D, M, 5)
    impostor = next(u for u in roster if u != state.addressee)
    with pytest.raises(BadResponse):
        tour_advance(state, fast_keys[0], answer_request(keyring[impostor], request))
    assert state.step == 0


def test_answer_request(fast_keys, roster):
    _, request = tour_begin(fast_keys[0], roster, D, M, 3)
    signer = fast_keys[1]
    sig = answer_request(signer, request)
    assert sig == answer_request(signer, request)
    assert signer.scheme.verify(signer.node_id, sig, request_payload(request.h, D, M))
    other = SignRequest(request.h, D, hash32(b"messagf"), request.initiator, request.req_sig)
    assert answer_request(signer, other) != sig


def test_round_trip_property(prove):
    rng = random.Random(11)
    for trial in range(100):
        n = rng.randint(2, 50)
        mean = rng.randint(1, 50)
        scheme = TransparentScheme()
        keys = derive_keys(scheme, trial, n)
        roster = tuple(pair.node_id for pair in keys)
        d = bytes(rng.getrandbits(8) for _ in range(32))
        m = bytes(rng.getrandbits(8) for _ in range(32))
        initiator = keys[rng.randrange(n)]
        state, proof = prove(initiator, keyring_of(keys), roster, d, m, mean)
        assert len(proof) == 2 * state.target_len + 1
        assert check_poi(proof, initiator.node_id, d, m, mean, roster, scheme)


def test_ed25519_proof_checks_and_counts(ed_keys, prove):
    roster = tuple(pair.node_id for pair in ed_keys)
    state, proof = prove(ed_keys[0], keyring_of(ed_keys), roster, D, M, 4)
    counting = CountingScheme(ED25519)
    assert check_poi(proof, ed_keys[0].node_id, D, M, 4, roster, counting)
    assert counting.verifications == 2 * state.target_len + 1
    assert proof.tour_length == state.target_len


def test_proof_is_deterministic(ed_keys, prove):
    roster = tuple(pair.node_id for pair in ed_keys)
    _, first = prove(ed_keys[0], keyring_of(ed_keys), roster, D, M, 4)
    _, second = prove(ed_keys[0], keyring_of(ed_keys), roster, D, M, 4)
    assert first.serialize() == second.serialize()


def test_dropped_signature_is_length_failure(fast_keys, roster, prove, transparent):
    _, proof = prove(fast_keys[0], keyring_of(fast_keys), roster, D, M, 4)
    short = PoIProof(proof.signatures[:-1])
    verdict = explain_poi(short, fast_keys[0].node_id, D, M, 4, roster, transparent)
    assert not verdict.valid and verdict.reason == "length"


def test_wrong_inputs_rejected(fast_keys, roster, prove, transparent):
    _, proof = prove(fast_keys[0], keyring_of(fast_keys), roster, D, M, 4)
    u = fast_keys[0].node_id
    assert check_poi(proof, u, D, M, 4, roster, transparent)
    assert not check_poi(proof, u, D, hash32(b"other"), 4, roster, transparent)
    assert not check_poi(proof, u, hash32(b"other"), M, 4, roster, transparent)
    assert not check_poi(proof, fast_keys[1].node_id, D, M, 4, roster, transparent)
    assert not check_poi(PoIProof(), u, D, M, 4, roster, transparent)


def test_swapped_response_and_countersignature(fast_keys, roster, prove, transparent):
    _, proof = prove(fast_keys[0], keyring_of(fast_keys), roster, D, M, 6)
    sigs = list(proof.signatures)
    sigs[1], sigs[2] = sigs[2], sigs[1]
    verdict = explain_poi(PoIProof(tuple(sigs)), fast_keys[0].node_id, D, M, 6, roster, transparent)
    assert not verdict.valid
    assert verdict.failed_index == 1 and verdict.reason == "service"


def test_every_single_byte_mutation_is_rejected(ed_keys, prove):
    roster = tuple(pair.node_id for pair in ed_keys)
    u = ed_keys[0].node_id
    for index in range(10):
        mean = 1 + index % 3
        d = hash32(D + bytes([index]))
        state, proof = prove(ed_keys[0], keyring_of(ed_keys), roster, d, M, mean)
        assert state.target_len <= 5
        data = proof.serialize()
        for i in range(len(data)):
            mutated = bytearray(data)
            mutated[i] ^= 0xFF
            try:
                candidate = PoIProof.deserialize(bytes(mutated))
            except ProofFormatError:
                continue
            assert not check_poi(candidate, u, d, M, mean, roster, ED25519), \
                f"proof {index}: accepted mutation at byte {i}"


def test_mid_tour_response_change_reroutes(fast_keys, roster):
    keyring = keyring_of(fast_keys)
    rerouted = 0
    trials = 200
    for i in range(trials):
        d = hash32(b"trial" + bytes([i % 256, i // 256]))
        state, request = tour_begin(fast_keys[0], roster, d, M, 50)
        signature = answer_request(keyring[state.addressee], request)
        honest, _ = tour_advance(state, fast_keys[0], signature)
        # a different valid-looking response leads to a different next hash
        forged = fast_keys[0].sign(signature + b"!")
        diverted = next_hop(hash32(forged), state.services)
        rerouted += diverted != honest.addressee
    # expected share is 1 - 1/n_S = 0.8
    assert 0.7 < rerouted / trials < 0.9


def test_visited_nodes_replays_the_path(fast_keys, roster, prove):
    keyring = keyring_of(fast_keys)
    state, proof = prove(fast_keys[0], keyring, roster, D, M, 5)
    visits = visited_nodes(proof, M, roster)
    assert len(visits) == state.target_len
    assert all(u in state.services for u in visits)


def test_proof_serialization_rejects_trailing_and_truncated(fast_keys, roster, prove):
    _, proof = prove(fast_keys[0], keyring_of(fast_keys), roster, D, M, 3)
    data = proof.serialize()
    assert PoIProof.deserialize(data) == proof
    with pytest.raises(ProofFormatError):
        PoIProof.deserialize(data + b"\x00")
    with pytest.raises(ProofFormatError):
        PoIProof.deserialize(data[:-1])


def test_sign_request_layout(fast_keys, roster):
    _, request = tour_begin(fast_keys[0], roster, D, M, 3)
    assert len(request.payload()) == 96
    parsed, offset = SignRequest.read_from(request.serialize(), 0)
    assert parsed == request and offset == len(request.serialize())
    with pytest.raises(ValueError):
        request_payload(b"short", D, M)
    assert isinstance(request.initiator, NodeId)
