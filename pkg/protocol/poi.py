"""Proof-of-Interaction: service selection, tour length, the tour state machine
and proof verification.

A proof for dependency d and message m by initiator u0 is the signature sequence
(s0, s1, s1', ..., sL, sL') where s0 = sign_u0(d), si is the answer of the i-th
visited node over (h_{i-1} || d || m) and si' = sign_u0(si).
"""
import struct
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

from protocol.crypto import (
    ED25519,
    HASH_SIZE,
    Hash32,
    KeyPair,
    NodeId,
    SeededRng,
    Signature,
    hash32,
    rng_next,
)

MAX_SERVICES = 20
MAX_DIFFICULTY = 2**31
LENGTH_DOMAIN = b"len"


class InvalidRoster(ValueError):
    pass


class InvalidDifficulty(ValueError):
    pass


class BadResponse(ValueError):
    pass


class ProofFormatError(ValueError):
    pass


def service_count(n: int) -> int:
    return min(MAX_SERVICES, n // 2)


@dataclass(frozen=True)
class ServiceSet:
    members: Tuple[NodeId, ...]

    def __len__(self):
        return len(self.members)

    def __getitem__(self, index: int) -> NodeId:
        return self.members[index]

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self.members


@dataclass(frozen=True)
class PoIProof:
    signatures: Tuple[Signature, ...] = ()

    def __len__(self):
        return len(self.signatures)

    @property
    def tour_length(self) -> int:
        return (len(self.signatures) - 1) // 2

    def serialize(self) -> bytes:
        out = [struct.pack(">H", len(self.signatures))]
        for sig in self.signatures:
            out.append(struct.pack(">H", len(sig)))
            out.append(bytes(sig))
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "PoIProof":
        proof, offset = cls.read_from(data, 0)
        if offset != len(data):
            raise ProofFormatError(f"{len(data) - offset} trailing bytes after proof")
        return proof

    @classmethod
    def read_from(cls, data: bytes, offset: int) -> Tuple["PoIProof", int]:
        if offset + 2 > len(data):
            raise ProofFormatError("truncated signature count")
        (count,) = struct.unpack_from(">H", data, offset)
        offset += 2
        signatures = []
        for index in range(count):
            if offset + 2 > len(data):
                raise ProofFormatError(f"truncated length of signature {index}")
            (size,) = struct.unpack_from(">H", data, offset)
            offset += 2
            if offset + size > len(data):
                raise ProofFormatError(f"truncated signature {index}")
            signatures.append(bytes(data[offset:offset + size]))
            offset += size
        return cls(tuple(signatures)), offset


@dataclass(frozen=True)
class SignRequest:
    """The (h, d, m) tuple sent to a visited node, signed by the initiator."""

    h: Hash32
    d: Hash32
    m: Hash32
    initiator: NodeId
    req_sig: Signature

    def payload(self) -> bytes:
        return request_payload(self.h, self.d, self.m)

    def verify(self, scheme=ED25519) -> bool:
        return scheme.verify(self.initiator, self.req_sig, self.payload())

    def serialize(self) -> bytes:
        return (
            self.h + self.d + self.m + self.initiator.pubkey
            + struct.pack(">H", len(self.req_sig)) + bytes(self.req_sig)
        )

    @classmethod
    def read_from(cls, data: bytes, offset: int) -> Tuple["SignRequest", int]:
        fixed = 3 * HASH_SIZE + 32
        if offset + fixed + 2 > len(data):
            raise ProofFormatError("truncated sign request")
        h = bytes(data[offset:offset + 32])
        d = bytes(data[offset + 32:offset + 64])
        m = bytes(data[offset + 64:offset + 96])
        initiator = NodeId(bytes(data[offset + 96:offset + 128]))
        (size,) = struct.unpack_from(">H", data, offset + fixed)
        start = offset + fixed + 2
        if start + size > len(data):
            raise ProofFormatError("truncated request signature")
        return cls(h, d, m, initiator, bytes(data[start:start + size])), start + size


def request_payload(h: Hash32, d: Hash32, m: Hash32) -> bytes:
    # three fixed-width fields, no separators: 96 bytes
    if len(h) != HASH_SIZE or len(d) != HASH_SIZE or len(m) != HASH_SIZE:
        raise ValueError("h, d and m must be 32-byte digests")
    return h + d + m


def create_services(roster: Sequence[NodeId], seed: Signature) -> ServiceSet:
    """Seeded Fisher-Yates shuffle of the ordered roster, truncated to n_S."""
    nodes = sorted(roster)
    if len(nodes) < 2:
        raise InvalidRoster(f"roster needs at least 2 nodes, got {len(nodes)}")
    if len(set(nodes)) != len(nodes):
        raise InvalidRoster("roster contains duplicate node ids")

    rng = SeededRng(hash32(bytes(seed)))
    for i in range(len(nodes) - 1, 0, -1):
        word, rng = rng_next(rng)
        j = word % (i + 1)
        nodes[i], nodes[j] = nodes[j], nodes[i]
    return ServiceSet(tuple(nodes[:service_count(len(nodes))]))


def tour_length(difficulty: int, seed: Signature) -> int:
    """Draw L uniformly from [1, 2*mean - 1], so E[L] = mean."""
    if not 1 <= difficulty <= MAX_DIFFICULTY:
        raise InvalidDifficulty(f"difficulty mean must be in [1, {MAX_DIFFICULTY}], got {difficulty}")
    word, _ = rng_next(SeededRng(hash32(bytes(seed) + LENGTH_DOMAIN)))
    return 1 + word % (2 * difficulty - 1)


def next_hop(current_hash: Hash32, services: ServiceSet) -> NodeId:
    index = int.from_bytes(current_hash[:8], "big") % len(services)
    return services[index]


@dataclass(frozen=True)
class TourState:
    initiator: NodeId
    dependency: Hash32
    message: Hash32
    services: ServiceSet
    target_len: int
    step: int
    current_hash: Hash32
    partial: Tuple[Signature, ...] = field(repr=False)

    @property
    def addressee(self) -> NodeId:
        return next_hop(self.current_hash, self.services)

    @property
    def done(self) -> bool:
        return self.step == self.target_len


@dataclass(frozen=True)
class Completed:
    proof: PoIProof


def _request(state: TourState, keys: KeyPair) -> SignRequest:
    payload = request_payload(state.current_hash, state.dependency, state.message)
    return SignRequest(state.current_hash, state.dependency, state.message, keys.node_id, keys.sign(payload))


def tour_begin(keys: KeyPair, roster: Sequence[NodeId], d: Hash32, m: Hash32,
               difficulty: int) -> Tuple[TourState, SignRequest]:
    if keys.node_id not in roster:
        raise InvalidRoster("initiator is not part of the roster")
    s0 = keys.sign(d)
    services = create_services(roster, s0)
    length = tour_length(difficulty, s0)
    state = TourState(
        initiator=keys.node_id,
        dependency=d,
        message=m,
        services=services,
        target_len=length,
        step=0,
        current_hash=hash32(s0 + m),
        partial=(s0,),
    )
    return state, _request(state, keys)


def tour_advance(state: TourState, keys: KeyPair,
                 response: Signature) -> Tuple[TourState, Union[SignRequest, Completed]]:
    if state.done:
        raise BadResponse("tour already completed")
    payload = request_payload(state.current_hash, state.dependency, state.message)
    if not keys.scheme.verify(state.addressee, response, payload):
        raise BadResponse(f"response at step {state.step} is not signed by {state.addressee.short()}")

    countersigned = keys.sign(response)
    advanced = replace(
        state,
        step=state.step + 1,
        current_hash=hash32(countersigned),
        partial=state.partial + (bytes(response), countersigned),
    )
    if advanced.done:
        return advanced, Completed(PoIProof(advanced.partial))
    return advanced, _request(advanced, keys)


def answer_request(keys: KeyPair, req: SignRequest) -> Signature:
    return keys.sign(req.payload())


@dataclass(frozen=True)
class ProofVerdict:
    valid: bool
    tour_length: Optional[int] = None
    failed_index: Optional[int] = None
    reason: Optional[str] = None


def explain_poi(proof: PoIProof, u: NodeId, d: Hash32, m: Hash32, difficulty: int,
                roster: Sequence[NodeId], scheme=ED25519) -> ProofVerdict:
    """check_poi with the reason for a rejection.

    reason is one of "s0", "length", "service" (visited node signature) or
    "countersign" (initiator signature over the response).
    """
    sigs = proof.signatures
    if not sigs or not scheme.verify(u, sigs[0], d):
        return ProofVerdict(False, failed_index=0, reason="s0")
    try:
        services = create_services(roster, sigs[0])
        length = tour_length(difficulty, sigs[0])
    except (InvalidRoster, InvalidDifficulty):
        return ProofVerdict(False, failed_index=0, reason="parameters")
    if 2 * length + 1 != len(sigs):
        return ProofVerdict(False, tour_length=length, reason="length")

    current_hash = hash32(sigs[0] + m)
    for i in range(length):
        payload = request_payload(current_hash, d, m)
        if not scheme.verify(next_hop(current_hash, services), sigs[2 * i + 1], payload):
            return ProofVerdict(False, length, 2 * i + 1, "service")
        if not scheme.verify(u, sigs[2 * i + 2], sigs[2 * i + 1]):
            return ProofVerdict(False, length, 2 * i + 2, "countersign")
        current_hash = hash32(sigs[2 * i + 2])
    return ProofVerdict(True, length)


def check_poi(proof: PoIProof, u: NodeId, d: Hash32, m: Hash32, difficulty: int,
              roster: Sequence[NodeId], scheme=ED25519) -> bool:
    return explain_poi(proof, u, d, m, difficulty, roster, scheme).valid


def visited_nodes(proof: PoIProof, m: Hash32, roster: Sequence[NodeId]) -> List[NodeId]:
    """Replay the hop chain of a proof without checking signatures."""
    sigs = proof.signatures
    if len(sigs) < 3:
        return []
    services = create_services(roster, sigs[0])
    current_hash = hash32(sigs[0] + m)
    visits = []
    for i in range(proof.tour_length):
        visits.append(next_hop(current_hash, services))
        current_hash = hash32(sigs[2 * i + 2])
    return visits
