import hashlib
from dataclasses import dataclass
from typing import Dict, Tuple

import nacl.exceptions
import nacl.signing

HASH_SIZE = 32
KEY_SIZE = 32

Hash32 = bytes
Signature = bytes


@dataclass(frozen=True, order=True)
class NodeId:
    """Identity of a participant: its 32-byte public key.

    Ordering is lexicographic on the key bytes, which is the network-wide order
    used to build rosters.
    """

    pubkey: bytes

    def __post_init__(self):
        if len(self.pubkey) != KEY_SIZE:
            raise ValueError(f"public key must be {KEY_SIZE} bytes, got {len(self.pubkey)}")

    def short(self) -> str:
        return self.pubkey.hex()[:8]

    def __repr__(self) -> str:
        return f"NodeId({self.short()})"


def hash32(msg: bytes) -> Hash32:
    return hashlib.sha256(msg).digest()


class Ed25519Scheme:
    """Deterministic signatures; the production scheme."""

    name = "ed25519"

    def keypair(self, seed: bytes) -> "KeyPair":
        signing_key = nacl.signing.SigningKey(seed)
        node_id = NodeId(bytes(signing_key.verify_key))
        return KeyPair(node_id, seed, self)

    def sign(self, secret: bytes, msg: bytes) -> Signature:
        return nacl.signing.SigningKey(secret).sign(msg).signature

    def verify(self, node_id: NodeId, sig: Signature, msg: bytes) -> bool:
        try:
            nacl.signing.VerifyKey(node_id.pubkey).verify(msg, bytes(sig))
            return True
        except (nacl.exceptions.BadSignatureError, ValueError, TypeError):
            return False


class TransparentScheme:
    """Test double: tag = H(sk || msg), checked against a key registry.

    Much faster than Ed25519, which matters for Monte Carlo sweeps. Only the
    holder of the registry can verify, so proofs made with it never leave the
    process that created them.
    """

    name = "transparent"

    def __init__(self):
        self._secrets: Dict[NodeId, bytes] = {}

    def keypair(self, seed: bytes) -> "KeyPair":
        node_id = NodeId(hash32(b"transparent-pk" + seed))
        self._secrets[node_id] = seed
        return KeyPair(node_id, seed, self)

    def sign(self, secret: bytes, msg: bytes) -> Signature:
        return hash32(secret + msg)

    def verify(self, node_id: NodeId, sig: Signature, msg: bytes) -> bool:
        secret = self._secrets.get(node_id)
        if secret is None or len(sig) != HASH_SIZE:
            return False
        return hash32(secret + msg) == bytes(sig)


class CountingScheme:
    """Wraps a scheme and counts sign/verify calls."""

    def __init__(self, inner):
        self.inner = inner
        self.name = inner.name
        self.signatures = 0
        self.verifications = 0

    def keypair(self, seed: bytes) -> "KeyPair":
        pair = self.inner.keypair(seed)
        return KeyPair(pair.node_id, seed, self)

    def sign(self, secret: bytes, msg: bytes) -> Signature:
        self.signatures += 1
        return self.inner.sign(secret, msg)

    def verify(self, node_id: NodeId, sig: Signature, msg: bytes) -> bool:
        self.verifications += 1
        return self.inner.verify(node_id, sig, msg)


@dataclass(frozen=True)
class KeyPair:
    node_id: NodeId
    secret: bytes
    scheme: object

    def sign(self, msg: bytes) -> Signature:
        return self.scheme.sign(self.secret, msg)


ED25519 = Ed25519Scheme()


def make_scheme(name: str):
    if name == "ed25519":
        return Ed25519Scheme()
    if name == "transparent":
        return TransparentScheme()
    raise ValueError(f"unknown signature scheme: {name}")


def sign(keys: KeyPair, msg: bytes) -> Signature:
    return keys.sign(msg)


def verify(node_id: NodeId, sig: Signature, msg: bytes, scheme=ED25519) -> bool:
    return scheme.verify(node_id, sig, msg)


def node_seed(master_seed: int, index: int) -> bytes:
    # H("node-key" || master || index), so a run seed fixes every identity
    return hash32(b"node-key" + master_seed.to_bytes(8, "big") + index.to_bytes(4, "big"))


def derive_keys(scheme, master_seed: int, count: int) -> Tuple[KeyPair, ...]:
    return tuple(scheme.keypair(node_seed(master_seed, i)) for i in range(count))


@dataclass(frozen=True)
class SeededRng:
    """Hash-counter stream: word_i = first 8 bytes of H(seed || i)."""

    seed: Hash32
    counter: int = 0

    def word(self, index: int) -> int:
        return int.from_bytes(hash32(self.seed + index.to_bytes(8, "big"))[:8], "big")


def rng_next(state: SeededRng) -> Tuple[int, SeededRng]:
    return state.word(state.counter), SeededRng(state.seed, state.counter + 1)
