import pytest

from protocol.crypto import (
    ED25519,
    CountingScheme,
    NodeId,
    SeededRng,
    TransparentScheme,
    derive_keys,
    hash32,
    make_scheme,
    rng_next,
    sign,
    verify,
)


def test_hash_is_sha256():
    assert hash32(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert hash32(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_ed25519_signatures_are_deterministic(ed_keys):
    keys = ed_keys[0]
    assert sign(keys, b"msg") == sign(keys, b"msg")
    assert len(sign(keys, b"msg")) == 64


def test_ed25519_verify(ed_keys):
    keys = ed_keys[0]
    sig = sign(keys, b"msg")
    assert verify(keys.node_id, sig, b"msg")
    assert not verify(keys.node_id, sig, b"other")
    assert not verify(ed_keys[1].node_id, sig, b"msg")
    assert not verify(keys.node_id, b"\x00" * 64, b"msg")
    assert not verify(keys.node_id, b"short", b"msg")


def test_node_id_needs_32_bytes():
    with pytest.raises(ValueError):
        NodeId(b"\x01" * 31)


def test_node_ids_order_by_key_bytes():
    low, high = NodeId(b"\x00" * 32), NodeId(b"\x01" + b"\x00" * 31)
    assert low < high
    assert sorted([high, low]) == [low, high]


def test_derive_keys_fixed_by_seed():
    first = derive_keys(ED25519, 1, 3)
    again = derive_keys(ED25519, 1, 3)
    other = derive_keys(ED25519, 2, 3)
    assert [k.node_id for k in first] == [k.node_id for k in again]
    assert first[0].node_id != other[0].node_id
    assert len({k.node_id for k in first}) == 3


def test_transparent_scheme_only_accepts_own_tags(transparent):
    keys = transparent.keypair(b"\x01" * 32)
    sig = keys.sign(b"msg")
    assert transparent.verify(keys.node_id, sig, b"msg")
    assert not transparent.verify(keys.node_id, sig, b"msh")
    assert not TransparentScheme().verify(keys.node_id, sig, b"msg")


def test_counting_scheme_counts(transparent):
    counting = CountingScheme(transparent)
    keys = counting.keypair(b"\x02" * 32)
    sig = keys.sign(b"a")
    counting.verify(keys.node_id, sig, b"a")
    counting.verify(keys.node_id, sig, b"b")
    assert (counting.signatures, counting.verifications) == (1, 2)


def test_make_scheme_rejects_unknown():
    assert make_scheme("ed25519").name == "ed25519"
    with pytest.raises(ValueError):
        make_scheme("rsa")


def test_seeded_rng_stream():
    rng = SeededRng(hash32(b"seed"))
    first, rng = rng_next(rng)
    second, rng = rng_next(rng)
    assert first == int.from_bytes(hash32(hash32(b"seed") + (0).to_bytes(8, "big"))[:8], "big")
    assert first != second
    assert rng.counter == 2


def test_seeded_rng_frozen_words():
    rng = SeededRng(hash32(b"seed"))
    first, rng = rng_next(rng)
    second, _ = rng_next(rng)
    assert (first, second) == (0xcc36962cfef13089, 0x5e5b2a6bdf7729ae)
    assert SeededRng(hash32(b"seed")).word(999) == 0xf3edfbd30ad0a446


def test_seeded_rng_batching_has_no_effect():
    seed = hash32(b"batching")
    whole, rng = [], SeededRng(seed)
    for _ in range(100):
        word, rng = rng_next(rng)
        whole.append(word)

    batched, rng, size = [], SeededRng(seed), 1
    while len(batched) < 100:
        chunk = []
        for _ in range(min(size, 100 - len(batched))):
            word, rng = rng_next(rng)
            chunk.append(word)
        batched.extend(chunk)
        size += 2
    assert batched == whole
    assert whole == [SeededRng(seed).word(i) for i in range(100)]
    assert rng_next(SeededRng(seed, 57))[0] == whole[57]


def test_one_bit_seed_flip_changes_the_stream():
    for k in range(1000):
        seed = bytearray(hash32(k.to_bytes(4, "big")))
        flipped = bytearray(seed)
        flipped[(k // 8) % 32] ^= 1 << (k % 8)
        assert rng_next(SeededRng(bytes(seed)))[0] != rng_next(SeededRng(bytes(flipped)))[0]
