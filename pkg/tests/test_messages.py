import pytest

from protocol.chain import BlockFormatError, genesis_block
from protocol.crypto import hash32
from protocol.messages import (
    INTERACTION_KINDS,
    BlockAnnounce,
    BlockRequest,
    BlockResponse,
    SignRequestMsg,
    SignResponseMsg,
    decode_message,
    encode_message,
)
from protocol.poi import answer_request, tour_begin


@pytest.fixture
def request_msg(fast_keys, roster):
    return SignRequestMsg(tour_begin(fast_keys[0], roster, hash32(b"d"), hash32(b"m"), 3)[1])


def test_every_kind_decodes_to_itself(request_msg, fast_keys):
    req = request_msg.request
    block = genesis_block(3)
    messages = [
        request_msg,
        SignResponseMsg(req.h, req.d, req.m, answer_request(fast_keys[1], req)),
        BlockAnnounce(block),
        BlockRequest(block.block_id),
        BlockResponse(block),
    ]
    for msg in messages:
        data = encode_message(msg)
        assert data[0] == messages.index(msg) + 1
        assert decode_message(data) == msg


def test_interaction_kinds():
    assert INTERACTION_KINDS == {"sign_request", "sign_response"}


def test_malformed_messages(request_msg):
    data = encode_message(request_msg)
    with pytest.raises(BlockFormatError):
        decode_message(b"")
    with pytest.raises(BlockFormatError):
        decode_message(b"\x09" + data[1:])
    with pytest.raises(BlockFormatError):
        decode_message(data[:-1])
    with pytest.raises(BlockFormatError):
        decode_message(data + b"\x00")
    with pytest.raises(BlockFormatError):
        decode_message(b"\x04" + bytes(31))
