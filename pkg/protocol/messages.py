"""Messages exchanged on the simulated wire, with their byte encoding."""
import struct
from dataclasses import dataclass
from typing import Union

from protocol.chain import Block, BlockFormatError
from protocol.crypto import HASH_SIZE, Hash32, Signature
from protocol.poi import ProofFormatError, SignRequest


@dataclass(frozen=True)
class SignRequestMsg:
    request: SignRequest
    kind = "sign_request"


@dataclass(frozen=True)
class SignResponseMsg:
    h: Hash32
    d: Hash32
    m: Hash32
    signature: Signature
    kind = "sign_response"


@dataclass(frozen=True)
class BlockAnnounce:
    block: Block
    kind = "block_announce"


@dataclass(frozen=True)
class BlockRequest:
    block_id: Hash32
    kind = "block_request"


@dataclass(frozen=True)
class BlockResponse:
    block: Block
    kind = "block_response"


Message = Union[SignRequestMsg, SignResponseMsg, BlockAnnounce, BlockRequest, BlockResponse]

INTERACTION_KINDS = frozenset({SignRequestMsg.kind, SignResponseMsg.kind})

_TAGS = {
    SignRequestMsg: 1,
    SignResponseMsg: 2,
    BlockAnnounce: 3,
    BlockRequest: 4,
    BlockResponse: 5,
}


def encode_message(msg: Message) -> bytes:
    tag = bytes([_TAGS[type(msg)]])
    if isinstance(msg, SignRequestMsg):
        return tag + msg.request.serialize()
    if isinstance(msg, SignResponseMsg):
        return tag + msg.h + msg.d + msg.m + struct.pack(">H", len(msg.signature)) + msg.signature
    if isinstance(msg, BlockRequest):
        return tag + msg.block_id
    return tag + msg.block.serialize()


def decode_message(data: bytes) -> Message:
    if not data:
        raise BlockFormatError("empty message")
    tag, body = data[0], data[1:]
    try:
        if tag == 1:
            request, offset = SignRequest.read_from(body, 0)
            if offset != len(body):
                raise BlockFormatError("trailing bytes after sign request")
            return SignRequestMsg(request)
        if tag == 2:
            if len(body) < 3 * HASH_SIZE + 2:
                raise BlockFormatError("truncated sign response")
            (size,) = struct.unpack_from(">H", body, 3 * HASH_SIZE)
            signature = body[3 * HASH_SIZE + 2:]
            if len(signature) != size:
                raise BlockFormatError("sign response length mismatch")
            return SignResponseMsg(body[:32], body[32:64], body[64:96], bytes(signature))
        if tag == 3:
            return BlockAnnounce(Block.deserialize(body))
        if tag == 4:
            if len(body) != HASH_SIZE:
                raise BlockFormatError("block request must carry a 32-byte id")
            return BlockRequest(bytes(body))
        if tag == 5:
            return BlockResponse(Block.deserialize(body))
    except ProofFormatError as exc:
        raise BlockFormatError(str(exc)) from exc
    raise BlockFormatError(f"unknown message tag {tag}")
