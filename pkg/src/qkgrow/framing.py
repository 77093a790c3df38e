"""Length-prefixed binary framing for classical-channel messages.

Wire layout, all integers little-endian::

    record_len : u32   bytes that follow this field
    session_id : u64
    party      : u8    0 = Alice, 1 = Bob
    msg_type   : u8    see MsgType
    bit_length : u32
    payload    : ceil(bit_length / 8) bytes, bits packed LSB-first

For SACRIFICE_INDICES the payload is a bitmap over the sender's sifted
key with ones at the sacrificed positions.  ABORT carries no bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO, Iterator

from .keybits import BitString

__all__ = ["MsgType", "Party", "Message", "FramingError",
           "encode_message", "decode_message", "write_message", "read_messages"]

_PREFIX = struct.Struct("<I")
_HEADER = struct.Struct("<QBBI")
MAX_RECORD = 1 << 30


class FramingError(ValueError):
    pass


class MsgType(IntEnum):
    MASKED_BASES = 1
    CLEAR_BASES = 2
    SACRIFICE_INDICES = 3
    SACRIFICE_VALUES = 4
    ABORT = 5


class Party(IntEnum):
    ALICE = 0
    BOB = 1


@dataclass(frozen=True)
class Message:
    session_id: int
    party: Party
    msg_type: MsgType
    bits: BitString = field(default_factory=BitString)


def encode_message(msg: Message) -> bytes:
    if not 0 <= msg.session_id < 2**64:
        raise FramingError("session_id out of range")
    if len(msg.bits) >= 2**32:
        raise FramingError("payload too long for a 32-bit bit_length")
    body = _HEADER.pack(msg.session_id, int(msg.party), int(msg.msg_type), len(msg.bits))
    body += msg.bits.to_bytes()
    return _PREFIX.pack(len(body)) + body


def decode_message(data: bytes, offset: int = 0) -> tuple[Message, int]:
    """Decode one record starting at ``offset``.

    Returns the message and the offset just past it.
    """
    if len(data) - offset < _PREFIX.size:
        raise FramingError("truncated length prefix")
    (record_len,) = _PREFIX.unpack_from(data, offset)
    start = offset + _PREFIX.size
    end = start + record_len
    if record_len < _HEADER.size or record_len > MAX_RECORD:
        raise FramingError(f"invalid record length {record_len}")
    if len(data) < end:
        raise FramingError("truncated record")
    session_id, party, msg_type, bit_length = _HEADER.unpack_from(data, start)
    payload = bytes(data[start + _HEADER.size:end])
    if len(payload) != (bit_length + 7) // 8:
        raise FramingError("payload size does not match bit_length")
    try:
        party, msg_type = Party(party), MsgType(msg_type)
    except ValueError as exc:
        raise FramingError(str(exc)) from exc
    return Message(session_id, party, msg_type, BitString.from_bytes(payload, bit_length)), end


def write_message(stream: BinaryIO, msg: Message) -> None:
    stream.write(encode_message(msg))


def read_messages(stream: BinaryIO) -> Iterator[Message]:
    while True:
        prefix = stream.read(_PREFIX.size)
        if not prefix:
            return
        if len(prefix) < _PREFIX.size:
            raise FramingError("truncated length prefix")
        (record_len,) = _PREFIX.unpack(prefix)
        body = stream.read(record_len)
        msg, _ = decode_message(prefix + body)
        yield msg
