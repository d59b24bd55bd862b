"""Wire protocol: binary framing, JSON console mapping, TCP pub/sub."""

from .jsonmap import json_to_message, message_to_json
from .net import Node, NodeSpec, NodeStats, load_topology, loopback_channel
from .wire import (
    MAGIC,
    MAX_BODY_LEN,
    MAX_DOF,
    DecodeResult,
    Message,
    MsgType,
    SessionOpcode,
    decode_message,
    encode_message,
    staleness_check,
)

__all__ = [
    "MAGIC",
    "MAX_BODY_LEN",
    "MAX_DOF",
    "DecodeResult",
    "Message",
    "MsgType",
    "SessionOpcode",
    "decode_message",
    "encode_message",
    "staleness_check",
    "json_to_message",
    "message_to_json",
    "Node",
    "NodeSpec",
    "NodeStats",
    "load_topology",
    "loopback_channel",
]
