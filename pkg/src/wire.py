"""
即時節點的 UDP 資料包編解碼

每個資料包固定 28 位元組（小端序）：
    magic   2B  0x4E 0x43 ("NC")
    version 1B  = 1
    kind    1B  0=TICK, 1=SENSOR, 2=CONTROL, 3=DONE
    seq     8B  無號整數
    stamp   8B  IEEE-754 double（秒）
    value   8B  IEEE-754 double
"""

import struct
from dataclasses import dataclass
from enum import IntEnum

MAGIC = b"NC"
VERSION = 1
FRAME_LEN = 28

_FRAME = struct.Struct("<2sBBQdd")


class Kind(IntEnum):
    TICK = 0
    SENSOR = 1
    CONTROL = 2
    DONE = 3


class WireError(ValueError):
    """
    資料包格式錯誤

    Attributes:
        reason (str): "length"、"magic"、"version" 或 "kind"
    """

    def __init__(self, reason: str, message: str):
        self.reason = reason
        super().__init__(message)


@dataclass(frozen=True)
class WirePacket:
    kind: Kind
    seq: int
    stamp: float = 0.0
    value: float = 0.0


def encode_wire(pkt: WirePacket) -> bytes:
    """將封包編碼為 28 位元組的資料包"""
    return _FRAME.pack(MAGIC, VERSION, int(pkt.kind), pkt.seq, pkt.stamp, pkt.value)


def decode_wire(data: bytes) -> WirePacket:
    """
    解碼資料包

    Raises:
        WireError: 長度、magic、版本或種類不正確時
    """
    if len(data) != FRAME_LEN:
        raise WireError("length", f"wrong length: 資料包長度必須是 {FRAME_LEN}，收到 {len(data)}")
    magic, version, kind, seq, stamp, value = _FRAME.unpack(data)
    if magic != MAGIC:
        raise WireError("magic", f"bad magic: {magic!r}")
    if version != VERSION:
        raise WireError("version", f"unsupported version: {version}")
    try:
        decoded_kind = Kind(kind)
    except ValueError as exc:
        raise WireError("kind", f"unknown kind: {kind}") from exc
    return WirePacket(kind=decoded_kind, seq=seq, stamp=stamp, value=value)


def tick_packet(k: int) -> WirePacket:
    """週期 k 的同步資料包（value 固定為 0）"""
    return WirePacket(kind=Kind.TICK, seq=k)
