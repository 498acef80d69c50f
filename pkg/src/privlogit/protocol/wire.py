"""Binary message records exchanged between agencies and the server.

Record layout (little-endian)::

    u32 length      bytes that follow this field
    u8  kind        see :class:`Kind`
    u16 from        0 is the cloud server, agencies are 1..K
    u16 to
    payload:
      u16 origin    agency whose data the payload derives from
      u16 n_hops    followed by n_hops u16 agency ids, in application order
      u8  tag       kind-specific variant, see the ``TAG_*`` constants
      u32 rows
      u32 cols
      f64[rows*cols] row-major
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

SERVER = 0

_HEADER = struct.Struct("<IBHH")
_ORIGIN = struct.Struct("<HH")
_SHAPE = struct.Struct("<BII")

# BETA_STAR / DECRYPT_STEP tags
TAG_MODEL = 0
TAG_PSEUDO = 1
# VERIFY_REQ / VERIFY_DATA tags
TAG_FINAL_BLOCK = 0
TAG_INTERMEDIATE = 1


class WireError(ValueError):
    pass


class Kind(enum.IntEnum):
    SHARE_X = 1
    SHARE_Z = 2
    BSTAR = 3
    PSEUDO = 4
    BETA_STAR = 5
    DECRYPT_STEP = 6
    VERIFY_REQ = 7
    VERIFY_DATA = 8


@dataclass(frozen=True, eq=False)
class Message:
    kind: Kind
    sender: int
    recipient: int
    matrix: np.ndarray
    origin: int = 0
    hops: tuple[int, ...] = ()
    tag: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim == 1:
            m = m.reshape(-1, 1)
        if m.ndim != 2:
            raise WireError("payload matrix must be at most 2-D")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "hops", tuple(int(h) for h in self.hops))


def encode(msg: Message) -> bytes:
    m = np.ascontiguousarray(msg.matrix, dtype="<f8")
    hops = struct.pack(f"<{len(msg.hops)}H", *msg.hops)
    body = (
        _ORIGIN.pack(msg.origin, len(msg.hops))
        + hops
        + _SHAPE.pack(msg.tag, m.shape[0], m.shape[1])
        + m.tobytes()
    )
    length = _HEADER.size - 4 + len(body)
    return _HEADER.pack(length, int(msg.kind), msg.sender, msg.recipient) + body


def decode(record: bytes) -> Message:
    if len(record) < _HEADER.size:
        raise WireError("record shorter than header")
    length, kind, sender, recipient = _HEADER.unpack_from(record, 0)
    if length != len(record) - 4:
        raise WireError(f"length field {length} does not match record size {len(record) - 4}")
    off = _HEADER.size
    origin, n_hops = _ORIGIN.unpack_from(record, off)
    off += _ORIGIN.size
    hops = struct.unpack_from(f"<{n_hops}H", record, off)
    off += 2 * n_hops
    tag, rows, cols = _SHAPE.unpack_from(record, off)
    off += _SHAPE.size
    if len(record) - off != 8 * rows * cols:
        raise WireError(f"payload holds {len(record) - off} bytes, expected {8 * rows * cols}")
    matrix = np.frombuffer(record, dtype="<f8", offset=off).reshape(rows, cols).astype(np.float64)
    try:
        kind = Kind(kind)
    except ValueError:
        raise WireError(f"unknown message kind {kind}") from None
    return Message(kind, sender, recipient, matrix, origin, hops, tag)


def digest(record: bytes) -> str:
    return hashlib.sha256(record).hexdigest()
