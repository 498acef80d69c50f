import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from privlogit.protocol.wire import Kind, Message, WireError, decode, digest, encode


@settings(max_examples=50, deadline=None)
@given(
    st.sampled_from(list(Kind)),
    st.integers(0, 65535),
    st.integers(0, 65535),
    arrays(np.float64, st.tuples(st.integers(0, 5), st.integers(0, 5))),
    st.lists(st.integers(0, 65535), max_size=6),
    st.integers(0, 255),
)
def test_roundtrip(kind, sender, recipient, matrix, hops, tag):
    msg = Message(kind, sender, recipient, matrix, origin=sender, hops=tuple(hops), tag=tag)
    back = decode(encode(msg))
    assert (back.kind, back.sender, back.recipient, back.hops, back.tag) == (kind, sender, recipient, tuple(hops), tag)
    np.testing.assert_array_equal(back.matrix, matrix)


def test_layout_is_little_endian():
    rec = encode(Message(Kind.SHARE_X, 1, 0, np.array([[1.0]])))
    assert rec[4] == Kind.SHARE_X
    assert int.from_bytes(rec[:4], "little") == len(rec) - 4
    assert rec[-8:] == np.array([1.0], dtype="<f8").tobytes()


def test_truncated_record_rejected():
    rec = encode(Message(Kind.PSEUDO, 1, 2, np.ones((2, 2))))
    with pytest.raises(WireError):
        decode(rec[:-1])


def test_unknown_kind_rejected():
    rec = bytearray(encode(Message(Kind.PSEUDO, 1, 2, np.ones((1, 1)))))
    rec[4] = 99
    with pytest.raises(WireError):
        decode(bytes(rec))


def test_digest_changes_with_payload():
    a = encode(Message(Kind.PSEUDO, 1, 2, np.ones(3)))
    b = encode(Message(Kind.PSEUDO, 1, 2, np.ones(3) + 1e-16 * 0 + np.array([0, 0, 1e-12])))
    assert digest(a) != digest(b)
