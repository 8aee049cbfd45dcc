import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minigrid import protocol as P
from minigrid.errors import FrameError, MalformedPayload, Oversize, Truncated

text = st.text(max_size=20)
small_json = st.recursive(
    st.none() | st.booleans() | st.integers(-1000, 1000) | text,
    lambda kids: st.lists(kids, max_size=3) | st.dictionaries(text, kids, max_size=3),
    max_leaves=8,
)

messages = st.one_of(
    st.builds(P.Consign, st.binary(max_size=64), st.sampled_from(["SYNC", "ASYNC"])),
    st.builds(P.Poll, text),
    st.builds(P.RetrieveOutcome, text),
    st.builds(P.Kill, text),
    st.just(P.ListVsites()),
    st.builds(P.DescribeResources, text),
    st.builds(P.Consigned, text),
    st.builds(P.OutcomeReply, text, st.binary(max_size=64)),
    st.builds(P.StatusReply, text, st.dictionaries(text, text, max_size=4), st.booleans(), st.none() | text),
    st.builds(P.VsiteList, st.lists(text, max_size=4)),
    st.builds(P.ResourceReply, text, st.dictionaries(text, small_json, max_size=3)),
    st.builds(P.Error, text, text),
)


@settings(max_examples=300)
@given(messages)
def test_message_round_trip(msg):
    assert P.decode_message(P.encode_message(msg)) == msg
    assert P.frame_decode(P.frame_encode(msg)) == [msg]


@settings(max_examples=100)
@given(st.lists(messages, max_size=5), st.randoms())
def test_split_and_merged_reads(msgs, rnd):
    stream = b"".join(P.frame_encode(m) for m in msgs)
    dec = P.FrameDecoder()
    got = []
    i = 0
    while i < len(stream):
        n = rnd.randint(1, 17)
        got += dec.feed(stream[i : i + n])
        i += n
    dec.eof()
    assert [P.decode_message(p) for p in got] == msgs


def test_byte_at_a_time_matches_whole_buffer():
    msgs = [P.Poll("a-1"), P.Consign(b"\x00\xff" * 100, "SYNC"), P.ListVsites()]
    stream = b"".join(P.frame_encode(m) for m in msgs)
    dec = P.FrameDecoder()
    got = []
    for b in stream:
        got += dec.feed(bytes([b]))
    assert [P.decode_message(p) for p in got] == P.frame_decode(stream)
    assert dec.pending == 0


def test_oversize_boundary():
    assert len(P.pack_frame(b"x" * P.MAX_FRAME)) == P.MAX_FRAME + 4
    with pytest.raises(Oversize):
        P.pack_frame(b"x" * (P.MAX_FRAME + 1))
    with pytest.raises(Oversize):
        P.FrameDecoder().feed(P.HEADER.pack(P.MAX_FRAME + 1))
    with pytest.raises(Oversize):
        P.read_frame(io.BytesIO(P.HEADER.pack(P.MAX_FRAME + 1)))


def test_truncated():
    frame = P.frame_encode(P.Poll("x"))
    dec = P.FrameDecoder()
    assert dec.feed(frame[:-1]) == []
    with pytest.raises(Truncated):
        dec.eof()
    with pytest.raises(Truncated):
        P.read_frame(io.BytesIO(frame[:-1]))
    with pytest.raises(Truncated):
        P.read_frame(io.BytesIO(frame[:2]))
    assert P.read_frame(io.BytesIO(b"")) is None


@pytest.mark.parametrize(
    "payload",
    [
        b"",
        b"not json",
        b"[]",
        b'{"type": "Nope"}',
        b'{"type": "Poll"}',
        b'{"type": "Poll", "job_id": 3}',
        b'{"type": "Consign", "ajo": "!!!", "mode": "SYNC"}',
        b'{"type": "StatusReply", "job_id": "a", "statuses": {}, "finished": true, "code": 7}',
        b"\xff\xfe",
    ],
)
def test_malformed_payloads(payload):
    with pytest.raises(MalformedPayload):
        P.decode_message(payload)


def test_corrupt_streams_never_crash():
    rng = random.Random(5)
    good = b"".join(P.frame_encode(m) for m in [P.Poll("j"), P.VsiteList(["a", "b"]), P.Consign(b"abc")])
    for _ in range(500):
        data = bytearray(good)
        for _ in range(rng.randint(1, 6)):
            data[rng.randrange(len(data))] = rng.randrange(256)
        try:
            P.frame_decode(bytes(data))
        except FrameError:
            pass


def test_type_field_discriminates():
    payload = P.encode_message(P.Kill("vsiteA-3"))
    assert b'"type":"Kill"' in payload
    assert payload == P.encode_message(P.decode_message(payload))
