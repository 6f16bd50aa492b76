"""Wire message serialization roundtrips."""

import pytest

from conftest import EDITOR_A, make_add
from ethercouch.crypto import chunk_payload, hash_bytes, merkle_prove
from ethercouch.ledger import ChainState
from ethercouch.wire import (
    BlockAnnounce,
    BlockRequest,
    Refusal,
    Request,
    Response,
    TxAnnounce,
    decode_message,
    describe,
    encode_message,
)


def roundtrip(msg):
    out = decode_message(encode_message(msg))
    assert out == msg
    assert describe(out)
    return out


def test_request_roundtrip():
    roundtrip(Request(hash_bytes(b"lin"), 3, 0, 0, ()))
    roundtrip(Request(hash_bytes(b"lin"), 1, 2, 5, (hash_bytes(b"t1"), hash_bytes(b"t2"))))


def test_response_roundtrip():
    payload = bytes(range(256)) * 5
    chunks = chunk_payload(payload, 300)
    proofs = tuple(merkle_prove(chunks, i) for i in range(len(chunks)))
    roundtrip(Response(hash_bytes(b"lin"), 2, 0, tuple(chunks), proofs))


def test_refusal_roundtrip():
    roundtrip(Refusal(hash_bytes(b"lin"), 4, "not-held"))
    roundtrip(Refusal(hash_bytes(b"lin"), 4, "filter-refused"))


def test_block_announce_roundtrip():
    state = ChainState(difficulty_bits=0)
    state.submit_tx(make_add(b"doc"))
    block = state.mine_block(EDITOR_A)
    out = roundtrip(BlockAnnounce(block))
    assert out.block.block_hash == block.block_hash


def test_block_request_and_tx_announce_roundtrip():
    roundtrip(BlockRequest(17))
    roundtrip(TxAnnounce(make_add(b"doc", inline=True)))


def test_garbage_rejected():
    with pytest.raises(ValueError):
        decode_message(b"")
    with pytest.raises(ValueError):
        decode_message(b"\xff\x00\x00")
    good = encode_message(BlockRequest(1))
    with pytest.raises(ValueError):
        decode_message(good + b"extra")
