"""Hashing and merkle proof tests, checked against independent oracles."""

import hashlib
import random

import pytest

from ethercouch.crypto import (
    MerkleProof,
    chunk_payload,
    digest_from_hex,
    digest_hex,
    hash_bytes,
    merkle_prove,
    merkle_root,
    payload_root,
    verify_chunk,
)

# Published SHA-256 test vector for the empty string.
SHA256_EMPTY_HEX = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def oracle_root(chunks):
    """Straight-line reference: build every tree level as an explicit list."""
    level = [hashlib.sha256(c).digest() for c in chunks]
    while len(level) > 1:
        if len(level) % 2 == 1:
            level = level + [level[-1]]
        nxt = []
        for i in range(0, len(level), 2):
            nxt.append(hashlib.sha256(level[i] + level[i + 1]).digest())
        level = nxt
    return level[0]


def test_hash_deterministic():
    for b in [b"", b"a", b"hello world", bytes(range(256))]:
        assert hash_bytes(b) == hash_bytes(b)
        assert len(hash_bytes(b)) == 32


def test_hash_empty_matches_published_vector():
    assert hash_bytes(b"").hex() == SHA256_EMPTY_HEX


def test_hash_no_collisions_over_random_corpus():
    rng = random.Random(0xC0FFEE)
    seen = {}
    for _ in range(10_000):
        b = rng.randbytes(rng.randint(0, 64))
        d = hash_bytes(b)
        if d in seen:
            assert seen[d] == b
        seen[d] = b
    # distinct inputs gave distinct digests (dict collisions only for equal input)
    assert len(seen) == len({v for v in seen.values()})


def test_digest_hex_roundtrip():
    d = hash_bytes(b"x")
    assert digest_hex(d) == d.hex()
    assert len(digest_hex(d)) == 64
    assert digest_hex(d) == digest_hex(d).lower()
    assert digest_from_hex(digest_hex(d)) == d
    with pytest.raises(ValueError):
        digest_from_hex("abcd")


def test_single_chunk_root_is_chunk_hash():
    c = b"only chunk"
    assert merkle_root([c]) == hash_bytes(c)


def test_two_chunk_root_by_construction():
    c0, c1 = b"left", b"right"
    assert merkle_root([c0, c1]) == hash_bytes(hash_bytes(c0) + hash_bytes(c1))


def test_root_matches_oracle_on_eight_chunks():
    payload = bytes(range(200)) * 41  # 8200 bytes
    chunks = chunk_payload(payload, 1025)
    assert len(chunks) == 8
    assert merkle_root(chunks) == oracle_root(chunks)


def test_root_matches_oracle_up_to_64_chunks():
    rng = random.Random(7)
    for n in range(1, 65):
        chunks = [rng.randbytes(rng.randint(1, 40)) for _ in range(n)]
        assert merkle_root(chunks) == oracle_root(chunks)


def test_empty_input_rejected():
    with pytest.raises(ValueError, match="empty input"):
        merkle_root([])
    with pytest.raises(ValueError, match="empty input"):
        merkle_prove([], 0)


def test_single_chunk_proof_has_no_siblings():
    p = merkle_prove([b"c"], 0)
    assert p.siblings == ()
    assert verify_chunk(b"c", p, merkle_root([b"c"]))


def test_eight_chunk_proofs_have_three_siblings():
    chunks = [bytes([i]) * 10 for i in range(8)]
    for i in range(8):
        assert len(merkle_prove(chunks, i).siblings) == 3


def test_five_chunk_proof_verifies_last_index():
    chunks = [bytes([i]) * 17 for i in range(5)]
    root = merkle_root(chunks)
    proof = merkle_prove(chunks, 4)
    assert verify_chunk(chunks[4], proof, root)


def test_index_out_of_range():
    with pytest.raises(IndexError):
        merkle_prove([b"a", b"b"], 2)


def test_roundtrip_property_random_chunk_lists():
    rng = random.Random(42)
    for _ in range(60):
        n = rng.randint(1, 33)
        chunks = [rng.randbytes(rng.randint(0, 50)) for _ in range(n)]
        root = merkle_root(chunks)
        for i in range(n):
            assert verify_chunk(chunks[i], merkle_prove(chunks, i), root)


def test_tamper_sweep_every_byte_position():
    # flipping any single byte of any chunk of a 4-chunk payload must fail
    chunks = [b"alpha-chunk-0", b"beta-chunk-11", b"gamma-chunk-2", b"delta-chunk-3"]
    root = merkle_root(chunks)
    for i, chunk in enumerate(chunks):
        proof = merkle_prove(chunks, i)
        for pos in range(len(chunk)):
            bad = bytearray(chunk)
            bad[pos] ^= 0x01
            assert not verify_chunk(bytes(bad), proof, root)


def test_tamper_property_random():
    rng = random.Random(977)
    for _ in range(100):
        n = rng.randint(1, 16)
        chunks = [rng.randbytes(rng.randint(1, 64)) for _ in range(n)]
        root = merkle_root(chunks)
        i = rng.randrange(n)
        proof = merkle_prove(chunks, i)
        bad = bytearray(chunks[i])
        bad[rng.randrange(len(bad))] ^= 1 << rng.randrange(8)
        assert not verify_chunk(bytes(bad), proof, root)


def test_cross_document_root_rejected():
    a = [b"doc a chunk 0", b"doc a chunk 1"]
    b = [b"doc b chunk 0", b"doc b chunk 1"]
    proof = merkle_prove(a, 0)
    assert verify_chunk(a[0], proof, merkle_root(a))
    assert not verify_chunk(a[0], proof, merkle_root(b))


def test_malformed_proofs_return_false():
    chunks = [b"a", b"b", b"c"]
    root = merkle_root(chunks)
    good = merkle_prove(chunks, 1)
    assert verify_chunk(b"b", good, root)
    # wrong sibling count
    short = MerkleProof(1, 3, good.siblings[:1])
    assert not verify_chunk(b"b", short, root)
    # index outside the tree
    bad_index = MerkleProof(5, 3, good.siblings)
    assert not verify_chunk(b"b", bad_index, root)
    # sibling of the wrong width
    odd = MerkleProof(1, 3, (good.siblings[0][:16], good.siblings[1]))
    assert not verify_chunk(b"b", odd, root)


def test_chunking():
    assert chunk_payload(b"", 4) == [b""]
    assert chunk_payload(b"abcdefgh", 4) == [b"abcd", b"efgh"]
    assert chunk_payload(b"abcdefghi", 4) == [b"abcd", b"efgh", b"i"]
    with pytest.raises(ValueError):
        chunk_payload(b"x", 0)


def test_payload_root_consistent_with_manual_chunking():
    payload = bytes(range(256)) * 20
    assert payload_root(payload, 512) == merkle_root(chunk_payload(payload, 512))
