"""Content hashing and merkle trees for chunked off-chain transfers.

Every digest in the system is SHA-256 (32 bytes). Payloads travel between
peers as fixed-size chunks; a binary merkle tree over the chunk hashes lets
a receiver verify each chunk against the single 32-byte root recorded on
chain, without holding the whole payload first.

Wire contract (must match across implementations):
- leaf(i)   = sha256(chunk_i)
- parent    = sha256(left || right)
- an odd node at any level is paired with a copy of itself
- a single-chunk tree has root = sha256(chunk)
- digests serialize as 64 lowercase hex characters
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

# A Digest is plain bytes, always exactly 32 of them.
Digest = bytes

DIGEST_SIZE = 32
ZERO_DIGEST: Digest = b"\x00" * DIGEST_SIZE

# Default size of one off-chain transfer chunk. Configurable per deployment;
# all peers in one network must agree because the on-chain root depends on it.
DEFAULT_CHUNK_SIZE = 4096


def hash_bytes(payload: bytes) -> Digest:
    """SHA-256 of a byte string. Pure, deterministic, empty input allowed."""
    return hashlib.sha256(payload).digest()


def digest_hex(d: Digest) -> str:
    """Canonical text form of a digest: 64 lowercase hex chars."""
    return d.hex()


def digest_from_hex(s: str) -> Digest:
    d = bytes.fromhex(s)
    if len(d) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(d)}")
    return d


def chunk_payload(payload: bytes, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[bytes]:
    """Split a payload into transfer chunks.

    The final chunk may be short. An empty payload still produces one empty
    chunk so that every payload has a well-defined merkle root.
    """
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    if not payload:
        return [b""]
    return [payload[i : i + chunk_size] for i in range(0, len(payload), chunk_size)]


def payload_root(payload: bytes, chunk_size: int = DEFAULT_CHUNK_SIZE) -> Digest:
    """Merkle root of a payload after chunking. The on-chain data hash."""
    return merkle_root(chunk_payload(payload, chunk_size))


@dataclass(frozen=True)
class MerkleProof:
    """Inclusion proof for one chunk.

    siblings are ordered from the leaf level up to just below the root.
    For a tree of n leaves the proof carries ceil(log2(n)) siblings
    (0 for a single-leaf tree).
    """

    leaf_index: int
    leaf_count: int
    siblings: tuple[Digest, ...]


def _levels(leaf_count: int) -> int:
    """Number of sibling entries a proof needs for a tree of leaf_count leaves."""
    n = leaf_count
    levels = 0
    while n > 1:
        n = (n + 1) // 2
        levels += 1
    return levels


def merkle_root(chunks: list[bytes]) -> Digest:
    """Root of the binary merkle tree over sha256(chunk_i).

    Raises ValueError on an empty chunk list: "empty input".
    """
    if not chunks:
        raise ValueError("empty input")
    level = [hash_bytes(c) for c in chunks]
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [hash_bytes(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def merkle_prove(chunks: list[bytes], index: int) -> MerkleProof:
    """Build the inclusion proof for chunks[index].

    Raises IndexError if index is out of range, ValueError on empty input.
    """
    if not chunks:
        raise ValueError("empty input")
    if not 0 <= index < len(chunks):
        raise IndexError(f"chunk index {index} out of range for {len(chunks)} chunks")
    siblings: list[Digest] = []
    level = [hash_bytes(c) for c in chunks]
    pos = index
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        siblings.append(level[pos ^ 1])
        level = [hash_bytes(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        pos //= 2
    return MerkleProof(leaf_index=index, leaf_count=len(chunks), siblings=tuple(siblings))


def verify_chunk(chunk: bytes, proof: MerkleProof, root: Digest) -> bool:
    """True iff folding sha256(chunk) with the proof siblings reproduces root.

    The bit decomposition of leaf_index decides left/right at each level.
    Malformed proofs (bad index, wrong sibling count, non-digest siblings)
    return False rather than raising.
    """
    if proof.leaf_count < 1 or not 0 <= proof.leaf_index < proof.leaf_count:
        return False
    if len(proof.siblings) != _levels(proof.leaf_count):
        return False
    acc = hash_bytes(chunk)
    pos = proof.leaf_index
    for sib in proof.siblings:
        if not isinstance(sib, bytes) or len(sib) != DIGEST_SIZE:
            return False
        if pos % 2 == 0:
            acc = hash_bytes(acc + sib)
        else:
            acc = hash_bytes(sib + acc)
        pos //= 2
    return acc == root
