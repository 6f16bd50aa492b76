"""Toy permissionless proof-of-work ledger carrying document mutations.

Every transaction is one mutation record: what happened (add/edit/delete),
the merkle root of the payload, who did it, which topic it belongs to, and
the resulting revision number. In chain-only mode the payload itself rides
along inline; in hash-anchored mode the chain stores the record only and
peers move payloads off-chain.

Canonical serialization (the wire and hashing contract):
- every field is length-prefixed with a 4-byte big-endian byte count;
- integer fields are encoded as 8-byte big-endian before prefixing;
- fields appear in declaration order;
- the optional inline payload is encoded as one presence byte (0x00 absent,
  0x01 present) followed by the payload bytes, prefixed as a single field.

A block's hash is the digest of its serialized parent, height, nonce,
miner and transaction list, in that order. Proof of work requires the
block hash to start with ``difficulty_bits`` zero bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from .crypto import (
    DEFAULT_CHUNK_SIZE,
    DIGEST_SIZE,
    ZERO_DIGEST,
    Digest,
    digest_hex,
    hash_bytes,
    payload_root,
)


class Task(Enum):
    ADD = 1
    EDIT = 2
    DELETE = 3

    @property
    def label(self) -> str:
        return self.name.lower()


_TASK_BY_CODE = {t.value: t for t in Task}


def _lp(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _u64(n: int) -> bytes:
    return struct.pack(">Q", n)


class _Reader:
    """Cursor over length-prefixed fields."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def field(self) -> bytes:
        if self.pos + 4 > len(self.buf):
            raise ValueError("truncated field prefix")
        (n,) = struct.unpack_from(">I", self.buf, self.pos)
        self.pos += 4
        if self.pos + n > len(self.buf):
            raise ValueError("truncated field body")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64_field(self) -> int:
        b = self.field()
        if len(b) != 8:
            raise ValueError("bad integer width")
        return struct.unpack(">Q", b)[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


@dataclass(frozen=True)
class DbFunction:
    """One on-chain data mutation record.

    ``lineage`` identifies the document the mutation belongs to: the digest
    of the document's add transaction. Adds carry the zero digest there
    (their own digest becomes the lineage id). ``inline_payload`` is only
    present in chain-only mode.
    """

    task: Task
    data_hash: Digest
    editor_hash: Digest
    topic_id: Digest
    sequence_id: int
    lineage: Digest = ZERO_DIGEST
    inline_payload: bytes | None = None

    def __post_init__(self) -> None:
        for name in ("data_hash", "editor_hash", "topic_id", "lineage"):
            v = getattr(self, name)
            if not isinstance(v, bytes) or len(v) != DIGEST_SIZE:
                raise ValueError(f"{name} must be {DIGEST_SIZE} bytes")
        if self.sequence_id < 0:
            raise ValueError("sequence_id must be non-negative")


def serialize_tx(tx: DbFunction) -> bytes:
    if tx.inline_payload is None:
        payload_field = b"\x00"
    else:
        payload_field = b"\x01" + tx.inline_payload
    return b"".join(
        (
            _lp(bytes([tx.task.value])),
            _lp(tx.data_hash),
            _lp(tx.editor_hash),
            _lp(tx.topic_id),
            _lp(_u64(tx.sequence_id)),
            _lp(tx.lineage),
            _lp(payload_field),
        )
    )


def parse_tx(buf: bytes) -> DbFunction:
    r = _Reader(buf)
    tx = _read_tx(r)
    if not r.done():
        raise ValueError("trailing bytes after transaction")
    return tx


def _read_tx(r: _Reader) -> DbFunction:
    code = r.field()
    if len(code) != 1 or code[0] not in _TASK_BY_CODE:
        raise ValueError("unknown task code")
    task = _TASK_BY_CODE[code[0]]
    data_hash = r.field()
    editor_hash = r.field()
    topic_id = r.field()
    sequence_id = r.u64_field()
    lineage = r.field()
    payload_field = r.field()
    if not payload_field or payload_field[0] not in (0, 1):
        raise ValueError("bad payload presence byte")
    inline = payload_field[1:] if payload_field[0] == 1 else None
    return DbFunction(task, data_hash, editor_hash, topic_id, sequence_id, lineage, inline)


def tx_digest(tx: DbFunction) -> Digest:
    # memoized on the instance: immutable fields, and chain-only payloads
    # make recomputation expensive
    d = tx.__dict__.get("_digest")
    if d is None:
        d = hash_bytes(serialize_tx(tx))
        object.__setattr__(tx, "_digest", d)
    return d


def lineage_of(tx: DbFunction) -> Digest:
    """The document identity a transaction belongs to."""
    return tx_digest(tx) if tx.task is Task.ADD else tx.lineage


def tx_text(tx: DbFunction) -> str:
    payload = tx.inline_payload.hex() if tx.inline_payload is not None else "-"
    return ":".join(
        (
            tx.task.label,
            digest_hex(tx.data_hash),
            digest_hex(tx.editor_hash),
            digest_hex(tx.topic_id),
            str(tx.sequence_id),
            digest_hex(tx.lineage),
            payload,
        )
    )


@dataclass(frozen=True)
class Block:
    parent: Digest
    height: int
    nonce: int
    miner: Digest
    txs: tuple[DbFunction, ...]
    block_hash: Digest

    def preimage(self) -> bytes:
        return block_preimage(self.parent, self.height, self.nonce, self.miner, self.txs)


def block_preimage(
    parent: Digest, height: int, nonce: int, miner: Digest, txs: tuple[DbFunction, ...]
) -> bytes:
    parts = [
        _lp(parent),
        _lp(_u64(height)),
        _lp(_u64(nonce)),
        _lp(miner),
        _lp(_u64(len(txs))),
    ]
    parts.extend(_lp(serialize_tx(t)) for t in txs)
    return b"".join(parts)


def serialize_block(block: Block) -> bytes:
    """Full canonical block encoding; the hash is recomputed on parse."""
    return block.preimage()


def parse_block(buf: bytes) -> Block:
    r = _Reader(buf)
    parent = r.field()
    height = r.u64_field()
    nonce = r.u64_field()
    miner = r.field()
    ntx = r.u64_field()
    txs = tuple(parse_tx(r.field()) for _ in range(ntx))
    if not r.done():
        raise ValueError("trailing bytes after block")
    return Block(parent, height, nonce, miner, txs, hash_bytes(buf))


def block_text(block: Block) -> str:
    """One-line text rendering, the dump-chain format.

    Field order: height, block hash, parent hash, nonce, miner, tx count,
    then the transactions joined by ``|`` (each as task:data:editor:topic:
    seq:lineage:payload-hex-or-dash).
    """
    txs = "|".join(tx_text(t) for t in block.txs)
    return (
        f"height={block.height} hash={digest_hex(block.block_hash)} "
        f"parent={digest_hex(block.parent)} nonce={block.nonce} "
        f"miner={digest_hex(block.miner)} ntx={len(block.txs)} txs={txs}"
    )


def meets_target(digest: Digest, difficulty_bits: int) -> bool:
    if difficulty_bits <= 0:
        return True
    return int.from_bytes(digest, "big") >> (256 - difficulty_bits) == 0


class TxRejected(ValueError):
    """A transaction failed validation; ``reason`` carries the code."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class InvalidBlock(ValueError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class ReorgReport:
    """What one adoption did to the canonical chain.

    ``applied`` lists newly canonical transactions with their chain
    coordinates; ``rolled_back`` lists transactions that fell off the old
    branch, in their old chain order. A plain tip extension has an empty
    ``rolled_back``.
    """

    old_tip: Digest
    new_tip: Digest
    fork_height: int
    rolled_back: list[DbFunction] = field(default_factory=list)
    applied: list[tuple[DbFunction, int, int]] = field(default_factory=list)

    @property
    def tip_changed(self) -> bool:
        return self.old_tip != self.new_tip

    @property
    def applied_txs(self) -> list[DbFunction]:
        return [tx for tx, _, _ in self.applied]


class ChainState:
    """One node's view of the ledger: block store, canonical tip, mempool.

    Single-threaded by design; a simulation advances one node at a time.
    The canonical chain is the longest valid chain known, ties broken by
    the lexicographically smaller tip hash. A derived data registry over
    the canonical chain is kept in step incrementally.
    """

    def __init__(
        self,
        difficulty_bits: int = 12,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        allow_empty_blocks: bool = False,
    ):
        from .registry import DataRegistry

        if not 0 <= difficulty_bits <= 32:
            raise ValueError("difficulty_bits must be in [0, 32]")
        self.difficulty_bits = difficulty_bits
        self.chunk_size = chunk_size
        self.allow_empty_blocks = allow_empty_blocks
        self.ops = 0  # instrumentation: counts chain operations, for read-locality tests
        genesis = self._mine_raw(ZERO_DIGEST, 0, ZERO_DIGEST, ())
        self.genesis = genesis
        self.blocks: dict[Digest, Block] = {genesis.block_hash: genesis}
        self.tip: Digest = genesis.block_hash
        self.canonical_hashes: list[Digest] = [genesis.block_hash]
        self.canonical_index: dict[Digest, tuple[int, int]] = {}
        self.mempool: list[DbFunction] = []
        self._mempool_set: set[Digest] = set()
        self.orphans: dict[Digest, list[Block]] = {}
        self.registry = DataRegistry()
        self._spec = self.registry.fork_view()

    # -- helpers -------------------------------------------------------

    @property
    def tip_block(self) -> Block:
        return self.blocks[self.tip]

    @property
    def height(self) -> int:
        return self.tip_block.height

    def canonical_blocks(self) -> list[Block]:
        return [self.blocks[h] for h in self.canonical_hashes]

    def canonical_txs(self):
        """Yield (tx, height, index_in_block) over the canonical chain."""
        for h in self.canonical_hashes:
            blk = self.blocks[h]
            for i, tx in enumerate(blk.txs):
                yield tx, blk.height, i

    def _mine_raw(self, parent: Digest, height: int, miner: Digest, txs: tuple) -> Block:
        nonce = 0
        while True:
            pre = block_preimage(parent, height, nonce, miner, txs)
            h = hash_bytes(pre)
            if meets_target(h, self.difficulty_bits):
                return Block(parent, height, nonce, miner, txs, h)
            nonce += 1

    def _inline_reason(self, tx: DbFunction) -> str | None:
        if tx.inline_payload is None:
            return None
        if payload_root(tx.inline_payload, self.chunk_size) != tx.data_hash:
            return "inline-hash-mismatch"
        return None

    # -- operations ----------------------------------------------------

    def submit_tx(self, tx: DbFunction) -> None:
        """Queue a transaction after validating it against the canonical
        chain plus everything already queued. Byte-equal resubmission is a
        no-op; anything invalid raises TxRejected with the reason code."""
        self.ops += 1
        if tx_digest(tx) in self._mempool_set:
            return
        reason = self._inline_reason(tx) or self._spec.validate(tx)
        if reason != "ok":
            raise TxRejected(reason)
        self._spec.apply(tx)
        self.mempool.append(tx)
        self._mempool_set.add(tx_digest(tx))

    def in_mempool(self, tx: DbFunction) -> bool:
        return tx_digest(tx) in self._mempool_set

    def speculative_latest(self, lineage: Digest) -> tuple[int, bool] | None:
        """(latest sequence, deleted) for a lineage as seen by the canonical
        chain plus the queued transactions; None for unknown lineages."""
        self.ops += 1
        return self._spec.latest(lineage)

    def mine_block(self, miner: Digest, max_txs: int = 100) -> Block:
        """Assemble up to max_txs queued transactions (submission order)
        into a block on the current tip and search nonces from zero until
        the difficulty target is met. The mempool is untouched until the
        block is adopted."""
        self.ops += 1
        if not self.mempool and not self.allow_empty_blocks:
            raise ValueError("mempool empty and empty-block mining disabled")
        view = self.registry.fork_view()
        chosen: list[DbFunction] = []
        for tx in self.mempool:
            if len(chosen) >= max_txs:
                break
            if self._inline_reason(tx) is None and view.validate(tx) == "ok":
                view.apply(tx)
                chosen.append(tx)
        tip = self.tip_block
        return self._mine_raw(self.tip, tip.height + 1, miner, tuple(chosen))

    def validate_block(self, block: Block) -> tuple[bool, str]:
        """Full validity check: known parent, consistent height, proof of
        work, hash integrity, and every transaction valid in order against
        the registry state at the parent."""
        self.ops += 1
        if block.block_hash == self.genesis.block_hash:
            return (block == self.genesis, "genesis")
        if block.parent not in self.blocks:
            return (False, "unknown-parent")
        parent = self.blocks[block.parent]
        if block.height != parent.height + 1:
            return (False, "bad-height")
        if hash_bytes(block.preimage()) != block.block_hash:
            return (False, "hash-mismatch")
        if not meets_target(block.block_hash, self.difficulty_bits):
            return (False, "pow-target")
        view = self._view_at(block.parent)
        for tx in block.txs:
            reason = self._inline_reason(tx) or view.validate(tx)
            if reason != "ok":
                return (False, f"tx-invalid:{reason}")
            view.apply(tx)
        return (True, "ok")

    def _view_at(self, block_digest: Digest):
        """Registry validation view for the chain ending at block_digest."""
        if block_digest == self.tip:
            return self.registry.fork_view()
        from .registry import DataRegistry

        path = []
        cur = block_digest
        while cur != ZERO_DIGEST:
            blk = self.blocks[cur]
            path.append(blk)
            cur = blk.parent
        path.reverse()
        reg = DataRegistry()
        for blk in path:
            for i, tx in enumerate(blk.txs):
                if reg.validate(tx) == "ok":
                    reg.apply(tx, blk.height, i)
        return reg.fork_view()

    def adopt_block(self, block: Block) -> ReorgReport:
        """Store a validated block and re-run fork choice.

        Unknown parents park the block in the orphan buffer (empty report,
        no tip change); connecting a parent later re-plays its orphans.
        The report describes exactly how the canonical transaction sequence
        changed so a document store can repair itself.
        """
        self.ops += 1
        old_tip = self.tip
        if block.block_hash in self.blocks:
            return ReorgReport(old_tip, old_tip, self.tip_block.height)
        if block.parent not in self.blocks:
            bucket = self.orphans.setdefault(block.parent, [])
            if block not in bucket:
                bucket.append(block)
            return ReorgReport(old_tip, old_tip, self.tip_block.height)

        queue = [block]
        while queue:
            blk = queue.pop(0)
            if blk.block_hash in self.blocks:
                continue
            ok, _reason = self.validate_block(blk)
            if not ok:
                continue
            self.blocks[blk.block_hash] = blk
            queue.extend(self.orphans.pop(blk.block_hash, []))

        best = self._best_tip()
        if best == old_tip:
            return ReorgReport(old_tip, old_tip, self.tip_block.height)
        return self._switch_tip(best)

    def _best_tip(self) -> Digest:
        """Longest chain wins; equal heights fall to the smaller hash."""
        best = self.tip
        best_blk = self.blocks[best]
        for h, blk in self.blocks.items():
            if blk.height > best_blk.height or (
                blk.height == best_blk.height and h < best
            ):
                best, best_blk = h, blk
        return best

    def _switch_tip(self, new_tip: Digest) -> ReorgReport:
        old_tip = self.tip
        canonical = set(self.canonical_hashes)
        new_branch: list[Block] = []
        cur = new_tip
        while cur not in canonical:
            blk = self.blocks[cur]
            new_branch.append(blk)
            cur = blk.parent
        new_branch.reverse()
        fork_height = self.blocks[cur].height
        old_branch = [self.blocks[h] for h in self.canonical_hashes[fork_height + 1 :]]

        rolled_back = [tx for blk in old_branch for tx in blk.txs]
        applied = [
            (tx, blk.height, i) for blk in new_branch for i, tx in enumerate(blk.txs)
        ]

        # canonical bookkeeping
        for blk in old_branch:
            for tx in blk.txs:
                self.canonical_index.pop(tx_digest(tx), None)
        del self.canonical_hashes[fork_height + 1 :]
        for blk in new_branch:
            self.canonical_hashes.append(blk.block_hash)
            for i, tx in enumerate(blk.txs):
                self.canonical_index[tx_digest(tx)] = (blk.height, i)
        self.tip = new_tip

        # derived registry follows the canonical chain
        self.registry.rollback_to_height(fork_height)
        for tx, h, i in applied:
            if self.registry.validate(tx) == "ok":
                self.registry.apply(tx, h, i)

        # mempool maintenance. Pure tip extension by transactions we already
        # queued leaves the combined chain-plus-mempool view untouched, so
        # the speculative state can be kept as is; anything else (reorgs,
        # foreign transactions) rebuilds it from scratch.
        applied_digests = {tx_digest(tx) for tx, _, _ in applied}
        if not rolled_back and applied_digests <= self._mempool_set:
            k = len(applied_digests)
            if {tx_digest(t) for t in self.mempool[:k]} == applied_digests:
                self.mempool = self.mempool[k:]  # FIFO mining took the prefix
            else:
                self.mempool = [tx for tx in self.mempool if tx_digest(tx) not in applied_digests]
            self._mempool_set -= applied_digests
        else:
            reinserted = [tx for tx in rolled_back if tx_digest(tx) not in applied_digests]
            survivors = [tx for tx in self.mempool if tx_digest(tx) not in applied_digests]
            view = self.registry.fork_view()
            rebuilt: list[DbFunction] = []
            rebuilt_set: set[Digest] = set()
            for tx in reinserted + survivors:
                d = tx_digest(tx)
                if d in rebuilt_set:
                    continue
                if self._inline_reason(tx) is None and view.validate(tx) == "ok":
                    view.apply(tx)
                    rebuilt.append(tx)
                    rebuilt_set.add(d)
            self.mempool = rebuilt
            self._mempool_set = rebuilt_set
            self._spec = view

        return ReorgReport(old_tip, new_tip, fork_height, rolled_back, applied)

    def confirmations(self, tx: DbFunction) -> int:
        """0 while queued or unknown; 1 for the tip block; +1 per block on top."""
        self.ops += 1
        coord = self.canonical_index.get(tx_digest(tx))
        if coord is None:
            return 0
        return 1 + self.tip_block.height - coord[0]

    # -- persistence ---------------------------------------------------

    CHAIN_MAGIC = b"ECCHAIN1"

    def dump_text(self) -> str:
        """Canonical-chain rendering, one block per line (dump-chain format)."""
        self.ops += 1
        return "\n".join(block_text(b) for b in self.canonical_blocks()) + "\n"

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.CHAIN_MAGIC)
            f.write(_lp(_u64(self.difficulty_bits)))
            f.write(_lp(_u64(self.chunk_size)))
            for blk in self.canonical_blocks():
                f.write(_lp(serialize_block(blk)))

    @classmethod
    def load(cls, path) -> "ChainState":
        with open(path, "rb") as f:
            buf = f.read()
        if buf[:8] != cls.CHAIN_MAGIC:
            raise ValueError("not a chain file")
        r = _Reader(buf[8:])
        difficulty_bits = r.u64_field()
        chunk_size = r.u64_field()
        state = cls(difficulty_bits=difficulty_bits, chunk_size=chunk_size)
        first = True
        while not r.done():
            blk = parse_block(r.field())
            if first:
                if blk != state.genesis:
                    raise ValueError("genesis mismatch")
                first = False
                continue
            state.adopt_block(blk)
            if blk.block_hash not in state.blocks:
                raise InvalidBlock(f"rejected block at height {blk.height}")
        return state
