"""Per-peer revisioned document store, kept one-to-one with the chain.

Documents never change in place: every mutation appends a revision and the
highest revision is the active one, so the full change history stays
readable. Deletion erases payload bytes everywhere but keeps the revision
metadata, mirroring the ledger, where the references can never be removed.

Reads are purely local: neither ``get_active`` nor ``history`` touches any
chain structure.

Confirmed mutations can arrive out of order (off-chain fetches finish in
any order), so each document buffers future revisions until the gap closes.
Chain order is the only authority on sequencing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .crypto import (
    DEFAULT_CHUNK_SIZE,
    Digest,
    digest_hex,
    payload_root,
)
from .ledger import DbFunction, Task

Origin = tuple[int, int]  # (block height, index in block)


class StoreError(Exception):
    pass


class UnknownLineage(StoreError):
    """not-found: the store has never seen this document."""


class DuplicateDocument(StoreError):
    pass


class IntegrityError(StoreError):
    """Payload bytes do not hash to the on-chain data hash."""


class TombstoneError(StoreError):
    """Mutation aimed at a deleted document."""


class StaleRevision(StoreError):
    """Revision number at or below what is already stored."""


@dataclass
class Revision:
    seq: int
    data_hash: Digest
    payload: bytes | None
    origin: Origin


@dataclass
class Document:
    lineage: Digest
    topic_id: Digest
    revisions: list[Revision] = field(default_factory=list)
    deleted: bool = False
    deleted_seq: int | None = None

    @property
    def max_seq(self) -> int:
        return self.revisions[-1].seq if self.revisions else 0

    @property
    def active_seq(self) -> int | None:
        """Highest revision number, or None as the tombstone marker."""
        return None if self.deleted else self.max_seq


@dataclass(frozen=True)
class ApplyResult:
    """What one apply call did: the (lineage, seq) pairs that landed
    (buffered predecessors drain in the same call) or a buffered marker."""

    applied: tuple[tuple[Digest, int], ...] = ()
    buffered: bool = False


class StoreState:
    """One peer's document store.

    ``topics`` is the peer's interest filter (empty set means everything);
    it is carried here so serialized stores are self-describing for
    verification. ``applied_upto`` is the chain coordinate below which this
    store is complete; the owner advances it as mutations land in order.
    """

    SNAPSHOT_MAGIC = b"ECSTORE1"

    def __init__(self, chunk_size: int = DEFAULT_CHUNK_SIZE, topics: frozenset[Digest] = frozenset()):
        self.chunk_size = chunk_size
        self.topics = frozenset(topics)
        self.docs: dict[Digest, Document] = {}
        self.applied_upto: Origin | None = None
        # per-lineage future revisions waiting for their predecessor
        self._pending: dict[Digest, dict[int, tuple[DbFunction, bytes | None, Origin]]] = {}
        # payloads of rolled-back revisions, kept for cheap re-application
        self._retained: dict[Digest, bytes] = {}

    # -- mutation -------------------------------------------------------

    def _verify(self, payload: bytes, data_hash: Digest) -> None:
        if payload_root(payload, self.chunk_size) != data_hash:
            raise IntegrityError(digest_hex(data_hash))

    def _advance_mark(self, origin: Origin) -> None:
        if self.applied_upto is None or origin > self.applied_upto:
            self.applied_upto = origin

    def apply_add(self, tx: DbFunction, payload: bytes, origin: Origin, lineage: Digest) -> ApplyResult:
        """Create a document at revision 1 from a confirmed add."""
        self._verify(payload, tx.data_hash)
        if lineage in self.docs:
            raise DuplicateDocument(digest_hex(lineage))
        doc = Document(lineage=lineage, topic_id=tx.topic_id)
        doc.revisions.append(Revision(1, tx.data_hash, payload, origin))
        self.docs[lineage] = doc
        self._advance_mark(origin)
        done = [(lineage, 1)]
        done.extend(self._drain(doc))
        return ApplyResult(applied=tuple(done))

    def apply_edit(self, tx: DbFunction, payload: bytes, origin: Origin) -> ApplyResult:
        """Append a confirmed edit as the new active revision.

        Future revisions (gaps, or edits whose add has not landed yet) are
        buffered and drain automatically once the predecessor applies.
        """
        self._verify(payload, tx.data_hash)
        return self._apply_mutation(tx, payload, origin)

    def apply_delete(self, tx: DbFunction, origin: Origin) -> ApplyResult:
        """Apply a confirmed delete: erase every payload byte of the
        document while retaining hashes, sequence numbers and origins."""
        return self._apply_mutation(tx, None, origin)

    def _apply_mutation(self, tx: DbFunction, payload: bytes | None, origin: Origin) -> ApplyResult:
        lineage = tx.lineage
        doc = self.docs.get(lineage)
        if doc is None:
            self._buffer(lineage, tx, payload, origin)
            return ApplyResult(buffered=True)
        if doc.deleted:
            raise TombstoneError(digest_hex(lineage))
        if tx.sequence_id <= doc.max_seq:
            raise StaleRevision(f"{digest_hex(lineage)}:{tx.sequence_id}")
        if tx.sequence_id > doc.max_seq + 1:
            self._buffer(lineage, tx, payload, origin)
            return ApplyResult(buffered=True)
        self._land(doc, tx, payload, origin)
        done = [(lineage, tx.sequence_id)]
        done.extend(self._drain(doc))
        return ApplyResult(applied=tuple(done))

    def apply_erased(self, tx: DbFunction, origin: Origin, lineage: Digest) -> ApplyResult:
        """Record a revision whose payload is gone for good.

        Used when catching up past a delete: the bytes were erased
        network-wide, only the chain reference remains. Idempotent for
        revisions already present.
        """
        doc = self.docs.get(lineage)
        if doc is None:
            if tx.task is not Task.ADD:
                raise UnknownLineage(digest_hex(lineage))
            doc = Document(lineage=lineage, topic_id=tx.topic_id)
            doc.revisions.append(Revision(1, tx.data_hash, None, origin))
            self.docs[lineage] = doc
            self._advance_mark(origin)
            done = [(lineage, 1)]
            done.extend(self._drain(doc))
            return ApplyResult(applied=tuple(done))
        if tx.sequence_id <= doc.max_seq:
            return ApplyResult()
        if doc.deleted:
            raise TombstoneError(digest_hex(lineage))
        if tx.sequence_id > doc.max_seq + 1:
            self._buffer(lineage, tx, None, origin)
            return ApplyResult(buffered=True)
        self._land(doc, tx, None, origin)
        done = [(lineage, tx.sequence_id)]
        done.extend(self._drain(doc))
        return ApplyResult(applied=tuple(done))

    def _land(self, doc: Document, tx: DbFunction, payload: bytes | None, origin: Origin) -> None:
        doc.revisions.append(Revision(tx.sequence_id, tx.data_hash, payload, origin))
        self._advance_mark(origin)
        if tx.task is Task.DELETE:
            self._erase(doc, tx.sequence_id)

    def _erase(self, doc: Document, delete_seq: int) -> None:
        doc.deleted = True
        doc.deleted_seq = delete_seq
        for rev in doc.revisions:
            # side-buffer copies go too, even for revisions already emptied
            self._retained.pop(rev.data_hash, None)
            rev.payload = None
        self._pending.pop(doc.lineage, None)

    def _buffer(self, lineage: Digest, tx: DbFunction, payload: bytes | None, origin: Origin) -> None:
        self._pending.setdefault(lineage, {})[tx.sequence_id] = (tx, payload, origin)

    def _drain(self, doc: Document) -> list[tuple[Digest, int]]:
        done: list[tuple[Digest, int]] = []
        waiting = self._pending.get(doc.lineage)
        while waiting and not doc.deleted:
            entry = waiting.pop(doc.max_seq + 1, None)
            if entry is None:
                break
            tx, payload, origin = entry
            self._land(doc, tx, payload, origin)
            done.append((doc.lineage, tx.sequence_id))
        if waiting is not None and (not waiting or doc.deleted):
            self._pending.pop(doc.lineage, None)
        return done

    # -- reads (purely local, no chain access) --------------------------

    def get_active(self, lineage: Digest) -> bytes | None:
        """Active revision payload; None is the tombstone of a deleted
        document. Unknown documents raise UnknownLineage."""
        doc = self.docs.get(lineage)
        if doc is None:
            raise UnknownLineage(digest_hex(lineage))
        if doc.deleted:
            return None
        return doc.revisions[-1].payload

    def history(self, lineage: Digest) -> list[Revision]:
        doc = self.docs.get(lineage)
        if doc is None:
            raise UnknownLineage(digest_hex(lineage))
        return list(doc.revisions)

    def revision_payload(self, lineage: Digest, seq: int) -> bytes | None:
        doc = self.docs.get(lineage)
        if doc is None:
            return None
        for rev in doc.revisions:
            if rev.seq == seq:
                return rev.payload
        return None

    def has_document(self, lineage: Digest) -> bool:
        return lineage in self.docs

    # -- reorg repair ----------------------------------------------------

    def rollback_to(self, mark: Origin) -> list[Digest]:
        """Remove every revision recorded after ``mark`` (inclusive keep).

        Payloads of removed revisions go to a side buffer so re-application
        after a reorg does not need the network. Returns the lineages that
        were touched; documents whose add rolled back disappear entirely.
        """
        touched: list[Digest] = []
        for lineage in list(self.docs):
            doc = self.docs[lineage]
            kept = [r for r in doc.revisions if r.origin <= mark]
            if len(kept) == len(doc.revisions):
                continue
            for rev in doc.revisions[len(kept) :]:
                if rev.payload is not None:
                    self._retained[rev.data_hash] = rev.payload
            touched.append(lineage)
            if not kept:
                del self.docs[lineage]
                self._pending.pop(lineage, None)
                continue
            doc.revisions = kept
            if doc.deleted and doc.deleted_seq is not None and doc.deleted_seq > doc.max_seq:
                doc.deleted = False
                doc.deleted_seq = None
        for lineage, waiting in list(self._pending.items()):
            for seq in [s for s, (_, _, o) in waiting.items() if o > mark]:
                del waiting[seq]
            if not waiting:
                del self._pending[lineage]
        if self.applied_upto is not None and self.applied_upto > mark:
            self.applied_upto = mark
        return touched

    def retained_payload(self, data_hash: Digest) -> bytes | None:
        """Look up a rolled-back payload by its hash, if still buffered."""
        return self._retained.get(data_hash)

    def fill_payload(self, lineage: Digest, seq: int, payload: bytes) -> None:
        """Restore the bytes of an existing payload-less revision, verifying
        them against the recorded hash (post-rollback repair)."""
        doc = self.docs.get(lineage)
        if doc is None:
            raise UnknownLineage(digest_hex(lineage))
        for rev in doc.revisions:
            if rev.seq == seq:
                self._verify(payload, rev.data_hash)
                rev.payload = payload
                return
        raise StaleRevision(f"{digest_hex(lineage)}:{seq}")

    def raw_put(
        self,
        lineage: Digest,
        topic: Digest,
        seq: int,
        payload: bytes | None,
        delete: bool = False,
    ) -> None:
        """Direct write without chain coordination or hash verification:
        the plain-baseline storage path."""
        from .crypto import ZERO_DIGEST

        doc = self.docs.get(lineage)
        if doc is None:
            doc = Document(lineage=lineage, topic_id=topic)
            self.docs[lineage] = doc
        doc.revisions.append(Revision(seq, ZERO_DIGEST, None if delete else payload, (0, 0)))
        if delete:
            self._erase(doc, seq)

    def missing_payload_revisions(self) -> list[tuple[Digest, int, Digest]]:
        """(lineage, seq, data_hash) of live revisions whose bytes are absent."""
        out = []
        for doc in self.docs.values():
            if doc.deleted:
                continue
            for rev in doc.revisions:
                if rev.payload is None:
                    out.append((doc.lineage, rev.seq, rev.data_hash))
        return out

    # -- accounting and serialization ------------------------------------

    def payload_bytes(self) -> int:
        return sum(
            len(rev.payload)
            for doc in self.docs.values()
            for rev in doc.revisions
            if rev.payload is not None
        )

    def revision_triples(self) -> set[tuple[Digest, int, Digest]]:
        """The store's (lineage, seq, data_hash) set, for one-to-one checks."""
        return {
            (doc.lineage, rev.seq, rev.data_hash)
            for doc in self.docs.values()
            for rev in doc.revisions
        }

    def set_applied_upto(self, mark: Origin | None) -> None:
        self.applied_upto = mark

    def _sorted_docs(self) -> list[Document]:
        return [self.docs[k] for k in sorted(self.docs)]

    def dump_text(self) -> str:
        """Canonical text rendering (dump-store format): documents sorted by
        lineage, revisions in sequence order, payloads hex or ``-``."""
        mark = "none" if self.applied_upto is None else f"{self.applied_upto[0]}:{self.applied_upto[1]}"
        topics = "all" if not self.topics else ",".join(sorted(digest_hex(t) for t in self.topics))
        lines = [f"store applied_upto={mark} topics={topics}"]
        for doc in self._sorted_docs():
            active = "tombstone" if doc.deleted else str(doc.active_seq)
            lines.append(
                f"doc {digest_hex(doc.lineage)} topic={digest_hex(doc.topic_id)} "
                f"deleted={int(doc.deleted)} active={active} revisions={len(doc.revisions)}"
            )
            for rev in doc.revisions:
                payload = rev.payload.hex() if rev.payload is not None else "-"
                lines.append(
                    f"  rev seq={rev.seq} data={digest_hex(rev.data_hash)} "
                    f"origin={rev.origin[0]}:{rev.origin[1]} payload={payload}"
                )
        return "\n".join(lines) + "\n"

    def snapshot_bytes(self) -> bytes:
        """Length-prefixed binary snapshot of the durable store state.

        Transient repair buffers are not part of the snapshot: the layout is
        magic, chunk size, sorted topic filter, applied-upto mark, then each
        document (sorted by lineage) with its revisions in order.
        """
        out = [self.SNAPSHOT_MAGIC]
        out.append(_lp(_u64(self.chunk_size)))
        out.append(_lp(b"".join(sorted(self.topics))))
        if self.applied_upto is None:
            out.append(_lp(b"\x00"))
        else:
            out.append(_lp(b"\x01" + _u64(self.applied_upto[0]) + _u64(self.applied_upto[1])))
        docs = self._sorted_docs()
        out.append(_lp(_u64(len(docs))))
        for doc in docs:
            out.append(_lp(doc.lineage))
            out.append(_lp(doc.topic_id))
            out.append(_lp(bytes([int(doc.deleted)])))
            out.append(_lp(_u64(doc.deleted_seq or 0)))
            out.append(_lp(_u64(len(doc.revisions))))
            for rev in doc.revisions:
                out.append(_lp(_u64(rev.seq)))
                out.append(_lp(rev.data_hash))
                out.append(_lp(_u64(rev.origin[0])))
                out.append(_lp(_u64(rev.origin[1])))
                body = b"\x00" if rev.payload is None else b"\x01" + rev.payload
                out.append(_lp(body))
        return b"".join(out)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.snapshot_bytes())

    @classmethod
    def from_snapshot(cls, buf: bytes) -> "StoreState":
        from .ledger import _Reader

        if buf[:8] != cls.SNAPSHOT_MAGIC:
            raise ValueError("not a store snapshot")
        r = _Reader(buf[8:])
        chunk_size = r.u64_field()
        topics_blob = r.field()
        if len(topics_blob) % 32:
            raise ValueError("bad topic filter block")
        topics = frozenset(topics_blob[i : i + 32] for i in range(0, len(topics_blob), 32))
        markf = r.field()
        mark = None
        if markf[0] == 1:
            mark = (
                struct.unpack(">Q", markf[1:9])[0],
                struct.unpack(">Q", markf[9:17])[0],
            )
        store = cls(chunk_size=chunk_size, topics=topics)
        ndocs = r.u64_field()
        for _ in range(ndocs):
            lineage = r.field()
            topic = r.field()
            deleted = bool(r.field()[0])
            deleted_seq = r.u64_field() or None
            doc = Document(lineage=lineage, topic_id=topic, deleted=deleted, deleted_seq=deleted_seq)
            nrevs = r.u64_field()
            for _ in range(nrevs):
                seq = r.u64_field()
                data_hash = r.field()
                h = r.u64_field()
                i = r.u64_field()
                body = r.field()
                payload = body[1:] if body[0] == 1 else None
                doc.revisions.append(Revision(seq, data_hash, payload, (h, i)))
            store.docs[lineage] = doc
        if not r.done():
            raise ValueError("trailing bytes in snapshot")
        store.applied_upto = mark
        return store

    @classmethod
    def load(cls, path) -> "StoreState":
        with open(path, "rb") as f:
            return cls.from_snapshot(f.read())


def _lp(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _u64(n: int) -> bytes:
    return struct.pack(">Q", n)
