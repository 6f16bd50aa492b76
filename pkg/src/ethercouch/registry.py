"""On-chain state machines derived from the canonical chain.

Two of them:

- the data registry: every accepted mutation record in chain order, with
  per-document latest revision numbers and tombstones, queryable by topic
  or editor;
- the peer directory: who is reachable where for off-chain transfers, and
  which peers have confirmed the current chain tip.

Both are plain native state machines. The sequence rules they enforce:
a document is born by an add at revision 1; every later mutation must
carry exactly the previous revision number plus one; nothing mutates a
deleted document.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import Digest, ZERO_DIGEST, digest_hex
from .ledger import DbFunction, Task, lineage_of, tx_digest

OK = "ok"
UNKNOWN_LINEAGE = "unknown-lineage"
STALE_SEQUENCE = "stale-sequence"
DUPLICATE_ADD = "duplicate-add"
ALREADY_DELETED = "already-deleted"
MALFORMED_ADD = "malformed-add"


def _validate(state: dict[Digest, tuple[int, bool]], tx: DbFunction) -> str:
    """Sequence-validity of one transaction against a lineage state map.

    The map carries (latest accepted sequence, deleted flag) per lineage.
    """
    if tx.task is Task.ADD:
        if tx.lineage != ZERO_DIGEST:
            return MALFORMED_ADD
        if tx.sequence_id != 1:
            return STALE_SEQUENCE
        if tx_digest(tx) in state:
            return DUPLICATE_ADD
        return OK
    entry = state.get(tx.lineage)
    if entry is None:
        return UNKNOWN_LINEAGE
    latest, deleted = entry
    if deleted:
        return ALREADY_DELETED
    if tx.sequence_id != latest + 1:
        return STALE_SEQUENCE
    return OK


def _apply(state: dict[Digest, tuple[int, bool]], tx: DbFunction) -> None:
    state[lineage_of(tx)] = (tx.sequence_id, tx.task is Task.DELETE)


class MempoolView:
    """Scratch lineage state for validating queued or candidate transactions
    on top of a fixed registry snapshot."""

    def __init__(self, state: dict[Digest, tuple[int, bool]]):
        self._state = state

    def validate(self, tx: DbFunction) -> str:
        return _validate(self._state, tx)

    def apply(self, tx: DbFunction) -> None:
        _apply(self._state, tx)

    def latest(self, lineage: Digest) -> tuple[int, bool] | None:
        return self._state.get(lineage)


@dataclass(frozen=True)
class RegistryEntry:
    tx: DbFunction
    lineage: Digest
    height: int
    index: int


class DataRegistry:
    """All accepted mutation records in canonical-chain order."""

    def __init__(self):
        self.entries: list[RegistryEntry] = []
        self._state: dict[Digest, tuple[int, bool]] = {}
        self.skipped = 0

    def validate(self, tx: DbFunction) -> str:
        return _validate(self._state, tx)

    def apply(self, tx: DbFunction, height: int, index: int) -> None:
        self.entries.append(RegistryEntry(tx, lineage_of(tx), height, index))
        _apply(self._state, tx)

    def latest(self, lineage: Digest) -> tuple[int, bool] | None:
        """(latest sequence, deleted flag) or None for unknown documents."""
        return self._state.get(lineage)

    def lineages(self) -> list[Digest]:
        return list(self._state)

    def fork_view(self) -> MempoolView:
        return MempoolView(dict(self._state))

    def rollback_to_height(self, height: int) -> None:
        """Drop entries above a block height, undoing their state effects.

        Entries are chain-ordered, so popping from the end in reverse is an
        exact inverse: an add forgets the lineage, an edit or delete steps
        the lineage back one revision.
        """
        while self.entries and self.entries[-1].height > height:
            e = self.entries.pop()
            if e.tx.task is Task.ADD:
                del self._state[e.lineage]
            else:
                self._state[e.lineage] = (e.tx.sequence_id - 1, False)

    @classmethod
    def rebuild(cls, chain) -> "DataRegistry":
        """Fold the canonical chain into a fresh registry.

        Invalid transactions inside adopted blocks (possible only when
        importing foreign chains) are skipped deterministically and counted.
        """
        reg = cls()
        for tx, height, index in chain.canonical_txs():
            if reg.validate(tx) == OK:
                reg.apply(tx, height, index)
            else:
                reg.skipped += 1
        return reg

    def query_by_topic(self, topic: Digest) -> list[DbFunction]:
        return [e.tx for e in self.entries if e.tx.topic_id == topic]

    def query_by_editor(self, editor: Digest) -> list[DbFunction]:
        return [e.tx for e in self.entries if e.tx.editor_hash == editor]

    def query_by_lineage(self, lineage: Digest) -> list[RegistryEntry]:
        return [e for e in self.entries if e.lineage == lineage]

    def dump_text(self) -> str:
        """Line-oriented rendering (dump-registry format): one accepted entry
        per line with its chain coordinates, in chain order."""
        lines = [
            f"{e.height}:{e.index} {e.tx.task.label} lineage={digest_hex(e.lineage)} "
            f"seq={e.tx.sequence_id} topic={digest_hex(e.tx.topic_id)} "
            f"editor={digest_hex(e.tx.editor_hash)} data={digest_hex(e.tx.data_hash)}"
            for e in self.entries
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PeerLocation:
    editor_hash: Digest
    location: str

    def __post_init__(self) -> None:
        if len(self.location.encode()) > 32:
            raise ValueError("location token longer than 32 bytes")


class UnknownPeer(KeyError):
    pass


class LocationRegistry:
    """Peer directory: registration, lookup, and tip-scoped currency marks.

    A peer is "up to date" only for the most recently reported tip; marking
    any other tip evicts everyone recorded for the previous one. The first
    peer in insertion order is the preferred off-chain source.
    """

    def __init__(self):
        self.all_peers: dict[Digest, PeerLocation] = {}
        self._up_tip: Digest | None = None
        self._up_peers: dict[Digest, None] = {}

    def register_peer(self, peer: PeerLocation) -> None:
        self.all_peers[peer.editor_hash] = peer

    def get_peer_location(self, editor_hash: Digest) -> str | None:
        """The registered location, or None: unknown peers are reported
        explicitly instead of falling through to a default value."""
        peer = self.all_peers.get(editor_hash)
        return peer.location if peer is not None else None

    def mark_up_to_date(self, editor_hash: Digest, tip: Digest) -> None:
        if editor_hash not in self.all_peers:
            raise UnknownPeer(digest_hex(editor_hash))
        if tip != self._up_tip:
            self._up_tip = tip
            self._up_peers = {}
        self._up_peers.setdefault(editor_hash, None)

    def get_up_to_date_peer(self) -> PeerLocation | None:
        """First up-to-date peer in insertion order, or None."""
        for editor in self._up_peers:
            return self.all_peers[editor]
        return None

    def up_to_date_peers(self) -> list[PeerLocation]:
        return [self.all_peers[e] for e in self._up_peers]

    @property
    def up_to_date_tip(self) -> Digest | None:
        return self._up_tip

    def registered(self) -> list[PeerLocation]:
        return list(self.all_peers.values())
