"""The peer state machine: publish, listen, fetch, verify, serve, resync.

A peer owns one chain replica and one document store and keeps them in a
one-to-one relationship: a mutation lands in the store only once its
transaction is mined to the configured confirmation depth, in chain order
per document. Payloads for hash-anchored mutations are pulled off-chain
from whoever holds them (the editor first, then the first up-to-date peer
from the directory, then everyone else registered) and every chunk is
checked against the on-chain merkle root before a byte is stored.

The peer is a deterministic event-driven machine: the surrounding
environment (a simulator here) feeds it messages, mining completions,
poll ticks and user actions one at a time, and collects outgoing messages.

Storage modes:
- ethercouch: chain carries fixed-size records, payloads replicate off-chain;
- chainonly: payloads ride inline in the transactions themselves;
- plain: no chain at all, direct local writes (benchmark baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from enum import Enum

from .crypto import (
    Digest,
    ZERO_DIGEST,
    chunk_payload,
    digest_hex,
    hash_bytes,
    merkle_prove,
    payload_root,
    verify_chunk,
)
from .docstore import (
    DuplicateDocument,
    IntegrityError,
    StaleRevision,
    StoreState,
    TombstoneError,
)
from .ledger import ChainState, DbFunction, Task, TxRejected, lineage_of, tx_digest
from .registry import LocationRegistry, PeerLocation
from .wire import (
    BlockAnnounce,
    BlockRequest,
    Refusal,
    Request,
    Response,
    TxAnnounce,
)


class Mode(Enum):
    ETHERCOUCH = "ethercouch"
    CHAIN_ONLY = "chainonly"
    PLAIN = "plain"


def editor_hash_for(name: str) -> Digest:
    """Peer identity digest, derived from the peer's name."""
    return hash_bytes(b"peer:" + name.encode())


def topic_hash(name: str) -> Digest:
    """Topic channel digest, derived from a topic name."""
    return hash_bytes(b"topic:" + name.encode())


@dataclass(frozen=True)
class PeerConfig:
    name: str
    topics: frozenset[Digest] = frozenset()  # empty = interested in everything
    confirmation_depth: int = 1
    mode: Mode = Mode.ETHERCOUCH

    def __post_init__(self) -> None:
        if self.confirmation_depth < 1:
            raise ValueError("confirmation_depth must be >= 1")
        if not self.name:
            raise ValueError("peer needs a name")

    @property
    def editor_hash(self) -> Digest:
        return editor_hash_for(self.name)


class FetchState(Enum):
    AWAITING_CONFIRM = "awaiting-confirm"
    FETCHING = "fetching"
    BUFFERED = "buffered"
    APPLIED = "applied"
    UNAVAILABLE = "unavailable"


@dataclass
class PendingFetch:
    """Lifecycle of one confirmed mutation on its way into the store."""

    tx: DbFunction
    lineage: Digest
    coord: tuple[int, int]
    state: FetchState = FetchState.AWAITING_CONFIRM
    refill: bool = False  # payload restore for an already-present revision
    candidates: list[Digest] = dc_field(default_factory=list)
    attempts: int = 0
    current_source: str | None = None
    sent_at: int = 0
    next_retry_at: int = 0
    retry_gap: int = 0


ROLLBACK_ALL_OF_HEIGHT = 1 << 62  # tx index bound: keep everything in a block


class Peer:
    """One network participant. Single-threaded; driven by its environment.

    The environment must provide: ``now()``, ``send(src, dst_name, msg)``,
    ``send_batch(src, dst_name, msgs)``, ``broadcast(src, msg)``,
    ``note(src, text)``, ``arm_mining(peer)``, ``request_poll(peer)`` and
    the ints ``poll_interval`` and ``fetch_timeout``.
    """

    def __init__(
        self,
        config: PeerConfig,
        env,
        location: LocationRegistry,
        difficulty_bits: int = 0,
        chunk_size: int = 4096,
        allow_empty_blocks: bool = False,
        max_txs_per_block: int = 100,
    ):
        self.config = config
        self.env = env
        self.location = location
        self.chunk_size = chunk_size
        self.max_txs_per_block = max_txs_per_block
        self.chain = ChainState(
            difficulty_bits=difficulty_bits,
            chunk_size=chunk_size,
            allow_empty_blocks=allow_empty_blocks,
        )
        self.store = StoreState(chunk_size=chunk_size, topics=config.topics)
        self.online = True
        self.staging: dict[Digest, bytes] = {}  # published payloads, served pre-apply
        self.pending: dict[tuple[Digest, int], PendingFetch] = {}
        # keys of pending entries that still need work; APPLIED entries leave
        # this index so chain-event scans stay proportional to open work
        self._active: dict[tuple[Digest, int], None] = {}
        self.push_cache: dict[tuple[Digest, int], bytes] = {}  # pushed, not yet usable
        self.own_unconfirmed: dict[Digest, DbFunction] = {}  # published, not yet mined
        self.own_mined: dict[Digest, tuple[DbFunction, int]] = {}  # mined, short of depth k
        self._next_reannounce: dict[Digest, int] = {}
        self.deferred: list[dict] = []
        self._resync: dict | None = None
        self._plain_seq: dict[Digest, int] = {}
        location.register_peer(PeerLocation(self.editor_hash, config.name))

    # -- identity --------------------------------------------------------

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def editor_hash(self) -> Digest:
        return self.config.editor_hash

    def _topic_ok(self, topic: Digest) -> bool:
        return not self.config.topics or topic in self.config.topics

    def _has_peers(self) -> bool:
        return len(self.location.all_peers) > 1

    def _track(self, key: tuple[Digest, int], pf: PendingFetch) -> None:
        self.pending[key] = pf
        if pf.state is FetchState.APPLIED:
            self._active.pop(key, None)
        else:
            self._active[key] = None

    def _set_state(self, pf: PendingFetch, state: FetchState) -> None:
        pf.state = state
        key = (pf.lineage, pf.tx.sequence_id)
        if state is FetchState.APPLIED:
            self._active.pop(key, None)
        elif key in self.pending:
            self._active[key] = None

    def describe_state(self) -> str:
        return (
            f"tip={digest_hex(self.chain.tip)[:12]} h={self.chain.height} "
            f"docs={len(self.store.docs)} pending={sum(1 for p in self.pending.values() if p.state is not FetchState.APPLIED)}"
        )

    # -- publishing -------------------------------------------------------

    def build_add_tx(self, payload: bytes, topic: Digest) -> DbFunction:
        inline = payload if self.config.mode is Mode.CHAIN_ONLY else None
        return DbFunction(
            task=Task.ADD,
            data_hash=payload_root(payload, self.chunk_size),
            editor_hash=self.editor_hash,
            topic_id=topic,
            sequence_id=1,
            lineage=ZERO_DIGEST,
            inline_payload=inline,
        )

    def publish(
        self,
        task: Task,
        topic: Digest,
        payload: bytes | None = None,
        lineage: Digest | None = None,
    ) -> DbFunction | None:
        """Create, validate and queue one mutation; returns the transaction.

        Plain mode writes straight to the store and returns None. For edits
        and deletes the peer must hold the document's latest revision.
        """
        if self.config.mode is Mode.PLAIN:
            self._plain_publish(task, topic, payload, lineage)
            return None
        if task is Task.ADD:
            tx = self.build_add_tx(payload, topic)
        else:
            latest = self.chain.speculative_latest(lineage)
            if latest is None:
                raise TxRejected("unknown-lineage")
            seq, deleted = latest
            if deleted:
                raise TxRejected("already-deleted")
            if task is Task.EDIT:
                tx = DbFunction(
                    task=Task.EDIT,
                    data_hash=payload_root(payload, self.chunk_size),
                    editor_hash=self.editor_hash,
                    topic_id=topic,
                    sequence_id=seq + 1,
                    lineage=lineage,
                    inline_payload=payload if self.config.mode is Mode.CHAIN_ONLY else None,
                )
            else:
                tx = DbFunction(
                    task=Task.DELETE,
                    data_hash=ZERO_DIGEST,
                    editor_hash=self.editor_hash,
                    topic_id=topic,
                    sequence_id=seq + 1,
                    lineage=lineage,
                )
        self.chain.submit_tx(tx)
        if payload is not None and self.config.mode is Mode.ETHERCOUCH:
            self.staging[tx.data_hash] = payload
        self.own_unconfirmed[tx_digest(tx)] = tx
        if self.online:
            self.env.broadcast(self, TxAnnounce(tx))
        self.env.arm_mining(self)
        self.env.request_poll(self)
        return tx

    def _plain_publish(self, task: Task, topic: Digest, payload: bytes | None, lineage: Digest | None) -> None:
        seq = self._plain_seq.get(lineage, 0) + 1
        self._plain_seq[lineage] = seq
        self.store.raw_put(lineage, topic, seq, payload, delete=task is Task.DELETE)

    def holds_latest(self, lineage: Digest) -> bool:
        """Is the local store level with the chain-plus-queue view, payload
        at hand, so an edit or delete can legitimately build on it?"""
        latest = self.chain.speculative_latest(lineage)
        doc = self.store.docs.get(lineage)
        if latest is None or doc is None or doc.deleted:
            return False
        seq, deleted = latest
        if deleted or doc.max_seq != seq:
            return False
        return doc.revisions[-1].payload is not None

    def user_action(self, task: Task, topic: Digest, payload: bytes | None, lineage: Digest | None) -> DbFunction | None:
        """Script-level publish with deferral: an edit or delete the peer
        cannot legitimately make yet is queued and retried as the local
        replica catches up; it is dropped once the document is deleted."""
        if self.config.mode is Mode.PLAIN or task is Task.ADD:
            return self.publish(task, topic, payload, lineage)
        if self._deferred_ready(lineage):
            try:
                return self.publish(task, topic, payload, lineage)
            except TxRejected as e:
                self.env.note(self, f"publish rejected {e.reason}")
                return None
        self.deferred.append({"task": task, "topic": topic, "payload": payload, "lineage": lineage})
        self.env.note(self, f"deferred {task.label} lineage={digest_hex(lineage)[:12]}")
        self.env.request_poll(self)
        return None

    def _deferred_ready(self, lineage: Digest) -> bool:
        return self.holds_latest(lineage)

    def _retry_deferred(self) -> None:
        if not self.deferred:
            return
        keep: list[dict] = []
        for intent in self.deferred:
            latest = self.chain.speculative_latest(intent["lineage"])
            if latest is not None and latest[1]:
                self.env.note(self, f"dropped deferred {intent['task'].label}: deleted")
                continue
            if self._deferred_ready(intent["lineage"]):
                try:
                    self.publish(intent["task"], intent["topic"], intent["payload"], intent["lineage"])
                except TxRejected as e:
                    self.env.note(self, f"deferred publish rejected {e.reason}")
                continue
            keep.append(intent)
        self.deferred = keep

    # -- lifecycle --------------------------------------------------------

    def go_offline(self) -> None:
        self.online = False
        self.env.note(self, "offline")

    def go_online(self) -> None:
        self.online = True
        self.env.note(self, "online")
        self.resync()

    def resync(self) -> None:
        """Rejoin after downtime: advertise our tip, ask a current peer for
        the block gap above our height, and re-flood unconfirmed local
        transactions. Payload gaps surface as pending fetches as the new
        blocks apply."""
        self.announce_tip()
        self._begin_resync(tried=())
        for tx in self.own_unconfirmed.values():
            self.env.broadcast(self, TxAnnounce(tx))
        self.env.arm_mining(self)
        self.env.request_poll(self)

    def _begin_resync(self, tried: tuple[str, ...]) -> None:
        source = self._pick_sync_source(exclude=tried)
        if source is None:
            self._resync = None
            return
        self.env.send(self, source, BlockRequest(self.chain.height + 1))
        self._resync = {"source": source, "sent_at": self.env.now(), "tried": tried + (source,)}

    def _pick_sync_source(self, exclude: tuple[str, ...]) -> str | None:
        up = self.location.get_up_to_date_peer()
        order: list[str] = []
        if up is not None:
            order.append(up.location)
        order.extend(p.location for p in self.location.registered())
        for name in order:
            if name != self.name and name not in exclude:
                return name
        return None

    def announce_tip(self) -> None:
        if self.chain.height > 0:
            self.env.broadcast(self, BlockAnnounce(self.chain.tip_block))

    # -- mining -----------------------------------------------------------

    def wants_mining(self) -> bool:
        return self.online and (bool(self.chain.mempool) or self.chain.allow_empty_blocks)

    def on_mine_complete(self) -> None:
        """The sampled work interval elapsed: assemble and adopt a block."""
        if not self.online:
            return
        if not self.chain.mempool and not self.chain.allow_empty_blocks:
            return
        block = self.chain.mine_block(self.editor_hash, max_txs=self.max_txs_per_block)
        report = self.chain.adopt_block(block)
        self.env.note(self, f"mined h={block.height} ntx={len(block.txs)} {digest_hex(block.block_hash)[:12]}")
        self._after_chain_event(report)
        self.env.broadcast(self, BlockAnnounce(block))

    # -- message handling ---------------------------------------------------

    def handle_message(self, msg, sender: str) -> None:
        if isinstance(msg, TxAnnounce):
            self._on_tx_announce(msg, sender)
        elif isinstance(msg, BlockAnnounce):
            self._on_block_announce(msg, sender)
        elif isinstance(msg, BlockRequest):
            self._on_block_request(msg, sender)
        elif isinstance(msg, Request):
            reply = self.serve_request(msg, sender)
            self.env.send(self, sender, reply)
        elif isinstance(msg, Response):
            self._on_response(msg, sender)
        elif isinstance(msg, Refusal):
            self._on_refusal(msg, sender)
        else:
            raise TypeError(f"unhandled message {type(msg).__name__}")

    def _on_tx_announce(self, msg: TxAnnounce, sender: str) -> None:
        try:
            self.chain.submit_tx(msg.tx)
        except TxRejected as e:
            self.env.note(self, f"tx from {sender} rejected: {e.reason}")
            return
        self.env.arm_mining(self)

    def _on_block_announce(self, msg: BlockAnnounce, sender: str) -> None:
        block = msg.block
        self._resync = None  # chain news arrived; a stale sync request is moot
        report = self.chain.adopt_block(block)
        if block.block_hash not in self.chain.blocks:
            if block.parent not in self.chain.blocks:
                # orphan: we are missing history; pull the sender's chain
                self.env.send(self, sender, BlockRequest(0))
            else:
                self.env.note(self, f"rejected block h={block.height} from {sender}")
            return
        self._after_chain_event(report)
        self.env.arm_mining(self)

    def _on_block_request(self, msg: BlockRequest, sender: str) -> None:
        blocks = self.chain.canonical_blocks()[msg.from_height :]
        if not blocks:
            blocks = [self.chain.tip_block]  # fence: tells the asker we have nothing newer
        self.env.send_batch(self, sender, [BlockAnnounce(b) for b in blocks])

    # -- serving ------------------------------------------------------------

    def serve_request(self, req: Request, requester: str):
        """Hand out chunks with proofs, or refuse.

        A requester with a declared topic filter only receives documents
        whose topic is inside that filter; everything else is refused so
        filtered peers cannot replicate data they are not meant to hold.
        """
        topic: Digest | None = None
        payload: bytes | None = None
        doc = self.store.docs.get(req.lineage)
        if doc is not None:
            topic = doc.topic_id
            payload = self.store.revision_payload(req.lineage, req.seq)
        if payload is None:
            for entry in self.chain.registry.query_by_lineage(req.lineage):
                if entry.tx.sequence_id == req.seq:
                    topic = entry.tx.topic_id
                    payload = self.staging.get(entry.tx.data_hash)
                    break
        if topic is None:
            return Refusal(req.lineage, req.seq, "not-held")
        if req.declared_topics and topic not in req.declared_topics:
            return Refusal(req.lineage, req.seq, "filter-refused")
        if payload is None:
            return Refusal(req.lineage, req.seq, "not-held")
        chunks = chunk_payload(payload, self.chunk_size)
        stop = len(chunks) if req.chunk_count == 0 else min(len(chunks), req.chunk_start + req.chunk_count)
        indices = range(req.chunk_start, stop)
        return Response(
            req.lineage,
            req.seq,
            req.chunk_start,
            tuple(chunks[i] for i in indices),
            tuple(merkle_prove(chunks, i) for i in indices),
        )

    # -- fetching -------------------------------------------------------------

    def _candidate_sources(self, tx: DbFunction) -> list[Digest]:
        order = [tx.editor_hash]
        up = self.location.get_up_to_date_peer()
        if up is not None:
            order.append(up.editor_hash)
        order.extend(p.editor_hash for p in self.location.registered())
        seen: set[Digest] = set()
        out: list[Digest] = []
        for editor in order:
            if editor == self.editor_hash or editor in seen:
                continue
            seen.add(editor)
            out.append(editor)
        return out

    def _start_fetch(self, pf: PendingFetch) -> None:
        pf.candidates = self._candidate_sources(pf.tx)
        pf.attempts = 0
        self._set_state(pf, FetchState.FETCHING)
        pf.retry_gap = self.env.poll_interval
        self._send_fetch(pf)

    def _send_fetch(self, pf: PendingFetch) -> None:
        while pf.attempts < len(pf.candidates):
            name = self.location.get_peer_location(pf.candidates[pf.attempts])
            if name is None:
                pf.attempts += 1
                continue
            declared = tuple(sorted(self.config.topics))
            self.env.send(self, name, Request(pf.lineage, pf.tx.sequence_id, 0, 0, declared))
            pf.current_source = name
            pf.sent_at = self.env.now()
            self.env.request_poll(self)
            return
        self._set_state(pf, FetchState.UNAVAILABLE)
        pf.current_source = None
        pf.next_retry_at = self.env.now() + pf.retry_gap
        pf.retry_gap = min(pf.retry_gap * 2, self.env.poll_interval * 8)
        self.env.note(self, f"unavailable lineage={digest_hex(pf.lineage)[:12]} seq={pf.tx.sequence_id}")
        self.env.request_poll(self)

    def _assemble_response(self, resp: Response, data_hash: Digest) -> bytes | None:
        """Verify every chunk against the on-chain root; None on any failure."""
        if resp.chunk_start != 0 or len(resp.chunks) != len(resp.proofs) or not resp.chunks:
            return None
        leaf_count = resp.proofs[0].leaf_count
        if len(resp.chunks) != leaf_count:
            return None
        for i, (chunk, proof) in enumerate(zip(resp.chunks, resp.proofs)):
            if proof.leaf_index != i or proof.leaf_count != leaf_count:
                return None
            if not verify_chunk(chunk, proof, data_hash):
                return None
        return b"".join(resp.chunks)

    def _on_response(self, resp: Response, sender: str) -> None:
        key = (resp.lineage, resp.seq)
        pf = self.pending.get(key)
        if pf is None:
            # pushed ahead of our chain view: keep raw, verify when the
            # transaction confirms locally. Filtered peers never hoard
            # bytes for documents they may not even subscribe to.
            if not self.config.topics and resp.chunk_start == 0:
                self._cache_push(key, b"".join(resp.chunks))
            return
        if pf.state is FetchState.APPLIED or pf.state is FetchState.BUFFERED:
            return
        payload = self._assemble_response(resp, pf.tx.data_hash)
        if payload is None:
            self.env.note(self, f"bad chunks from {sender} lineage={digest_hex(resp.lineage)[:12]}")
            if pf.state is FetchState.FETCHING and pf.current_source == sender:
                pf.attempts += 1
                self._send_fetch(pf)
            return
        if pf.state is FetchState.AWAITING_CONFIRM:
            # mined-before-apply rule: hold the bytes until depth k
            self._cache_push(key, payload)
            return
        self._apply_payload(pf, payload)

    def _cache_push(self, key: tuple[Digest, int], payload: bytes) -> None:
        self.push_cache[key] = payload
        while len(self.push_cache) > 256:
            self.push_cache.pop(next(iter(self.push_cache)))

    def _on_refusal(self, ref: Refusal, sender: str) -> None:
        pf = self.pending.get((ref.lineage, ref.seq))
        if pf is None or pf.state is not FetchState.FETCHING or pf.current_source != sender:
            return
        pf.attempts += 1
        self._send_fetch(pf)

    # -- applying ---------------------------------------------------------

    def _apply_payload(self, pf: PendingFetch, payload: bytes) -> bool:
        try:
            if pf.refill:
                self.store.fill_payload(pf.lineage, pf.tx.sequence_id, payload)
                self._set_state(pf, FetchState.APPLIED)
                self.env.note(self, f"refilled lineage={digest_hex(pf.lineage)[:12]} seq={pf.tx.sequence_id}")
                return True
            if pf.tx.task is Task.ADD:
                result = self.store.apply_add(pf.tx, payload, pf.coord, pf.lineage)
            else:
                result = self.store.apply_edit(pf.tx, payload, pf.coord)
        except IntegrityError:
            return False
        except (StaleRevision, DuplicateDocument, TombstoneError) as e:
            self._set_state(pf, FetchState.APPLIED)
            self.env.note(self, f"apply skipped ({type(e).__name__}) lineage={digest_hex(pf.lineage)[:12]}")
            return True
        if result.buffered:
            self._set_state(pf, FetchState.BUFFERED)
        self._mark_applied(result.applied)
        return True

    def _mark_applied(self, applied_pairs) -> None:
        for lineage, seq in applied_pairs:
            entry = self.pending.get((lineage, seq))
            if entry is not None:
                self._set_state(entry, FetchState.APPLIED)
            self.env.note(self, f"applied lineage={digest_hex(lineage)[:12]} seq={seq}")

    def _confirm_delete(self, pf: PendingFetch) -> None:
        """Apply a confirmed delete; revisions nobody can supply anymore are
        materialized as erased metadata first so history stays complete."""
        for entry in self.chain.registry.query_by_lineage(pf.lineage):
            if entry.tx.sequence_id >= pf.tx.sequence_id:
                continue
            result = self.store.apply_erased(entry.tx, (entry.height, entry.index), pf.lineage)
            self._mark_applied(result.applied)
            waiting = self.pending.get((pf.lineage, entry.tx.sequence_id))
            if waiting is not None and waiting.state is not FetchState.APPLIED:
                self._set_state(waiting, FetchState.APPLIED)
        try:
            result = self.store.apply_delete(pf.tx, pf.coord)
        except (StaleRevision, TombstoneError):
            self._set_state(pf, FetchState.APPLIED)
            return
        if result.buffered:
            self._set_state(pf, FetchState.BUFFERED)
        self._mark_applied(result.applied)
        # deletion reaches the publisher cache and push buffers too
        for entry in self.chain.registry.query_by_lineage(pf.lineage):
            self.staging.pop(entry.tx.data_hash, None)
        for key in [k for k in self.push_cache if k[0] == pf.lineage]:
            del self.push_cache[key]

    # -- chain events -------------------------------------------------------

    def _after_chain_event(self, report) -> None:
        if not report.tip_changed:
            return
        self.location.mark_up_to_date(self.editor_hash, self.chain.tip)
        if report.rolled_back:
            mark = (report.fork_height, ROLLBACK_ALL_OF_HEIGHT)
            self.store.rollback_to(mark)
            self.env.note(self, f"rolled back {len(report.rolled_back)} txs to h={report.fork_height}")
            for key in [k for k, p in self.pending.items() if p.coord[0] > report.fork_height]:
                del self.pending[key]
                self._active.pop(key, None)
            for tx in report.rolled_back:
                d = tx_digest(tx)
                if d in self.own_mined:
                    self.own_unconfirmed[d] = self.own_mined.pop(d)[0]
        for tx, h, i in report.applied:
            d = tx_digest(tx)
            if d in self.own_unconfirmed:
                self.own_mined[d] = (self.own_unconfirmed.pop(d), h)
            if not self._topic_ok(tx.topic_id):
                continue
            lineage = lineage_of(tx)
            self._track((lineage, tx.sequence_id), PendingFetch(tx=tx, lineage=lineage, coord=(h, i)))
        self._settle_own_txs()
        self._process_confirmations()
        if report.rolled_back:
            # only rollbacks can leave live revisions without payloads
            self._queue_missing_refills()
        self._retry_deferred()
        self.env.request_poll(self)

    def _settle_own_txs(self) -> None:
        tip_height = self.chain.height
        for d, (tx, h) in list(self.own_mined.items()):
            if tip_height - h + 1 < self.config.confirmation_depth:
                continue
            del self.own_mined[d]
            self.location.mark_up_to_date(self.editor_hash, self.chain.tip)
            if self.config.mode is Mode.ETHERCOUCH and tx.task is not Task.DELETE:
                self._push_payload(tx)
            self._next_reannounce.pop(d, None)

    def _push_payload(self, tx: DbFunction) -> None:
        """Off-chain broadcast after mining: hand the fresh payload to the
        peers currently marked up to date; everyone else pulls on demand."""
        recipients = [loc.location for loc in self.location.up_to_date_peers() if loc.location != self.name]
        if not recipients:
            return
        payload = self.staging.get(tx.data_hash)
        if payload is None:
            return
        chunks = chunk_payload(payload, self.chunk_size)
        resp = Response(
            lineage_of(tx),
            tx.sequence_id,
            0,
            tuple(chunks),
            tuple(merkle_prove(chunks, i) for i in range(len(chunks))),
        )
        for name in recipients:
            self.env.send(self, name, resp)

    def _process_confirmations(self) -> None:
        tip_height = self.chain.height
        k = self.config.confirmation_depth
        for key in list(self._active):
            pf = self.pending.get(key)
            if pf is None:
                self._active.pop(key, None)
                continue
            if pf.state is FetchState.AWAITING_CONFIRM:
                if tip_height - pf.coord[0] + 1 < k:
                    continue
                self._dispatch_confirmed(pf)
            elif pf.state is FetchState.UNAVAILABLE:
                # fresh chain activity: sources may have changed, retry now
                self._start_fetch(pf)

    def _dispatch_confirmed(self, pf: PendingFetch) -> None:
        if pf.tx.task is Task.DELETE:
            self._confirm_delete(pf)
            return
        if pf.tx.inline_payload is not None:
            self._set_state(pf, FetchState.FETCHING)  # transitional; applies immediately
            if not self._apply_payload(pf, pf.tx.inline_payload):
                self.env.note(self, f"inline payload corrupt lineage={digest_hex(pf.lineage)[:12]}")
                self._set_state(pf, FetchState.UNAVAILABLE)
                pf.next_retry_at = self.env.now() + self.env.poll_interval
            return
        local = self._local_payload(pf)
        if local is not None:
            self._set_state(pf, FetchState.FETCHING)
            if self._apply_payload(pf, local):
                return
        self._start_fetch(pf)

    def _local_payload(self, pf: PendingFetch) -> bytes | None:
        payload = self.staging.get(pf.tx.data_hash)
        if payload is None:
            payload = self.store.retained_payload(pf.tx.data_hash)
        if payload is None:
            cached = self.push_cache.pop((pf.lineage, pf.tx.sequence_id), None)
            if cached is not None and payload_root(cached, self.chunk_size) == pf.tx.data_hash:
                payload = cached
        return payload

    def _queue_missing_refills(self) -> None:
        """After a rollback un-deletes a document, its erased payloads need
        to come back from peers that never applied the delete."""
        for lineage, seq, data_hash in self.store.missing_payload_revisions():
            key = (lineage, seq)
            pf = self.pending.get(key)
            if pf is not None and pf.state is not FetchState.APPLIED:
                continue
            tx = None
            coord = None
            for entry in self.chain.registry.query_by_lineage(lineage):
                if entry.tx.sequence_id == seq:
                    tx = entry.tx
                    coord = (entry.height, entry.index)
                    break
            if tx is None or tx.data_hash != data_hash:
                continue
            refill = PendingFetch(tx=tx, lineage=lineage, coord=coord, refill=True)
            self._track(key, refill)
            local = self._local_payload(refill)
            self._set_state(refill, FetchState.FETCHING)
            if local is not None and self._apply_payload(refill, local):
                continue
            self._start_fetch(refill)

    # -- polling ------------------------------------------------------------

    def wants_poll(self) -> bool:
        if not self.online:
            return False
        if self._resync is not None or self.deferred:
            return True
        if self.own_unconfirmed and self._has_peers():
            return True
        return any(
            self.pending[key].state in (FetchState.FETCHING, FetchState.UNAVAILABLE)
            for key in self._active
        )

    def on_poll(self) -> None:
        if not self.online:
            return
        now = self.env.now()
        if self._resync is not None and now - self._resync["sent_at"] >= self.env.fetch_timeout:
            tried = self._resync["tried"]
            if len(tried) >= len(self.location.registered()) - 1:
                tried = ()  # everyone tried once; start the rotation over
            self._begin_resync(tried)
        for key in list(self._active):
            pf = self.pending.get(key)
            if pf is None:
                continue
            if pf.state is FetchState.FETCHING and now - pf.sent_at >= self.env.fetch_timeout:
                pf.attempts += 1
                self._send_fetch(pf)
            elif pf.state is FetchState.UNAVAILABLE and now >= pf.next_retry_at:
                gap = pf.retry_gap
                self._start_fetch(pf)
                if pf.state is FetchState.UNAVAILABLE:
                    pf.retry_gap = min(gap * 2, self.env.poll_interval * 8)
        self._reannounce_own(now)
        self._retry_deferred()
        self.env.request_poll(self)

    def _reannounce_own(self, now: int) -> None:
        if not self._has_peers():
            return  # single node: nobody to flood, settling happens on chain events
        for d, tx in list(self.own_unconfirmed.items()):
            if not self.chain.in_mempool(tx):
                # lost the sequence race on some branch; a dead record stays dead
                self.env.note(self, f"dropping dead tx {tx.task.label} seq={tx.sequence_id}")
                del self.own_unconfirmed[d]
                self._next_reannounce.pop(d, None)
                continue
            if now >= self._next_reannounce.get(d, 0):
                self.env.broadcast(self, TxAnnounce(tx))
                self._next_reannounce[d] = now + self.env.poll_interval * 2

    # -- verification hooks ---------------------------------------------------

    def unapplied_pending(self) -> list[PendingFetch]:
        return [self.pending[k] for k in self._active if self.pending[k].state is not FetchState.APPLIED]
