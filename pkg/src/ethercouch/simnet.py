"""Deterministic discrete-event network simulator.

Time is integer ticks. Events are processed in (time, insertion-sequence)
order from a single heap, all randomness (latency draws, mining intervals)
comes from one seeded generator consumed in processing order, and peers are
advanced strictly one event at a time, so a (scenario, horizon) pair always
produces a bit-identical trace and final state.

Mining inside a scenario is simulated: each weighted miner's next block
completion is sampled from an exponential distribution whose rate is
proportional to its weight, and the ledger runs at difficulty zero because
the sampled delay stands in for the work. Real nonce search is exercised by
the ledger's own tests.

Messages between partitioned or offline peers are dropped and logged,
never retransmitted by the network; recovery belongs to the peer protocol.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from enum import Enum

from .crypto import hash_bytes
from .ledger import Task, TxRejected, lineage_of
from .peer import Mode, Peer, PeerConfig, topic_hash
from .registry import LocationRegistry
from .wire import decode_message, describe, encode_message


class EventKind(Enum):
    DELIVER = "deliver"
    MINE_COMPLETE = "mine"
    GO_OFFLINE = "go-offline"
    GO_ONLINE = "go-online"
    PARTITION = "partition"
    HEAL = "heal"
    USER_ACTION = "user-action"
    POLL_TICK = "poll"


@dataclass(order=True)
class SimEvent:
    at: int
    seq: int
    kind: EventKind = field(compare=False)
    target: str = field(compare=False, default="")
    payload: dict = field(compare=False, default_factory=dict)


@dataclass
class ScriptAction:
    at: int
    action: str  # publish | edit | delete | offline | online | partition | heal
    peer: str = ""
    args: dict = field(default_factory=dict)


@dataclass
class Scenario:
    seed: int
    peers: list[PeerConfig]
    mining_power: dict[str, float] = field(default_factory=dict)
    script: list[ScriptAction] = field(default_factory=list)
    latency: tuple[int, int] = (1, 10)
    mean_block_interval: int = 100
    poll_interval: int = 25
    difficulty_bits: int = 0
    chunk_size: int = 4096
    allow_empty_blocks: bool = False
    max_txs_per_block: int = 100

    def weights(self) -> dict[str, float]:
        if self.mining_power:
            return {p.name: self.mining_power.get(p.name, 0.0) for p in self.peers}
        return {p.name: 1.0 for p in self.peers}

    def validate(self) -> None:
        if not self.peers:
            raise ValueError("scenario needs at least one peer")
        names = [p.name for p in self.peers]
        if len(set(names)) != len(names):
            raise ValueError("peer names must be unique")
        lo, hi = self.latency
        if lo < 0 or hi < lo:
            raise ValueError("latency bounds must satisfy 0 <= min <= max")
        weights = self.weights()
        if any(w < 0 for w in weights.values()):
            raise ValueError("mining weights must be non-negative")
        if not any(w > 0 for w in weights.values()):
            raise ValueError("at least one mining weight must be positive")
        if self.mean_block_interval < 1:
            raise ValueError("mean_block_interval must be >= 1")
        if self.poll_interval < 1:
            raise ValueError("poll_interval must be >= 1")
        last = 0
        known = set(names)
        for i, act in enumerate(self.script):
            if act.at < last:
                raise ValueError(f"script times must be non-decreasing (entry {i})")
            last = act.at
            if act.action in ("publish", "edit", "delete", "offline", "online") and act.peer not in known:
                raise ValueError(f"script entry {i} targets unknown peer {act.peer!r}")
            if act.action == "publish" and ("doc" not in act.args or "topic" not in act.args):
                raise ValueError(f"publish entry {i} needs doc and topic")
            if act.action in ("edit", "delete") and "doc" not in act.args:
                raise ValueError(f"{act.action} entry {i} needs doc")
            if act.action == "partition" and not act.args.get("groups"):
                raise ValueError(f"partition entry {i} needs groups")
            if act.action not in ("publish", "edit", "delete", "offline", "online", "partition", "heal"):
                raise ValueError(f"unknown action {act.action!r}")


def deterministic_bytes(tag: str, size: int) -> bytes:
    """Seeded payload generator: a sha256 stream over the tag."""
    out = bytearray()
    counter = 0
    seed = tag.encode()
    while len(out) < size:
        out.extend(hashlib.sha256(seed + counter.to_bytes(8, "big")).digest())
        counter += 1
    return bytes(out[:size])


class Trace:
    """Append-only event log with a digest over its full text."""

    def __init__(self):
        self.lines: list[str] = []

    def add(self, line: str) -> None:
        self.lines.append(line)

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines:
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def text(self) -> str:
        return "\n".join(self.lines + [f"digest {self.digest()}"]) + "\n"


@dataclass
class SimResult:
    scenario: Scenario
    trace: Trace
    peers: dict[str, Peer]
    location: LocationRegistry
    clock: int

    def peer(self, name: str) -> Peer:
        return self.peers[name]

    def unfiltered_peers(self) -> list[Peer]:
        return [p for p in self.peers.values() if not p.config.topics]


class Simulation:
    """Owns the clock, the event heap, the peers and the shared directory."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.rng = random.Random(scenario.seed)
        self.clock = 0
        self._seq = 0
        self._heap: list[SimEvent] = []
        self.trace = Trace()
        self.location = LocationRegistry()
        self.poll_interval = scenario.poll_interval
        self.fetch_timeout = max(2 * scenario.latency[1] + 2, scenario.poll_interval)
        self._weights = scenario.weights()
        self._total_weight = sum(self._weights.values())
        self.partition: dict[str, int] | None = None
        self._mine_armed: dict[str, bool] = {}
        self._poll_armed: dict[str, bool] = {}
        self.peers: dict[str, Peer] = {}
        for cfg in scenario.peers:
            peer = Peer(
                cfg,
                env=self,
                location=self.location,
                difficulty_bits=scenario.difficulty_bits,
                chunk_size=scenario.chunk_size,
                allow_empty_blocks=scenario.allow_empty_blocks,
                max_txs_per_block=scenario.max_txs_per_block,
            )
            self.peers[cfg.name] = peer
            self._mine_armed[cfg.name] = False
            self._poll_armed[cfg.name] = False
        self.doc_lineages: dict[str, bytes] = {}
        self.doc_topics: dict[str, bytes] = {}
        # script-index -> payload, for callers that pre-build payloads
        # (the benchmark keeps data generation out of the timed region)
        self.payload_overrides: dict[int, bytes] = {}
        for idx, act in enumerate(scenario.script):
            args = dict(act.args)
            args["action"] = act.action
            args["_idx"] = idx
            kind = {
                "offline": EventKind.GO_OFFLINE,
                "online": EventKind.GO_ONLINE,
                "partition": EventKind.PARTITION,
                "heal": EventKind.HEAL,
            }.get(act.action, EventKind.USER_ACTION)
            self._push(act.at, kind, act.peer, args)
        if scenario.allow_empty_blocks:
            for peer in self.peers.values():
                self.arm_mining(peer)

    # -- event plumbing ---------------------------------------------------

    def _push(self, at: int, kind: EventKind, target: str, payload: dict) -> None:
        heapq.heappush(self._heap, SimEvent(at, self._seq, kind, target, payload))
        self._seq += 1

    def now(self) -> int:
        return self.clock

    def note(self, src, text: str) -> None:
        name = src.name if isinstance(src, Peer) else src
        self.trace.add(f"{self.clock:>7} note  {name:<8} {text}")

    # -- network ------------------------------------------------------------

    def _allowed(self, a: str, b: str) -> bool:
        if self.partition is None:
            return True
        return self.partition.get(a) == self.partition.get(b)

    def send(self, src: Peer, dst: str, msg) -> None:
        if dst not in self.peers:
            self.note(src, f"send to unknown peer {dst}")
            return
        if not src.online:
            return
        if not self._allowed(src.name, dst):
            self.trace.add(f"{self.clock:>7} drop  {src.name}->{dst} partitioned {describe(msg)}")
            return
        if not self.peers[dst].online:
            self.trace.add(f"{self.clock:>7} drop  {src.name}->{dst} offline {describe(msg)}")
            return
        lo, hi = self.scenario.latency
        delay = self.rng.randint(lo, hi)
        # messages cross the simulated wire in canonical serialized form
        self._push(self.clock + delay, EventKind.DELIVER, dst, {"from": src.name, "raw": encode_message(msg)})

    def send_batch(self, src: Peer, dst: str, msgs) -> None:
        """One latency draw for a multi-message response, preserving order."""
        if dst not in self.peers or not src.online:
            return
        if not self._allowed(src.name, dst) or not self.peers[dst].online:
            self.trace.add(f"{self.clock:>7} drop  {src.name}->{dst} batch of {len(msgs)}")
            return
        lo, hi = self.scenario.latency
        delay = self.rng.randint(lo, hi)
        for msg in msgs:
            self._push(self.clock + delay, EventKind.DELIVER, dst, {"from": src.name, "raw": encode_message(msg)})

    def broadcast(self, src: Peer, msg) -> None:
        for name in self.peers:
            if name != src.name:
                self.send(src, name, msg)

    # -- scheduling hooks -----------------------------------------------------

    def arm_mining(self, peer: Peer) -> None:
        w = self._weights.get(peer.name, 0.0)
        if w <= 0 or self._mine_armed[peer.name]:
            return
        if not peer.online or not peer.wants_mining():
            return
        rate = (w / self._total_weight) / self.scenario.mean_block_interval
        interval = max(1, round(self.rng.expovariate(rate)))
        self._mine_armed[peer.name] = True
        self._push(self.clock + interval, EventKind.MINE_COMPLETE, peer.name, {})

    def request_poll(self, peer: Peer) -> None:
        if self._poll_armed[peer.name] or not peer.online or not peer.wants_poll():
            return
        self._poll_armed[peer.name] = True
        self._push(self.clock + self.poll_interval, EventKind.POLL_TICK, peer.name, {})

    # -- run loop ----------------------------------------------------------------

    def run(self, until: int | None = None) -> SimResult:
        while self._heap:
            if until is not None and self._heap[0].at > until:
                break
            ev = heapq.heappop(self._heap)
            self.clock = max(self.clock, ev.at)
            self._process(ev)
        return SimResult(self.scenario, self.trace, self.peers, self.location, self.clock)

    def _process(self, ev: SimEvent) -> None:
        peer = self.peers.get(ev.target)
        if ev.kind is EventKind.DELIVER:
            msg = decode_message(ev.payload["raw"])
            if not peer.online:
                self.trace.add(f"{ev.at:>7} drop  ->{ev.target} offline-at-arrival {describe(msg)}")
                return
            self.trace.add(f"{ev.at:>7} recv  {ev.target:<8} from {ev.payload['from']}: {describe(msg)}")
            peer.handle_message(msg, ev.payload["from"])
        elif ev.kind is EventKind.MINE_COMPLETE:
            self._mine_armed[ev.target] = False
            if not peer.online:
                self.trace.add(f"{ev.at:>7} skip  {ev.target:<8} mine while offline")
                return
            peer.on_mine_complete()
            self.arm_mining(peer)
        elif ev.kind is EventKind.POLL_TICK:
            self._poll_armed[ev.target] = False
            if peer.online:
                peer.on_poll()
        elif ev.kind is EventKind.GO_OFFLINE:
            self.trace.add(f"{ev.at:>7} event {ev.target:<8} goes offline")
            peer.go_offline()
        elif ev.kind is EventKind.GO_ONLINE:
            self.trace.add(f"{ev.at:>7} event {ev.target:<8} comes online")
            peer.go_online()
        elif ev.kind is EventKind.PARTITION:
            groups = ev.payload["groups"]
            mapping: dict[str, int] = {}
            for gid, members in enumerate(groups):
                for name in members:
                    mapping[name] = gid
            rest = [n for n in self.peers if n not in mapping]
            for name in rest:
                mapping[name] = len(groups)
            self.partition = mapping
            self.trace.add(f"{ev.at:>7} event partition {groups}")
        elif ev.kind is EventKind.HEAL:
            self.partition = None
            self.trace.add(f"{ev.at:>7} event heal")
            for name, p in self.peers.items():
                if p.online:
                    p.announce_tip()
                    self.request_poll(p)
        elif ev.kind is EventKind.USER_ACTION:
            self._user_action(peer, ev.payload)

    # -- script actions --------------------------------------------------------

    def _payload_for(self, args: dict) -> bytes:
        override = self.payload_overrides.get(args["_idx"])
        if override is not None:
            return override
        if "data" in args:
            return args["data"].encode()
        size = int(args.get("size", 128))
        return deterministic_bytes(f"{self.scenario.seed}:{args['_idx']}:{args.get('doc', '')}", size)

    def _user_action(self, peer: Peer, args: dict) -> None:
        action = args["action"]
        doc = args.get("doc", "")
        if action == "publish":
            payload = self._payload_for(args)
            topic = topic_hash(args["topic"])
            self.trace.add(f"{self.clock:>7} user  {peer.name:<8} publish {doc} ({len(payload)}B)")
            if peer.config.mode is Mode.PLAIN:
                lineage = hash_bytes(b"plain-doc:" + doc.encode())
                peer.user_action(Task.ADD, topic, payload, lineage)
            else:
                try:
                    tx = peer.user_action(Task.ADD, topic, payload, None)
                except TxRejected as e:
                    self.note(peer, f"publish {doc} rejected: {e.reason}")
                    return
                if tx is None:
                    self.note(peer, f"publish {doc} rejected")
                    return
                lineage = lineage_of(tx)
            self.doc_lineages[doc] = lineage
            self.doc_topics[doc] = topic
        elif action in ("edit", "delete"):
            lineage = self.doc_lineages.get(doc)
            if lineage is None:
                self.note(peer, f"{action} {doc}: unknown document, skipped")
                return
            topic = self.doc_topics[doc]
            payload = self._payload_for(args) if action == "edit" else None
            task = Task.EDIT if action == "edit" else Task.DELETE
            self.trace.add(f"{self.clock:>7} user  {peer.name:<8} {action} {doc}")
            peer.user_action(task, topic, payload, lineage)
        else:
            raise ValueError(f"bad user action {action!r}")


# -- scenario files -------------------------------------------------------------


def scenario_to_json(s: Scenario) -> str:
    peers = []
    for p in s.peers:
        peers.append(
            {
                "name": p.name,
                "mode": p.mode.value,
                "topics": sorted(t.hex() for t in p.topics),
                "confirmation_depth": p.confirmation_depth,
            }
        )
    doc = {
        "seed": s.seed,
        "peers": peers,
        "mining_power": s.mining_power,
        "latency": list(s.latency),
        "mean_block_interval": s.mean_block_interval,
        "poll_interval": s.poll_interval,
        "difficulty_bits": s.difficulty_bits,
        "chunk_size": s.chunk_size,
        "allow_empty_blocks": s.allow_empty_blocks,
        "max_txs_per_block": s.max_txs_per_block,
        "script": [
            {"at": a.at, "action": a.action, **({"peer": a.peer} if a.peer else {}), **a.args}
            for a in s.script
        ],
    }
    return json.dumps(doc, indent=2)


def scenario_from_json(text: str) -> Scenario:
    doc = json.loads(text)
    peers = []
    for p in doc["peers"]:
        topics = frozenset(
            bytes.fromhex(t) if len(t) == 64 and _is_hex(t) else topic_hash(t)
            for t in p.get("topics", [])
        )
        peers.append(
            PeerConfig(
                name=p["name"],
                topics=topics,
                confirmation_depth=int(p.get("confirmation_depth", 1)),
                mode=Mode(p.get("mode", "ethercouch")),
            )
        )
    script = []
    for entry in doc.get("script", []):
        entry = dict(entry)
        at = int(entry.pop("at"))
        action = entry.pop("action")
        peer = entry.pop("peer", "")
        script.append(ScriptAction(at=at, action=action, peer=peer, args=entry))
    return Scenario(
        seed=int(doc["seed"]),
        peers=peers,
        mining_power={k: float(v) for k, v in doc.get("mining_power", {}).items()},
        script=script,
        latency=tuple(doc.get("latency", (1, 10))),
        mean_block_interval=int(doc.get("mean_block_interval", 100)),
        poll_interval=int(doc.get("poll_interval", 25)),
        difficulty_bits=int(doc.get("difficulty_bits", 0)),
        chunk_size=int(doc.get("chunk_size", 4096)),
        allow_empty_blocks=bool(doc.get("allow_empty_blocks", False)),
        max_txs_per_block=int(doc.get("max_txs_per_block", 100)),
    )


def _is_hex(s: str) -> bool:
    try:
        bytes.fromhex(s)
        return True
    except ValueError:
        return False


def run_scenario(scenario: Scenario, until: int | None = None) -> SimResult:
    return Simulation(scenario).run(until)
