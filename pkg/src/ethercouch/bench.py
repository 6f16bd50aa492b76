"""Insert-scaling benchmark across the three storage modes, plus the
hash/mapping verifier used by the CLI.

The benchmark drives a single-node scenario per (mode, count) cell:
publish ``count`` synthetic maintenance tickets, mine them, apply them,
and time the whole pipeline wall-clock. Each cell runs several times and
reports the mean. Simulated tick counts and byte counters are functions
of the seed alone, so they are identical across repetitions; only wall
time varies.

Byte accounting: ``chain_bytes`` is the total serialized size of the
transactions on the canonical chain. In hash-anchored mode every record
is the same size no matter how big the document is, so chain bytes depend
only on the count; in chain-only mode they grow with the payloads.
``store_bytes`` is the payload volume retained in the document store.
"""

from __future__ import annotations

import gc
import statistics
import time
from dataclasses import dataclass

from .crypto import digest_hex, payload_root
from .docstore import StoreState
from .ledger import ChainState, serialize_tx
from .peer import Mode, PeerConfig
from .registry import DataRegistry
from .simnet import Scenario, ScriptAction, Simulation

TICKET_TOPIC = "maintenance-tickets"


@dataclass
class BenchSpec:
    mode: str  # ethercouch | chainonly | plain
    counts: list[int]
    doc_size: int = 4096
    repetitions: int = 5
    seed: int = 0
    chunk_size: int = 4096
    max_txs_per_block: int = 100

    def validate(self) -> None:
        Mode(self.mode)
        if not self.counts:
            raise ValueError("counts must be non-empty")
        if any(c < 1 for c in self.counts):
            raise ValueError("counts must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.doc_size < 1:
            raise ValueError("doc_size must be positive")


@dataclass
class BenchResult:
    mode: str
    count: int
    doc_size: int
    wall_seconds: list[float]
    ticks: list[int]
    chain_bytes: int
    store_bytes: int

    @property
    def mean_wall(self) -> float:
        return statistics.fmean(self.wall_seconds)


def make_ticket(seed: int, index: int, size: int) -> bytes:
    """One synthetic maintenance ticket: a small structured header padded
    with seeded pseudo-random bytes to the requested size."""
    from .simnet import deterministic_bytes

    header = f"ticket-{index:08d}|seed={seed}|".encode()
    if len(header) >= size:
        return header[:size]
    return header + deterministic_bytes(f"ticket:{seed}:{index}", size - len(header))


def _bench_scenario(spec: BenchSpec, count: int) -> tuple[Scenario, dict[int, bytes]]:
    script = [
        ScriptAction(0, "publish", "node0", {"doc": f"ticket-{i}", "topic": TICKET_TOPIC, "size": spec.doc_size})
        for i in range(count)
    ]
    scenario = Scenario(
        seed=spec.seed,
        peers=[PeerConfig(name="node0", mode=Mode(spec.mode))],
        mining_power={"node0": 1.0},
        script=script,
        latency=(1, 1),
        mean_block_interval=50,
        poll_interval=25,
        difficulty_bits=0,
        chunk_size=spec.chunk_size,
        max_txs_per_block=spec.max_txs_per_block,
    )
    payloads = {i: make_ticket(spec.seed, i, spec.doc_size) for i in range(count)}
    return scenario, payloads


def chain_tx_bytes(chain: ChainState) -> int:
    """Serialized transaction volume on the canonical chain."""
    return sum(len(serialize_tx(tx)) for tx, _, _ in chain.canonical_txs())


def run_once(spec: BenchSpec, count: int) -> tuple[float, int, int, int]:
    """One timed pipeline run: (wall seconds, ticks, chain bytes, store bytes).

    The timed region is the pipeline itself (publish, mine, apply); payload
    generation and simulator setup sit outside it, and a garbage collection
    runs first so earlier cells cannot pause this one.
    """
    scenario, payloads = _bench_scenario(spec, count)
    sim = Simulation(scenario)
    sim.payload_overrides = payloads
    # same discipline as timeit: collect first, then keep the collector
    # out of the timed region so its pauses cannot land on one mode
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        t0 = time.perf_counter()
        result = sim.run()
        wall = time.perf_counter() - t0
    finally:
        if was_enabled:
            gc.enable()
    node = result.peer("node0")
    if node.chain.mempool or node.unapplied_pending() or node.deferred:
        raise RuntimeError(f"benchmark cell did not quiesce: {spec.mode} count={count}")
    return wall, result.clock, chain_tx_bytes(node.chain), node.store.payload_bytes()


def run_cell(spec: BenchSpec, count: int) -> BenchResult:
    """Run one (mode, count) cell: repetitions of the full pipeline."""
    walls: list[float] = []
    ticks: list[int] = []
    chain_bytes = store_bytes = 0
    for _rep in range(spec.repetitions):
        wall, tick, chain_bytes, store_bytes = run_once(spec, count)
        walls.append(wall)
        ticks.append(tick)
    return BenchResult(spec.mode, count, spec.doc_size, walls, ticks, chain_bytes, store_bytes)


def run_bench(spec: BenchSpec, warmup: bool = True) -> list[BenchResult]:
    """All cells of a spec, optionally preceded by one small untimed warmup
    run so import and allocator effects do not land on the first cell."""
    spec.validate()
    if warmup:
        w = BenchSpec(spec.mode, [min(min(spec.counts), 10)], spec.doc_size, 1, spec.seed, spec.chunk_size)
        run_cell(w, w.counts[0])
    return [run_cell(spec, count) for count in spec.counts]


def run_matrix(
    modes: list[str],
    counts: list[int],
    doc_size: int = 4096,
    repetitions: int = 5,
    seed: int = 0,
    warmup: bool = True,
) -> list[BenchResult]:
    """Run several modes over the same counts with repetitions interleaved
    round-robin across the modes.

    Comparing modes by their means calls for a blocked design: machine load
    drifts on the scale of seconds, so running each mode's repetitions as
    one contiguous block lets a slow phase land entirely on one mode. With
    interleaving every repetition index samples all modes back to back.
    Results come back in (mode, count) order, one per cell.
    """
    specs = {m: BenchSpec(m, counts, doc_size, repetitions, seed) for m in modes}
    for spec in specs.values():
        spec.validate()
    if warmup:
        small = min(min(counts), 10)
        for mode in modes:
            run_once(BenchSpec(mode, [small], doc_size, 1, seed), small)
    cells: dict[tuple[str, int], BenchResult] = {
        (m, c): BenchResult(m, c, doc_size, [], [], 0, 0) for m in modes for c in counts
    }
    for count in counts:
        for _rep in range(repetitions):
            for mode in modes:
                wall, tick, chain_b, store_b = run_once(specs[mode], count)
                cell = cells[(mode, count)]
                cell.wall_seconds.append(wall)
                cell.ticks.append(tick)
                cell.chain_bytes = chain_b
                cell.store_bytes = store_b
    return [cells[(m, c)] for m in modes for c in counts]


CSV_HEADER = "mode,count,doc_size,rep,wall_ms,ticks,chain_bytes,store_bytes"


def results_to_csv(results: list[BenchResult]) -> str:
    """Stable row order: per-repetition rows then one mean row per cell."""
    lines = [CSV_HEADER]
    for r in results:
        for rep, (wall, tick) in enumerate(zip(r.wall_seconds, r.ticks)):
            lines.append(
                f"{r.mode},{r.count},{r.doc_size},{rep},{wall * 1000:.3f},{tick},{r.chain_bytes},{r.store_bytes}"
            )
        lines.append(
            f"{r.mode},{r.count},{r.doc_size},mean,{r.mean_wall * 1000:.3f},{r.ticks[0]},{r.chain_bytes},{r.store_bytes}"
        )
    return "\n".join(lines) + "\n"


def emit_csv(results: list[BenchResult], path) -> None:
    with open(path, "w") as f:
        f.write(results_to_csv(results))


# -- verification -----------------------------------------------------------


def verify_chain(chain: ChainState) -> list[str]:
    """Recompute every canonical block's hash, target and linkage, and
    re-validate the transaction sequence from scratch."""
    from .crypto import hash_bytes
    from .ledger import meets_target

    violations: list[str] = []
    prev = None
    for blk in chain.canonical_blocks():
        if hash_bytes(blk.preimage()) != blk.block_hash:
            violations.append(f"block h={blk.height}: hash mismatch")
        if not meets_target(blk.block_hash, chain.difficulty_bits):
            violations.append(f"block h={blk.height}: misses difficulty target")
        if prev is not None and (blk.parent != prev.block_hash or blk.height != prev.height + 1):
            violations.append(f"block h={blk.height}: broken linkage")
        prev = blk
        for tx in blk.txs:
            if tx.inline_payload is not None and payload_root(tx.inline_payload, chain.chunk_size) != tx.data_hash:
                violations.append(f"block h={blk.height}: inline payload hash mismatch")
    reg = DataRegistry.rebuild(chain)
    if reg.skipped:
        violations.append(f"chain carries {reg.skipped} sequence-invalid transactions")
    return violations


def verify_pair(chain: ChainState, store: StoreState) -> list[str]:
    """Chain checks plus store payload hashes plus the one-to-one mapping
    between store revisions and accepted chain entries (scoped to the
    store's topic filter and applied-upto mark)."""
    violations = verify_chain(chain)
    reg = DataRegistry.rebuild(chain)
    for doc in store.docs.values():
        for rev in doc.revisions:
            if rev.payload is not None and payload_root(rev.payload, store.chunk_size) != rev.data_hash:
                violations.append(
                    f"store lineage={digest_hex(doc.lineage)} seq={rev.seq}: payload does not match hash"
                )
    expected = set()
    if store.applied_upto is not None:
        for e in reg.entries:
            if (e.height, e.index) > store.applied_upto:
                continue
            if store.topics and e.tx.topic_id not in store.topics:
                continue
            expected.add((e.lineage, e.tx.sequence_id, e.tx.data_hash))
    stored = store.revision_triples()
    for lineage, seq, _ in sorted(expected - stored):
        violations.append(f"missing revision lineage={digest_hex(lineage)} seq={seq}")
    for lineage, seq, _ in sorted(stored - expected):
        violations.append(f"unexpected revision lineage={digest_hex(lineage)} seq={seq}")
    return violations


def verify_dir(path) -> tuple[list[str], int]:
    """Verify every <name>.chain / <name>.store pair under a directory.
    Returns (violations, number of pairs checked)."""
    from pathlib import Path

    root = Path(path)
    violations: list[str] = []
    checked = 0
    for chain_file in sorted(root.glob("*.chain")):
        name = chain_file.stem
        chain = ChainState.load(chain_file)
        store_file = root / f"{name}.store"
        checked += 1
        if store_file.exists():
            store = StoreState.load(store_file)
            found = verify_pair(chain, store)
        else:
            found = verify_chain(chain)
        violations.extend(f"{name}: {v}" for v in found)
    return violations, checked
