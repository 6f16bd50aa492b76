"""Data registry and peer directory tests."""

import random

import pytest

from conftest import (
    EDITOR_A,
    EDITOR_B,
    TOPIC_T,
    TOPIC_U,
    make_add,
    make_delete,
    make_edit,
    random_mutation_batch,
)
from ethercouch.crypto import hash_bytes
from ethercouch.ledger import ChainState, lineage_of
from ethercouch.registry import (
    ALREADY_DELETED,
    DUPLICATE_ADD,
    OK,
    STALE_SEQUENCE,
    UNKNOWN_LINEAGE,
    DataRegistry,
    LocationRegistry,
    PeerLocation,
    UnknownPeer,
)


def applied(reg: DataRegistry, tx, h=1, i=0):
    assert reg.validate(tx) == OK
    reg.apply(tx, h, i)


# -- validate_tx --------------------------------------------------------


def test_add_on_fresh_lineage_ok():
    reg = DataRegistry()
    assert reg.validate(make_add(b"doc")) == OK


def test_edit_increments_by_one():
    reg = DataRegistry()
    add = make_add(b"doc")
    applied(reg, add)
    edit = make_edit(lineage_of(add), 2, b"v2")
    assert reg.validate(edit) == OK
    reg.apply(edit, 2, 0)
    # replaying the same revision number is stale
    assert reg.validate(make_edit(lineage_of(add), 2, b"v2x")) == STALE_SEQUENCE


def test_edit_after_delete_is_rejected():
    reg = DataRegistry()
    add = make_add(b"doc")
    applied(reg, add)
    applied(reg, make_delete(lineage_of(add), 2), 2, 0)
    assert reg.validate(make_edit(lineage_of(add), 3, b"zombie")) == ALREADY_DELETED


def test_unknown_lineage_and_duplicate_add():
    reg = DataRegistry()
    assert reg.validate(make_edit(hash_bytes(b"nope"), 2, b"x")) == UNKNOWN_LINEAGE
    add = make_add(b"doc")
    applied(reg, add)
    assert reg.validate(add) == DUPLICATE_ADD


def test_sequence_gap_is_stale():
    reg = DataRegistry()
    add = make_add(b"doc")
    applied(reg, add)
    assert reg.validate(make_edit(lineage_of(add), 3, b"skip")) == STALE_SEQUENCE


# -- rebuild ------------------------------------------------------------


def test_rebuild_empty_chain():
    chain = ChainState(difficulty_bits=0)
    reg = DataRegistry.rebuild(chain)
    assert reg.entries == []
    assert reg.skipped == 0


def test_rebuild_add_edit_delete_single_lineage():
    chain = ChainState(difficulty_bits=0)
    add = make_add(b"doc")
    chain.submit_tx(add)
    chain.submit_tx(make_edit(lineage_of(add), 2, b"v2"))
    chain.submit_tx(make_delete(lineage_of(add), 3))
    chain.adopt_block(chain.mine_block(EDITOR_A))
    reg = DataRegistry.rebuild(chain)
    assert len(reg.entries) == 3
    assert reg.latest(lineage_of(add)) == (3, True)


def test_rebuild_skips_and_counts_invalid_txs():
    # foreign chains are replayed tolerantly: sequence-invalid entries are
    # dropped deterministically and counted, never chain-invalidating
    class FakeChain:
        def canonical_txs(self):
            add = make_add(b"doc")
            yield add, 1, 0
            yield make_edit(lineage_of(add), 5, b"gap"), 1, 1  # skipped
            yield make_edit(lineage_of(add), 2, b"v2"), 1, 2

    reg = DataRegistry.rebuild(FakeChain())
    assert reg.skipped == 1
    assert [e.tx.sequence_id for e in reg.entries] == [1, 2]


def test_rebuild_equals_incremental_on_random_chain():
    rng = random.Random(11)
    chain = ChainState(difficulty_bits=0)
    txs, _ = random_mutation_batch(rng, 50)
    i = 0
    while i < len(txs):
        batch = txs[i : i + rng.randint(1, 6)]
        for tx in batch:
            chain.submit_tx(tx)
        chain.adopt_block(chain.mine_block(EDITOR_A, max_txs=len(batch)))
        i += len(batch)
    rebuilt = DataRegistry.rebuild(chain)
    # the chain's own registry was maintained incrementally through adoption
    assert rebuilt.entries == chain.registry.entries
    assert rebuilt.dump_text() == chain.registry.dump_text()
    for lineage in rebuilt.lineages():
        assert rebuilt.latest(lineage) == chain.registry.latest(lineage)


def test_rebuild_after_reorg_equals_incremental():
    from conftest import raw_block

    chain = ChainState(difficulty_bits=0)
    a = make_add(b"reorg-doc")
    b1 = raw_block(chain, chain.tip, 1, [a])
    chain.adopt_block(b1)
    c = make_add(b"other-doc")
    n1 = raw_block(chain, chain.genesis.block_hash, 1, [c], miner=EDITOR_B)
    n2 = raw_block(chain, n1.block_hash, 2, [make_edit(lineage_of(c), 2, b"v2", editor=EDITOR_B)], miner=EDITOR_B)
    chain.adopt_block(n1)
    chain.adopt_block(n2)
    rebuilt = DataRegistry.rebuild(chain)
    assert rebuilt.entries == chain.registry.entries
    assert rebuilt.dump_text() == chain.registry.dump_text()


# -- queries ------------------------------------------------------------


def test_query_by_topic_partition():
    reg = DataRegistry()
    t1 = make_add(b"one", topic=TOPIC_T)
    t2 = make_add(b"two", topic=TOPIC_U)
    t3 = make_add(b"three", topic=TOPIC_T)
    for i, tx in enumerate([t1, t2, t3]):
        applied(reg, tx, 1, i)
    hits = reg.query_by_topic(TOPIC_T)
    assert hits == [t1, t3]
    rest = reg.query_by_topic(TOPIC_U)
    assert len(hits) + len(rest) == len(reg.entries)
    assert reg.query_by_topic(hash_bytes(b"missing")) == []


def test_query_by_editor():
    reg = DataRegistry()
    a = make_add(b"one", editor=EDITOR_A)
    b = make_add(b"two", editor=EDITOR_B)
    applied(reg, a, 1, 0)
    applied(reg, b, 1, 1)
    assert reg.query_by_editor(EDITOR_B) == [b]


# -- location registry --------------------------------------------------


def loc(name: str) -> PeerLocation:
    return PeerLocation(hash_bytes(name.encode()), name)


def test_register_and_lookup():
    reg = LocationRegistry()
    reg.register_peer(loc("node-1"))
    assert reg.get_peer_location(hash_bytes(b"node-1")) == "node-1"
    assert reg.get_peer_location(hash_bytes(b"ghost")) is None


def test_reregistration_updates_location():
    reg = LocationRegistry()
    editor = hash_bytes(b"node-1")
    reg.register_peer(PeerLocation(editor, "addr-old"))
    reg.register_peer(PeerLocation(editor, "addr-new"))
    assert reg.get_peer_location(editor) == "addr-new"


def test_unbounded_registration():
    reg = LocationRegistry()
    for i in range(101):
        reg.register_peer(loc(f"peer-{i}"))
    assert len(reg.registered()) == 101


def test_mark_up_to_date_and_tip_eviction():
    reg = LocationRegistry()
    reg.register_peer(loc("a"))
    reg.register_peer(loc("b"))
    tip1, tip2 = hash_bytes(b"tip-1"), hash_bytes(b"tip-2")
    reg.mark_up_to_date(hash_bytes(b"a"), tip1)
    assert [p.location for p in reg.up_to_date_peers()] == ["a"]
    reg.mark_up_to_date(hash_bytes(b"b"), tip2)
    assert [p.location for p in reg.up_to_date_peers()] == ["b"]
    assert reg.up_to_date_tip == tip2


def test_mark_unregistered_peer_fails():
    reg = LocationRegistry()
    with pytest.raises(UnknownPeer):
        reg.mark_up_to_date(hash_bytes(b"ghost"), hash_bytes(b"tip"))


def test_up_to_date_peer_index_zero_semantics():
    reg = LocationRegistry()
    for name in ("a", "b"):
        reg.register_peer(loc(name))
    tip = hash_bytes(b"tip")
    reg.mark_up_to_date(hash_bytes(b"a"), tip)
    reg.mark_up_to_date(hash_bytes(b"b"), tip)
    assert reg.get_up_to_date_peer().location == "a"
    # eviction by a new tip leaves only the fresh reporter
    reg.mark_up_to_date(hash_bytes(b"b"), hash_bytes(b"tip2"))
    assert reg.get_up_to_date_peer().location == "b"


def test_empty_up_to_date_set():
    reg = LocationRegistry()
    assert reg.get_up_to_date_peer() is None


def test_location_token_length_capped():
    with pytest.raises(ValueError):
        PeerLocation(hash_bytes(b"x"), "y" * 33)


def test_sequence_monotonicity_property():
    # accepted sequences per lineage are exactly 1..latest with no gaps
    rng = random.Random(5)
    reg = DataRegistry()
    coord = 0
    for _ in range(300):
        tx = _random_op(rng, reg)
        if reg.validate(tx) == OK:
            reg.apply(tx, coord, 0)
            coord += 1
    per_lineage = {}
    for e in reg.entries:
        per_lineage.setdefault(e.lineage, []).append(e.tx.sequence_id)
    for lineage, seqs in per_lineage.items():
        assert seqs == list(range(1, len(seqs) + 1))
        assert reg.latest(lineage)[0] == seqs[-1]


def _random_op(rng, reg):
    lineages = reg.lineages()
    roll = rng.random()
    if not lineages or roll < 0.3:
        return make_add(rng.randbytes(16))
    lineage = rng.choice(lineages)
    latest, _deleted = reg.latest(lineage)
    # half the time aim correctly, half the time aim anywhere
    seq = latest + 1 if rng.random() < 0.5 else rng.randint(1, latest + 3)
    if roll < 0.8:
        return make_edit(lineage, seq, rng.randbytes(16))
    return make_delete(lineage, seq)
