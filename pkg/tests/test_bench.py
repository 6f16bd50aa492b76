"""Benchmark harness and CLI tests."""

import subprocess
import sys
from pathlib import Path

import pytest

from ethercouch.bench import (
    CSV_HEADER,
    BenchSpec,
    make_ticket,
    results_to_csv,
    run_bench,
    run_cell,
    verify_dir,
    verify_pair,
)
from ethercouch.cli import main
from ethercouch.docstore import StoreState
from ethercouch.ledger import ChainState, serialize_tx

# serialized record size of one hash-anchored mutation: seven length-prefixed
# fields (task 1B, three digests 32B, sequence 8B, lineage 32B, absent payload 1B)
RECORD_SIZE = 7 * 4 + 1 + 32 + 32 + 32 + 8 + 32 + 1


def test_record_size_constant_matches_serializer():
    from conftest import make_add

    assert len(serialize_tx(make_add(b"x" * 100))) == RECORD_SIZE


def test_plain_mode_stores_nothing_on_chain():
    spec = BenchSpec(mode="plain", counts=[10], repetitions=1, doc_size=512)
    (result,) = run_bench(spec, warmup=False)
    assert result.chain_bytes == 0
    assert result.store_bytes == 10 * 512


def test_ethercouch_chain_bytes_are_count_times_record_size():
    spec = BenchSpec(mode="ethercouch", counts=[10, 50], repetitions=1, doc_size=1024)
    results = run_bench(spec, warmup=False)
    assert results[0].chain_bytes == 10 * RECORD_SIZE
    assert results[1].chain_bytes == 50 * RECORD_SIZE


def test_ethercouch_chain_bytes_independent_of_doc_size():
    small = run_cell(BenchSpec(mode="ethercouch", counts=[25], repetitions=1, doc_size=1024), 25)
    large = run_cell(BenchSpec(mode="ethercouch", counts=[25], repetitions=1, doc_size=65536), 25)
    assert small.chain_bytes == large.chain_bytes == 25 * RECORD_SIZE


def test_chainonly_chain_bytes_grow_by_exact_payload_delta():
    n = 25
    small = run_cell(BenchSpec(mode="chainonly", counts=[n], repetitions=1, doc_size=1024), n)
    large = run_cell(BenchSpec(mode="chainonly", counts=[n], repetitions=1, doc_size=4096), n)
    assert small.chain_bytes == n * (RECORD_SIZE + 1024)
    assert large.chain_bytes == n * (RECORD_SIZE + 4096)
    assert large.chain_bytes - small.chain_bytes == n * (4096 - 1024)


def test_ticks_and_bytes_stable_across_repetitions():
    spec = BenchSpec(mode="ethercouch", counts=[30], repetitions=3, doc_size=256, seed=5)
    (result,) = run_bench(spec, warmup=False)
    assert len(set(result.ticks)) == 1
    again = run_bench(BenchSpec(mode="ethercouch", counts=[30], repetitions=3, doc_size=256, seed=5), warmup=False)
    assert again[0].ticks == result.ticks
    assert again[0].chain_bytes == result.chain_bytes
    assert again[0].store_bytes == result.store_bytes


def test_tickets_are_distinct_and_sized():
    seen = {make_ticket(1, i, 300) for i in range(50)}
    assert len(seen) == 50
    assert all(len(t) == 300 for t in seen)


def test_csv_shape():
    spec = BenchSpec(mode="ethercouch", counts=[10], repetitions=5, doc_size=128)
    results = run_bench(spec, warmup=False)
    text = results_to_csv(results)
    lines = text.strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert lines[0] == "mode,count,doc_size,rep,wall_ms,ticks,chain_bytes,store_bytes"
    assert len(lines) == 1 + 5 + 1  # header + reps + mean
    assert lines[-1].split(",")[3] == "mean"


def test_bench_spec_validation():
    with pytest.raises(ValueError):
        BenchSpec(mode="nonsense", counts=[10]).validate()
    with pytest.raises(ValueError):
        BenchSpec(mode="plain", counts=[]).validate()
    with pytest.raises(ValueError):
        BenchSpec(mode="plain", counts=[10], repetitions=0).validate()


# -- CLI -----------------------------------------------------------------------


SCENARIO_JSON = """
{
  "seed": 13,
  "peers": [{"name": "p0"}, {"name": "p1"}],
  "latency": [1, 3],
  "mean_block_interval": 25,
  "script": [
    {"at": 5, "action": "publish", "peer": "p0", "doc": "a", "topic": "news", "size": 300},
    {"at": 50, "action": "edit", "peer": "p1", "doc": "a", "size": 200}
  ]
}
"""


@pytest.fixture()
def run_dir(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(SCENARIO_JSON)
    out = tmp_path / "out"
    rc = main(["run", str(scenario), "--out-dir", str(out), "--until", "20000"])
    assert rc == 0
    return out


def test_cli_bench_writes_csv(tmp_path):
    out = tmp_path / "r.csv"
    rc = main(["bench", "--mode", "ethercouch", "--counts", "10,20", "--reps", "2",
               "--doc-size", "256", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    mean_rows = [l for l in lines if ",mean," in l]
    assert len(mean_rows) == 2


def test_cli_run_writes_trace_and_state(run_dir):
    assert (run_dir / "trace.log").exists()
    trace = (run_dir / "trace.log").read_text()
    assert trace.rstrip().split("\n")[-1].startswith("digest ")
    for name in ("p0", "p1"):
        assert (run_dir / f"{name}.chain").exists()
        assert (run_dir / f"{name}.store").exists()


def test_cli_dumps(run_dir, capsys):
    assert main(["dump-chain", str(run_dir / "p0.chain")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("height=0 ")
    assert main(["dump-registry", str(run_dir / "p0.chain")]) == 0
    out = capsys.readouterr().out
    assert "add lineage=" in out
    assert main(["dump-store", str(run_dir / "p1.store")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("store applied_upto=")


def test_cli_verify_clean(run_dir, capsys):
    assert main(["verify", str(run_dir)]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_cli_verify_flags_tampered_store(run_dir, capsys):
    store = StoreState.load(run_dir / "p1.store")
    doc = next(iter(store.docs.values()))
    target = next(r for r in doc.revisions if r.payload is not None)
    flipped = bytearray(target.payload)
    flipped[0] ^= 1
    target.payload = bytes(flipped)
    store.save(run_dir / "p1.store")
    assert main(["verify", str(run_dir)]) == 1
    out = capsys.readouterr().out
    assert doc.lineage.hex() in out


def test_cli_verify_rejects_tampered_chain_file(run_dir):
    blob = bytearray((run_dir / "p0.chain").read_bytes())
    # flip one byte deep in the block region
    blob[len(blob) - 40] ^= 0x01
    (run_dir / "p0.chain").write_bytes(bytes(blob))
    assert main(["verify", str(run_dir)]) == 1


def test_cli_verify_flags_missing_revision(run_dir):
    store = StoreState.load(run_dir / "p0.store")
    lineage, doc = next(iter(store.docs.items()))
    doc.revisions.pop()
    store.save(run_dir / "p0.store")
    violations, checked = verify_dir(run_dir)
    assert checked == 2
    assert any("missing revision" in v and lineage.hex() in v for v in violations)


def test_verify_pair_catches_sequence_invalid_chain(run_dir):
    chain = ChainState.load(run_dir / "p0.chain")
    store = StoreState.load(run_dir / "p0.store")
    assert verify_pair(chain, store) == []


def test_cli_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bench", "--bogus-flag"])
    assert e.value.code == 2


def test_cli_missing_file_errors(tmp_path):
    assert main(["dump-chain", str(tmp_path / "nope.chain")]) == 1


def test_console_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "ethercouch", "bench", "--mode", "plain", "--counts", "5", "--reps", "1"],
        capture_output=True,
        text=True,
        cwd=str(Path(__file__).resolve().parent.parent),
    )
    assert proc.returncode == 0
    assert "plain" in proc.stdout
