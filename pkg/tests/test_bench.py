import pytest

from bevkit.bench import OPS, bench_csv, checksum_text, run_bench


def test_single_repetition():
    results = run_bench([8], 1)
    assert [r.op for r in results] == list(OPS)
    for r in results:
        assert len(r.samples) == 1 and r.median == r.p95 == r.samples[0]


def test_checksums_stable_across_runs_and_repetitions():
    a = run_bench([8, 12], 3, seed=1)
    b = run_bench([8, 12], 1, seed=1)
    assert checksum_text(a) == checksum_text(b)
    assert checksum_text(a) != checksum_text(run_bench([8, 12], 1, seed=2))


def test_csv_layout():
    text = bench_csv(run_bench([4], 2))
    lines = text.splitlines()
    assert lines[0] == "op,size,repetitions,median_s,p95_s,checksum"
    assert len(lines) == 1 + len(OPS)
    assert all(line.split(",")[2] == "2" for line in lines[1:])


def test_threads_do_not_change_checksums(monkeypatch):
    monkeypatch.setenv("BEVKIT_THREADS", "1")
    one = checksum_text(run_bench([16], 1))
    monkeypatch.setenv("BEVKIT_THREADS", "4")
    assert checksum_text(run_bench([16], 1)) == one
