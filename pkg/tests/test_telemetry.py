import random
import threading

import pytest

from sloloop.telemetry import MetricNotFound, MetricStore, Sample, TelemetryError


def test_ingest_then_query_same_tick():
    store = MetricStore()
    store.ingest("svc", "rt", 5, 1.25)
    ts = store.query_window("svc", "rt", 5, 5)
    assert ts.samples == (Sample(5, 1.25),)


def test_same_timestamp_last_write_wins():
    store = MetricStore()
    store.ingest("svc", "rt", 5, 1.0)
    store.ingest("svc", "rt", 5, 2.0)
    ts = store.query_window("svc", "rt", 0, 10)
    assert ts.samples == (Sample(5, 2.0),)


def test_undeclared_metric_rejected_without_auto_register():
    store = MetricStore(declared={("svc", "rt")}, auto_register=False)
    store.ingest("svc", "rt", 1, 1.0)
    with pytest.raises(TelemetryError, match="undeclared"):
        store.ingest("svc", "other", 1, 1.0)


def test_runtime_declare_allows_ingest():
    store = MetricStore(declared=set(), auto_register=False)
    store.declare("svc", "new_metric")
    store.ingest("svc", "new_metric", 1, 3.0)
    assert store.window_mean("svc", "new_metric", 0, 5) == 3.0


def test_non_finite_value_rejected_but_missing_marker_ok():
    store = MetricStore()
    with pytest.raises(TelemetryError, match="non-finite"):
        store.ingest("svc", "rt", 1, float("nan"))
    store.ingest("svc", "rt", 1, None)  # explicit missing marker
    assert store.query_window("svc", "rt", 1, 1).samples == (Sample(1, None),)


def test_unknown_pair_is_distinct_error_not_empty():
    store = MetricStore()
    store.ingest("svc", "rt", 1, 1.0)
    with pytest.raises(MetricNotFound):
        store.query_window("svc", "nope", 0, 10)
    # known pair with empty window returns an empty series instead
    assert store.query_window("svc", "rt", 100, 200).samples == ()


def test_full_range_query_returns_everything():
    store = MetricStore()
    for t in range(20):
        store.ingest("svc", "rt", t, float(t))
    ts = store.query_window("svc", "rt", 0, 19)
    assert len(ts) == 20
    assert ts.timestamps() == list(range(20))


def test_inverted_window_rejected():
    store = MetricStore()
    store.ingest("svc", "rt", 1, 1.0)
    with pytest.raises(TelemetryError, match="inverted"):
        store.query_window("svc", "rt", 10, 5)


def test_random_windows_match_linear_scan_oracle():
    rng = random.Random(42)
    store = MetricStore(retention_window=100_000)
    data = []
    t = 0
    for _ in range(10_000):
        t += rng.randint(1, 3)
        value = rng.uniform(-100, 100)
        data.append((t, value))
        store.ingest("svc", "rt", t, value)
    for _ in range(50):
        t0 = rng.randint(0, t)
        t1 = t0 + rng.randint(0, 100)
        expected = [(ts, v) for ts, v in data if t0 <= ts <= t1]
        got = [(s.timestamp, s.value) for s in store.query_window("svc", "rt", t0, t1).samples]
        assert got == expected


def test_query_result_is_ordered_contiguous_subsequence():
    rng = random.Random(7)
    store = MetricStore()
    ticks = rng.sample(range(1000), 200)
    for t in ticks:
        store.ingest("svc", "rt", t, float(t))
    ts = store.query_window("svc", "rt", 250, 750)
    stamps = ts.timestamps()
    assert stamps == sorted(stamps)
    assert all(250 <= s <= 750 for s in stamps)
    full = store.query_window("svc", "rt", 0, 999).timestamps()
    lo = full.index(stamps[0]) if stamps else 0
    assert full[lo:lo + len(stamps)] == stamps


def test_retention_compaction():
    store = MetricStore(retention_window=100)
    for t in range(0, 500):
        store.ingest("svc", "rt", t, float(t))
    ts = store.query_window("svc", "rt", 0, 499)
    assert ts.timestamps()[0] >= 499 - 100
    # everything inside the window survives
    assert ts.timestamps()[-1] == 499
    assert len(ts) >= 100


def test_retention_applies_to_stale_series_too():
    store = MetricStore(retention_window=100)
    store.ingest("svc", "old", 0, 1.0)
    for t in range(0, 500):
        store.ingest("svc", "hot", t, float(t))
    assert store.query_window("svc", "old", 0, 499).samples == ()


def test_export_snapshot_empty_store():
    assert MetricStore().export_snapshot() == ""


def test_export_snapshot_format_and_order():
    store = MetricStore()
    store.ingest("recognizer", "frame_processing_time", 16, 0.4)
    store.ingest("recognizer", "frame_processing_time", 17, 0.42)
    store.ingest("cam1", "frame_rate", 17, 5.0)
    snap = store.export_snapshot()
    lines = snap.strip().splitlines()
    assert lines[0] == 'frame_rate{component="cam1"} 5 17'
    assert lines[1] == 'frame_processing_time{component="recognizer"} 0.42 17'
    assert lines[-1] == "# EOF"


def test_snapshot_line_count_equals_distinct_pairs():
    rng = random.Random(3)
    store = MetricStore()
    pairs = set()
    for _ in range(200):
        comp = f"c{rng.randint(0, 5)}"
        met = f"m{rng.randint(0, 5)}"
        pairs.add((comp, met))
        store.ingest(comp, met, rng.randint(0, 50), rng.random())
    lines = store.export_snapshot().strip().splitlines()
    assert len(lines) - 1 == len(pairs)  # minus the # EOF terminator


def test_csv_dump_round_trips_values():
    store = MetricStore()
    store.ingest("svc", "rt", 1, 0.123456789)
    store.ingest("svc", "rt", 2, None)
    text = store.export_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "component,metric,timestamp,value"
    assert lines[1] == "svc,rt,1,0.123456789"
    assert lines[2] == "svc,rt,2,"


def test_concurrent_ingest_and_query_not_torn():
    store = MetricStore()
    stop = threading.Event()
    errors = []

    def writer(name):
        for t in range(2000):
            store.ingest(name, "rt", t, float(t))

    def reader():
        while not stop.is_set():
            try:
                for name in ("a", "b"):
                    try:
                        ts = store.query_window(name, "rt", 0, 2000)
                    except MetricNotFound:
                        continue
                    stamps = ts.timestamps()
                    if stamps != sorted(stamps):
                        errors.append("unsorted")
                    if ts.values() != [float(s) for s in stamps]:
                        errors.append("torn value")
            except Exception as exc:  # pragma: no cover
                errors.append(repr(exc))

    threads = [threading.Thread(target=writer, args=("a",)),
               threading.Thread(target=writer, args=("b",)),
               threading.Thread(target=reader)]
    for t in threads[:2]:
        t.start()
    threads[2].start()
    threads[0].join()
    threads[1].join()
    stop.set()
    threads[2].join()
    assert errors == []
