import numpy as np

from app.core.parallel import chunk_bounds, chunked_map, default_threads


def test_chunk_bounds_cover_the_range():
    bounds = chunk_bounds(10, 3)
    assert bounds == [(0, 4), (4, 7), (7, 10)]
    assert chunk_bounds(2, 8) == [(0, 1), (1, 2)]
    assert chunk_bounds(0, 4) == [(0, 0)]


def test_deterministic_map_keeps_chunk_order():
    data = np.arange(1000, dtype=np.float64)
    parts = chunked_map(lambda lo, hi: data[lo:hi].copy(), len(data), threads=4, min_chunk=1)
    assert len(parts) == 4
    assert np.array_equal(np.concatenate(parts), data)


def test_small_inputs_run_in_one_chunk():
    calls = []
    chunked_map(lambda lo, hi: calls.append((lo, hi)), 100, threads=8)
    assert calls == [(0, 100)]


def test_thread_count_from_environment(monkeypatch):
    assert default_threads() == 1
    monkeypatch.setenv("VNS_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("VNS_THREADS", "many")
    assert default_threads() == 1
