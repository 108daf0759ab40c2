from app.core.stores import HistoryStore, SettingsStore


def test_settings_round_trip(tmp_path):
    store = SettingsStore(tmp_path / "cfg")
    assert store.load() == {}
    store.save({"preset": "gravity-box", "out_dir": "runs"})
    assert SettingsStore(tmp_path / "cfg").load() == {"preset": "gravity-box", "out_dir": "runs"}


def test_corrupt_settings_read_as_empty(tmp_path):
    store = SettingsStore(tmp_path)
    store.path.write_text("{not json", encoding="utf-8")
    assert store.load() == {}


def test_history_tail_skips_bad_lines(tmp_path):
    history = HistoryStore(SettingsStore(tmp_path))
    assert history.tail() == []
    history.append("run", "ok", "gravity-box", bytes_count=120)
    with history.path.open("a", encoding="utf-8") as f:
        f.write("garbage\n")
    history.append("run", "failed", "coupled-small", bytes_count=-5)
    rows = history.tail()
    assert [r["status"] for r in rows] == ["ok", "failed"]
    assert rows[1]["bytes"] == 0
    assert [r["details"] for r in history.tail(max_rows=1)] == ["coupled-small"]
