import pandas as pd
import pytest

from src import benchmark_engine
from src.benchmark_engine import ALL_TOGGLES, BenchmarkEngine, toggle_label
from src.ruleset import gen_synthetic, gen_trace


def test_toggle_labels():
    assert len(ALL_TOGGLES) == 8
    assert toggle_label((True, True, True)) == 'merge+overlap+push'
    assert toggle_label((False, True, False)) == 'overlap'
    assert toggle_label((False, False, False)) == 'none'


def test_sweep_every_toggle():
    df = BenchmarkEngine().run(['acl-like'], [100], [1], ALL_TOGGLES, headers=100)
    assert list(df.columns) == BenchmarkEngine.COLUMNS
    assert len(df) == 8
    assert set(df['toggles']) == {toggle_label(t) for t in ALL_TOGGLES}
    assert (df['mismatches'] == 0).all()
    assert (df['bytes'] == 40 * df['words']).all()


def test_merging_shrinks_or_keeps_image():
    df = BenchmarkEngine().run(['fw-like'], [150], [2], [(True, True, True), (False, True, True)],
                               headers=50)
    merged, plain = df['words'].tolist()
    assert merged <= plain


def test_unknown_profile():
    with pytest.raises(ValueError, match="Unknown profile"):
        BenchmarkEngine().run(['nope'], [10], [1])


def test_summarize():
    df = BenchmarkEngine().run(['acl-like', 'ipc-like'], [60], [1],
                               [(True, True, True), (False, False, False)], headers=40)
    summary = BenchmarkEngine.summarize(df)
    assert sorted(summary['profile']) == ['acl-like', 'ipc-like']
    assert (summary['mismatches'] == 0).all()
    for _, row in summary.iterrows():
        rows = df[df['profile'] == row['profile']]
        assert row['best_bytes'] == rows['bytes'].min()


def test_summarize_empty():
    summary = BenchmarkEngine.summarize(pd.DataFrame(columns=BenchmarkEngine.COLUMNS))
    assert summary.empty


def test_ruleset_generated_once_per_point(monkeypatch):
    calls = []

    def counting(seed, size, profile):
        calls.append((seed, size, profile))
        return gen_synthetic(seed, size, profile)

    monkeypatch.setattr(benchmark_engine, 'gen_synthetic', counting)
    df = BenchmarkEngine().run(['ipc-like'], [40, 60], [1], ALL_TOGGLES, headers=20)
    assert len(df) == 16
    assert calls == [(1, 40, 'ipc-like'), (1, 60, 'ipc-like')]


def test_run_one_shares_ruleset_and_trace():
    ruleset = gen_synthetic(4, 80, 'acl-like')
    trace = gen_trace(ruleset, 5, 60)
    engine = BenchmarkEngine()
    rows = [engine.run_one(ruleset, trace, 'acl-like', 4, toggle) for toggle in ALL_TOGGLES]
    assert {row['size'] for row in rows} == {80}
    assert all(row['mismatches'] == 0 for row in rows)
    assert len({row['toggles'] for row in rows}) == 8
