import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajcast.metrics import MetricReport, ade, best_of_k, evaluate, fde, format_table, step_errors, write_report_csv


def test_constant_offset_three_four_five():
    truth = np.random.default_rng(0).normal(size=(12, 2))
    pred = truth + np.array([3.0, 4.0])
    assert ade(pred, truth) == 5.0
    assert fde(pred, truth) == 5.0


def test_best_of_k_with_perfect_modality_is_zero():
    rng = np.random.default_rng(1)
    truth = rng.normal(size=(4, 6, 2))
    pred = truth[None] + rng.normal(size=(5, 4, 6, 2))
    pred[3] = truth
    a, f, pick = best_of_k(pred, truth)
    assert np.all(a == 0) and np.all(f == 0) and np.all(pick == 3)


def test_worked_example():
    truth = np.zeros((3, 2))
    pred = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]])
    assert ade(pred, truth) == 2.0
    assert fde(pred, truth) == 3.0
    assert ade(pred, truth, metric="mse") == pytest.approx(14 / 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 5), st.integers(1, 6))
def test_best_of_k_matches_loop(seed, H, N, T):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(N, T, 2))
    pred = rng.normal(size=(H, N, T, 2))
    a, f, pick = best_of_k(pred, truth)
    for n in range(N):
        scores = [np.mean([np.hypot(*(pred[h, n, t] - truth[n, t])) for t in range(T)]) for h in range(H)]
        k = int(np.argmin(scores))
        assert pick[n] == k
        assert a[n] == pytest.approx(scores[k], abs=1e-12)
        assert f[n] == pytest.approx(np.hypot(*(pred[k, n, -1] - truth[n, -1])), abs=1e-12)


def test_best_of_k_ties_lowest_index():
    truth = np.zeros((1, 2, 2))
    pred = np.ones((3, 1, 2, 2))
    assert best_of_k(pred, truth)[2][0] == 0


def test_best_of_k_never_worse_than_single():
    rng = np.random.default_rng(5)
    truth = rng.normal(size=(3, 4, 2))
    pred = rng.normal(size=(4, 3, 4, 2))
    a, _, _ = best_of_k(pred, truth)
    assert np.all(a <= ade(pred[0], truth) + 1e-15)


def test_evaluate_weights_agents_equally():
    t1, t2 = np.zeros((1, 2, 2)), np.zeros((3, 2, 2))
    p1 = np.ones((1, 1, 2, 2)) * np.array([3.0, 4.0])
    p2 = np.zeros((1, 3, 2, 2))
    r = evaluate([p1, p2], [t1, t2], ["a", "b"])
    assert r.ade == pytest.approx(5.0 / 4)
    assert r.agents == 4 and r.per_scenario["a"] == (5.0, 5.0, 1)
    assert not r.best_of_k


def test_evaluate_skips_empty_and_rejects_all_empty():
    r = evaluate([np.zeros((2, 0, 3, 2)), np.zeros((2, 1, 3, 2))], [np.zeros((0, 3, 2)), np.ones((1, 3, 2))])
    assert r.agents == 1 and r.k == 2
    with pytest.raises(ValueError):
        evaluate([np.zeros((1, 0, 3, 2))], [np.zeros((0, 3, 2))])


def test_shape_and_metric_validation():
    with pytest.raises(ValueError):
        ade(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        step_errors(np.zeros((3, 2)), np.zeros((3, 2)), metric="l1")


def test_table_and_csv(tmp_path):
    r = MetricReport(0.391, 0.786, 20, True, 10, 12)
    assert r.cell() == "0.39/0.79"
    table = format_table([("Ours", r), ("Baseline", r)], extra=[["x"], ["-"]], extra_header=["PF"])
    lines = table.splitlines()
    assert lines[0].split() == ["Method", "PF", "ADE/FDE"]
    assert lines[2].split() == ["Ours", "x", "0.39/0.79"]
    write_report_csv(tmp_path / "m.csv", [("Ours", r)])
    assert (tmp_path / "m.csv").read_text().splitlines()[1].startswith("Ours,0.391,0.786,20,1")
