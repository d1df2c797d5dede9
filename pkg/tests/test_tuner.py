import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagrangekit.core import ContractError
from lagrangekit.tuner import (
    HISTORY_COLUMNS,
    BisectionState,
    bisect_step,
    find_anomalies,
    log_midpoint,
    round_sig,
    run_bisection,
    table_stub_builder,
)

TABLE_SEQUENCE = [3.16e-2, 1.78e-1, 4.22e-1, 2.74e-1, 2.21e-1]


def test_log_midpoint_examples():
    assert log_midpoint(1e-3, 1.0) == pytest.approx(3.1623e-2, abs=1e-6)
    assert log_midpoint(3.16e-2, 1.0) == pytest.approx(1.778e-1, abs=1e-4)
    assert log_midpoint(0.5, 0.5 * 9.0) == pytest.approx(1.5)


@pytest.mark.parametrize("lo,hi", [(0.0, 1.0), (-1.0, 1.0), (2.0, 1.0)])
def test_log_midpoint_bad_bracket(lo, hi):
    with pytest.raises(ContractError):
        log_midpoint(lo, hi)


def test_replay_table():
    res = run_bisection(table_stub_builder, target=50.0, tol=2.0, max_iters=5)
    probes = [round_sig(p.coefficient, 3) for p in res.history[2:]]
    assert probes == TABLE_SEQUENCE
    assert res.solves == 7 and len(res.history) - 2 == 5
    assert res.final.metric == 50.5 and round_sig(res.final.coefficient) == 0.221


def test_replay_by_steps():
    densities = [68.1, 54.2, 39.0, 46.9, 50.5]
    state = BisectionState(1e-3, 1.0, 50.0, 2.0, 5)
    seen = []
    for d in densities:
        seen.append(round_sig(state.next_probe, 3))
        state = bisect_step(state, d)
    assert seen == TABLE_SEQUENCE and state.done


def test_exact_target_terminates():
    state = bisect_step(BisectionState(1e-3, 1.0, 50.0, 2.0, 10), 50.0)
    assert state.done and state.steps == 1


def test_first_probe_independent_of_metric():
    for metric in (0.0, 50.0, 1e6):
        assert BisectionState(1e-3, 1.0, metric, 1.0, 3).next_probe == pytest.approx(3.16227766e-2)


def test_endpoints_only():
    res = run_bisection(table_stub_builder, max_iters=0)
    assert len(res.history) == 2 and res.solves == 2


def test_trivial_builder_converges():
    res = run_bisection(lambda c: (-10 * math.log10(c) + 20, 0.0), target=30.0, tol=0.5, max_iters=12)
    assert abs(res.final.metric - 30.0) <= 0.5
    assert res.solves - 2 <= 12


def test_errors_recorded():
    def flaky(c):
        if 0.01 < c < 0.05:
            raise RuntimeError("diverged")
        return table_stub_builder(c)

    res = run_bisection(flaky, max_iters=2)
    assert res.history[2].error.startswith("RuntimeError")
    assert math.isnan(res.history[2].metric)


def test_anomalies_recorded():
    table = {1e-3: 80.0, 1.0: 20.0}

    def noisy(c):
        return table.get(c, 85.0 if c < 0.1 else 10.0), 0.0

    res = run_bisection(noisy, max_iters=2)
    assert res.anomalies
    assert find_anomalies(run_bisection(table_stub_builder).history) == []


def test_history_csv(tmp_path):
    import csv

    res = run_bisection(table_stub_builder)
    res.write_csv(tmp_path / "h.csv")
    with open(tmp_path / "h.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == HISTORY_COLUMNS
    assert [float(r["metric"]) for r in rows] == [84.5, 25.3, 68.1, 54.2, 39.0, 46.9, 50.5]


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1.0), st.floats(1.5, 1e6), st.lists(st.floats(0, 100), min_size=1, max_size=12))
def test_bracket_halves_in_log_space(lo, ratio, metrics):
    hi = lo * ratio
    state = BisectionState(lo, hi, 50.0, 1e-9, 100)
    width0 = math.log(hi / lo)
    for k, m in enumerate(metrics, start=1):
        lo_prev, hi_prev, probe = state.lo, state.hi, state.next_probe
        assert lo_prev < probe < hi_prev
        state = bisect_step(state, m)
        if state.done:
            break
        assert math.log(state.hi / state.lo) == pytest.approx(width0 / 2**k, rel=1e-9)
        assert lo <= state.lo < state.hi <= hi


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=8))
def test_replay_determinism(metrics):
    def walk():
        s = BisectionState(1e-3, 1.0, 50.0, 0.1, 8)
        out = []
        for m in metrics:
            out.append(s.next_probe)
            s = bisect_step(s, m)
        return out

    assert walk() == walk()
