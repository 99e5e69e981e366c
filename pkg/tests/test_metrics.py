import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taskfem.metrics import (
    REPORT_COLUMNS, ReportRow, ScalingTable, lb_measured, lb_report, lb_theoretical,
    median_after_warmup, read_report_csv, scalability, speedup, write_report_csv,
    write_report_json,
)
from taskfem.partition import RankPartition

positive = st.floats(1e-6, 1e6, allow_nan=False, allow_infinity=False)


def test_lb_examples():
    assert lb_measured([1.0, 1.0, 2.0]) == pytest.approx(2 / 3, abs=1e-15)
    assert lb_measured([1.0, 3.0]) == pytest.approx(2 / 3, abs=1e-15)
    assert lb_measured([2.0, 2.0, 2.0]) == 1.0
    assert lb_measured([5.0]) == 1.0


@pytest.mark.parametrize("bad", [[], [1.0, 0.0], [-1.0, 2.0]])
def test_lb_rejects_invalid(bad):
    with pytest.raises(ValueError):
        lb_measured(bad)


@given(st.lists(positive, min_size=1, max_size=20), positive)
@settings(max_examples=200)
def test_lb_is_scale_invariant_and_bounded(times, c):
    lb = lb_measured(times)
    assert 1 / len(times) - 1e-12 <= lb <= 1.0
    assert lb_measured([c * t for t in times]) == pytest.approx(lb, rel=1e-12)


@given(st.lists(positive, min_size=1, max_size=20))
def test_lb_is_one_iff_times_are_equal(times):
    assert (lb_measured(times) == 1.0) == (min(times) == max(times))


def test_lb_theoretical():
    groups = [np.array([0, 1]), np.array([2, 3, 4, 5])]
    assert lb_theoretical(groups) == 0.75
    w = np.array([2.0, 2.0, 1.0, 1.0, 1.0, 1.0])
    assert lb_theoretical(groups, w) == 1.0
    assert lb_theoretical([np.arange(7)]) == 1.0
    part = RankPartition.from_ranks([0, 0, 1, 1, 1, 1], 2)
    assert lb_theoretical(part) == 0.75
    rep = lb_report(part, w, [1.0, 2.0])
    assert (rep.measured_lb, rep.theoretical_weighted_lb, rep.theoretical_nonweighted_lb) \
        == (0.75, 1.0, 0.75)
    assert rep.counts == (2, 4) and rep.weight_sums == (4.0, 4.0)


def test_scalability_and_speedup():
    table = ScalingTable({(1, "Atomic"): 8.0, (4, "Atomic"): 2.0, (1, "Sequential"): 10.0,
                          (4, "Multidep"): 2.5, (1, "Multidep"): 9.0}, base=1,
                         baseline="Sequential")
    assert scalability(table, 4, "Atomic") == 4.0
    assert speedup(table, 4, "Atomic") == 5.0
    assert speedup(table, 1, "Sequential") == 1.0
    assert scalability(table, 1, "Multidep") == 1.0
    with pytest.raises(ValueError):
        scalability(table, 4, "Coloring")


def test_scalability_and_speedup_can_rank_versions_differently():
    # A scales better from its own base, B is faster in absolute terms
    table = ScalingTable({(1, "S"): 10.0, (1, "A"): 20.0, (2, "A"): 5.0,
                          (1, "B"): 8.0, (2, "B"): 4.0}, base=1, baseline="S")
    assert scalability(table, 2, "A") > scalability(table, 2, "B")
    assert speedup(table, 2, "A") < speedup(table, 2, "B")


def test_scaling_table_rejects_nonpositive():
    with pytest.raises(ValueError):
        ScalingTable({(1, "a"): 0.0}, 1, "a")


def test_median_after_warmup():
    assert median_after_warmup([100.0, 50.0, 1.0, 3.0, 2.0]) == 2.0
    with pytest.raises(ValueError):
        median_after_warmup([1.0, 2.0])


def rows():
    return [ReportRow("4x4x4x1", 208, "Atomic", True, 1, 2, 4, 200, ph, 0.5, 0.9, 1.0, 0.8)
            for ph in ("assembly", "subgrid")]


def test_report_files(tmp_path):
    write_report_csv(tmp_path / "r.csv", rows(), seed=42)
    seed, parsed = read_report_csv(tmp_path / "r.csv")
    assert seed == 42
    assert tuple(parsed[0].keys()) == REPORT_COLUMNS
    assert parsed[0]["dlb"] == "1" and parsed[1]["phase"] == "subgrid"
    write_report_json(tmp_path / "r.json", rows(), seed=42)
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["seed"] == 42 and set(data["rows"][0]) == set(REPORT_COLUMNS)
