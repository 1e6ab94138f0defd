import numpy as np
import pytest

from spikelasso.bench import BenchPlan, fit_loglog_slope, parse_lambda, run_bench


def test_slope_exact_line():
    s, c, r2 = fit_loglog_slope([(10, 10), (100, 100), (1000, 1000)])
    assert s == pytest.approx(1.0) and c == pytest.approx(0.0, abs=1e-12) and r2 == pytest.approx(1.0)


def test_slope_quadratic():
    assert fit_loglog_slope([(10, 100), (100, 10000)])[0] == pytest.approx(2.0)


def test_slope_degenerate():
    with pytest.raises(ValueError):
        fit_loglog_slope([(10, 1.0), (10, 2.0), (10, 3.0)])
    with pytest.raises(ValueError):
        fit_loglog_slope([(10, 1.0), (100, 0.0), (1000, 3.0)])


def test_slope_monte_carlo():
    rng = np.random.default_rng(2024)
    n = np.array([1e4, 3e4, 1e5, 3e5, 1e6])
    for _ in range(20):
        times = 1e-6 * n**1.5 * (1 + 0.05 * rng.standard_normal(n.size))
        s, _, _ = fit_loglog_slope(zip(n, times))
        assert 1.35 <= s <= 1.65


def test_parse_lambda():
    assert parse_lambda("rel:0.5", y_lmax=4.0) == 2.0
    assert parse_lambda("0.25") == 0.25
    assert parse_lambda(3) == 3.0


def test_plan_validation():
    with pytest.raises(ValueError):
        BenchPlan(n_values=[100, 100])
    with pytest.raises(ValueError):
        BenchPlan(reps=0)
    with pytest.raises(ValueError):
        BenchPlan.from_dict({"reps": 1, "bogus": 2})
    p = BenchPlan()
    assert BenchPlan.from_dict(p.to_dict()) == p


def small_plan(**kw):
    base = dict(solvers=["as-window"], n_values=[6000], reps=3, k=2, d=2, t=20)
    base.update(kw)
    return BenchPlan(**base)


def test_bookkeeping():
    res = run_bench(small_plan())
    assert len(res.rows) == 3
    (cell,) = res.cells
    assert cell["runs"] == 3 and cell["mean_seconds"] > 0 and cell["std_seconds"] >= 0
    assert all(r["certified"] for r in res.rows)
    assert res.slopes["as-window"] is None


def test_determinism_except_timing():
    a = run_bench(small_plan(n_values=[3000, 6000], solvers=["as-window", "as-group"], reps=2))
    b = run_bench(small_plan(n_values=[3000, 6000], solvers=["as-window", "as-group"], reps=2))
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    assert strip(a.rows) == strip(b.rows)


def test_slope_needs_three_certified_points():
    res = run_bench(small_plan(n_values=[2000, 4000, 8000], reps=1))
    assert res.slopes["as-window"]["points"] == 3


def test_max_n_skips_solver():
    res = run_bench(small_plan(n_values=[2000, 4000], reps=1, solvers=["as-naive"], max_n={"as-naive": 2000}))
    assert [r["n"] for r in res.rows] == [2000]
