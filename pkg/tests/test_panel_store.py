import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfpanel import periods as P
from cfpanel.errors import (CoverageError, DomainError, EmptyResultError, IntegrityError, SchemaError)
from cfpanel.panel_store import (CleaningConfig, FirmObservation, IndustryElasticityTable, PanelDataset,
                                 clean_panel, compute_markup, compute_profit_rate, derive_covariates,
                                 entry_exit_rates, load_deflator, load_panel, longest_contiguous_run,
                                 rolling_cv)

HEADER = "firm_id,period,sales,cogs,xsga,ppegt,emp,naics2\n"


def csv(*rows):
    return io.StringIO(HEADER + "".join(r + "\n" for r in rows))


def obs(sales=200.0, cogs=100.0, xsga=0.0, naics="31", period=2019):
    return FirmObservation("A", period, sales, cogs, xsga, 50.0, 1.0, naics)


def frame(rows):
    return pd.DataFrame(rows, columns=["firm_id", "period", "sales", "cogs", "xsga", "ppegt", "emp", "naics2"])


# ---------------------------------------------------------------- periods

def test_period_codes_roundtrip():
    assert P.parse_period("2019", "yearly") == 2019
    q = P.parse_period("2020Q3", "quarterly")
    assert q == 2020 * 4 + 2
    assert P.format_period(q, "quarterly") == "2020Q3"
    assert P.parse_period("2020Q1", "quarterly") - P.parse_period("2019Q4", "quarterly") == 1
    assert P.parse_period("20x0", "yearly") is None
    assert P.year_of(q, "quarterly") == 2020


# ---------------------------------------------------------------- loading

def test_load_two_rows_one_firm():
    d = load_panel(csv("A,2019,10,5,1,3,1,31", "A,2020,11,5,1,3,1,31"), "yearly")
    ser = list(d.iter_series())
    assert len(ser) == 1 and len(ser[0]) == 2
    assert ser[0].entry_period == 2019 and ser[0].exit_period == 2020


def test_load_duplicate_is_integrity_error():
    with pytest.raises(IntegrityError, match="A"):
        load_panel(csv("A,2020,10,5,1,3,1,31", "A,2020,11,5,1,3,1,31"), "yearly")


def test_load_six_rows_three_firms():
    rows = [f"{f},{y},10,5,1,3,1,31" for f in "ABC" for y in (2019, 2020)]
    d = load_panel(csv(*rows), "yearly")
    ser = list(d.iter_series())
    assert [s.firm_id for s in ser] == ["A", "B", "C"]
    assert all(len(s) == 2 for s in ser)


def test_missing_column_names_it():
    with pytest.raises(SchemaError, match="naics2"):
        load_panel(io.StringIO("firm_id,period,sales,cogs,xsga,ppegt,emp\nA,2019,1,1,1,1,1\n"), "yearly")


def test_unparseable_rows_are_counted():
    d = load_panel(csv("A,2019,10,5,1,3,1,31", "A,20x0,11,5,1,3,1,31", "A,2021,abc,5,1,3,1,31"), "yearly")
    assert len(d) == 1 and d.dropped_rows == 2


def test_quarterly_sorted_by_firm_then_period():
    d = load_panel(csv("B,2020Q2,1,1,0,1,1,31", "A,2020Q1,1,1,0,1,1,31", "B,2019Q4,1,1,0,1,1,31"), "quarterly")
    f = d.frame
    assert list(f["firm_id"]) == ["A", "B", "B"]
    assert list(f["period"]) == [8080, 8079, 8081]


# ---------------------------------------------------------------- outcomes

def test_markup_examples():
    one = IndustryElasticityTable.constant(1.0)
    assert compute_markup(obs(200, 100), one) == 2.0
    assert compute_markup(obs(100, 100), one) == 1.0
    th = IndustryElasticityTable.constant(0.85)
    assert compute_markup(obs(159894, 94946), th) == pytest.approx(0.85 * 159894 / 94946, rel=1e-15)
    assert compute_markup(obs(159894, 94946), th) == pytest.approx(1.4315, abs=1e-4)


def test_markup_requires_positive_cogs():
    with pytest.raises(DomainError):
        compute_markup(obs(100, 0), IndustryElasticityTable.constant(1.0))


def test_profit_rate_examples():
    assert compute_profit_rate(obs(100, 60, 20)) == pytest.approx(0.20)
    assert compute_profit_rate(obs(100, 100, 0)) == 0.0
    assert compute_profit_rate(obs(100, 90, 30)) == pytest.approx(-0.20)
    with pytest.raises(DomainError):
        compute_profit_rate(obs(0, 1, 1))


pos = st.floats(0.01, 1e6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(pos, pos, pos, st.floats(0.1, 3.0), st.floats(0.01, 100.0))
def test_outcome_homogeneity(sales, cogs, xsga, theta, k):
    t1 = IndustryElasticityTable.constant(theta)
    tk = IndustryElasticityTable.constant(theta * k)
    m = compute_markup(obs(sales, cogs), t1)
    assert compute_markup(obs(sales, cogs), tk) == pytest.approx(k * m, rel=1e-12)
    assert compute_markup(obs(sales * k, cogs * k), t1) == pytest.approx(m, rel=1e-12)
    pr = compute_profit_rate(obs(sales, cogs, xsga))
    assert compute_profit_rate(obs(sales * k, cogs * k, xsga * k)) == pytest.approx(pr, rel=1e-9, abs=1e-9)


def test_elasticity_lookup_fallbacks(tmp_path):
    p = tmp_path / "el.csv"
    p.write_text("naics2,period,theta\n31,2019,0.9\n31,*,0.8\n*,*,0.7\n")
    t = IndustryElasticityTable.from_csv(str(p))
    assert t.lookup("31", 2019, "yearly") == 0.9
    assert t.lookup("31", 2018, "yearly") == 0.8
    assert t.lookup("42", 2019, "yearly") == 0.7
    q = P.parse_period("2019Q2", "quarterly")
    assert t.lookup("31", q, "quarterly") == 0.9  # falls back to the year
    with pytest.raises(DomainError):
        IndustryElasticityTable({("31", "2019"): -1.0})


# ---------------------------------------------------------------- cleaning

def _panel(n_firms=100, years=range(2014, 2022), seed=0, ratio=None):
    rows = []
    for i in range(n_firms):
        for y in years:
            s = 100.0 * (1 + i)
            r = 0.6 if ratio is None else ratio
            rows.append((f"F{i:03d}", y, s, s * r, s * 0.2, s * 0.5, 1.0, "31"))
    return PanelDataset(frame(rows), "yearly")


def test_negative_sales_removed_at_step1():
    rows = [("A", y, 100.0, 60.0, 10.0, 50.0, 1.0, "31") for y in range(2015, 2021)]
    rows.append(("B", 2019, -5.0, 1.0, 1.0, 1.0, 1.0, "31"))
    d, log = clean_panel(PanelDataset(frame(rows), "yearly"), CleaningConfig())
    assert log.steps["negative_values"] == 1
    assert "B" not in d.firm_ids


def test_identical_ratios_trim_nothing():
    d, log = clean_panel(_panel(20), CleaningConfig())
    assert log.steps["ratio_trim"] == 0 and log.steps["cost_share_trim"] == 0
    assert len(d) == 20 * 8


def test_two_planted_outliers_removed():
    rng = np.random.default_rng(5)
    rows = []
    for i in range(100):
        for y in range(2012, 2022):
            s = float(rng.uniform(50, 500))
            rows.append((f"F{i:03d}", y, s, s * rng.uniform(0.4, 0.8), 0.2 * s, 0.5 * s, 1.0, "31"))
    df = frame(rows)
    planted = [df.index[(df["firm_id"] == "F007") & (df["period"] == 2015)][0],
               df.index[(df["firm_id"] == "F042") & (df["period"] == 2018)][0]]
    df.loc[planted, "cogs"] = df.loc[planted, "sales"] * 5.0
    # brute-force linear-interpolation thresholds per period
    expected = set()
    for y, g in df.groupby("period"):
        r = (g["cogs"] / g["sales"]).to_numpy()
        srt = np.sort(r)
        pos = 0.99 * (srt.size - 1)
        lo = int(np.floor(pos))
        thr = srt[lo] + (pos - lo) * (srt[lo + 1] - srt[lo])
        expected |= set(g.index[r > thr])
    assert set(planted) <= expected
    cfg = CleaningConfig(lower_pct=0.0, share_lower_pct=0.0, share_upper_pct=100.0)
    d, log = clean_panel(PanelDataset(df, "yearly"), cfg)
    assert log.steps["ratio_trim"] == len(expected)
    kept = set(zip(d.frame["firm_id"], d.frame["period"]))
    assert ("F007", 2015) not in kept and ("F042", 2018) not in kept
    assert len(d) == len(df) - len(expected)


def test_outliers_above_99th_in_larger_cross_section():
    rows = []
    rng = np.random.default_rng(2)
    for i in range(300):
        s = 100.0
        rows.append((f"F{i:03d}", 2017, s, s * rng.uniform(0.4, 0.8), 20.0, 50.0, 1.0, "31"))
    rows[0] = rows[0][:3] + (500.0,) + rows[0][4:]
    rows[1] = rows[1][:3] + (600.0,) + rows[1][4:]
    df = frame(rows)
    r = np.sort((df["cogs"] / df["sales"]).to_numpy())
    thr = np.percentile(r, 99)
    n_above = int((r > thr).sum())
    from cfpanel.panel_store import _trim_mask
    keep = _trim_mask((df["cogs"] / df["sales"]).to_numpy(), np.zeros(300), 0.0, 99.0)
    assert int((~keep).sum()) == n_above == 3
    assert not keep[0] and not keep[1]


def test_cleaning_is_idempotent():
    rng = np.random.default_rng(3)
    rows = []
    for i in range(60):
        for y in range(2012, 2022):
            s = float(rng.uniform(50, 500))
            rows.append((f"F{i:02d}", y, s, s * rng.uniform(0.3, 0.9), s * rng.uniform(0.05, 0.3),
                         s * rng.uniform(0.2, 1.0), 1.0, "31"))
    d1, _ = clean_panel(PanelDataset(frame(rows), "yearly"), CleaningConfig())
    # fixed thresholds from the first-pass output: nothing outside [min, max] of each cross-section
    cfg = CleaningConfig(lower_pct=0.0, upper_pct=100.0, share_lower_pct=0.0, share_upper_pct=100.0)
    d2, log2 = clean_panel(d1, cfg)
    assert sum(log2.steps.values()) == 0
    pd.testing.assert_frame_equal(d1.frame, d2.frame)


def test_short_firms_and_early_exit_dropped():
    rows = [("A", y, 100.0, 60.0, 10.0, 50.0, 1.0, "31") for y in range(2015, 2022)]
    rows += [("B", y, 100.0, 60.0, 10.0, 50.0, 1.0, "31") for y in (2019, 2020)]
    rows += [("C", y, 100.0, 60.0, 10.0, 50.0, 1.0, "31") for y in range(2010, 2019)]
    d, log = clean_panel(PanelDataset(frame(rows), "yearly"), CleaningConfig())
    assert d.firm_ids == ["A"]
    assert set(log.firms_removed) == {"B", "C"}
    assert log.steps["short_or_early_exit"] == 2 + 9


def test_missing_ids_dropped():
    rows = [("A", y, 100.0, 60.0, 10.0, 50.0, 1.0, "31") for y in range(2015, 2022)]
    rows.append(("A2", 2019, 100.0, 60.0, 10.0, 50.0, 1.0, None))
    d, log = clean_panel(PanelDataset(frame(rows), "yearly"), CleaningConfig())
    assert log.steps["missing_ids"] == 1


def test_empty_after_cleaning():
    rows = [("A", 2019, -1.0, 60.0, 10.0, 50.0, 1.0, "31")]
    with pytest.raises(EmptyResultError):
        clean_panel(PanelDataset(frame(rows), "yearly"), CleaningConfig())


def test_deflation_and_coverage():
    rows = [("A", y, 100.0, 60.0, 10.0, 50.0, 1.0, "31") for y in range(2015, 2022)]
    defl = {y: 100.0 + (y - 2010) for y in range(2010, 2022)}
    d, _ = clean_panel(PanelDataset(frame(rows), "yearly"), CleaningConfig(deflator=defl))
    f = d.frame.set_index("period")
    assert f.loc[2020, "sales"] == pytest.approx(100.0 / 1.10)
    del defl[2017]
    with pytest.raises(CoverageError, match="2017"):
        clean_panel(PanelDataset(frame(rows), "yearly"), CleaningConfig(deflator=defl))


def test_load_deflator_quarterly_accepts_years(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("period,index\n2019,99\n2020Q1,101\n")
    d = load_deflator(str(p), "quarterly")
    assert d[2019] == 99.0 and d[2020 * 4] == 101.0


# ---------------------------------------------------------------- descriptives

def test_entry_exit_one_firm():
    rows = [("A", y, 1.0, 1.0, 0.0, 1.0, 1.0, "31") for y in (2018, 2019, 2020)]
    ee = entry_exit_rates(PanelDataset(frame(rows), "yearly")).set_index("period")
    assert ee.loc[2018, "entry_rate"] == 1 and ee.loc[2020, "exit_rate"] == 1
    assert ee.loc[2019, "entry_rate"] == 0 and ee.loc[2019, "exit_rate"] == 0


def test_entry_exit_disjoint_spans_brute_force():
    spans = {"A": (2010, 2012), "B": (2013, 2015), "C": (2011, 2014)}
    rows = [(f, y, 1.0, 1.0, 0.0, 1.0, 1.0, "31") for f, (a, b) in spans.items() for y in range(a, b + 1)]
    ee = entry_exit_rates(PanelDataset(frame(rows), "yearly")).set_index("period")
    for y in range(2010, 2016):
        active = [f for f, (a, b) in spans.items() if a <= y <= b]
        ent = sum(1 for f in active if spans[f][0] == y)
        ex = sum(1 for f in active if spans[f][1] == y)
        assert ee.loc[y, "entry_rate"] == ent / len(active)
        assert ee.loc[y, "exit_rate"] == ex / len(active)
    assert ee["entries"].sum() == 3 and ee["exits"].sum() == 3


def test_entry_exit_skips_empty_periods():
    rows = [("A", 2010, 1.0, 1.0, 0.0, 1.0, 1.0, "31"), ("A", 2012, 1.0, 1.0, 0.0, 1.0, 1.0, "31")]
    ee = entry_exit_rates(PanelDataset(frame(rows), "yearly"))
    assert list(ee["period"]) == [2010, 2012]


def test_rolling_cv_examples():
    assert np.all(rolling_cv(np.full(8, 3.0), 5) == 0)
    v = rolling_cv(np.array([1, 1, 1, 1, 1, 11.0]), 5)
    assert v[-1] == pytest.approx(np.sqrt(20) / 3, rel=1e-12)
    assert rolling_cv(np.ones(4), 5).size == 0
    z = rolling_cv(np.array([1.0, -1.0, 1.0, -1.0, 0.0]), 5)
    assert np.isnan(z[0])


def test_longest_contiguous_run():
    per, val = longest_contiguous_run([1, 2, 3, 5, 6, 7, 8, 10], np.arange(8.0))
    assert list(per) == [5, 6, 7, 8]
    per, _ = longest_contiguous_run([1, 2, 4, 5], np.zeros(4))
    assert list(per) == [4, 5]  # ties go to the later run
    per, _ = longest_contiguous_run([1, 2, 3, 5, 6, 7, 8], np.zeros(7), before=6)
    assert list(per) == [1, 2, 3]


def _cov_panel():
    rows = []
    for f, ind, sales, first in (("A", "31", 30.0, 2010), ("B", "31", 70.0, 2012), ("C", "42", 50.0, 2015)):
        for y in range(first, 2022):
            rows.append((f, y, sales, sales / 2, 1.0, 10.0, 2.0, ind))
    return PanelDataset(frame(rows), "yearly")


def test_covariates():
    cov = derive_covariates(_cov_panel(), (2015, 2019), 2020)
    assert cov.loc["A", "market_share"] == pytest.approx(0.3)
    assert cov.loc["B", "market_share"] == pytest.approx(0.7)
    assert cov.loc["C", "market_share"] == pytest.approx(1.0)
    assert cov.loc["A", "stock_tenure"] == 10
    assert cov.loc["A", "log_sales"] == pytest.approx(np.log(30.0))
    assert not cov["missing"].any()


def test_market_share_sums_to_one():
    d = _cov_panel()
    df = d.frame
    share = df["sales"] / df.groupby(["naics2", "period"])["sales"].transform("sum")
    sums = share.groupby([df["naics2"], df["period"]]).sum()
    assert np.allclose(sums, 1.0, atol=1e-9)


def test_covariates_missing_window_flagged():
    rows = [("A", y, 10.0, 5.0, 1.0, 1.0, 1.0, "31") for y in range(2015, 2022)]
    rows += [("Z", y, 10.0, 5.0, 1.0, 1.0, 1.0, "31") for y in (2020, 2021)]
    cov = derive_covariates(PanelDataset(frame(rows), "yearly"))
    assert cov.loc["Z", "missing"] and not cov.loc["A", "missing"]
