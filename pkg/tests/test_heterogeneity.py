import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm

from cfpanel.errors import SampleSizeError
from cfpanel.heterogeneity import (COVARIATES, average_effects, binscatter, heterogeneity_regression,
                                   heterogeneity_table, industry_breakdown, ols_hc1)
from cfpanel.synth import generate_cross_section


def _lsdv(df, effect="effect"):
    X = pd.get_dummies(df["naics2"], drop_first=True, dtype=float)
    X = pd.concat([df[list(COVARIATES)], X], axis=1)
    return sm.OLS(df[effect], sm.add_constant(X)).fit(cov_type="HC1")


def test_matches_statsmodels_without_fe():
    df = generate_cross_section(300, seed=1)
    rep = heterogeneity_regression(df)
    ref = sm.OLS(df["effect"], sm.add_constant(df[list(COVARIATES)])).fit(cov_type="HC1")
    for c in COVARIATES:
        assert rep.coef[c] == pytest.approx(ref.params[c], rel=1e-9, abs=1e-12)
        assert rep.se[c] == pytest.approx(ref.bse[c], rel=1e-9)
    assert rep.r2 == pytest.approx(ref.rsquared, rel=1e-9)
    assert rep.n == 300


def test_fixed_effects_match_dummy_regression():
    df = generate_cross_section(400, industry_sd=0.2, seed=2)
    rep = heterogeneity_regression(df, with_industry_fe=True)
    ref = _lsdv(df)
    for c in COVARIATES:
        assert rep.coef[c] == pytest.approx(ref.params[c], abs=1e-8)
        assert rep.se[c] == pytest.approx(ref.bse[c], rel=1e-8)
    assert rep.r2 == pytest.approx(ref.rsquared, rel=1e-9)


def test_frisch_waugh():
    df = generate_cross_section(300, industry_sd=0.3, seed=3)
    fe = heterogeneity_regression(df, with_industry_fe=True)
    dm = df.copy()
    for c in list(COVARIATES) + ["effect"]:
        dm[c] = df[c] - df.groupby("naics2")[c].transform("mean")
    plain = heterogeneity_regression(dm)
    for c in COVARIATES:
        assert fe.coef[c] == pytest.approx(plain.coef[c], abs=1e-8)


def test_constant_outcome():
    df = generate_cross_section(50, seed=4)
    df["effect"] = 0.7
    rep = heterogeneity_regression(df)
    assert rep.coef["const"] == pytest.approx(0.7)
    for c in COVARIATES:
        assert rep.coef[c] == pytest.approx(0.0, abs=1e-10)
    assert rep.r2 == 0.0


def test_industry_intercepts_only():
    df = generate_cross_section(120, seed=5)
    shift = {k: i * 0.1 for i, k in enumerate(sorted(df["naics2"].unique()))}
    df["effect"] = df["naics2"].map(shift)
    rep = heterogeneity_regression(df, with_industry_fe=True)
    assert rep.within_r2 == 0.0
    for c in COVARIATES:
        assert rep.coef[c] == pytest.approx(0.0, abs=1e-10)


def test_hc1_equals_classical_with_equal_residual_magnitudes():
    rng = np.random.default_rng(6)
    Xh = np.column_stack([np.ones(40), rng.standard_normal((40, 2))])
    X = np.repeat(Xh, 2, axis=0)  # each design row twice
    signs = np.tile([1.0, -1.0], 40)
    y = X @ np.array([1.0, 0.5, -0.2]) + 0.3 * signs
    beta, se, resid, dof = ols_hc1(y, X)
    np.testing.assert_allclose(np.abs(resid), 0.3, atol=1e-12)
    s2 = resid @ resid / dof
    classical = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
    np.testing.assert_allclose(se, classical, atol=1e-8)


def test_collinear_covariate_dropped_with_warning():
    df = generate_cross_section(100, seed=7)
    df["log_emp"] = 2 * df["log_sales"] - df["log_cogs"]
    with pytest.warns(UserWarning, match="log_emp"):
        rep = heterogeneity_regression(df)
    assert rep.dropped == ["log_emp"] and "log_emp" not in rep.coef


def test_too_few_firms():
    with pytest.raises(SampleSizeError):
        heterogeneity_regression(generate_cross_section(9, seed=8))


def test_missing_rows_excluded():
    df = generate_cross_section(60, seed=9)
    df.loc[:4, "missing"] = True
    df.loc[5, "log_emp"] = np.nan
    assert heterogeneity_regression(df).n == 54


def test_planted_tenure_coefficient():
    df = generate_cross_section(2000, seed=10)
    rep = heterogeneity_regression(df)
    assert abs(rep.coef["stock_tenure"] - 0.003) < 2 * rep.se["stock_tenure"]
    assert rep.stars("stock_tenure") == "***"


def test_table_layout():
    df = generate_cross_section(200, seed=11)
    reps = [("All", heterogeneity_regression(df)),
            ("All FE", heterogeneity_regression(df, with_industry_fe=True))]
    tab = heterogeneity_table(reps)
    assert list(tab.columns) == ["All", "All FE"]
    assert tab.loc["Industry FE"].tolist() == ["No", "Yes"]
    assert tab.loc["Observations"].tolist() == ["200", "200"]
    assert tab.iloc[1, 0].startswith("(")


def test_average_effects():
    eff = pd.DataFrame({"firm_id": ["a", "a", "b"], "year": [2020, 2021, 2021], "effect": [1.0, 3.0, 5.0]})
    avg = average_effects(eff, [2020, 2021])
    assert avg["a"] == 2.0 and avg["b"] == 5.0


def test_binscatter_examples():
    rng = np.random.default_rng(12)
    x = rng.uniform(size=100)
    bs = binscatter(x, np.full(100, 0.4))
    assert len(bs) == 5 and list(bs["n"]) == [20] * 5
    np.testing.assert_allclose(bs["y_mean"], 0.4)
    np.testing.assert_allclose(bs["hi"] - bs["lo"], 0.0)
    inc = binscatter(x, x)
    assert np.all(np.diff(inc["y_mean"]) > 0)


def test_binscatter_ties_reduce_bins():
    x = np.r_[np.zeros(50), np.ones(50)]
    with pytest.warns(UserWarning, match="bins"):
        bs = binscatter(x, x)
    assert len(bs) < 5


def _fleet(n_per, effects_by_ind, seed=0, sd=0.0):
    rng = np.random.default_rng(seed)
    rows = []
    for ind, eff in effects_by_ind.items():
        for i in range(n_per):
            for yr in (2020, 2021):
                rows.append((f"{ind}-{i}", ind, yr, eff + sd * rng.standard_normal(), rng.uniform(1, 100)))
    return pd.DataFrame(rows, columns=["firm_id", "naics2", "year", "effect", "sales"])


def test_industry_breakdown_one_industry():
    df = _fleet(10, {"31": 0.0}, sd=1.0)
    br = industry_breakdown(df)
    for yr, g in df.groupby("year"):
        fleet = np.average(g["effect"], weights=g["sales"])
        assert br.table.set_index("year").loc[yr, "effect"] == pytest.approx(fleet)


def test_industry_ordering():
    br = industry_breakdown(_fleet(3, {"42": 1.0, "31": -1.0}))
    assert br.order == ["31", "42"]
    assert list(br.table["industry"])[:2] == ["31", "31"]


def test_planted_industry_shock():
    df = _fleet(50, {"31": 0.0, "42": -0.5, "51": 0.0}, seed=13, sd=0.1)
    br = industry_breakdown(df)
    t = br.table[br.table["industry"] == "42"]
    assert np.all(np.abs(t["effect"] + 0.5) <= 0.1)
    assert br.order[0] == "42"


def test_industry_means_reaggregate_to_fleet():
    df = _fleet(20, {"31": 0.2, "42": -0.3, "51": 0.05}, seed=14, sd=0.5)
    br = industry_breakdown(df)
    for yr, g in br.table.groupby("year"):
        re = np.sum(g["effect"] * g["weight"]) / g["weight"].sum()
        sub = df[df["year"] == yr]
        assert re == pytest.approx(np.average(sub["effect"], weights=sub["sales"]), abs=1e-10)
    assert set(br.reference.columns) == {"year", "p25", "p75"}
