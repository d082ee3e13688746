"""Tracking study and pairs-trading backtest."""

import csv
from importlib import resources

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cotfilter import (
    ConfigError,
    DataGapError,
    GaussianBelief,
    InsufficientHistoryError,
    RobustConfig,
    StateSpaceModel,
    kalman_filter,
    simulate,
)
from cotfilter.calibrate import EmOptions, ModelSkeleton, em_fit
from cotfilter.experiments import (
    PairSeries,
    TradingConfig,
    TrackingScenario,
    buy_and_hold_ratios,
    load_price_csv,
    performance_ratios,
    run_backtest,
    run_tracking,
    spread,
    tracking_truth_model,
    write_ratios_csv,
)

FIXTURE = resources.files("cotfilter") / "data" / "pair_prices.csv"


def small_scenario(**kw) -> TrackingScenario:
    base = dict(T=12, T_train=6, instances=2, radii=(0.5, 1.0),
                base_seed=42, n_train=1)
    base.update(kw)
    return TrackingScenario(**base)


# ---------------------------------------------------------------------------
# tracking
# ---------------------------------------------------------------------------


def test_truth_model_matrices():
    sc = TrackingScenario()
    A, C, B0, D0 = tracking_truth_model(sc, 50)
    assert_allclose(A, [[1, 0, 1, 0], [0, 1, 0, 1],
                        [0, 0, 1, 0], [0, 0, 0, 1]], atol=0.0)
    assert_allclose(C, [[1, 0, 0, 0], [0, 1, 0, 0]], atol=0.0)
    c = np.cos(np.pi * 50 / 100)
    wna = np.block([[np.eye(2) / 3.0, np.eye(2) / 2.0],
                    [np.eye(2) / 2.0, np.eye(2)]])
    assert_allclose(B0, 10.0 * (6.5 + 0.5 * c) * wna, rtol=1e-14)
    assert_allclose(D0, 50.0 * (0.1 + 0.05 * c)
                    * np.array([[1.0, 0.5], [0.5, 1.0]]), rtol=1e-14)
    # extremes of the drift
    assert_allclose(tracking_truth_model(sc, 100)[2], 10.0 * 6.0 * wna,
                    rtol=1e-12)
    with pytest.raises(ValueError):
        tracking_truth_model(sc, 0)
    with pytest.raises(ValueError):
        tracking_truth_model(sc, 101)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        small_scenario(radii=()).validate()
    with pytest.raises(ConfigError):
        small_scenario(T=0).validate()
    with pytest.raises(ConfigError):
        small_scenario(radii=(0.5, -1.0)).validate()


def test_run_tracking_shapes_and_outputs(tmp_path):
    sc = small_scenario()
    table = run_tracking(sc, ("em", "ot", "cot"), out_dir=tmp_path)
    assert set(table.rmse) == {("em", 0.0), ("ot", 0.5), ("ot", 1.0),
                               ("cot", 0.5), ("cot", 1.0)}
    for arr in table.rmse.values():
        assert arr.shape == (2, 12, 2)
        assert np.all(arr >= 0.0)
    pairs = {(row[0], row[1]) for row in table.diff_stats}
    assert pairs == {("cot-em", 0.5), ("cot-em", 1.0),
                     ("ot-em", 0.5), ("ot-em", 1.0)}
    for name in ("rmse.csv", "stats.csv", "rmse_diff_cdf.csv"):
        assert (tmp_path / name).exists()
    with open(tmp_path / "rmse.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["method", "radius", "instance", "t",
                      "rmse_pos", "rmse_vel"]


def test_run_tracking_is_deterministic():
    sc = small_scenario(instances=1, radii=(0.5,))
    a = run_tracking(sc, ("em", "cot"))
    b = run_tracking(sc, ("em", "cot"))
    for key in a.rmse:
        assert a.rmse[key].tobytes() == b.rmse[key].tobytes()
    assert a.diff_stats == b.diff_stats


def test_tracking_replicates_the_documented_pipeline():
    # rebuild instance 0 of the em cell by hand: same seeds, one training
    # run, EM fit, classic filter, Euclidean position/velocity errors
    sc = small_scenario(instances=1, radii=(0.5,), T=10, T_train=5)
    table = run_tracking(sc, ("em",))

    truth = StateSpaceModel(
        n=4, m=2,
        A=lambda t: tracking_truth_model(sc, t)[0],
        C=lambda t: tracking_truth_model(sc, t)[1],
        B=lambda t: tracking_truth_model(sc, t)[2],
        D=lambda t: tracking_truth_model(sc, t)[3],
    )
    init = GaussianBelief(np.zeros(4), np.eye(4))
    test = simulate(truth, sc.T, sc.base_seed, np.zeros(4))
    train = simulate(truth, sc.T_train, sc.base_seed + 104729, np.zeros(4))
    A, C, _, _ = tracking_truth_model(sc, 1)
    fit = em_fit(ModelSkeleton(A, C, init), [train.observations],
                 EmOptions())
    model_hat = StateSpaceModel.constant(A, C, fit.B_hat, fit.D_hat)
    beliefs = kalman_filter(model_hat, test.observations, init)
    means = np.array([b.mean for b in beliefs])
    err = means - test.states
    want_pos = np.sqrt(err[:, 0] ** 2 + err[:, 1] ** 2)
    want_vel = np.sqrt(err[:, 2] ** 2 + err[:, 3] ** 2)
    got = table.rmse[("em", 0.0)][0]
    assert_allclose(got[:, 0], want_pos, rtol=1e-12)
    assert_allclose(got[:, 1], want_vel, rtol=1e-12)


# ---------------------------------------------------------------------------
# trading: series and ratios
# ---------------------------------------------------------------------------


def test_pair_series_validation():
    with pytest.raises(DataGapError):
        PairSeries(["2020-01-02", "2020-01-01"], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(DataGapError):
        PairSeries(["2020-01-01", "2020-01-02"], [1.0, -1.0], [1.0, 1.0])
    with pytest.raises(DataGapError):
        PairSeries(["2020-01-01", "2020-01-02"], [1.0, np.nan], [1.0, 1.0])


def test_load_price_csv_rejects_bad_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,close_a,close_b\n2020-01-01,1,1\n")
    with pytest.raises(DataGapError):
        load_price_csv(bad)


def test_bundled_fixture_loads():
    series = load_price_csv(str(FIXTURE))
    assert len(series.dates) == 873
    assert series.dates[0] < series.dates[-1]
    assert np.all(series.close_1 > 0.0)
    assert np.all(series.close_2 > 0.0)


def test_spread_value():
    series = PairSeries(["2020-01-01", "2020-01-02"], [10.0, 11.0],
                        [4.0, 5.0])
    assert_allclose(spread(series, 1.5, 2.0, 1), 11.0 - 1.5 - 2.0 * 5.0,
                    rtol=1e-15)
    with pytest.raises(IndexError):
        spread(series, 0.0, 0.0, 2)


def test_performance_ratios_closed_form():
    wealth = np.array([100.0, 101.0, 100.0, 102.0])
    rf = 0.02
    rets = wealth[1:] / wealth[:-1] - 1.0
    excess = rets - rf / 252.0
    want_sharpe = np.mean(excess) / np.std(excess, ddof=1) * np.sqrt(252.0)
    downside = np.sqrt(np.mean(np.minimum(excess, 0.0) ** 2))
    want_sortino = np.mean(excess) / downside * np.sqrt(252.0)
    sharpe, sortino = performance_ratios(wealth, rf)
    assert_allclose(sharpe, want_sharpe, rtol=1e-12)
    assert_allclose(sortino, want_sortino, rtol=1e-12)


def test_performance_ratios_degenerate_conventions():
    flat = np.full(10, 50.0)
    assert performance_ratios(flat, 0.0) == (0.0, 0.0)
    # strictly positive excess returns leave no downside: sortino -> 0 flag
    rising = np.array([100.0, 101.0, 102.5, 104.0])
    sharpe, sortino = performance_ratios(rising, 0.0)
    assert sharpe > 0.0
    assert sortino == 0.0
    with pytest.raises(InsufficientHistoryError):
        performance_ratios(np.array([1.0]), 0.0)


# ---------------------------------------------------------------------------
# trading: backtest
# ---------------------------------------------------------------------------


def fixture_config(**kw) -> TradingConfig:
    cfg = dict(prices=load_price_csv(str(FIXTURE)))
    cfg.update(kw)
    return TradingConfig(**cfg)


def test_backtest_requires_history():
    series = load_price_csv(str(FIXTURE))
    short = PairSeries(series.dates[:110], series.close_1[:110],
                       series.close_2[:110])
    with pytest.raises(InsufficientHistoryError):
        run_backtest(TradingConfig(prices=short), "nonrobust")


def test_backtest_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        run_backtest(fixture_config(), "bogus")


def test_backtest_wealth_recursion_and_trade_accounting():
    cfg = fixture_config()
    report = run_backtest(cfg, "nonrobust")
    series = cfg.prices
    w = cfg.warmup
    days = len(report.dates)
    assert days == len(series.dates) - w

    prev = np.zeros(2)
    prev_wealth = cfg.initial_wealth
    for j in range(days):
        dp1 = series.close_1[w + j] - series.close_1[w + j - 1]
        dp2 = series.close_2[w + j] - series.close_2[w + j - 1]
        flow = prev[0] * dp1 + prev[1] * dp2
        assert_allclose(report.wealth[j],
                        prev_wealth + flow - report.costs[j],
                        rtol=0.0, atol=1e-9)
        prev = report.shares[j]
        prev_wealth = report.wealth[j]

    # every wealth change happens inside a trade, so the trade log accounts
    # for the full final wealth
    total_pnl = sum(tr.pnl for tr in report.trades)
    assert_allclose(report.final_wealth, cfg.initial_wealth + total_pnl,
                    rtol=0.0, atol=1e-6)
    assert report.n_trades == len(report.trades)
    # the last day never carries a position
    assert_allclose(report.shares[-1], [0.0, 0.0], atol=0.0)


def test_backtest_fills_follow_the_band_rules():
    cfg = fixture_config()
    report = run_backtest(cfg, "nonrobust")
    days = len(report.dates)
    z = cfg.entry_z
    for j in range(days):
        prev = report.shares[j - 1] if j > 0 else np.zeros(2)
        cur = report.shares[j]
        entered = cur[0] != 0.0 and (prev[0] == 0.0
                                     or np.sign(cur[0]) != np.sign(prev[0]))
        exited = prev[0] != 0.0 and (cur[0] == 0.0
                                     or np.sign(cur[0]) != np.sign(prev[0]))
        s, mean, std = (report.spreads[j], report.roll_mean[j],
                        report.roll_std[j])
        if entered:
            assert j >= cfg.window
            assert j < days - 1
            assert std > 0.0
            if cur[0] < 0.0:
                assert s > mean + z * std
            else:
                assert s < mean - z * std
            assert_allclose(abs(cur[0]), cfg.lot, atol=0.0)
        if exited:
            if j < days - 1:
                if prev[0] < 0.0:
                    assert s <= mean
                else:
                    assert s >= mean
        if not entered and not exited:
            assert_allclose(cur, prev, atol=0.0)
        if report.costs[j] == 0.0:
            assert_allclose(cur, prev, atol=0.0)


def test_backtest_deterministic_and_zero_radius_collapse():
    cfg = fixture_config()
    base = run_backtest(cfg, "nonrobust")
    again = run_backtest(cfg, "nonrobust")
    assert base.wealth.tobytes() == again.wealth.tobytes()
    assert base.shares.tobytes() == again.shares.tobytes()
    for mode in ("cot", "ot"):
        collapsed = run_backtest(cfg, mode, radius=0.0)
        assert collapsed.wealth.tobytes() == base.wealth.tobytes()
        assert collapsed.sharpe == base.sharpe
        assert collapsed.sortino == base.sortino
        assert len(collapsed.trades) == len(base.trades)


def test_backtest_robust_mode_changes_the_hedge():
    series = load_price_csv(str(FIXTURE))
    cut = PairSeries(series.dates[:280], series.close_1[:280],
                     series.close_2[:280])
    cfg = TradingConfig(prices=cut)
    plain = run_backtest(cfg, "nonrobust")
    robust = run_backtest(cfg, "cot", radius=0.6)
    assert not np.array_equal(robust.beta, plain.beta)


def test_buy_and_hold_matches_direct_recomputation():
    cfg = fixture_config()
    (sh1, so1), (sh2, so2) = buy_and_hold_ratios(cfg)
    series = cfg.prices
    w = cfg.warmup
    path1 = cfg.initial_wealth * series.close_1[w:] / series.close_1[w]
    path2 = cfg.initial_wealth * series.close_2[w:] / series.close_2[w]
    assert (sh1, so1) == performance_ratios(path1, cfg.rf_annual)
    assert (sh2, so2) == performance_ratios(path2, cfg.rf_annual)


def test_ratios_csv_single_row_for_nonrobust_only(tmp_path):
    cfg = fixture_config()
    report = run_backtest(cfg, "nonrobust")
    path = tmp_path / "ratios.csv"
    write_ratios_csv([report], cfg, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["method", "radius", "sharpe", "sortino"]
    assert len(rows) == 2
    assert rows[1][0] == "nonrobust"


def test_equity_csv_written(tmp_path):
    cfg = fixture_config()
    report = run_backtest(cfg, "nonrobust", out_dir=tmp_path)
    assert (tmp_path / "equity.csv").exists()
    assert (tmp_path / "trades.csv").exists()
    with open(tmp_path / "equity.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["date", "wealth", "shares_1", "shares_2", "costs",
                       "spread", "roll_mean", "roll_std", "alpha", "beta"]
    assert len(rows) == len(report.dates) + 1
