"""Pairs backtest driven by a filtered hedge relation.

A two-asset strategy tracks the relation ``y1 ~ alpha + beta y2`` with a
random-walk state model (the filter sees ``y1`` through the observation
row ``(1, y2)``), trades the spread ``y1 - alpha - beta y2`` against its
rolling statistics, and accounts wealth to the cent. The filter flavor
(plain, worst-case over a joint ball, worst-case over a bi-causal ball)
and the ball radius are the experiment variables; everything downstream
of the posterior means is shared, so ratio differences isolate the
filtering choice.

Within a day the order is fixed: update the filter with today's close,
evaluate signals on today's filtered spread, execute at today's close.
Position size is set from ``beta`` at entry and held until exit; one
position at a time, re-entry allowed after an exit, force-close on the
final day.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from ..errors import (
    ConfigError,
    DataGapError,
    InsufficientHistoryError,
)
from ..minimax import RobustConfig
from ..robustfilter import FilterRun, run_filter
from ..solver import SolverOptions
from ..statespace import FLOAT_FMT, GaussianBelief, StateSpaceModel

__all__ = [
    "PairSeries",
    "TradingConfig",
    "TradeRecord",
    "BacktestReport",
    "load_price_csv",
    "spread",
    "performance_ratios",
    "buy_and_hold_ratios",
    "run_backtest",
    "write_ratios_csv",
]

#: Trading days per year used for annualization.
TRADING_DAYS = 252


@dataclass
class PairSeries:
    """Aligned daily closes of the two assets.

    One row per trading day; dates are ISO strings, strictly increasing,
    closes positive. A single table cannot hold misaligned series, so
    the date checks are the alignment checks.
    """

    dates: list[str]
    close_1: np.ndarray
    close_2: np.ndarray

    def __post_init__(self) -> None:
        self.close_1 = np.asarray(self.close_1, dtype=float)
        self.close_2 = np.asarray(self.close_2, dtype=float)
        n = len(self.dates)
        if self.close_1.shape != (n,) or self.close_2.shape != (n,):
            raise DataGapError(
                f"{n} dates against {self.close_1.shape[0]} and "
                f"{self.close_2.shape[0]} closes"
            )
        prev = None
        for ds in self.dates:
            try:
                d = date.fromisoformat(ds)
            except ValueError as exc:
                raise DataGapError(f"bad ISO date {ds!r}") from exc
            if prev is not None and d <= prev:
                raise DataGapError(
                    f"dates must be strictly increasing; {ds} follows "
                    f"{prev.isoformat()}"
                )
            prev = d
        for name, arr in (("close_1", self.close_1),
                          ("close_2", self.close_2)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise DataGapError(f"{name} must be finite and positive")

    def __len__(self) -> int:
        return len(self.dates)


def load_price_csv(path) -> PairSeries:
    """Read a `date, close_1, close_2` CSV (header required, ISO dates).

    Malformed rows and date problems raise :class:`DataGapError`.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataGapError(f"{path}: empty file") from None
        if header != ["date", "close_1", "close_2"]:
            raise DataGapError(
                f"{path}: expected header 'date, close_1, close_2', got "
                f"{header}"
            )
        dates: list[str] = []
        c1: list[float] = []
        c2: list[float] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataGapError(
                    f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            dates.append(row[0].strip())
            try:
                c1.append(float(row[1]))
                c2.append(float(row[2]))
            except ValueError as exc:
                raise DataGapError(f"{path}:{lineno}: {exc}") from None
    return PairSeries(dates, np.array(c1), np.array(c2))


@dataclass
class TradingConfig:
    """Strategy and filter constants of one backtest.

    ``warmup`` days fit the initial ``(alpha, beta)`` by least squares;
    the filter then runs over the remaining days. ``window`` sizes the
    rolling spread statistics, ``entry_z`` the entry band in rolling
    standard deviations, ``lot`` the share scale ``lot * (1, -beta)``.
    ``B_nominal``/``D_nominal`` are the reference noise covariances
    handed to the filter (identity and one by default; deliberately
    crude, the robust modes exist to absorb that).
    """

    prices: PairSeries
    warmup: int = 100
    window: int = 20
    entry_z: float = 2.0
    lot: float = 100.0
    tc_rate: float = 1e-4
    initial_wealth: float = 10000.0
    rf_annual: float = 0.02
    radii: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5,
                                0.6, 0.7, 0.8, 0.9, 1.0)
    B_nominal: np.ndarray = field(default_factory=lambda: np.eye(2))
    D_nominal: np.ndarray = field(
        default_factory=lambda: np.array([[1.0]]))

    def validate(self) -> None:
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.tc_rate < 0:
            raise ConfigError(f"tc_rate must be >= 0, got {self.tc_rate}")
        if self.warmup < 2:
            raise ConfigError(f"warmup must be >= 2, got {self.warmup}")
        for name in ("entry_z", "lot", "initial_wealth"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if len(self.prices) <= self.warmup + self.window:
            raise InsufficientHistoryError(
                f"{len(self.prices)} days cannot cover warmup "
                f"{self.warmup} plus window {self.window}"
            )


def spread(series: PairSeries, alpha_t: float, beta_t: float,
           t: int) -> float:
    """The hedge residual ``close_1[t] - alpha_t - beta_t close_2[t]``
    at day index ``t`` (0-based into the series)."""
    if not 0 <= t < len(series):
        raise IndexError(f"day index {t} outside 0..{len(series) - 1}")
    return float(series.close_1[t] - alpha_t - beta_t * series.close_2[t])


def _excess_returns(daily_wealth: np.ndarray, rf_annual: float
                    ) -> np.ndarray:
    w = np.asarray(daily_wealth, dtype=float)
    if w.size < 2:
        raise InsufficientHistoryError(
            f"need at least 2 wealth points, got {w.size}")
    returns = w[1:] / w[:-1] - 1.0
    return returns - rf_annual / TRADING_DAYS


def performance_ratios(daily_wealth, rf_annual: float
                       ) -> tuple[float, float]:
    """Annualized Sharpe and Sortino ratios of a daily wealth curve.

    Excess returns use ``rf_annual / 252`` per day; Sharpe divides by
    the sample standard deviation (ddof 1), Sortino by the root mean
    square of the negative part. A zero (or undefined) denominator
    yields a ratio of 0 by convention.
    """
    e = _excess_returns(daily_wealth, rf_annual)
    scale = np.sqrt(TRADING_DAYS)
    mean = float(np.mean(e))
    sd = float(np.std(e, ddof=1)) if e.size >= 2 else 0.0
    sharpe = mean / sd * scale if sd > 0 else 0.0
    downside = float(np.sqrt(np.mean(np.minimum(e, 0.0) ** 2)))
    sortino = mean / downside * scale if downside > 0 else 0.0
    return sharpe, sortino


@dataclass
class TradeRecord:
    """One round trip: entry and exit fills with their costs."""

    entry_date: str
    exit_date: str
    side: str
    shares_1: float
    shares_2: float
    entry_price_1: float
    entry_price_2: float
    exit_price_1: float
    exit_price_2: float
    cost: float
    pnl: float


@dataclass
class BacktestReport:
    """Daily accounting and summary ratios of one backtest run.

    Arrays are aligned to ``dates`` (the post-warmup days). ``shares``
    holds the position after the day's fills; ``costs`` the fees paid
    that day; ``wealth`` obeys
    ``wealth[j] = wealth[j-1] + shares[j-1] @ price_change - costs[j]``
    exactly. ``roll_mean``/``roll_std`` are NaN until the window fills.
    """

    mode: str
    radius: float
    dates: list[str]
    wealth: np.ndarray
    trades: list[TradeRecord]
    sharpe: float
    sortino: float
    alpha: np.ndarray
    beta: np.ndarray
    spreads: np.ndarray
    roll_mean: np.ndarray
    roll_std: np.ndarray
    shares: np.ndarray
    costs: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @property
    def final_wealth(self) -> float:
        return float(self.wealth[-1])

    @property
    def n_trades(self) -> int:
        return len(self.trades)

    def to_equity_csv(self, path) -> None:
        """Write the daily accounting columns; every quantity needed to
        replay the wealth recursion is included."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "wealth", "shares_1", "shares_2", "costs",
                        "spread", "roll_mean", "roll_std", "alpha",
                        "beta"])
            for j, d in enumerate(self.dates):
                w.writerow([d] + [
                    FLOAT_FMT % v for v in (
                        self.wealth[j], self.shares[j, 0],
                        self.shares[j, 1], self.costs[j], self.spreads[j],
                        self.roll_mean[j], self.roll_std[j],
                        self.alpha[j], self.beta[j],
                    )
                ])

    def to_trades_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["entry_date", "exit_date", "side", "shares_1",
                        "shares_2", "entry_price_1", "entry_price_2",
                        "exit_price_1", "exit_price_2", "cost", "pnl"])
            for tr in self.trades:
                w.writerow([tr.entry_date, tr.exit_date, tr.side] + [
                    FLOAT_FMT % v for v in (
                        tr.shares_1, tr.shares_2, tr.entry_price_1,
                        tr.entry_price_2, tr.exit_price_1,
                        tr.exit_price_2, tr.cost, tr.pnl,
                    )
                ])


def _hedge_filter(cfg: TradingConfig, mode: str, radius: float,
                  alpha0: float, beta0: float,
                  solver_opts: SolverOptions | None) -> FilterRun:
    """Run the chosen filter over the post-warmup days."""
    y2 = cfg.prices.close_2
    warmup = cfg.warmup
    model = StateSpaceModel(
        n=2, m=1,
        A=lambda t: np.eye(2),
        C=lambda t: np.array([[1.0, y2[warmup - 1 + t]]]),
        B=lambda t: cfg.B_nominal,
        D=lambda t: cfg.D_nominal,
    )
    obs = cfg.prices.close_1[warmup:].reshape(-1, 1)
    init = GaussianBelief(np.array([alpha0, beta0]), np.eye(2))
    rcfg = RobustConfig(radius=float(radius), mode=mode)
    return run_filter(model, obs, init, rcfg, solver_opts)


def run_backtest(cfg: TradingConfig, mode: str, radius: float = 0.0,
                 out_dir=None, solver_opts: SolverOptions | None = None
                 ) -> BacktestReport:
    """Backtest one (mode, radius) cell over the configured prices.

    Deterministic: identical inputs give identical reports. Daily order:
    filter update, signal evaluation, execution, all at the close. Entry
    requires the rolling window to be full, so with the default window
    the first possible fill is the 21st post-warmup day; the final day
    admits no new entries and force-closes any open position. When
    ``out_dir`` is given, ``equity.csv`` and ``trades.csv`` are written
    there.
    """
    cfg.validate()
    prices = cfg.prices
    y1, y2 = prices.close_1, prices.close_2
    warmup, window = cfg.warmup, cfg.window

    X = np.column_stack([np.ones(warmup), y2[:warmup]])
    coef, *_ = np.linalg.lstsq(X, y1[:warmup], rcond=None)
    alpha0, beta0 = float(coef[0]), float(coef[1])

    run = _hedge_filter(cfg, mode, radius, alpha0, beta0, solver_opts)
    days = list(range(warmup, len(prices)))
    P = len(days)
    alpha = np.array([b.mean[0] for b in run.beliefs])
    beta = np.array([b.mean[1] for b in run.beliefs])
    spreads = y1[warmup:] - alpha - beta * y2[warmup:]

    wealth = np.empty(P)
    shares = np.zeros((P, 2))
    costs = np.zeros(P)
    roll_mean = np.full(P, np.nan)
    roll_std = np.full(P, np.nan)
    trades: list[TradeRecord] = []
    warnings = list(run.warnings)

    pos = np.zeros(2)
    open_info: dict | None = None
    prev_wealth = cfg.initial_wealth
    for j, d in enumerate(days):
        flow = 0.0
        if j > 0:
            flow = (pos[0] * (y1[d] - y1[d - 1])
                    + pos[1] * (y2[d] - y2[d - 1]))
        fees = 0.0
        have_window = j >= window
        if have_window:
            win = spreads[j - window:j]
            roll_mean[j] = np.mean(win)
            roll_std[j] = np.std(win, ddof=1)
        final = j == P - 1
        s = spreads[j]

        if open_info is not None:
            side = open_info["side"]
            crossed = have_window and (
                (side == "short_spread" and s <= roll_mean[j])
                or (side == "long_spread" and s >= roll_mean[j])
            )
            if final or crossed:
                fill = abs(pos[0]) * y1[d] + abs(pos[1]) * y2[d]
                fee = cfg.tc_rate * fill
                fees += fee
                pnl = (pos[0] * (y1[d] - open_info["p1"])
                       + pos[1] * (y2[d] - open_info["p2"])
                       - open_info["fee"] - fee)
                trades.append(TradeRecord(
                    entry_date=open_info["date"],
                    exit_date=prices.dates[d], side=side,
                    shares_1=pos[0], shares_2=pos[1],
                    entry_price_1=open_info["p1"],
                    entry_price_2=open_info["p2"],
                    exit_price_1=float(y1[d]), exit_price_2=float(y2[d]),
                    cost=open_info["fee"] + fee, pnl=pnl,
                ))
                pos = np.zeros(2)
                open_info = None

        if open_info is None and have_window and not final:
            band = cfg.entry_z * roll_std[j]
            new = None
            if s > roll_mean[j] + band:
                new = np.array([-cfg.lot, cfg.lot * beta[j]])
                side = "short_spread"
            elif s < roll_mean[j] - band:
                new = np.array([cfg.lot, -cfg.lot * beta[j]])
                side = "long_spread"
            if new is not None:
                fill = abs(new[0]) * y1[d] + abs(new[1]) * y2[d]
                fee = cfg.tc_rate * fill
                fees += fee
                pos = new
                open_info = {"side": side, "date": prices.dates[d],
                             "p1": float(y1[d]), "p2": float(y2[d]),
                             "fee": fee}

        costs[j] = fees
        wealth[j] = prev_wealth + flow - fees
        shares[j] = pos
        prev_wealth = wealth[j]

    sharpe, sortino = performance_ratios(wealth, cfg.rf_annual)
    e = _excess_returns(wealth, cfg.rf_annual)
    if float(np.sqrt(np.mean(np.minimum(e, 0.0) ** 2))) == 0.0:
        warnings.append(
            "Sortino denominator is zero; ratio reported as 0")

    report = BacktestReport(
        mode=mode, radius=float(radius),
        dates=[prices.dates[d] for d in days],
        wealth=wealth, trades=trades, sharpe=sharpe, sortino=sortino,
        alpha=alpha, beta=beta, spreads=spreads, roll_mean=roll_mean,
        roll_std=roll_std, shares=shares, costs=costs, warnings=warnings,
    )
    if out_dir is not None:
        report.to_equity_csv(os.path.join(out_dir, "equity.csv"))
        report.to_trades_csv(os.path.join(out_dir, "trades.csv"))
    return report


def buy_and_hold_ratios(cfg: TradingConfig
                        ) -> tuple[tuple[float, float],
                                   tuple[float, float]]:
    """Sharpe and Sortino of holding each asset alone over the same
    post-warmup days the strategy trades."""
    cfg.validate()
    out = []
    for closes in (cfg.prices.close_1, cfg.prices.close_2):
        w = cfg.initial_wealth * closes[cfg.warmup:] / closes[cfg.warmup]
        out.append(performance_ratios(w, cfg.rf_annual))
    return out[0], out[1]


def write_ratios_csv(reports: list[BacktestReport], cfg: TradingConfig,
                     path) -> None:
    """Summarize runs as one row per (method, radius), with the two
    buy-and-hold benchmarks repeated as reference columns."""
    (sh1, so1), (sh2, so2) = buy_and_hold_ratios(cfg)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "radius", "sharpe", "sortino",
                    "final_wealth", "n_trades", "sharpe_hold_1",
                    "sortino_hold_1", "sharpe_hold_2", "sortino_hold_2"])
        for rep in reports:
            w.writerow([rep.mode, FLOAT_FMT % rep.radius] + [
                FLOAT_FMT % v for v in (
                    rep.sharpe, rep.sortino, rep.final_wealth,
                )
            ] + [str(rep.n_trades)] + [
                FLOAT_FMT % v for v in (sh1, so1, sh2, so2)
            ])
