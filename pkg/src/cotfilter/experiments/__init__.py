"""Reference studies: simulated target tracking and a pairs backtest."""

from .tracking import (
    RmseTable,
    TrackingScenario,
    run_tracking,
    tracking_truth_model,
)
from .trading import (
    BacktestReport,
    PairSeries,
    TradeRecord,
    TradingConfig,
    buy_and_hold_ratios,
    load_price_csv,
    performance_ratios,
    run_backtest,
    spread,
    write_ratios_csv,
)

__all__ = [
    "RmseTable",
    "TrackingScenario",
    "run_tracking",
    "tracking_truth_model",
    "BacktestReport",
    "PairSeries",
    "TradeRecord",
    "TradingConfig",
    "buy_and_hold_ratios",
    "load_price_csv",
    "performance_ratios",
    "run_backtest",
    "spread",
    "write_ratios_csv",
]
