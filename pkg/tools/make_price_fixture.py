"""Generate the bundled synthetic pair-price fixture.

The fixture imitates the shape of a cointegrated large-cap pair over the
2019-2023 window (873 weekday closes): asset 2 follows a geometric
random walk, asset 1 tracks a slowly drifting affine relation to asset 2
plus a fast mean-reverting residual. All values are synthetic; no market
data is embedded. Regenerate with::

    python3 tools/make_price_fixture.py src/cotfilter/data/pair_prices.csv
"""

from __future__ import annotations

import argparse
import csv
from datetime import date, timedelta

import numpy as np

START = date(2019, 8, 9)
DAYS = 873


def business_days(start: date, count: int) -> list[str]:
    out: list[str] = []
    d = start
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += timedelta(days=1)
    return out


def synth_prices(seed: int, days: int = DAYS,
                 start_2: float = 90.0, mu_2: float = 3.5e-4,
                 sigma_2: float = 0.022,
                 a0: float = 8.0, a_step: float = 0.02,
                 b0: float = 0.55, b_step: float = 8e-4,
                 resid_phi: float = 0.75, resid_std: float = 1.0
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the pair; returns (close_1, close_2) rounded to cents."""
    rng = np.random.default_rng(seed)
    logret = mu_2 + sigma_2 * rng.standard_normal(days)
    logret[0] = 0.0
    close_2 = start_2 * np.exp(np.cumsum(logret))

    a = a0 + np.cumsum(a_step * rng.standard_normal(days))
    b = b0 + np.cumsum(b_step * rng.standard_normal(days))
    innov_std = resid_std * np.sqrt(1.0 - resid_phi**2)
    u = np.empty(days)
    u[0] = resid_std * rng.standard_normal()
    shocks = innov_std * rng.standard_normal(days)
    for t in range(1, days):
        u[t] = resid_phi * u[t - 1] + shocks[t]
    close_1 = a + b * close_2 + u

    close_1 = np.round(close_1, 2)
    close_2 = np.round(close_2, 2)
    if np.any(close_1 <= 0) or np.any(close_2 <= 0):
        raise ValueError(f"seed {seed} produced non-positive prices")
    return close_1, close_2


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="destination CSV path")
    parser.add_argument("--seed", type=int, default=77)
    args = parser.parse_args()
    c1, c2 = synth_prices(args.seed)
    dates = business_days(START, DAYS)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "close_1", "close_2"])
        for d, p1, p2 in zip(dates, c1, c2):
            w.writerow([d, f"{p1:.2f}", f"{p2:.2f}"])
    print(f"wrote {DAYS} rows to {args.out}")


if __name__ == "__main__":
    main()
