"""County climate anomalies from monthly series.

An anomaly is the year's seasonal mean minus the mean of the same county's
seasonal means over a trailing baseline window (years t-W .. t-1).  Years
with an incomplete season, or with fewer than ``MIN_BASELINE_YEARS`` usable
baseline years, are kept in the output with NaN anomaly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import UserError

MIN_BASELINE_YEARS = 5


class Variable(enum.Enum):
    TMAX = "TMax"
    TMIN = "TMin"
    PRECIP = "Precip"


class Season(enum.Enum):
    ANNUAL = "annual"
    GROWING = "grow"
    NON_GROWING = "nogrow"


# (calendar year offset, month) pairs that make up season-year t
_SEASON_MONTHS = {
    Season.ANNUAL: [(0, m) for m in range(1, 13)],
    Season.GROWING: [(0, m) for m in range(4, 11)],
    Season.NON_GROWING: [(-1, 11), (-1, 12), (0, 1), (0, 2), (0, 3)],
}


class BaselineWindow(enum.Enum):
    YEARS30 = "30"
    YEARS50 = "50"
    YEARS70 = "70"
    YEARS100 = "100"
    FULL_RECORD = "all"

    @property
    def length(self) -> int | None:
        return None if self is BaselineWindow.FULL_RECORD else int(self.value)


@dataclass(frozen=True)
class AnomalyConfig:
    baseline_window: BaselineWindow = BaselineWindow.YEARS30
    season: Season = Season.ANNUAL


@dataclass
class MonthlyClimateSeries:
    county_id: str
    variable: Variable
    observations: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        prev = None
        for year, month, _ in self.observations:
            if not 1 <= month <= 12:
                raise UserError(f"{self.county_id}: month {month} outside 1..12")
            key = (int(year), int(month))
            if key in seen:
                raise UserError(f"{self.county_id}: duplicate observation for {key}")
            if prev is not None and key < prev:
                raise UserError(f"{self.county_id}: observations are not sorted by (year, month)")
            seen.add(key)
            prev = key


@dataclass(frozen=True)
class AnomalyRow:
    county_id: str
    year: int
    anomaly: float
    baseline_mean: float
    n_baseline_years: int

    @property
    def missing(self) -> bool:
        return bool(np.isnan(self.anomaly))


@dataclass
class AnomalyPanel:
    rows: list[AnomalyRow]
    config: AnomalyConfig

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            [(r.county_id, r.year, r.anomaly, r.baseline_mean, r.n_baseline_years) for r in self.rows],
            columns=["county_id", "year", "anomaly", "baseline_mean", "n_baseline_years"],
        )
        df["season"] = self.config.season.value
        df["window"] = self.config.baseline_window.value
        return df


def annualize(series: MonthlyClimateSeries, season: Season = Season.ANNUAL) -> list[tuple[int, float]]:
    """Seasonal mean per season-year; NaN when any in-season month is missing.

    The non-growing season of year t runs from November of t-1 to March of t.
    """
    if not series.observations:
        return []
    values = {(y, m): v for y, m, v in series.observations}
    years = sorted({y for y, _, _ in series.observations})
    out = []
    for year in years:
        cells = [values.get((year + dy, m)) for dy, m in _SEASON_MONTHS[season]]
        if any(c is None or np.isnan(c) for c in cells):
            out.append((year, float("nan")))
        else:
            out.append((year, float(np.mean(cells))))
    return out


def _trailing_baseline(years: np.ndarray, values: np.ndarray, window: int | None):
    """Mean and count of non-missing values over the trailing window, per year."""
    ok = ~np.isnan(values)
    means = np.full(len(years), np.nan)
    counts = np.zeros(len(years), dtype=int)
    for k, t in enumerate(years):
        sel = ok & (years < t)
        if window is not None:
            sel &= years >= t - window
        n = int(sel.sum())
        counts[k] = n
        if n:
            means[k] = float(np.mean(values[sel]))
    return means, counts


def compute_anomaly(series: MonthlyClimateSeries, cfg: AnomalyConfig = AnomalyConfig()) -> AnomalyPanel:
    annual = annualize(series, cfg.season)
    if not annual:
        return AnomalyPanel([], cfg)
    years = np.array([y for y, _ in annual], dtype=int)
    values = np.array([v for _, v in annual], dtype=float)
    means, counts = _trailing_baseline(years, values, cfg.baseline_window.length)
    rows = []
    for year, value, mean, n in zip(years, values, means, counts):
        if np.isnan(value) or n < MIN_BASELINE_YEARS:
            anomaly = float("nan")
        else:
            anomaly = float(value - mean)
        rows.append(AnomalyRow(series.county_id, int(year), anomaly, float(mean), int(n)))
    return AnomalyPanel(rows, cfg)


# ---------------------------------------------------------------------------
# tabular entry points

INPUT_COLUMNS = ["county_id", "variable", "year", "month", "value"]
OUTPUT_COLUMNS = ["county_id", "year", "anomaly", "baseline_mean", "n_baseline_years", "season", "window"]


def series_from_frame(df: pd.DataFrame, variable: Variable | None = None) -> list[MonthlyClimateSeries]:
    missing = [c for c in INPUT_COLUMNS if c not in df.columns]
    if missing:
        raise UserError(f"climate CSV is missing columns: {', '.join(missing)}")
    df = df.copy()
    df["county_id"] = df["county_id"].astype(str)
    try:
        df["variable"] = df["variable"].map(lambda v: Variable(str(v)))
    except ValueError as exc:
        raise UserError(f"unknown climate variable: {exc}") from None
    if variable is not None:
        df = df[df["variable"] == variable]
    out = []
    df = df.sort_values(["county_id", "variable", "year", "month"], kind="mergesort")
    for (county, var), g in df.groupby(["county_id", "variable"], sort=True):
        obs = list(zip(g["year"].astype(int), g["month"].astype(int), g["value"].astype(float)))
        out.append(MonthlyClimateSeries(county, var, obs))
    return out


def anomaly_frame(series: Iterable[MonthlyClimateSeries], cfg: AnomalyConfig) -> pd.DataFrame:
    frames = [compute_anomaly(s, cfg).to_frame() for s in series]
    if not frames:
        return pd.DataFrame(columns=OUTPUT_COLUMNS)
    return pd.concat(frames, ignore_index=True)[OUTPUT_COLUMNS]


def parse_window(text: str) -> BaselineWindow:
    try:
        return BaselineWindow(str(text))
    except ValueError:
        raise UserError(f"window must be one of 30, 50, 70, 100, all; got {text!r}") from None


def parse_season(text: str) -> Season:
    try:
        return Season(str(text))
    except ValueError:
        raise UserError(f"season must be one of annual, grow, nogrow; got {text!r}") from None


def seasonal_weights() -> Sequence[tuple[Season, float]]:
    """Month-count weights combining season-year t into the mean of Nov(t-1)..Oct(t)."""
    return [(Season.GROWING, 7 / 12), (Season.NON_GROWING, 5 / 12)]
