"""Series container, synthetic generators, CSV ingestion and windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np


class CSVError(ValueError):
    """Base class for CSV ingestion failures."""


class MissingColumnError(CSVError):
    pass


class ValueParseError(CSVError):
    def __init__(self, row: int, column: str, text: str):
        super().__init__(f"row {row}: cannot parse {text!r} in column {column!r} as a number")
        self.row = row


class TimestampOrderError(CSVError):
    def __init__(self, row: int):
        super().__init__(f"row {row}: timestamps must be strictly increasing")
        self.row = row


class InsufficientDataError(ValueError):
    """Series too short for the requested windows."""


@dataclass
class Series:
    values: np.ndarray
    timestamps: np.ndarray | None = None
    name: str = ""
    freq: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size < 1:
            raise ValueError("series must hold at least one value")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series values must be finite")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps)
            if ts.shape != self.values.shape:
                raise ValueError("timestamps and values differ in length")
            if ts.size > 1 and not np.all(ts[1:] > ts[:-1]):
                raise ValueError("timestamps must be strictly increasing")
            self.timestamps = ts

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class EvalWindow:
    """Lookback values followed by the horizon to be forecast."""

    insample: np.ndarray
    actual: np.ndarray
    seasonality: int = 1
    start: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.seasonality < 1:
            raise ValueError("seasonality must be >= 1")
        if len(self.insample) <= self.seasonality:
            raise ValueError("lookback must be longer than the seasonality")
        if len(self.actual) < 1:
            raise ValueError("horizon must be >= 1")


def gen_sine(n, period, amplitude=1.0, trend_slope=0.0, noise_std=0.0, seed=0, phase=0.0,
             name="sine") -> Series:
    """``amplitude*sin(2*pi*t/period + phase) + trend_slope*t + noise``, t = 0..n-1."""
    if n < 1 or period <= 0:
        raise ValueError("need n >= 1 and period > 0")
    t = np.arange(n, dtype=np.float64)
    x = amplitude * np.sin(2 * np.pi * t / period + phase) + trend_slope * t
    if noise_std > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise_std, n)
    return Series(x, name=name)


def gen_two_period(n, periods=(24, 96), amplitudes=(1.0, 0.6), noise_std=0.0, seed=0,
                   name="two_period") -> Series:
    t = np.arange(n, dtype=np.float64)
    x = sum(a * np.sin(2 * np.pi * t / p) for p, a in zip(periods, amplitudes))
    if noise_std > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise_std, n)
    return Series(x, name=name)


def gen_random_walk(n, seed=0, name="random_walk") -> Series:
    """Walk from the origin with equiprobable +1/-1 steps."""
    if n < 1:
        raise ValueError("need n >= 1")
    steps = np.random.default_rng(seed).choice([-1.0, 1.0], size=n - 1)
    return Series(np.concatenate([[0.0], np.cumsum(steps)]), name=name)


def _parse_timestamp(text: str):
    try:
        return int(text)
    except ValueError:
        return np.datetime64(datetime.fromisoformat(text))


def load_csv(path, value_column, timestamp_column=None) -> list[Series]:
    """Read one Series per requested value column.

    ``value_column`` may be a single name or a list of names. Row numbers in
    errors count data rows from 1 (the header is row 0).
    """
    columns = [value_column] if isinstance(value_column, str) else list(value_column)
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVError(f"{path}: empty file") from None
        wanted = columns + ([timestamp_column] if timestamp_column else [])
        for col in wanted:
            if col not in header:
                raise MissingColumnError(f"{path}: column {col!r} not in header {header}")
        idx = {c: header.index(c) for c in wanted}
        values = {c: [] for c in columns}
        stamps = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            for c in columns:
                text = row[idx[c]].strip() if idx[c] < len(row) else ""
                try:
                    v = float(text)
                except ValueError:
                    raise ValueParseError(row_no, c, text) from None
                if not math.isfinite(v):
                    raise ValueParseError(row_no, c, text)
                values[c].append(v)
            if timestamp_column:
                text = row[idx[timestamp_column]].strip()
                try:
                    ts = _parse_timestamp(text)
                except ValueError:
                    raise ValueParseError(row_no, timestamp_column, text) from None
                if stamps and not ts > stamps[-1]:
                    raise TimestampOrderError(row_no)
                stamps.append(ts)
    if not stamps and not values[columns[0]]:
        raise InsufficientDataError(f"{path}: no data rows")
    ts_arr = np.array(stamps) if timestamp_column else None
    return [Series(values[c], timestamps=ts_arr, name=c) for c in columns]


def save_csv(path, series: list[Series]) -> None:
    n = len(series[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [s.name or f"x{i}" for i, s in enumerate(series)])
        for t in range(n):
            w.writerow([t] + [repr(float(s.values[t])) for s in series])


def split_windows(series, lookback, horizon, stride, seasonality=1) -> list[EvalWindow]:
    values = series.values if isinstance(series, Series) else np.asarray(series, dtype=float)
    T = values.size
    if lookback + horizon > T:
        raise InsufficientDataError(f"series of length {T} too short for {lookback}+{horizon}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    count = (T - lookback - horizon) // stride + 1
    out = []
    for w in range(count):
        s = w * stride
        out.append(EvalWindow(values[s:s + lookback].copy(),
                              values[s + lookback:s + lookback + horizon].copy(),
                              seasonality, start=s))
    return out


def holdout_split(series: Series, lookback: int, horizon: int, n_eval_windows: int):
    """Reserve the last ``lookback + horizon*n_eval_windows`` points for evaluation.

    Returns ``(train, holdout)``. Every eval actual lies after every
    training point.
    """
    reserve = lookback + horizon * n_eval_windows
    if reserve >= len(series):
        raise InsufficientDataError("holdout region consumes the whole series")
    cut = len(series) - reserve
    return (Series(series.values[:cut], name=series.name, freq=series.freq),
            Series(series.values[cut:], name=series.name, freq=series.freq))
