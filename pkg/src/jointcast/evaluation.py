"""Forecast metrics and the benchmark harness for DCoT / ensemble sweeps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import infer
from .data import EvalWindow, InsufficientDataError, Series, split_windows
from .loss import pinball
from .model import DECILES, QuantileForecast

__all__ = ["EvalWindow", "mse", "mae", "mase", "wql_metric", "crps_approx", "BenchProtocol",
           "BenchReport", "run_benchmark", "REPORT_SCHEMA"]


class UndefinedScaleError(ZeroDivisionError):
    """A scale-free metric has a zero denominator."""


def _pair(forecast, actual):
    f = np.asarray(forecast, dtype=np.float64).reshape(-1)
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    if f.shape != a.shape:
        raise ValueError(f"forecast length {f.size} != actual length {a.size}")
    return f, a


def mse(forecast, actual) -> float:
    f, a = _pair(forecast, actual)
    return float(np.mean((f - a) ** 2))


def mae(forecast, actual) -> float:
    f, a = _pair(forecast, actual)
    return float(np.mean(np.abs(f - a)))


def mase(forecast, window: EvalWindow) -> float:
    """``(m-s)/n * sum|xhat - x| / sum_{t<=m-s} |x_t - x_{t+s}|``."""
    f, a = _pair(forecast, window.actual)
    x, s = np.asarray(window.insample, dtype=np.float64), window.seasonality
    m, n = x.size, a.size
    scale = np.abs(x[s:] - x[:-s]).sum()
    if scale <= 0:
        raise UndefinedScaleError("in-sample seasonal differences are all zero")
    return float((m - s) / n * np.abs(f - a).sum() / scale)


def _quantile_path(qf, alpha) -> np.ndarray:
    if isinstance(qf, QuantileForecast):
        return qf.level(alpha)
    return np.asarray(qf, dtype=np.float64).reshape(-1)


def wql_metric(qf, actual, alpha: float) -> float:
    """``2 * sum pinball(q_t, x_t) / sum |x_t|`` for one quantile level."""
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    q = _quantile_path(qf, alpha)
    if q.shape != a.shape:
        raise ValueError(f"quantile path length {q.size} != actual length {a.size}")
    denom = np.abs(a).sum()
    if denom <= 0:
        raise UndefinedScaleError("actuals are all zero")
    diff = a - q
    loss = np.where(diff >= 0, alpha * diff, (alpha - 1.0) * diff).sum()
    return float(2.0 * loss / denom)


def crps_approx(qf: QuantileForecast, actual) -> float:
    """Mean of WQL over the nine deciles."""
    if len(qf.levels) != 9 or any(abs(a - b) > 1e-9 for a, b in zip(qf.levels, DECILES)):
        raise ValueError(f"CRPS approximation needs levels {DECILES}, got {tuple(qf.levels)}")
    return float(np.mean([wql_metric(qf, actual, a) for a in DECILES]))


def crps_bruteforce(quantiles: np.ndarray, actual) -> float:
    """Scalar-loop reference for ``crps_approx``; ``quantiles`` is (9, n)."""
    total = 0.0
    denom = sum(abs(float(v)) for v in actual)
    for k, alpha in enumerate(DECILES):
        acc = 0.0
        for t, x in enumerate(actual):
            acc += pinball(float(quantiles[k][t]), float(x), alpha)
        total += 2.0 * acc / denom
    return total / len(DECILES)


# -- benchmark ----------------------------------------------------------------

@dataclass
class BenchProtocol:
    lookback: int = 256
    horizon: int = 64
    stride: int = 64
    seasonality: int = 1
    dcot_grid: list = field(default_factory=lambda: [0])
    lookback_grid: list = field(default_factory=lambda: [None])
    mirror: bool = False
    seeds: list = field(default_factory=lambda: [0])
    aggregate: str = "arithmetic"
    max_windows: int | None = None

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1 or self.stride < 1:
            raise ValueError("lookback, horizon and stride must be positive")
        if self.aggregate not in ("arithmetic", "geometric"):
            raise ValueError("aggregate must be 'arithmetic' or 'geometric'")
        self.lookback_grid = [[self.lookback] if g is None else
                              ([g] if isinstance(g, int) else list(g)) for g in self.lookback_grid]
        for g in self.lookback_grid:
            if max(g) > self.lookback:
                raise ValueError(f"lookbacks {g} exceed the window lookback {self.lookback}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lookback", "horizon", "stride", "seasonality",
                                                "dcot_grid", "lookback_grid", "mirror", "seeds",
                                                "aggregate", "max_windows")}


METRIC_NAMES = ["mse", "mae", "mase", "crps"] + [f"wql_{a:.1f}" for a in DECILES]


@dataclass
class BenchReport:
    cells: list  # dicts: dcot, lookbacks, mirror, aggregate metrics, n_windows
    rows: list  # per window per cell
    config: dict
    seed: int

    def to_dict(self) -> dict:
        return {"cells": self.cells, "rows": self.rows, "config": self.config, "seed": self.seed}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path) -> None:
        keys = ["series", "window", "dcot", "lookbacks", "mirror"] + METRIC_NAMES
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=keys)
            wr.writeheader()
            for r in self.rows:
                wr.writerow({**r, "lookbacks": " ".join(map(str, r["lookbacks"]))})

    def cell(self, dcot, lookbacks, mirror=None) -> dict:
        for c in self.cells:
            if c["dcot"] == dcot and c["lookbacks"] == list(lookbacks) and (
                    mirror is None or c["mirror"] == mirror):
                return c
        raise KeyError((dcot, lookbacks, mirror))


_METRICS = {"type": "object", "properties": {m: {"type": ["number", "null"]} for m in METRIC_NAMES},
            "required": METRIC_NAMES}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["cells", "rows", "config", "seed"],
    "properties": {
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "cells": {"type": "array", "items": {
            "type": "object",
            "required": ["dcot", "lookbacks", "mirror", "n_windows", "metrics"],
            "properties": {"dcot": {"type": "integer", "minimum": 0},
                           "lookbacks": {"type": "array", "items": {"type": "integer"}},
                           "mirror": {"type": "boolean"},
                           "n_windows": {"type": "integer", "minimum": 1},
                           "metrics": _METRICS}}},
        "rows": {"type": "array", "items": {
            "type": "object",
            "required": ["series", "window", "dcot", "lookbacks", "mirror"] + METRIC_NAMES}},
    },
}


def _window_metrics(qf: QuantileForecast, window: EvalWindow) -> dict:
    point = qf.median()
    out = {"mse": mse(point, window.actual), "mae": mae(point, window.actual)}
    try:
        out["mase"] = mase(point, window)
    except UndefinedScaleError:
        out["mase"] = None
    for a in DECILES:
        try:
            out[f"wql_{a:.1f}"] = wql_metric(qf, window.actual, a)
        except (UndefinedScaleError, KeyError):
            out[f"wql_{a:.1f}"] = None
    try:
        out["crps"] = crps_approx(qf, window.actual)
    except (UndefinedScaleError, ValueError):
        out["crps"] = None
    return out


def _aggregate(values, how):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    if how == "geometric":
        if min(vals) <= 0:
            return 0.0
        return float(math.exp(np.mean(np.log(vals))))
    return float(np.mean(vals))


def run_benchmark(checkpoint, dataset, protocol: BenchProtocol) -> BenchReport:
    """Evaluate every (DCoT length, lookback set) cell on sliding windows.

    ``checkpoint`` is a Checkpoint or a ``(weights, model_config)`` pair;
    ``dataset`` is a list of Series. A cell with one lookback and
    ``mirror=False`` is a plain forecast; otherwise the mirror ensemble runs.
    """
    if isinstance(checkpoint, tuple):
        weights, cfg = checkpoint
    else:
        weights, cfg = checkpoint.tensors(), checkpoint.model_config
    windows = []
    for i, s in enumerate(dataset):
        series = s if isinstance(s, Series) else Series(s)
        try:
            ws = split_windows(series, protocol.lookback, protocol.horizon, protocol.stride,
                               protocol.seasonality)
        except InsufficientDataError:
            continue
        if protocol.max_windows:
            ws = ws[-protocol.max_windows:]
        windows += [(series.name or f"series{i}", j, w) for j, w in enumerate(ws)]
    if not windows:
        raise InsufficientDataError("insufficient data: no evaluation window fits the dataset")
    cells, rows = [], []
    for dcot in protocol.dcot_grid:
        for lbs in protocol.lookback_grid:
            use_mirror = protocol.mirror or len(lbs) > 1
            per = []
            for name, j, win in windows:
                if use_mirror:
                    qf = infer.mirror_ensemble_quantiles(weights, cfg, win.insample, lbs,
                                                         protocol.horizon, dcot)
                else:
                    qf = infer.forecast_dcot(weights, cfg, win.insample[-lbs[0]:],
                                             protocol.horizon, dcot)
                met = _window_metrics(qf, win)
                per.append(met)
                rows.append({"series": name, "window": j, "dcot": int(dcot),
                             "lookbacks": [int(v) for v in lbs], "mirror": use_mirror, **met})
            agg = {m: _aggregate([p[m] for p in per], protocol.aggregate) for m in METRIC_NAMES}
            cells.append({"dcot": int(dcot), "lookbacks": [int(v) for v in lbs],
                          "mirror": use_mirror, "n_windows": len(per), "metrics": agg})
    config = {"protocol": protocol.to_dict(), "model_config": cfg.to_dict()}
    return BenchReport(cells, rows, config, int(protocol.seeds[0]) if protocol.seeds else 0)
