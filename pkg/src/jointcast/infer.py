"""Joint forecasting with delayed chain-of-thought tokens and mirror ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .tokenizer import append_placeholders, patchify


@dataclass
class ForecastRequest:
    history: np.ndarray
    horizon: int
    dcot_points: int = 0
    lookbacks: list = field(default_factory=list)
    point_only: bool = False

    def __post_init__(self):
        self.history = np.asarray(getattr(self.history, "values", self.history), dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dcot_points < 0:
            raise ValueError("dcot_points must be >= 0")
        for n in self.lookbacks:
            if n > self.history.size:
                raise ValueError(f"lookback {n} exceeds history length {self.history.size}")


def n_placeholders(horizon: int, dcot_points: int, patch_len: int) -> int:
    return math.ceil((horizon + dcot_points) / patch_len)


def forecast_dcot(weights, cfg: M.ModelConfig, history, horizon: int, dcot_points: int = 0,
                  sort: bool = True) -> M.QuantileForecast:
    """Forecast ``horizon`` points in one pass over history plus placeholders.

    ``ceil((horizon + dcot_points) / P)`` masked tokens are appended; tokens
    past the horizon are computed jointly and then dropped.
    """
    x = np.asarray(getattr(history, "values", history), dtype=np.float64)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if dcot_points < 0:
        raise ValueError("dcot_points must be >= 0")
    if x.size < cfg.patch_len:
        raise ValueError(f"history of {x.size} points is shorter than one patch")
    grid = patchify(x, cfg.patch_len)
    seq = append_placeholders(grid, n_placeholders(horizon, dcot_points, cfg.patch_len))
    qf = M.predict(seq, cfg, weights, sort=sort)
    keep = math.ceil(horizon / cfg.patch_len)
    return M.QuantileForecast(qf.values[:, :keep].copy(), qf.levels, qf.token_index[:keep],
                              n_points=horizon)


def quantile_negate(qf: M.QuantileForecast) -> M.QuantileForecast:
    """Forecast of ``-X`` from a forecast of ``X``: negate and map level a to 1-a."""
    levels = tuple(qf.levels)
    order = []
    for a in levels:
        match = [k for k, b in enumerate(levels) if abs(b - (1.0 - a)) < 1e-9]
        if not match:
            raise ValueError(f"level set {levels} is not symmetric about 0.5")
        order.append(match[0])
    return M.QuantileForecast(-qf.array()[order], levels, qf.token_index.copy(), qf.n_points)


def mirror_components(forecaster, history, lookbacks, horizon: int) -> list[M.QuantileForecast]:
    """The 2k forecasts {F(x_j), -F(-x_j)} over trailing windows x_j.

    ``forecaster(x, horizon)`` returns a QuantileForecast; ``lookbacks``
    are window lengths taken from the end of ``history``.
    """
    x = np.asarray(getattr(history, "values", history), dtype=np.float64)
    if not lookbacks:
        raise ValueError("need at least one lookback")
    comps = []
    for n in lookbacks:
        if n > x.size or n < 1:
            raise ValueError(f"lookback {n} exceeds history length {x.size}")
        window = x[-n:]
        comps.append(forecaster(window, horizon))
        comps.append(quantile_negate(forecaster(-window, horizon)))
    return comps


def average_forecasts(comps) -> M.QuantileForecast:
    """Level-wise arithmetic mean of aligned forecasts."""
    vals = np.mean([c.array() for c in comps], axis=0)
    first = comps[0]
    return M.QuantileForecast(vals, first.levels, first.token_index.copy(), first.n_points)


def mirror_ensemble_with(forecaster, history, lookbacks, horizon: int) -> np.ndarray:
    """Median point forecast averaged over lookbacks and their sign mirrors."""
    comps = mirror_components(forecaster, history, lookbacks, horizon)
    return np.mean([c.median() for c in comps], axis=0)


def dcot_forecaster(weights, cfg: M.ModelConfig, dcot_points: int = 0, sort: bool = True):
    def run(x, horizon):
        return forecast_dcot(weights, cfg, x, horizon, dcot_points, sort)
    return run


def mirror_ensemble(weights, cfg: M.ModelConfig, history, lookbacks, horizon: int,
                    dcot_points: int = 0) -> np.ndarray:
    return mirror_ensemble_with(dcot_forecaster(weights, cfg, dcot_points), history, lookbacks,
                                horizon)


def mirror_ensemble_quantiles(weights, cfg: M.ModelConfig, history, lookbacks, horizon: int,
                              dcot_points: int = 0) -> M.QuantileForecast:
    comps = mirror_components(dcot_forecaster(weights, cfg, dcot_points), history, lookbacks,
                              horizon)
    return average_forecasts(comps)
