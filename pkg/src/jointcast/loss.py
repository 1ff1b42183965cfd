"""Pinball loss and the weighted quantile training objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor

WEIGHT_FLOOR = 1e-8


@dataclass
class LossReport:
    total: Tensor | float
    per_quantile: np.ndarray
    n_terms: int

    @property
    def value(self) -> float:
        return self.total.item() if isinstance(self.total, Tensor) else float(self.total)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {alpha}")


def pinball(q: float, x: float, alpha: float) -> float:
    _check_alpha(alpha)
    return (x - q) * alpha if x >= q else (q - x) * (1.0 - alpha)


def pinball_tensor(q: Tensor, x, alpha) -> Tensor:
    """Elementwise pinball loss; ``alpha`` broadcasts against ``q``.

    At a tie the gradient with respect to ``q`` is ``1 - alpha``.
    """
    x = np.asarray(x, dtype=q.dtype)
    alpha = np.asarray(alpha, dtype=q.dtype)
    diff = nc.neg(q) + x  # x - q
    return nc.where(x > q.data, diff * alpha, nc.neg(diff) * (1.0 - alpha))


def wql_weight(alpha: float, patch_abs_sum: float, floor: float = WEIGHT_FLOOR) -> float:
    """``1 / (sqrt(alpha*(1-alpha)) * max(sum|x|, floor))``."""
    _check_alpha(alpha)
    if patch_abs_sum < 0 or floor <= 0:
        raise ValueError("need patch_abs_sum >= 0 and floor > 0")
    return 1.0 / (math.sqrt(alpha * (1.0 - alpha)) * max(patch_abs_sum, floor))


def wql_weights(targets: np.ndarray, levels, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Weights of shape (..., N, R, 1) for target patches of shape (..., N, P)."""
    levels = np.asarray(levels, dtype=np.float64)
    abs_sum = np.maximum(np.abs(targets).sum(axis=-1), floor)
    return (1.0 / (np.sqrt(levels * (1 - levels)) * abs_sum[..., None]))[..., None]


def wql_objective(q: Tensor, targets, token_mask, levels, floor: float = WEIGHT_FLOOR) -> LossReport:
    """Batched objective used in training.

    ``q`` is (B, N, R, P) on the original scale, ``targets`` (B, N, P) and
    ``token_mask`` (B, N) selects the tokens that count. Each sequence
    contributes its full weighted sum; the batch is averaged.
    """
    targets = np.asarray(targets, dtype=q.dtype)
    token_mask = np.asarray(token_mask, dtype=bool)
    if not token_mask.any():
        raise ValueError("no masked tokens: no training signal")
    w = wql_weights(targets, levels, floor) * token_mask[..., None, None]
    alpha = np.asarray(levels, dtype=q.dtype)[:, None]
    terms = pinball_tensor(q, targets[..., None, :], alpha) * w.astype(q.dtype)
    B = q.shape[0]
    per_q = terms.data.sum(axis=(0, 1, 3)) / B
    total = terms.sum() * (1.0 / B)
    n_terms = int(token_mask.sum()) * len(levels) * q.shape[-1]
    return LossReport(total, per_q, n_terms)


def wql_loss(forecast, targets, levels=None, floor: float = WEIGHT_FLOOR) -> LossReport:
    """Weighted quantile loss of one forecast against its target patches.

    ``forecast`` is a QuantileForecast (values R x N_masked x P, possibly a
    tracked Tensor); ``targets`` is N_masked x P.
    """
    levels = forecast.levels if levels is None else levels
    values = forecast.values
    if not isinstance(values, Tensor):
        values = Tensor(values)
    if values.shape[1] == 0:
        raise ValueError("empty mask set: no training signal")
    targets = np.asarray(targets, dtype=values.dtype)
    if targets.shape != values.shape[1:]:
        raise nc.DimensionError(f"targets {targets.shape} do not align with {values.shape[1:]}")
    q = nc.transpose(values, (1, 0, 2))[None]  # (1, N, R, P)
    return wql_objective(q, targets[None], np.ones((1, targets.shape[0]), bool), levels, floor)
