"""Patch tokenization, random masking and forecast placeholders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EmptyContextError(ValueError):
    """No observed values are left to normalize against."""


@dataclass(frozen=True)
class PatchGrid:
    patches: np.ndarray  # (n_tokens, patch_len)
    patch_len: int
    n_tokens: int
    pad_count: int

    def unpatchify(self) -> np.ndarray:
        """Row-major values with the leading pad removed."""
        return self.patches.reshape(-1)[self.pad_count:].copy()


@dataclass(frozen=True)
class MaskedSequence:
    """Model input: token matrix, masked indices and instance statistics.

    Masked rows hold zeros; the model swaps in a learned mask embedding for
    them. ``targets`` keeps the true content of randomly masked rows during
    training and is ``None`` for inference placeholders.
    """

    tokens: np.ndarray  # (n_total, patch_len)
    mask_idx: np.ndarray  # sorted int indices
    mu: float
    sigma: float
    positions: np.ndarray
    pad_count: int = 0
    targets: np.ndarray | None = None

    @property
    def n_total(self) -> int:
        return self.tokens.shape[0]

    @property
    def patch_len(self) -> int:
        return self.tokens.shape[1]

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_total, dtype=bool)
        m[self.mask_idx] = True
        return m


def patchify(series, patch_len: int) -> PatchGrid:
    """Split a series into ``ceil(T/P)`` patches, left-padding with the first value."""
    x = np.asarray(getattr(series, "values", series), dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("cannot patchify an empty series")
    if patch_len < 1:
        raise ValueError("patch_len must be >= 1")
    n = math.ceil(x.size / patch_len)
    pad = n * patch_len - x.size
    if pad:
        x = np.concatenate([np.full(pad, x[0]), x])
    return PatchGrid(x.reshape(n, patch_len), patch_len, n, pad)


def _observed_values(tokens: np.ndarray, mask: np.ndarray, pad_count: int) -> np.ndarray:
    keep = np.repeat(~mask, tokens.shape[1])
    keep[:pad_count] = False
    return tokens.reshape(-1)[keep]


def _stats(tokens, mask, pad_count) -> tuple[float, float]:
    obs = _observed_values(tokens, mask, pad_count)
    if obs.size == 0:
        raise EmptyContextError("every token is masked; no context to normalize against")
    return float(obs.mean()), float(obs.std())


def _build(tokens, mask_idx, pad_count, targets=None) -> MaskedSequence:
    mask_idx = np.asarray(sorted(mask_idx), dtype=np.intp)
    mask = np.zeros(tokens.shape[0], dtype=bool)
    mask[mask_idx] = True
    mu, sigma = _stats(tokens, mask, pad_count)
    tokens = tokens.copy()
    tokens[mask] = 0.0
    return MaskedSequence(tokens, mask_idx, mu, sigma, np.arange(tokens.shape[0]), pad_count,
                          targets)


def mask_random(grid: PatchGrid, rho: float, rng: np.random.Generator) -> MaskedSequence:
    """Mask ``floor(rho*N)`` tokens drawn uniformly without replacement."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {rho}")
    k = math.floor(rho * grid.n_tokens)
    if rho > 0 and k < 1:
        raise ValueError(f"mask ratio {rho} masks no token out of {grid.n_tokens}")
    idx = rng.choice(grid.n_tokens, size=k, replace=False) if k else np.array([], dtype=np.intp)
    return _build(grid.patches, idx, grid.pad_count, targets=grid.patches.copy())


def append_placeholders(grid: PatchGrid, n_future: int) -> MaskedSequence:
    """Append ``n_future`` masked tokens after the observed patches."""
    if n_future < 1:
        raise ValueError("n_future must be >= 1")
    tokens = np.concatenate([grid.patches, np.zeros((n_future, grid.patch_len))])
    idx = np.arange(grid.n_tokens, grid.n_tokens + n_future)
    return _build(tokens, idx, grid.pad_count)


def instance_stats(seq: MaskedSequence) -> tuple[float, float]:
    """Mean and population std over observed, unpadded values."""
    return _stats(seq.tokens, seq.mask, seq.pad_count)
