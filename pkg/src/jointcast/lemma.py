"""Anti-concentration of sample-path averages for an ideal random-walk model.

An ideal one-step model of a +/-1 random walk is rolled out ``N`` times for
``j`` steps and the paths are averaged. ``Z_j`` is the squared deviation of
that average from the start value. This module computes its moments exactly
(by enumeration or closed form), instantiates the Paley-Zygmund lower bound
on ``P(|average - start| > eps)``, and estimates the probability by
simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

ENUM_LIMIT = 24
_CHUNK = 1 << 14


@dataclass(frozen=True)
class WalkSpec:
    n_paths: int
    horizon: int
    max_horizon: int | None = None
    start: float = 0.0
    trials: int = 1
    seed: int = 0
    steps: str = "rademacher"  # or "uniform"

    def __post_init__(self):
        if self.n_paths < 1 or self.horizon < 1 or self.trials < 1:
            raise ValueError("n_paths, horizon and trials must be >= 1")
        if self.max_horizon is not None and self.max_horizon < self.horizon:
            raise ValueError("max_horizon must be >= horizon")
        if self.steps not in ("rademacher", "uniform"):
            raise ValueError("steps must be 'rademacher' or 'uniform'")

    @property
    def length(self) -> int:
        return self.max_horizon or self.horizon


def _increments(rng, shape, steps):
    if steps == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    return 2.0 * rng.integers(0, 2, shape) - 1.0


def simulate_paths(spec: WalkSpec) -> np.ndarray:
    """(N, n) values x_{m+1..m+n} of N independent paths from ``spec.start``."""
    rng = np.random.default_rng(spec.seed)
    inc = _increments(rng, (spec.n_paths, spec.length), spec.steps)
    return spec.start + np.cumsum(inc, axis=1)


def step_moments(steps: str = "rademacher") -> tuple[float, float]:
    """Second and fourth moments of a single increment."""
    return (1.0, 1.0) if steps == "rademacher" else (1.0 / 3.0, 1.0 / 5.0)


def closed_form_moments(N: int, j: int, steps: str = "rademacher") -> tuple[float, float]:
    """E[Z_j] and E[Z_j^2] for a sum S of M = N*j iid symmetric increments.

    ``Z = (S/N)^2`` so ``E[Z] = M*m2/N^2`` and
    ``E[Z^2] = (M*m4 + 3*M*(M-1)*m2^2)/N^4``.
    """
    m2, m4 = step_moments(steps)
    M = N * j
    return M * m2 / N**2, (M * m4 + 3 * M * (M - 1) * m2**2) / N**4


def _enumerate_sums(N: int, j: int) -> np.ndarray:
    """Mean endpoint deviation for every one of the 2^(N*j) sign sequences."""
    M = N * j
    shifts = np.arange(M, dtype=np.uint32)
    out = np.empty(1 << M)
    for lo in range(0, 1 << M, _CHUNK):
        codes = np.arange(lo, min(lo + _CHUNK, 1 << M), dtype=np.uint32)
        bits = (codes[:, None] >> shifts) & 1
        signs = 2.0 * bits.reshape(-1, N, j) - 1.0
        out[lo:lo + codes.size] = signs.sum(axis=2).mean(axis=1)
    return out


def exact_moments(N: int, j: int, closed_form: bool = False) -> tuple[float, float]:
    """E[Z_j], E[Z_j^2] by enumerating all sign sequences (or closed form)."""
    if closed_form:
        return closed_form_moments(N, j)
    if N * j > ENUM_LIMIT:
        raise ValueError(f"N*j = {N * j} exceeds the enumeration limit {ENUM_LIMIT}; "
                         "pass closed_form=True")
    z = _enumerate_sums(N, j) ** 2
    return float(z.mean()), float((z * z).mean())


def exact_probability(N: int, j: int, eps: float, method: str = "binomial") -> float:
    """P(|mean endpoint - start| > eps) for +/-1 steps.

    ``method="binomial"`` uses the Binomial(N*j, 1/2) law of the number of
    up-steps; ``method="enumerate"`` counts sign sequences directly.
    """
    if method == "enumerate":
        if N * j > ENUM_LIMIT:
            raise ValueError("enumeration limit exceeded")
        dev = np.abs(_enumerate_sums(N, j))
        return float(np.mean(dev > eps))
    M = N * j
    k = np.arange(M + 1)
    dev = np.abs(2 * k - M) / N
    return float(stats.binom.pmf(k, M, 0.5)[dev > eps].sum())


def pz_constant(N: int, j: int, steps: str = "rademacher") -> float:
    ez, ez2 = closed_form_moments(N, j, steps)
    return ez * ez / ez2


def pz_bound(N: int, j: int, eps: float, steps: str = "rademacher",
             closed_form: bool = True) -> float:
    """Paley-Zygmund lower bound ``C * (1 - eps^2/E[Z])^2`` with ``C = E[Z]^2/E[Z^2]``.

    For +/-1 steps ``E[Z] = j/N`` and the threshold is ``eps^2 N / j``.
    """
    if steps == "rademacher" and not closed_form:
        ez, ez2 = exact_moments(N, j)
    else:
        ez, ez2 = closed_form_moments(N, j, steps)
    if not 0.0 < eps < math.sqrt(ez):
        raise ValueError(f"eps must lie in (0, {math.sqrt(ez):.6g})")
    theta = eps * eps / ez
    return (1.0 - theta) ** 2 * ez * ez / ez2


def _endpoint_deviations(N, j, trials, seed, steps):
    # fixed-size blocks, each with its own counter-derived stream
    out = np.empty(trials)
    block = 1 << 14
    for b, lo in enumerate(range(0, trials, block)):
        n = min(block, trials - lo)
        rng = np.random.Generator(np.random.Philox(key=seed, counter=b))
        inc = _increments(rng, (n, N, j), steps)
        out[lo:lo + n] = inc.sum(axis=2).mean(axis=1)
    return out


def deviation_prob(N: int, j: int, eps: float, trials: int, seed: int = 0,
                   steps: str = "rademacher") -> float:
    """Fraction of trials where ``|mean_i x^i_{m+j} - x_m| > eps``."""
    spec = WalkSpec(N, j, trials=trials, seed=seed, steps=steps)
    dev = _endpoint_deviations(spec.n_paths, spec.horizon, spec.trials, spec.seed, spec.steps)
    return float(np.mean(np.abs(dev) > eps))


def eps_grid(N: int, j: int, points: int = 5, steps: str = "rademacher") -> list[float]:
    """``points`` evenly spaced values strictly inside (0, sqrt(E[Z]))."""
    top = math.sqrt(closed_form_moments(N, j, steps)[0])
    return [top * k / (points + 1) for k in range(1, points + 1)]


def verify_grid(n_paths=(1, 2, 4), horizons=(1, 2, 4, 8), eps_points=5, trials=100_000,
                seed=0, enum_limit=16) -> list[dict]:
    """One row per (N, j, eps): empirical, exact (when enumerable) and bound."""
    rows = []
    for N in n_paths:
        for j in horizons:
            for i, eps in enumerate(eps_grid(N, j, eps_points)):
                exact = exact_probability(N, j, eps, "enumerate") if N * j <= enum_limit else None
                rows.append({
                    "N": N, "j": j, "eps": eps,
                    "empirical": deviation_prob(N, j, eps, trials, seed + 1000 * N + 10 * j + i),
                    "exact": exact,
                    "pz_bound": pz_bound(N, j, eps),
                })
    return rows
