import math

import numpy as np
import pytest

from jointcast import loss as L
from jointcast.model import QuantileForecast
from jointcast.numcore import Tensor

from conftest import numeric_grad, rel_err


def test_pinball_examples():
    assert L.pinball(7, 7, 0.3) == 0
    assert L.pinball(2, 4, 0.5) == 1.0
    assert L.pinball(1, 0, 0.1) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        L.pinball(0, 1, 1.0)


def test_wql_weight_examples():
    assert L.wql_weight(0.5, 1.0) == pytest.approx(2.0)
    assert L.wql_weight(0.1, 2.0) == pytest.approx(1 / (0.3 * 2), rel=1e-12)
    assert L.wql_weight(0.1, 2.0) == pytest.approx(1.6667, abs=1e-4)
    a = 0.3
    assert L.wql_weight(a, 0.0, 1e-8) == pytest.approx(1 / (math.sqrt(a * (1 - a)) * 1e-8))


def _forecast(values, levels):
    v = np.asarray(values, float)
    return QuantileForecast(v, tuple(levels), np.arange(v.shape[1]))


def test_wql_loss_examples():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((3, 4))
    rep = L.wql_loss(_forecast(np.stack([t, t]), (0.2, 0.7)), t)
    assert rep.value == 0.0
    rep = L.wql_loss(_forecast([[[0.0]]], (0.5,)), [[2.0]])
    assert rep.value == pytest.approx(1.0)
    assert rep.n_terms == 1
    with pytest.raises(ValueError):
        L.wql_loss(_forecast(np.zeros((1, 0, 2)), (0.5,)), np.zeros((0, 2)))


def _brute_wql(q, t, levels):
    total = 0.0
    for i in range(t.shape[0]):
        s = np.abs(t[i]).sum()
        for k, a in enumerate(levels):
            w = L.wql_weight(a, s)
            total += sum(w * L.pinball(q[k, i, j], t[i, j], a) for j in range(t.shape[1]))
    return total


def test_wql_loss_matches_scalar_composition():
    rng = np.random.default_rng(1)
    levels = (0.1, 0.5, 0.9)
    for _ in range(20):
        q = rng.standard_normal((3, 4, 5))
        t = rng.standard_normal((4, 5))
        rep = L.wql_loss(_forecast(q, levels), t)
        assert rep.value == pytest.approx(_brute_wql(q, t, levels), rel=1e-12)
        assert np.all(rep.per_quantile >= 0)
        assert rep.per_quantile.sum() == pytest.approx(rep.value, abs=1e-10)


def test_wql_loss_joint_rescale_invariance():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = rng.standard_normal((3, 4, 5))
        t = rng.standard_normal((4, 5))
        c = rng.uniform(0.1, 10)
        a = L.wql_loss(_forecast(q, (0.1, 0.5, 0.9)), t).value
        b = L.wql_loss(_forecast(c * q, (0.1, 0.5, 0.9)), c * t).value
        assert b == pytest.approx(a, rel=1e-10)


def test_wql_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    levels = (0.1, 0.5, 0.9)
    worst = 0.0
    for _ in range(100):
        q = rng.standard_normal((3, 2, 4))
        t = rng.standard_normal((2, 4))
        qt = Tensor(q, requires_grad=True)
        L.wql_loss(QuantileForecast(qt, levels, np.arange(2)), t).total.backward()
        num = numeric_grad(lambda: L.wql_loss(_forecast(q, levels), t).value, q)
        worst = max(worst, rel_err(qt.grad, num))
    assert worst < 1e-4


def test_pinball_subgradient_at_tie():
    q = Tensor([[1.0]], requires_grad=True)
    L.pinball_tensor(q, [[1.0]], 0.3).sum().backward()
    assert q.grad[0, 0] == pytest.approx(0.7)
