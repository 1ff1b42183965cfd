import numpy as np
import pytest

from jointcast import infer as I
from jointcast import model as M

from conftest import random_weights, tiny_config


def _qf(values, levels=(0.1, 0.5, 0.9), n_points=None):
    v = np.asarray(values, float)
    return M.QuantileForecast(v, levels, np.arange(v.shape[1]), n_points)


def test_placeholder_count():
    assert I.n_placeholders(96, 0, 32) == 3
    assert I.n_placeholders(96, 1, 32) == 4
    assert I.n_placeholders(1, 0, 32) == 1


@pytest.mark.parametrize("dcot", [0, 1, 5, 40])
@pytest.mark.parametrize("horizon", [1, 6, 8])
def test_forecast_length_is_horizon(horizon, dcot):
    cfg = tiny_config()
    w = random_weights(cfg)
    qf = I.forecast_dcot(w, cfg, np.sin(np.arange(30.0)), horizon, dcot)
    assert qf.flat().shape == (3, horizon)
    assert qf.median().shape == (horizon,)


def test_forecast_errors():
    cfg = tiny_config()
    w = random_weights(cfg)
    with pytest.raises(ValueError):
        I.forecast_dcot(w, cfg, np.ones(20), 0)
    with pytest.raises(ValueError):
        I.forecast_dcot(w, cfg, np.ones(3), 4)
    with pytest.raises(ValueError):
        I.ForecastRequest(np.ones(10), 4, lookbacks=[11])


def test_dcot_changes_horizon_values():
    cfg = tiny_config()
    w = random_weights(cfg)
    h = np.sin(np.arange(32.0) / 3)
    a = I.forecast_dcot(w, cfg, h, 8, 0).flat()
    b = I.forecast_dcot(w, cfg, h, 8, 16).flat()
    assert np.abs(a - b).max() > 1e-9
    np.testing.assert_array_equal(a, I.forecast_dcot(w, cfg, h, 8, 0).flat())


def test_quantile_negate():
    rng = np.random.default_rng(0)
    qf = _qf(np.sort(rng.standard_normal((3, 2, 4)), axis=0))
    neg = I.quantile_negate(qf)
    np.testing.assert_array_equal(neg.level(0.5), -qf.level(0.5))
    np.testing.assert_array_equal(neg.level(0.1), -qf.level(0.9))
    np.testing.assert_array_equal(I.quantile_negate(neg).array(), qf.array())
    assert np.all(np.diff(neg.array(), axis=0) >= 0)
    with pytest.raises(ValueError):
        I.quantile_negate(_qf(np.zeros((2, 1, 1)), levels=(0.2, 0.5)))


def test_odd_model_single_lookback_returns_model_output():
    # F(-x) = -F(x) with symmetric quantiles
    def fc(x, h):
        base = np.full(h, 2 * x[-1])
        spread = np.abs(x[-1]) + 1
        return _qf(np.stack([base - spread, base, base + spread])[:, None, :])

    x = np.arange(10.0)
    y = I.mirror_ensemble_with(fc, x, [10], 5)
    np.testing.assert_allclose(y, fc(x, 5).median(), atol=1e-15)


def test_constant_model_ensemble_is_zero():
    def const(x, h):
        return _qf(np.stack([np.full(h, 2.0), np.full(h, 3.0), np.full(h, 4.0)])[:, None, :])

    y = I.mirror_ensemble_with(const, np.arange(20.0), [5, 10, 20], 4)
    np.testing.assert_array_equal(y, np.zeros(4))


def test_ensemble_is_mean_of_components():
    cfg = tiny_config()
    w = random_weights(cfg)
    x = np.cumsum(np.random.default_rng(1).standard_normal(64))
    lbs = [16, 32, 64]
    comps = []
    for n in lbs:
        comps.append(I.forecast_dcot(w, cfg, x[-n:], 10, 4).median())
        comps.append(-I.forecast_dcot(w, cfg, -x[-n:], 10, 4).median())
    y = I.mirror_ensemble(w, cfg, x, lbs, 10, 4)
    np.testing.assert_allclose(y, np.mean(comps, axis=0), rtol=0, atol=1e-12)
    q = I.mirror_ensemble_quantiles(w, cfg, x, lbs, 10, 4)
    assert q.flat().shape == (3, 10)


def test_identical_components_give_the_component():
    comp = _qf(np.random.default_rng(2).standard_normal((3, 2, 4)))
    avg = I.average_forecasts([comp, comp, comp])
    np.testing.assert_allclose(avg.array(), comp.array(), atol=1e-15)


def test_ensemble_rejects_long_lookback():
    cfg = tiny_config()
    with pytest.raises(ValueError):
        I.mirror_ensemble(random_weights(cfg), cfg, np.ones(20), [8, 21], 4)
    with pytest.raises(ValueError):
        I.mirror_ensemble(random_weights(cfg), cfg, np.ones(20), [], 4)
