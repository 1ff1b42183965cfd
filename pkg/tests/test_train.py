import struct
from dataclasses import replace

import numpy as np
import pytest

from jointcast import data as D
from jointcast import model as M
from jointcast import train as T

from conftest import tiny_config


def _tcfg(**kw):
    base = dict(max_steps=6, warmup_steps=2, batch_size=4, context_tokens=(5, 8), seed=3,
                dtype="float64")
    base.update(kw)
    return T.TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        T.TrainConfig(max_steps=5, warmup_steps=6)
    with pytest.raises(ValueError):
        T.TrainConfig(lr_min=1.0, lr_max=0.1)
    with pytest.raises(ValueError):
        T.TrainConfig(rescale_range=(0.5, 2))
    with pytest.raises(ValueError):
        T.TrainConfig(mixup_prob=1.5)


def test_lr_schedule_examples():
    cfg = T.TrainConfig(max_steps=100, warmup_steps=10, lr_max=1e-3, lr_min=1e-5)
    assert T.lr_schedule(5, cfg) == pytest.approx(5e-4)
    assert T.lr_schedule(10, cfg) == pytest.approx(1e-3)
    assert T.lr_schedule(100, cfg) == pytest.approx(1e-5)
    assert T.lr_schedule(0, cfg) == 0.0
    lrs = [T.lr_schedule(s, cfg) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        T.lr_schedule(101, cfg)


def test_adamw_decay_only():
    cfg = T.TrainConfig(weight_decay=0.1)
    w = {"a": np.array([2.0, -3.0])}
    T.adamw_step(w, {"a": np.zeros(2)}, T.AdamState(), 1e-4, cfg)
    np.testing.assert_allclose(w["a"], np.array([2.0, -3.0]) * (1 - 1e-5), rtol=1e-14)


def test_adamw_zero_grad_no_decay_is_identity():
    cfg = T.TrainConfig(weight_decay=0.0)
    w = {"a": np.array([0.3, 1.7])}
    T.adamw_step(w, {"a": np.zeros(2)}, T.AdamState(), 1e-2, cfg)
    np.testing.assert_array_equal(w["a"], [0.3, 1.7])


def test_adamw_first_step_moves_by_lr():
    cfg = T.TrainConfig(weight_decay=0.0)
    for g in (0.3, -5.0):
        w = {"a": np.array([1.0])}
        T.adamw_step(w, {"a": np.array([g])}, T.AdamState(), 1e-3, cfg)
        assert w["a"][0] - 1.0 == pytest.approx(-np.sign(g) * 1e-3, rel=1e-6)


def _reference_adam(w, steps, lr, b1=0.9, b2=0.95, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adamw_quadratic_converges():
    cfg = T.TrainConfig(weight_decay=0.0)
    w, st = {"a": np.array([1.0])}, T.AdamState()
    for _ in range(100):
        T.adamw_step(w, {"a": 2 * w["a"]}, st, 0.05, cfg)
    assert abs(w["a"][0]) < 1e-2
    assert w["a"][0] == pytest.approx(_reference_adam(1.0, 100, 0.05), rel=1e-12)


def test_adamw_rejects_nan():
    with pytest.raises(FloatingPointError, match="non-finite"):
        T.adamw_step({"a": np.ones(1)}, {"a": np.array([np.nan])}, T.AdamState(), 1e-3,
                     T.TrainConfig())


def test_mixup():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((6, 10))
    np.testing.assert_array_equal(T.mixup(b, 0.0, rng), b)
    a1 = T.mixup(b, 0.7, np.random.default_rng(5))
    a2 = T.mixup(b, 0.7, np.random.default_rng(5))
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    single = b[:1]
    np.testing.assert_array_equal(T.mixup(single, 1.0, rng), single)


def test_mixup_lambda_one_keeps_sample(monkeypatch):
    b = np.arange(12.0).reshape(3, 4)

    class Fixed:
        def random(self, n):
            return np.zeros(n)

        def uniform(self, lo, hi, n):
            return np.ones(n)

        def integers(self, lo, hi, n):
            return np.ones(n, dtype=int)

    np.testing.assert_array_equal(T.mixup(b, 1.0, Fixed()), b)


def test_rescale():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((4, 8))
    np.testing.assert_array_equal(T.rescale_aug(b, (1, 1), rng), b)
    out = T.rescale_aug(b, (4, 4), rng)
    np.testing.assert_allclose(out, 4 * b, rtol=1e-14)
    c = T.rescale_aug(np.ones((500, 1)), (1, 4), np.random.default_rng(1)).ravel()
    assert c.min() >= 1 and c.max() <= 4
    with pytest.raises(ValueError):
        T.rescale_aug(b, (0.5, 2), rng)


def test_rescaled_sample_gives_rescaled_quantiles():
    from jointcast.tokenizer import append_placeholders, patchify
    from conftest import random_weights
    cfg = tiny_config(eps_denorm=1e-8)
    w = random_weights(cfg)
    x = 3 * np.random.default_rng(2).standard_normal((1, 24))
    y = T.rescale_aug(x, (4, 4), np.random.default_rng(0))
    q = M.predict(append_placeholders(patchify(x[0], 4), 2), cfg, w).values
    qy = M.predict(append_placeholders(patchify(y[0], 4), 2), cfg, w).values
    np.testing.assert_allclose(qy, 4 * q, rtol=1e-6)


def _data():
    return [D.gen_sine(200, 16, noise_std=0.05, seed=1)]


def test_training_is_deterministic_and_checkpoint_bitwise(tmp_path):
    cfg = tiny_config()
    a = T.train_loop(cfg, _tcfg(), _data())
    b = T.train_loop(cfg, _tcfg(), _data())
    pa, pb = tmp_path / "a.jts", tmp_path / "b.jts"
    T.checkpoint_save(a, pa)
    T.checkpoint_save(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    c = T.train_loop(cfg, _tcfg(seed=4), _data())
    T.checkpoint_save(c, tmp_path / "c.jts")
    assert (tmp_path / "c.jts").read_bytes() != pa.read_bytes()


def test_zero_steps_returns_initialization():
    cfg = tiny_config()
    ck = T.train_loop(cfg, _tcfg(max_steps=0, warmup_steps=0), _data())
    init_seed, _ = np.random.SeedSequence(3).spawn(2)
    ref = M.init_weights(cfg, int(init_seed.generate_state(1)[0]), dtype=np.float64)
    assert set(ck.weights) == set(ref)
    for k in ref:
        np.testing.assert_array_equal(ck.weights[k], ref[k].data)
    assert ck.loss_curve == []


def test_checkpoint_roundtrip(tmp_path):
    from jointcast.infer import forecast_dcot
    ck = T.train_loop(tiny_config(), _tcfg(dtype="float32"), _data())
    p = tmp_path / "m.jts"
    T.checkpoint_save(ck, p)
    back = T.checkpoint_load(p)
    assert back.model_config == ck.model_config
    assert (back.step, back.seed, back.train_config) == (ck.step, ck.seed, ck.train_config)
    for k, v in ck.weights.items():
        assert back.weights[k].dtype == v.dtype and back.weights[k].tobytes() == v.tobytes()
    assert back.optimizer.t == ck.optimizer.t
    hist = np.sin(np.arange(40.0))
    f1 = forecast_dcot(ck.tensors(), ck.model_config, hist, 8).values
    f2 = forecast_dcot(back.tensors(), back.model_config, hist, 8).values
    assert f1.tobytes() == f2.tobytes()


def test_checkpoint_errors(tmp_path):
    ck = T.train_loop(tiny_config(), _tcfg(max_steps=1, warmup_steps=0), _data())
    p = tmp_path / "m.jts"
    T.checkpoint_save(ck, p)
    raw = p.read_bytes()
    bad = tmp_path / "bad.jts"
    bad.write_bytes(b"X" + raw[1:])
    with pytest.raises(T.CheckpointMagicError):
        T.checkpoint_load(bad)
    bad.write_bytes(raw[:4] + struct.pack("<I", T.FORMAT_VERSION + 1) + raw[8:])
    with pytest.raises(T.CheckpointVersionError):
        T.checkpoint_load(bad)
    bad.write_bytes(raw[:-7])
    with pytest.raises(T.CheckpointTruncatedError):
        T.checkpoint_load(bad)
    errs = {T.CheckpointMagicError, T.CheckpointVersionError, T.CheckpointTruncatedError}
    assert len(errs) == 3 and all(issubclass(e, T.CheckpointError) for e in errs)


def test_loss_csv(tmp_path):
    p = tmp_path / "loss.csv"
    T.train_loop(tiny_config(), _tcfg(), _data(), loss_csv=p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,lr,loss" and len(lines) == 7


def test_divergence_is_reported(tmp_path):
    bad = [np.full(200, np.inf)]
    with pytest.raises(T.TrainingDivergedError):
        T.train_loop(tiny_config(), _tcfg(), bad, dump_dir=tmp_path)
    assert (tmp_path / "diverged_batch.npz").exists()


@pytest.mark.slow
def test_heldout_loss_decreases():
    # fixed masked batch drawn from the same distribution, median over seeds
    cfg = tiny_config(embed_dim=16, n_heads=2, ffn_dim=32)
    series = D.gen_sine(2000, 32, noise_std=0.05, seed=0)
    ref = np.stack([series.values[i:i + 64] for i in range(1500, 1900, 50)])
    gains = []
    for seed in range(5):
        t = _tcfg(max_steps=200, warmup_steps=20, batch_size=8, seed=seed, context_tokens=(8, 16))
        before = T.evaluate_masked(T.train_loop(cfg, replace(t, max_steps=0, warmup_steps=0),
                                                [series.values[:1500]]), ref, t)
        after = T.evaluate_masked(T.train_loop(cfg, t, [series.values[:1500]]), ref, t)
        gains.append(before - after)
    assert np.median(gains) > 0


def test_context_too_short_for_mask_ratio():
    with pytest.raises(ValueError, match="masks no token"):
        T.TrainConfig(context_tokens=(4, 8), mask_ratio=0.2)
