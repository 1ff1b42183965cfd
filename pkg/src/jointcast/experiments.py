"""Desk-scale experiment drivers: masked recovery, DCoT and ensemble sweeps,
and the vanilla-vs-U structural ablation."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np

from . import data as D
from . import infer
from . import model as M
from . import numcore as nc
from . import train as T
from .evaluation import mse
from .tokenizer import mask_random, patchify

DESK_MODEL = M.ModelConfig(n_layers=2, n_heads=4, embed_dim=64, ffn_dim=128, patch_len=16)


def synthetic_suite(n: int = 6144, seed: int = 0) -> dict[str, D.Series]:
    """The three directional-test datasets."""
    return {
        "sine_noise": D.gen_sine(n, 64, amplitude=1.0, noise_std=0.1, seed=seed, name="sine_noise"),
        "sine_trend": D.gen_sine(n, 48, amplitude=1.0, trend_slope=2e-3, noise_std=0.05,
                                 seed=seed + 1, name="sine_trend"),
        "two_period": D.gen_two_period(n, (24, 96), (1.0, 0.6), noise_std=0.05, seed=seed + 2),
    }


def masked_recovery(series: D.Series, mcfg: M.ModelConfig, tcfg: T.TrainConfig,
                    eval_windows: int = 32, window_tokens: int = 32, seed: int = 0) -> dict:
    """Train on the head of ``series``; score masked-token recovery on its tail.

    The tail holds ``eval_windows`` disjoint windows of ``window_tokens``
    patches. Each is masked at the configured ratio and the median forecast
    of the masked patches is compared with the truth.
    """
    P = mcfg.patch_len
    span = window_tokens * P
    cut = len(series) - eval_windows * span
    if cut < 2 * span:
        raise D.InsufficientDataError("series too short for the requested holdout")
    train_part = D.Series(series.values[:cut])
    ckpt = T.train_loop(mcfg, tcfg, [train_part])
    w = ckpt.tensors()
    rng = np.random.default_rng(seed)
    sq_err, n = 0.0, 0
    for i in range(eval_windows):
        x = series.values[cut + i * span: cut + (i + 1) * span]
        seq = mask_random(patchify(x, P), tcfg.mask_ratio, rng)
        qf = M.predict(seq, mcfg, w, sort=True)
        med = qf.array()[M._level_index(qf.levels, 0.5)]
        truth = seq.targets[seq.mask_idx]
        sq_err += float(((med - truth) ** 2).sum())
        n += truth.size
    curve = [c[2] for c in ckpt.loss_curve]
    k = max(1, min(10, len(curve) // 10))
    return {"initial_wql": float(np.mean(curve[:k])), "final_wql": float(np.mean(curve[-k:])),
            "heldout_mse": sq_err / n, "variance": float(series.values.var()),
            "checkpoint": ckpt}


def train_on(series: D.Series, mcfg, tcfg, lookback: int, horizon: int, n_windows: int):
    train_part, holdout = D.holdout_split(series, lookback, horizon, n_windows)
    ckpt = T.train_loop(mcfg, tcfg, [train_part])
    windows = D.split_windows(holdout, lookback, horizon, horizon)
    return ckpt, windows


def dcot_sweep(ckpt: T.Checkpoint, windows, horizon: int, dcot_grid=(0, 256),
               lookback: int | None = None) -> dict:
    """Mean median-forecast MSE over ``windows`` for each DCoT length."""
    w, cfg = ckpt.tensors(), ckpt.model_config
    out = {}
    for dc in dcot_grid:
        errs = []
        for win in windows:
            hist = win.insample if lookback is None else win.insample[-lookback:]
            errs.append(mse(infer.forecast_dcot(w, cfg, hist, horizon, dc).median(), win.actual))
        out[int(dc)] = float(np.mean(errs))
    return out


def dcot_experiment(datasets: dict, seeds, mcfg=DESK_MODEL, tcfg=None, horizon=64,
                    dcot_grid=(0, 256), lookback=256, n_windows=24) -> dict:
    """Per dataset: per-seed MSE for each DCoT length and the per-cell median."""
    tcfg = tcfg or T.TrainConfig()
    result = {}
    for name, series in datasets.items():
        per_seed = []
        for s in seeds:
            ckpt, windows = train_on(series, mcfg, replace(tcfg, seed=s), lookback, horizon,
                                     n_windows)
            per_seed.append(dcot_sweep(ckpt, windows, horizon, dcot_grid))
        med = {dc: float(np.median([p[dc] for p in per_seed])) for dc in per_seed[0]}
        result[name] = {"per_seed": per_seed, "median": med}
    return result


def ensemble_eval(ckpt: T.Checkpoint, windows, lookbacks, horizon: int, dcot_points: int = 0) -> dict:
    """MSE of each single-lookback forecast and of the mirror ensemble."""
    w, cfg = ckpt.tensors(), ckpt.model_config
    single = {n: [] for n in lookbacks}
    ens = []
    for win in windows:
        fc = infer.dcot_forecaster(w, cfg, dcot_points)
        for n in lookbacks:
            single[n].append(mse(fc(win.insample[-n:], horizon).median(), win.actual))
        ens.append(mse(infer.mirror_ensemble_with(fc, win.insample, lookbacks, horizon),
                       win.actual))
    comp = {int(n): float(np.mean(v)) for n, v in single.items()}
    return {"components": comp, "ensemble": float(np.mean(ens)),
            "worst": max(comp.values()), "mean": float(np.mean(list(comp.values())))}


def ensemble_experiment(datasets: dict, seed=0, mcfg=DESK_MODEL, tcfg=None, horizon=64,
                        lookbacks=(128, 256, 512), n_windows=24, dcot_points=0) -> dict:
    tcfg = tcfg or T.TrainConfig()
    out = {}
    for name, series in datasets.items():
        ckpt, windows = train_on(series, mcfg, replace(tcfg, seed=seed), max(lookbacks), horizon,
                                 n_windows)
        out[name] = ensemble_eval(ckpt, windows, lookbacks, horizon, dcot_points)
    return out


def structure_ablation(series: D.Series, mcfg=DESK_MODEL, tcfg=None, horizon=64, lookback=256,
                       n_windows=16, dcot_grid=(0, 256)) -> dict:
    """Train the U-shaped and the vanilla stack identically; compare forecasts."""
    tcfg = tcfg or T.TrainConfig()
    report = {}
    for label, u in (("u_transformer", True), ("vanilla", False)):
        cfg = replace(mcfg, u_shape=u)
        ckpt, windows = train_on(series, cfg, tcfg, lookback, horizon, n_windows)
        curve = [c[2] for c in ckpt.loss_curve]
        report[label] = {"n_params": int(sum(v.size for v in ckpt.weights.values())),
                         "final_train_wql": float(np.mean(curve[-10:])) if curve else None,
                         "mse_by_dcot": dcot_sweep(ckpt, windows, horizon, dcot_grid)}
    report["config"] = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "horizon": horizon,
                        "lookback": lookback, "n_windows": n_windows}
    return report


def input_gradient(w, cfg: M.ModelConfig, tokens: np.ndarray, mask_idx, loss_token: int):
    """Gradient of one masked token's summed quantile output w.r.t. all input tokens."""
    mask = np.zeros(tokens.shape[0], bool)
    mask[list(mask_idx)] = True
    obs = tokens[~mask].reshape(-1)
    x = nc.Tensor(tokens[None], requires_grad=True)
    h = M.encode(M.embed_batch(x, mask[None], [obs.mean()], [obs.std()], cfg, w), cfg, w)
    q = M.head_outputs(h, [obs.mean()], [obs.std()], cfg, w)
    q[0, loss_token].sum().backward()
    return x.grad[0]


def dump(report: dict) -> str:
    def default(o):
        if isinstance(o, T.Checkpoint):
            return None
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o))
    return json.dumps(report, indent=2, default=default)
