# Train a small masked-token model on a noisy sinusoid, then forecast with
# extra placeholder tokens and with the sign-mirror ensemble.

import numpy as np

from jointcast import data, experiments, infer, train
from jointcast.evaluation import mse

series = data.gen_sine(4096, period=64, noise_std=0.1, seed=0)
train_part, holdout = data.holdout_split(series, lookback=512, horizon=64, n_eval_windows=8)

cfg = experiments.DESK_MODEL
tcfg = train.TrainConfig(max_steps=300, warmup_steps=30, batch_size=16, seed=0)
ckpt = train.train_loop(cfg, tcfg, [train_part])
curve = np.array([c[2] for c in ckpt.loss_curve])
print("loss first/last 10 steps:", curve[:10].mean().round(3), curve[-10:].mean().round(3))

w = ckpt.tensors()
windows = data.split_windows(holdout, 512, 64, 64)
for dcot in (0, 64, 256):
    errs = [mse(infer.forecast_dcot(w, cfg, win.insample, 64, dcot).median(), win.actual)
            for win in windows]
    print(f"dcot_points={dcot:4d}  mean MSE {np.mean(errs):.5f}")

# average over trailing windows of 128/256/512 points and their negations
ens = [mse(infer.mirror_ensemble(w, cfg, win.insample, [128, 256, 512], 64), win.actual)
       for win in windows]
print(f"mirror ensemble   mean MSE {np.mean(ens):.5f}")

qf = infer.forecast_dcot(w, cfg, windows[0].insample, 64, 64)
print("levels:", qf.levels)
print("first 4 points, 10%/50%/90%:")
print(np.round(qf.flat()[[0, 4, 8], :4], 3))
