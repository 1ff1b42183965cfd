# The evaluation metrics on hand-sized inputs.

import numpy as np

from jointcast import evaluation as E
from jointcast.data import EvalWindow
from jointcast.model import DECILES, QuantileForecast

w = EvalWindow(insample=np.array([0, 1, 0, 1, 0.0]), actual=np.array([1, 0.0]), seasonality=1)
print("MASE:", E.mase([1, 1], w))  # (4/2) * 1/4
print("MSE / MAE:", E.mse([0, 0], [1, 3]), E.mae([0, 0], [1, 3]))

actual = np.array([2.0, -1.0, 0.5])
q = np.sort(np.random.default_rng(0).normal(actual, 0.5, (9, 3)), axis=0)
qf = QuantileForecast(q[:, None, :], DECILES, np.array([0]))
for a in (0.1, 0.5, 0.9):
    print(f"WQL[{a}]:", round(E.wql_metric(qf, actual, a), 4))
print("CRPS (nine deciles):", round(E.crps_approx(qf, actual), 4))
print("scalar reference:   ", round(E.crps_bruteforce(q, actual), 4))
