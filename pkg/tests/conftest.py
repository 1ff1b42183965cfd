import numpy as np
import pytest

from jointcast import model as M
from jointcast.numcore import Tensor


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def directional_fd(f, arrays, directions, h=1e-5):
    for a, d in zip(arrays, directions):
        a += h * d
    fp = f()
    for a, d in zip(arrays, directions):
        a -= 2 * h * d
    fm = f()
    for a, d in zip(arrays, directions):
        a += h * d
    return (fp - fm) / (2 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**kw):
    base = dict(n_layers=2, n_heads=2, embed_dim=8, ffn_dim=12, patch_len=4,
                quantile_levels=(0.1, 0.5, 0.9), eps_denorm=1e-3)
    base.update(kw)
    return M.ModelConfig(**base)


def random_weights(cfg, seed=0, scale=0.3):
    """Weights with O(1) perturbations so every path carries signal."""
    w = M.init_weights(cfg, seed)
    r = np.random.default_rng(seed + 99)
    for t in w.values():
        t.data = t.data + scale * r.standard_normal(t.shape)
    return w


def as_tensor(a, grad=True):
    return Tensor(np.array(a, dtype=float), requires_grad=grad)
