"""Bidirectional encoder-only U-transformer with quantile output heads.

Weights live in a flat ``dict[str, Tensor]``. Matrices applied to token
rows use the (out, in) layout where the component is described as a map
(embedding, merges, heads) and the (in, out) layout inside the attention and
feed-forward sublayers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import Tensor
from .tokenizer import MaskedSequence

DECILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 4
    embed_dim: int = 64
    ffn_dim: int = 128
    patch_len: int = 16
    quantile_levels: tuple = DECILES
    rope_base: float = 10000.0
    eps_denorm: float = 1e-3
    u_shape: bool = True
    mask_ratio_default: float = 0.2
    q_per_kv: int = 1
    norm_eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "quantile_levels", tuple(float(a) for a in self.quantile_levels))
        if self.n_layers < 2 or self.n_layers % 2:
            raise ValueError("n_layers must be even and >= 2")
        if self.n_heads < 1 or self.embed_dim % (2 * self.n_heads):
            raise ValueError("embed_dim must be divisible by 2*n_heads")
        if self.n_heads % self.q_per_kv:
            raise ValueError("n_heads must be divisible by q_per_kv")
        lv = self.quantile_levels
        if not lv or any(not 0 < a < 1 for a in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("quantile levels must be strictly increasing in (0, 1)")
        if self.eps_denorm <= 0:
            raise ValueError("eps_denorm must be > 0")
        if self.patch_len < 1 or self.ffn_dim < 1:
            raise ValueError("patch_len and ffn_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def kv_heads(self) -> int:
        return self.n_heads // self.q_per_kv

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantile_levels"] = list(self.quantile_levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class QuantileForecast:
    """Quantile predictions for masked tokens on the original scale.

    ``values`` has shape (R, n_masked, P) and may be a tracked Tensor while
    training. ``n_points`` marks how many leading flattened points are valid.
    """

    values: np.ndarray | Tensor
    levels: tuple
    token_index: np.ndarray
    n_points: int | None = None
    _extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n_points is None:
            shape = self.values.shape
            self.n_points = shape[1] * shape[2]

    def array(self) -> np.ndarray:
        return self.values.data if isinstance(self.values, Tensor) else self.values

    def flat(self) -> np.ndarray:
        """(R, n_points) quantile paths over consecutive time points."""
        v = self.array()
        return v.reshape(v.shape[0], -1)[:, :self.n_points].copy()

    def level(self, alpha: float) -> np.ndarray:
        k = _level_index(self.levels, alpha)
        return self.flat()[k]

    def median(self) -> np.ndarray:
        return self.level(0.5)

    def sorted(self) -> "QuantileForecast":
        """Copy with quantiles sorted ascending per (token, position)."""
        return QuantileForecast(np.sort(self.array(), axis=0), self.levels,
                                self.token_index.copy(), self.n_points)


def _level_index(levels, alpha) -> int:
    for k, a in enumerate(levels):
        if abs(a - alpha) < 1e-9:
            return k
    raise KeyError(f"quantile level {alpha} not among {tuple(levels)}")


# -- parameters ---------------------------------------------------------------

def _trunc_normal(rng, shape, std=0.02):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_weights(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> dict[str, Tensor]:
    """Truncated-normal projections, unit norm gains, zero head biases.

    Merge layers start near a pass-through of the current token (plus noise)
    so the residual stream survives initialization.
    """
    rng = np.random.default_rng(seed)
    d, f, P, R = cfg.embed_dim, cfg.ffn_dim, cfg.patch_len, len(cfg.quantile_levels)
    dkv = cfg.kv_heads * cfg.head_dim
    w: dict[str, np.ndarray] = {
        "embed.patch": _trunc_normal(rng, (d, P)),
        "embed.mask": _trunc_normal(rng, (1, d)),
    }
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        w[p + "attn_norm"] = np.ones(d)
        w[p + "wq"] = _trunc_normal(rng, (d, d))
        w[p + "wk"] = _trunc_normal(rng, (d, dkv))
        w[p + "wv"] = _trunc_normal(rng, (d, dkv))
        w[p + "wo"] = _trunc_normal(rng, (d, d))
        w[p + "ffn_norm"] = np.ones(d)
        w[p + "w_gate"] = _trunc_normal(rng, (d, f))
        w[p + "w_up"] = _trunc_normal(rng, (d, f))
        w[p + "w_down"] = _trunc_normal(rng, (f, d))
    if cfg.u_shape:
        eye, zero = np.eye(d), np.zeros((d, d))
        half = cfg.n_layers // 2
        for s in range(half):
            w[f"merge.shallow.{s}"] = np.hstack([zero, eye]) + _trunc_normal(rng, (d, 2 * d))
        for l in range(half, cfg.n_layers):
            w[f"merge.deep.{l}"] = np.hstack([eye, zero]) + _trunc_normal(rng, (d, 2 * d))
    w["heads.weight"] = _trunc_normal(rng, (R, P, d))
    w["heads.bias"] = np.zeros((R, P))
    return {k: Tensor(v, requires_grad=True, dtype=dtype, name=k) for k, v in w.items()}


def weight_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    return {k: v.shape for k, v in init_weights(cfg, 0).items()}


def check_weights(cfg: ModelConfig, w: dict[str, Tensor]) -> None:
    expected = weight_shapes(cfg)
    if set(expected) != set(w):
        missing, extra = set(expected) - set(w), set(w) - set(expected)
        raise ValueError(f"weight names mismatch; missing={sorted(missing)} extra={sorted(extra)}")
    for k, shape in expected.items():
        if w[k].shape != shape:
            raise nc.DimensionError(f"{k}: expected {shape}, got {w[k].shape}")


# -- layers -------------------------------------------------------------------

def normalize_tokens(tokens, mask, mu, sigma, eps):
    """Standardize observed rows by (mu, sigma + eps); masked rows become 0."""
    tokens = np.asarray(tokens)
    mu = np.asarray(mu, dtype=tokens.dtype).reshape(-1, 1, 1)
    scale = np.asarray(sigma, dtype=tokens.dtype).reshape(-1, 1, 1) + eps
    z = (tokens - mu) / scale
    return np.where(mask[..., None], 0.0, z).astype(tokens.dtype)


def embed_batch(tokens, mask, mu, sigma, cfg: ModelConfig, w) -> Tensor:
    """(B, N, P) raw tokens -> (B, N, d) embeddings."""
    dtype = w["embed.patch"].dtype
    if tokens.shape[-1] != cfg.patch_len:
        raise nc.DimensionError(f"token width {tokens.shape[-1]} != patch_len {cfg.patch_len}")
    mask = np.asarray(mask, dtype=bool)
    if isinstance(tokens, Tensor):
        # tracked input (used to probe input sensitivities); stats stay constant
        mu_ = np.asarray(mu, dtype=dtype).reshape(-1, 1, 1)
        scale = np.asarray(sigma, dtype=dtype).reshape(-1, 1, 1) + cfg.eps_denorm
        z = nc.where(mask[..., None], 0.0, (tokens - mu_) / scale)
    else:
        tokens = np.asarray(tokens, dtype=dtype)
        z = Tensor._make(normalize_tokens(tokens, mask, mu, sigma, cfg.eps_denorm), (), None,
                         "input")
    h = nc.matmul(z, nc.transpose(w["embed.patch"]))
    return nc.where(mask[..., None], w["embed.mask"], h)


def embed(seq: MaskedSequence, w, cfg: ModelConfig) -> Tensor:
    h = embed_batch(seq.tokens[None], seq.mask[None], [seq.mu], [seq.sigma], cfg, w)
    return h.reshape(seq.n_total, cfg.embed_dim)


def attention(x: Tensor, w, prefix: str, cfg: ModelConfig, positions=None,
              return_weights: bool = False):
    """Dense bidirectional multi-head attention with rotary queries and keys."""
    lead = x.shape[:-2]
    N, d = x.shape[-2], x.shape[-1]
    H, Hkv, dh = cfg.n_heads, cfg.kv_heads, cfg.head_dim
    if positions is None:
        positions = np.arange(N)

    def heads(t, n):
        return nc.swapaxes(t.reshape(*lead, N, n, dh), -2, -3)  # (..., n, N, dh)

    q = nc.rope_apply(heads(x @ w[prefix + "wq"], H), positions, cfg.rope_base)
    k = nc.rope_apply(heads(x @ w[prefix + "wk"], Hkv), positions, cfg.rope_base)
    v = heads(x @ w[prefix + "wv"], Hkv)
    if cfg.q_per_kv > 1:
        rep = np.repeat(np.arange(Hkv), cfg.q_per_kv)
        k = nc.take(k, rep, axis=-3)
        v = nc.take(v, rep, axis=-3)
    scores = nc.matmul(q, nc.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    probs = nc.softmax_lastdim(scores)
    ctx = nc.swapaxes(nc.matmul(probs, v), -2, -3).reshape(*lead, N, d)
    out = ctx @ w[prefix + "wo"]
    return (out, probs) if return_weights else out


def attention_block(x: Tensor, w, layer: int, cfg: ModelConfig, positions=None) -> Tensor:
    """Pre-norm residual block: attention sublayer then SwiGLU sublayer."""
    p = f"layers.{layer}."
    h = x + attention(nc.rms_norm(x, w[p + "attn_norm"], cfg.norm_eps), w, p, cfg, positions)
    ff = nc.swiglu_ffn(nc.rms_norm(h, w[p + "ffn_norm"], cfg.norm_eps),
                       w[p + "w_gate"], w[p + "w_up"], w[p + "w_down"])
    return h + ff


def merge_shallow(x_out: Tensor, f_c: Tensor) -> Tensor:
    """Token i becomes ``F_c([x[i-1]; x[i]])``; token 0 pairs with itself."""
    N = x_out.shape[-2]
    prev = nc.take(x_out, np.concatenate([[0], np.arange(N - 1)]), axis=-2)
    return nc.matmul(nc.concat([prev, x_out], axis=-1), nc.transpose(f_c))


def merge_deep(x_out: Tensor, skip: Tensor, f_m: Tensor) -> Tensor:
    """``F_m([x[i]; skip[i]])`` with ``skip`` from the mirrored shallow layer."""
    if skip.shape != x_out.shape:
        raise nc.DimensionError(f"skip shape {skip.shape} != {x_out.shape}")
    return nc.matmul(nc.concat([x_out, skip], axis=-1), nc.transpose(f_m))


def skip_partner(layer: int, n_layers: int) -> int:
    """Shallow layer (0-based) whose output feeds deep ``layer`` (0-based)."""
    if layer < n_layers // 2:
        raise ValueError(f"layer {layer} is a shallow layer")
    return n_layers - 1 - layer


def encode(h: Tensor, cfg: ModelConfig, w, positions=None) -> Tensor:
    """Run the block stack over embeddings ``h`` of shape (..., N, d)."""
    D, half = cfg.n_layers, cfg.n_layers // 2
    skips: list[Tensor] = []
    for l in range(D):
        if cfg.u_shape and l >= half:
            h = merge_deep(h, skips[skip_partner(l, D)], w[f"merge.deep.{l}"])
        h = attention_block(h, w, l, cfg, positions)
        if cfg.u_shape and l < half:
            skips.append(h)
            h = merge_shallow(h, w[f"merge.shallow.{l}"])
    return h


def forward(seq: MaskedSequence, cfg: ModelConfig, w) -> Tensor:
    """Hidden states (N, d) for one masked sequence."""
    return encode(embed(seq, w, cfg), cfg, w, seq.positions)


def forward_batch(tokens, mask, mu, sigma, cfg: ModelConfig, w) -> Tensor:
    return encode(embed_batch(tokens, mask, mu, sigma, cfg, w), cfg, w)


def head_outputs(hidden: Tensor, mu, sigma, cfg: ModelConfig, w) -> Tensor:
    """Denormalized quantiles for every token: (..., N, R, P)."""
    R, P = len(cfg.quantile_levels), cfg.patch_len
    W = w["heads.weight"].reshape(R * P, cfg.embed_dim)
    raw = nc.matmul(hidden, nc.transpose(W))
    raw = raw.reshape(*hidden.shape[:-1], R, P) + w["heads.bias"]
    dtype = raw.dtype
    extra = (1,) * 3
    scale = np.asarray(sigma, dtype=dtype).reshape(np.shape(sigma) + extra) + cfg.eps_denorm
    shift = np.asarray(mu, dtype=dtype).reshape(np.shape(mu) + extra)
    return raw * scale + shift


def quantile_heads(hidden: Tensor, seq: MaskedSequence, cfg: ModelConfig, w) -> QuantileForecast:
    """Quantiles ``F_k(h_i) * (sigma + eps) + mu`` for each masked token i."""
    if seq.mask_idx.size == 0:
        raise ValueError("no masked tokens to forecast")
    q = head_outputs(nc.take(hidden, seq.mask_idx, axis=-2), seq.mu, seq.sigma, cfg, w)
    return QuantileForecast(nc.transpose(q, (1, 0, 2)), cfg.quantile_levels,
                            seq.mask_idx.copy())


def predict(seq: MaskedSequence, cfg: ModelConfig, w, sort: bool = False) -> QuantileForecast:
    """Untracked forward pass returning a numpy-valued forecast."""
    with nc.no_grad():
        qf = quantile_heads(forward(seq, cfg, w), seq, cfg, w)
    qf = QuantileForecast(qf.array().copy(), qf.levels, qf.token_index)
    return qf.sorted() if sort else qf
