"""Masked-token training: schedule, AdamW, augmentations, loop, checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import numcore as nc
from .loss import wql_objective
from .tokenizer import _build, mask_random, patchify

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, msg, batch=None):
        super().__init__(msg)
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 500
    warmup_steps: int = 50
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    batch_size: int = 16
    seed: int = 0
    mixup_prob: float = 0.2
    rescale_range: tuple = (1.0, 4.0)
    flip_prob: float = 0.5
    mask_ratio: float = 0.2
    context_tokens: tuple = (12, 56)
    suffix_mask_prob: float = 0.5
    suffix_max_frac: float = 0.6
    grad_clip: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "rescale_range", tuple(float(v) for v in self.rescale_range))
        object.__setattr__(self, "context_tokens", tuple(int(v) for v in self.context_tokens))
        if self.max_steps < 0 or not 0 <= self.warmup_steps <= self.max_steps:
            raise ValueError("need 0 <= warmup_steps <= max_steps")
        if self.lr_min > self.lr_max or self.lr_min < 0:
            raise ValueError("need 0 <= lr_min <= lr_max")
        lo, hi = self.rescale_range
        if not 1.0 <= lo <= hi:
            raise ValueError("rescale_range must satisfy 1 <= lo <= hi")
        if any(not 0.0 <= p <= 1.0 for p in (self.mixup_prob, self.suffix_mask_prob, self.flip_prob)):
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0.0 < self.suffix_max_frac < 1.0:
            raise ValueError("suffix_max_frac must lie in (0, 1)")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        lo_t, hi_t = self.context_tokens
        if not 2 <= lo_t <= hi_t:
            raise ValueError("context_tokens must satisfy 2 <= lo <= hi")
        if self.mask_ratio > 0 and math.floor(self.mask_ratio * lo_t) < 1:
            raise ValueError(f"mask_ratio {self.mask_ratio} masks no token in a {lo_t}-token window")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rescale_range"] = list(self.rescale_range)
        d["context_tokens"] = list(self.context_tokens)
        return d


# -- schedule and optimizer ---------------------------------------------------

def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``lr_max`` then cosine decay to ``lr_min`` at ``max_steps``."""
    if not 0 <= step <= cfg.max_steps:
        raise ValueError(f"step {step} outside [0, {cfg.max_steps}]")
    if step < cfg.warmup_steps:
        return cfg.lr_max * step / cfg.warmup_steps
    span = cfg.max_steps - cfg.warmup_steps
    if span == 0:
        return cfg.lr_max
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(weights: dict, grads: dict, state: AdamState, lr: float, cfg: TrainConfig,
               no_decay=()) -> None:
    """One in-place AdamW update with decoupled weight decay.

    ``weights`` maps names to numpy arrays (or Tensors, whose data is
    replaced). Names in ``no_decay`` skip the decay term.
    """
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradients in {bad} at optimizer step {state.t + 1}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for k, g in grads.items():
        p = weights[k]
        arr = p.data if isinstance(p, nc.Tensor) else p
        if k not in state.m:
            state.m[k] = np.zeros_like(arr)
            state.v[k] = np.zeros_like(arr)
        if cfg.weight_decay and k not in no_decay:
            arr = arr * (1.0 - lr * cfg.weight_decay)
        m = state.m[k] = b1 * state.m[k] + (1 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        new = (arr - lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(arr.dtype)
        if isinstance(p, nc.Tensor):
            p.data = new
        else:
            weights[k] = new


# -- augmentation -------------------------------------------------------------

def mixup(batch: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Blend each sample, with probability ``prob``, into a random partner.

    ``x <- lam*x + (1-lam)*partner`` with ``lam ~ U(0.5, 1)``.
    """
    batch = np.asarray(batch)
    B = batch.shape[0]
    if prob <= 0:
        return batch.copy()
    if B < 2:
        log.warning("mixup needs at least two samples; leaving batch unchanged")
        return batch.copy()
    apply = rng.random(B) < prob
    lam = rng.uniform(0.5, 1.0, B)
    offset = rng.integers(1, B, B)
    partner = (np.arange(B) + offset) % B
    out = batch.copy()
    for i in np.flatnonzero(apply):
        out[i] = lam[i] * batch[i] + (1 - lam[i]) * batch[partner[i]]
    return out


def flip_aug(batch: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Negate each sample with probability ``prob``."""
    batch = np.asarray(batch)
    sign = np.where(rng.random(batch.shape[0]) < prob, -1.0, 1.0)
    return batch * sign.reshape((-1,) + (1,) * (batch.ndim - 1))


def rescale_aug(batch: np.ndarray, scale_range, rng: np.random.Generator) -> np.ndarray:
    """Multiply each sample by a log-uniform factor from ``scale_range``."""
    lo, hi = scale_range
    if lo < 1 or hi < lo:
        raise ValueError("scale range must satisfy 1 <= lo <= hi")
    batch = np.asarray(batch)
    c = np.exp(rng.uniform(math.log(lo), math.log(hi), batch.shape[0]))
    return batch * c.reshape((-1,) + (1,) * (batch.ndim - 1))


# -- checkpoints --------------------------------------------------------------

MAGIC = b"JTS1"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model_config: M.ModelConfig
    weights: dict  # name -> ndarray
    step: int = 0
    seed: int = 0
    train_config: dict | None = None
    optimizer: AdamState | None = None
    loss_curve: list = field(default_factory=list)

    def tensors(self) -> dict:
        return {k: nc.Tensor(v, name=k) for k, v in self.weights.items()}


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    tag = _TAGS[arr.dtype]
    raw = name.encode()
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<BI", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype(_DTYPES[tag]).tobytes()


def checkpoint_save(ckpt: Checkpoint, path) -> None:
    records = [(k, ckpt.weights[k]) for k in sorted(ckpt.weights)]
    meta = {"model_config": ckpt.model_config.to_dict(), "step": ckpt.step, "seed": ckpt.seed,
            "train_config": ckpt.train_config, "optimizer_t": None}
    if ckpt.optimizer is not None:
        meta["optimizer_t"] = ckpt.optimizer.t
        records += [(f"opt.m.{k}", ckpt.optimizer.m[k]) for k in sorted(ckpt.optimizer.m)]
        records += [(f"opt.v.{k}", ckpt.optimizer.v[k]) for k in sorted(ckpt.optimizer.v)]
    meta["n_records"] = len(records)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(blob)), blob]
    parts += [_pack_record(k, v) for k, v in records]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_load(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic header")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported format version {version}")
    (blob_len,) = r.unpack("<Q")
    meta = json.loads(r.take(blob_len).decode())
    arrays = {}
    for _ in range(meta["n_records"]):
        (n,) = r.unpack("<I")
        name = r.take(n).decode()
        tag, rank = r.unpack("<BI")
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
        dims = r.unpack(f"<{rank}Q")
        dt = _DTYPES[tag]
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(dims)
        arrays[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    opt = None
    if meta["optimizer_t"] is not None:
        opt = AdamState(t=meta["optimizer_t"])
        for name in list(arrays):
            if name.startswith("opt."):
                kind, key = name[4], name[6:]
                getattr(opt, kind)[key] = arrays.pop(name)
    return Checkpoint(M.ModelConfig.from_dict(meta["model_config"]), arrays, meta["step"],
                      meta["seed"], meta["train_config"], opt)


# -- training loop ------------------------------------------------------------

def _series_values(data) -> list[np.ndarray]:
    out = []
    for s in data:
        out.append(np.asarray(getattr(s, "values", s), dtype=np.float64))
    return out


def sample_batch(series: list[np.ndarray], n_points: int, batch_size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Random windows of ``n_points`` consecutive values from eligible series."""
    eligible = [s for s in series if s.size >= n_points]
    if not eligible:
        raise ValueError(f"no series holds {n_points} points")
    out = np.empty((batch_size, n_points))
    for b in range(batch_size):
        s = eligible[rng.integers(len(eligible))]
        start = rng.integers(0, s.size - n_points + 1)
        out[b] = s[start:start + n_points]
    return out


def mask_batch(windows: np.ndarray, patch_len: int, cfg: TrainConfig, rng):
    """Patchify and mask each window; returns tokens, targets, mask, mu, sigma."""
    seqs = []
    for x in windows:
        seq = mask_random(patchify(x, patch_len), cfg.mask_ratio, rng)
        if cfg.suffix_mask_prob and rng.random() < cfg.suffix_mask_prob:
            n = seq.n_total
            tail = int(rng.integers(1, max(1, math.ceil(cfg.suffix_max_frac * (n - 1))) + 1))
            idx = np.union1d(seq.mask_idx, np.arange(n - tail, n))
            seq = _build(seq.targets, idx, 0, targets=seq.targets)
        seqs.append(seq)
    tokens = np.stack([s.tokens for s in seqs])
    targets = np.stack([s.targets for s in seqs])
    mask = np.stack([s.mask for s in seqs])
    mu = np.array([s.mu for s in seqs])
    sigma = np.array([s.sigma for s in seqs])
    return tokens, targets, mask, mu, sigma


def batch_loss(w, mcfg: M.ModelConfig, tokens, targets, mask, mu, sigma):
    hidden = M.forward_batch(tokens, mask, mu, sigma, mcfg, w)
    q = M.head_outputs(hidden, mu, sigma, mcfg, w)
    return wql_objective(q, targets, mask, mcfg.quantile_levels)


def no_decay_names(weights) -> set:
    return {k for k, v in weights.items() if np.ndim(v.data if isinstance(v, nc.Tensor) else v) < 2
            or k == "heads.bias"}


def _clip(grads: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        s = max_norm / total
        for k in grads:
            grads[k] = grads[k] * s
    return total


def train_loop(mcfg: M.ModelConfig, tcfg: TrainConfig, data, loss_csv=None, dump_dir=None,
               callback=None) -> Checkpoint:
    """Masked-token training; a pure function of (configs, data, seed).

    Each step draws windows, applies mixup and rescaling, patchifies,
    masks, runs the model and takes one AdamW step on the WQL objective.
    """
    dtype = np.dtype(tcfg.dtype)
    init_seed, data_seed = np.random.SeedSequence(tcfg.seed).spawn(2)
    w = M.init_weights(mcfg, int(init_seed.generate_state(1)[0]), dtype=dtype)
    rng = np.random.default_rng(data_seed)
    series = _series_values(data)
    P = mcfg.patch_len
    if not any(s.size >= 2 * P for s in series):
        raise ValueError(f"training data needs a series of at least {2 * P} points")
    max_tok = max(s.size for s in series) // P
    lo_t, hi_t = tcfg.context_tokens
    hi_t = min(hi_t, max_tok)
    lo_t = min(lo_t, hi_t)
    state = AdamState()
    skip_decay = no_decay_names(w)
    curve = []
    for step in range(tcfg.max_steps):
        n_tok = int(rng.integers(lo_t, hi_t + 1))
        windows = sample_batch(series, n_tok * P, tcfg.batch_size, rng)
        windows = mixup(windows, tcfg.mixup_prob, rng)
        windows = rescale_aug(windows, tcfg.rescale_range, rng)
        if tcfg.flip_prob:
            windows = flip_aug(windows, tcfg.flip_prob, rng)
        batch = mask_batch(windows, P, tcfg, rng)
        for p in w.values():
            p.zero_grad()
        report = batch_loss(w, mcfg, *batch)
        loss = report.value
        if not math.isfinite(loss):
            if dump_dir is not None:
                np.savez(Path(dump_dir) / "diverged_batch.npz", windows=windows)
            raise TrainingDivergedError(f"non-finite loss at step {step}", batch=windows)
        report.total.backward()
        grads = {k: p.grad for k, p in w.items()}
        _clip(grads, tcfg.grad_clip)
        lr = lr_schedule(step + 1, tcfg)
        adamw_step(w, grads, state, lr, tcfg, skip_decay)
        curve.append((step, lr, loss))
        if callback is not None:
            callback(step, loss)
    if loss_csv is not None:
        write_loss_csv(loss_csv, curve)
    return Checkpoint(mcfg, {k: p.data.copy() for k, p in w.items()}, tcfg.max_steps, tcfg.seed,
                      tcfg.to_dict(), state if tcfg.max_steps else None, curve)


def write_loss_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "lr", "loss"])
        for step, lr, loss in curve:
            wr.writerow([step, repr(lr), repr(loss)])


def evaluate_masked(ckpt: Checkpoint, windows: np.ndarray, tcfg: TrainConfig, seed: int = 0) -> float:
    """WQL of a checkpoint on a fixed, seeded masking of ``windows``."""
    rng = np.random.default_rng(seed)
    batch = mask_batch(windows, ckpt.model_config.patch_len, tcfg, rng)
    with nc.no_grad():
        return batch_loss(ckpt.tensors(), ckpt.model_config, *batch).value
