"""Trainable score model: a small gated recurrent history encoder feeding a
one-hidden-layer head, fit by denoising score matching with hand-derived
reverse-mode gradients.  Everything is plain numpy and deterministic for a
fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .events import Domain, EventStream, TransformedEvent, local_history_indices, transform_event

HIDDEN_DEFAULT = 8
FF_DEFAULT = 64
HISTORY_MAX = 32
N_FEATURES = 3  # per history event: compressed lag, planar offsets
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite or runs away."""


LOSS_RUNAWAY = 1e12


@dataclass(frozen=True)
class DSMConfig:
    sigma: float = 0.02
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


PARAM_NAMES = ("wz", "uz", "bz", "wh", "uh", "bh", "w1", "b1", "w2", "b2")


@dataclass
class NetWeights:
    """Gated-cell encoder and feed-forward head parameters."""

    wz: np.ndarray
    uz: np.ndarray
    bz: np.ndarray
    wh: np.ndarray
    uh: np.ndarray
    bh: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def hidden_width(self) -> int:
        return self.wz.shape[0]

    @property
    def ff_width(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = HIDDEN_DEFAULT,
             ff: int = FF_DEFAULT) -> "NetWeights":
        def mat(rows, cols):
            return rng.standard_normal((rows, cols)) / np.sqrt(cols)

        return cls(
            wz=mat(hidden, N_FEATURES), uz=mat(hidden, hidden), bz=np.zeros(hidden),
            wh=mat(hidden, N_FEATURES), uh=mat(hidden, hidden), bh=np.zeros(hidden),
            w1=mat(ff, hidden + 3), b1=np.zeros(ff),
            w2=0.01 * mat(3, ff), b2=np.zeros(3),
        )

    def copy(self) -> "NetWeights":
        return NetWeights(**{k: getattr(self, k).copy() for k in PARAM_NAMES})

    def as_list(self):
        return [getattr(self, k) for k in PARAM_NAMES]

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "hidden_width": self.hidden_width,
            "ff_width": self.ff_width,
            "layers": {k: {"shape": list(getattr(self, k).shape),
                           "data": getattr(self, k).ravel().tolist()}
                       for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetWeights":
        if d.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint format version")
        layers = {}
        for k in PARAM_NAMES:
            spec = d["layers"][k]
            layers[k] = np.asarray(spec["data"], dtype=float).reshape(spec["shape"])
        return cls(**layers)


def _sigmoid(x):
    # clipped for overflow safety; saturation is exact past +-60 anyway
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def history_features(t_event: float, hist_t: np.ndarray, hist_s: np.ndarray) -> np.ndarray:
    """Encoder inputs for one event's in-ball history, oldest first.

    Lags are anchored at the last history event and log-compressed; offsets
    are relative to the last history location, so the context never moves
    when the current event's own coordinates are perturbed.
    """
    m = len(hist_t)
    if m == 0:
        return np.empty((0, N_FEATURES))
    t_n = hist_t[-1]
    ref = hist_s[-1]
    return np.column_stack([
        np.log1p(t_n - hist_t),
        hist_s[:, 0] - ref[0],
        hist_s[:, 1] - ref[1],
    ])


def _forward_batch(w: NetWeights, seq: np.ndarray, mask: np.ndarray,
                   x_feats: np.ndarray, want_cache: bool = False):
    """Batched forward pass.

    seq: (B, M, F) history features padded at the front, mask: (B, M) with 1
    on real steps, x_feats: (B, 3) current-event inputs.
    """
    B, M, _ = seq.shape
    H = w.hidden_width
    h = np.zeros((B, H))
    cache = [] if want_cache else None
    for t in range(M):
        u = seq[:, t, :]
        m = mask[:, t][:, None]
        z = _sigmoid(u @ w.wz.T + h @ w.uz.T + w.bz)
        hc = np.tanh(u @ w.wh.T + h @ w.uh.T + w.bh)
        h_new = (1.0 - z) * h + z * hc
        if want_cache:
            cache.append((h.copy(), z, hc, u, m))
        h = m * h_new + (1.0 - m) * h
    inp = np.concatenate([h, x_feats], axis=1)
    a1 = np.tanh(inp @ w.w1.T + w.b1)
    f = a1 @ w.w2.T + w.b2
    if want_cache:
        return f, (cache, h, inp, a1)
    return f


def _backward_batch(w: NetWeights, df: np.ndarray, cache_pack) -> dict:
    cache, h_final, inp, a1 = cache_pack
    grads = {k: np.zeros_like(getattr(w, k)) for k in PARAM_NAMES}
    grads["w2"] = df.T @ a1
    grads["b2"] = df.sum(axis=0)
    da1 = df @ w.w2
    dz1 = da1 * (1.0 - a1 * a1)
    grads["w1"] = dz1.T @ inp
    grads["b1"] = dz1.sum(axis=0)
    dinp = dz1 @ w.w1
    H = w.hidden_width
    dh = dinp[:, :H]
    for t in range(len(cache) - 1, -1, -1):
        h_prev, z, hc, u, m = cache[t]
        dh_new = dh * m
        dh_carry = dh * (1.0 - m)
        dz = dh_new * (hc - h_prev)
        dhc = dh_new * z
        dh_prev = dh_new * (1.0 - z)
        dz_pre = dz * z * (1.0 - z)
        dhc_pre = dhc * (1.0 - hc * hc)
        grads["wz"] += dz_pre.T @ u
        grads["uz"] += dz_pre.T @ h_prev
        grads["bz"] += dz_pre.sum(axis=0)
        grads["wh"] += dhc_pre.T @ u
        grads["uh"] += dhc_pre.T @ h_prev
        grads["bh"] += dhc_pre.sum(axis=0)
        dh = dh_prev + dh_carry + dz_pre @ w.uz + dhc_pre @ w.uh
    return grads


@dataclass
class NeuralScoreModel:
    """Score model backed by trained network weights."""

    weights: NetWeights
    delta: float

    kind = "neural"

    def score(self, xt: TransformedEvent, hist_t, hist_s, domain: Domain) -> np.ndarray:
        hist_t = np.asarray(hist_t, dtype=float)
        hist_s = np.asarray(hist_s, dtype=float).reshape(-1, 2)
        if len(hist_t) > HISTORY_MAX:
            hist_t = hist_t[-HISTORY_MAX:]
            hist_s = hist_s[-HISTORY_MAX:]
        feats = history_features(float(hist_t[-1]) if len(hist_t) else 0.0, hist_t, hist_s)
        seq = np.zeros((1, HISTORY_MAX, N_FEATURES))
        mask = np.zeros((1, HISTORY_MAX))
        m = len(feats)
        if m:
            seq[0, HISTORY_MAX - m:, :] = feats
            mask[0, HISTORY_MAX - m:] = 1.0
        x = np.array([[xt.dt, xt.s1, xt.s2]])
        return _forward_batch(self.weights, seq, mask, x)[0]

    def copy(self) -> "NeuralScoreModel":
        return NeuralScoreModel(weights=self.weights.copy(), delta=self.delta)

    def save(self, path) -> None:
        d = self.weights.to_dict()
        d["delta"] = self.delta
        with open(path, "w") as fh:
            json.dump(d, fh)

    @classmethod
    def load(cls, path) -> "NeuralScoreModel":
        with open(path) as fh:
            d = json.load(fh)
        return cls(weights=NetWeights.from_dict(d), delta=float(d["delta"]))


@dataclass
class TrainingSet:
    """Transformed events with fixed history contexts, ready for batching."""

    seq: np.ndarray     # (N, M, F)
    mask: np.ndarray    # (N, M)
    x: np.ndarray       # (N, 3): dt, s1, s2

    def __len__(self):
        return len(self.x)


def build_training_set(streams, delta: float) -> TrainingSet:
    if isinstance(streams, EventStream):
        streams = [streams]
    rows_x, rows_seq, rows_mask = [], [], []
    for stream in streams:
        for i in range(len(stream)):
            xt = transform_event(stream, i, delta)
            idx = local_history_indices(stream, i, delta, max_events=HISTORY_MAX)
            feats = history_features(float(stream.t[idx[-1]]) if len(idx) else 0.0,
                                     stream.t[idx], stream.s[idx])
            seq = np.zeros((HISTORY_MAX, N_FEATURES))
            mask = np.zeros(HISTORY_MAX)
            m = len(feats)
            if m:
                seq[HISTORY_MAX - m:, :] = feats
                mask[HISTORY_MAX - m:] = 1.0
            rows_x.append([xt.dt, xt.s1, xt.s2])
            rows_seq.append(seq)
            rows_mask.append(mask)
    if not rows_x:
        raise ValueError("training data is empty")
    return TrainingSet(seq=np.asarray(rows_seq), mask=np.asarray(rows_mask),
                       x=np.asarray(rows_x))


class _Adam:
    """Adam with cosine decay; the schedule makes the noisy denoising
    targets average out instead of keeping the weights jittering."""

    def __init__(self, params: NetWeights, lr: float, total_steps: Optional[int] = None):
        self.lr = lr
        self.total_steps = total_steps
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = {k: np.zeros_like(getattr(params, k)) for k in PARAM_NAMES}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in PARAM_NAMES}
        self.t = 0

    def _rate(self) -> float:
        if not self.total_steps:
            return self.lr
        frac = min(self.t / self.total_steps, 1.0)
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def step(self, params: NetWeights, grads: dict) -> None:
        self.t += 1
        lr_t = self._rate()
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            upd = lr_t * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)
            getattr(params, k)[...] -= upd


def dsm_gradient_step(model: NeuralScoreModel, tset: TrainingSet, idx: np.ndarray,
                      sigma: float, rng: np.random.Generator,
                      opt: _Adam) -> float:
    """One stochastic step on the denoising objective; returns batch loss."""
    w = model.weights
    xb = tset.x[idx]
    eps = rng.normal(0.0, sigma, size=xb.shape)
    xp = xb + eps
    xp[:, 0] = np.maximum(xp[:, 0], 0.0)  # inter-arrival stays nonnegative
    target = -eps / sigma ** 2
    f, cache = _forward_batch(w, tset.seq[idx], tset.mask[idx], xp, want_cache=True)
    resid = f - target
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    df = 2.0 * resid / len(idx)
    grads = _backward_batch(w, df, cache)
    opt.step(w, grads)
    return loss


def train_score_model(streams, delta: float, cfg: DSMConfig,
                      hidden: int = HIDDEN_DEFAULT, ff: int = FF_DEFAULT):
    """Fit a neural score model by stochastic denoising score matching.

    Returns the trained model and the per-epoch mean loss trace.
    """
    tset = build_training_set(streams, delta)
    rng = np.random.default_rng(cfg.seed)
    weights = NetWeights.init(rng, hidden=hidden, ff=ff)
    model = NeuralScoreModel(weights=weights, delta=delta)
    n = len(tset)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    opt = _Adam(weights, cfg.learning_rate, total_steps=cfg.epochs * steps_per_epoch)
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            losses.append(dsm_gradient_step(model, tset, idx, cfg.sigma, rng, opt))
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss) or epoch_loss > LOSS_RUNAWAY:
            raise TrainingDivergedError(
                "training loss diverged; try a smaller learning_rate")
        trace.append(epoch_loss)
    return model, trace


def write_loss_trace(trace, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v!r}\n")
