"""Readout to segmentation maps, the class-balanced loss, and the static head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .encoder import he_uniform
from .engine import Tensor

LOG_CLAMP = 1e-12


@dataclass
class ReadoutParams:
    """Two 3x3 conv layers with relu, then a 1x1 conv with sigmoid."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    proj_w: Tensor
    proj_b: Tensor

    def named(self):
        return [
            ("readout.conv1.w", self.conv1_w),
            ("readout.conv1.b", self.conv1_b),
            ("readout.conv2.w", self.conv2_w),
            ("readout.conv2.b", self.conv2_b),
            ("readout.proj.w", self.proj_w),
            ("readout.proj.b", self.proj_b),
        ]


@dataclass
class AuxParams:
    """Single 1x1 conv + sigmoid reading a mask straight off the embedding."""

    w: Tensor
    b: Tensor

    def named(self):
        return [("aux.w", self.w), ("aux.b", self.b)]


@dataclass
class LossStats:
    """A scalar loss tensor plus the foreground ratio that weighted it."""

    loss: Tensor
    eta: float

    @property
    def value(self) -> float:
        return float(self.loss.data)


def init_readout(channels, seed) -> ReadoutParams:
    rng = np.random.default_rng(seed)
    c = channels
    return ReadoutParams(
        conv1_w=Tensor(he_uniform(rng, (3, 3, 2 * c, c)), name="readout.conv1.w"),
        conv1_b=Tensor(np.zeros(c), name="readout.conv1.b"),
        conv2_w=Tensor(he_uniform(rng, (3, 3, c, c)), name="readout.conv2.w"),
        conv2_b=Tensor(np.zeros(c), name="readout.conv2.b"),
        proj_w=Tensor(he_uniform(rng, (1, 1, c, 1)), name="readout.proj.w"),
        proj_b=Tensor(np.zeros(1), name="readout.proj.b"),
    )


def init_aux(channels, seed) -> AuxParams:
    rng = np.random.default_rng(seed)
    return AuxParams(
        w=Tensor(he_uniform(rng, (1, 1, channels, 1)), name="aux.w"),
        b=Tensor(np.zeros(1), name="aux.b"),
    )


def readout(h_final, v, params: ReadoutParams) -> Tensor:
    """Per-pixel foreground probability from [final state, initial embedding]."""
    if h_final.shape != v.shape:
        raise ValueError(f"state shapes differ: {h_final.shape} vs {v.shape}")
    x = engine.concat_channels(h_final, v)
    x = engine.relu(engine.conv2d(x, params.conv1_w, params.conv1_b))
    x = engine.relu(engine.conv2d(x, params.conv2_w, params.conv2_b))
    logits = engine.conv2d(x, params.proj_w, params.proj_b)
    probs = engine.sigmoid(logits)
    return engine.reshape(probs, probs.shape[:2])


def aux_static_predict(v, params: AuxParams) -> Tensor:
    """Mask prediction straight from the embedding, bypassing the graph."""
    probs = engine.sigmoid(engine.conv2d(v, params.w, params.b))
    return engine.reshape(probs, probs.shape[:2])


def foreground_ratio(target) -> float:
    """Foreground fraction of a binary mask, clamped away from 0 and 1."""
    arr = np.asarray(target, dtype=float)
    total = arr.size
    ratio = float(arr.sum()) / total
    return float(np.clip(ratio, 1.0 / total, 1.0 - 1.0 / total))


def weighted_bce(target, pred: Tensor) -> LossStats:
    """Class-balanced binary cross entropy, summed over pixels.

    The foreground term carries weight (1 - eta) and the background term
    eta, with eta the clamped foreground fraction of the binary target.
    Log arguments are clamped at 1e-12.
    """
    arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=float)
    if arr.shape != pred.shape:
        raise ValueError(f"target shape {arr.shape} does not match prediction {pred.shape}")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("ground-truth mask must be binary")
    eta = foreground_ratio(arr)
    loss = engine.weighted_bce(pred, arr, eta=eta, clamp=LOG_CLAMP)
    return LossStats(loss=loss, eta=eta)


def mean_loss(stats) -> Tensor:
    """Arithmetic mean of per-frame losses (the batch reduction)."""
    stats = list(stats)
    if not stats:
        raise ValueError("no losses to average")
    total = stats[0].loss
    for s in stats[1:]:
        total = engine.add(total, s.loss)
    return engine.scalar_scale(total, 1.0 / len(stats))
