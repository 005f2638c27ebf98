"""Full model assembly: shared parameters and clip-level forward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import head as head_mod
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder
from .engine import Tensor
from .graph import AttentionParams, graph_from_states, init_attention_params, run_graph
from .head import AuxParams, ReadoutParams, init_aux, init_readout, weighted_bce


class CheckpointMismatchError(ValueError):
    """Checkpoint contents do not describe a loadable model."""


@dataclass
class ModelParameters:
    """Every learnable tensor, shared across all nodes and frames."""

    encoder: EncoderParams
    attention: AttentionParams
    readout: ReadoutParams
    aux: AuxParams

    @property
    def channels(self):
        return self.encoder.config.channels

    @property
    def downsample(self):
        return self.encoder.config.downsample

    def named_tensors(self):
        return (
            self.encoder.named()
            + self.attention.named()
            + self.readout.named()
            + self.aux.named()
        )


def init_model(channels=32, downsample=4, seed=0) -> ModelParameters:
    """Deterministic initialization; component seeds derive from one seed."""
    seeds = np.random.SeedSequence(seed).generate_state(4)
    config = EncoderConfig(channels=channels, downsample=downsample)
    return ModelParameters(
        encoder=init_encoder(config, int(seeds[0])),
        attention=init_attention_params(channels, int(seeds[1])),
        readout=init_readout(channels, int(seeds[2])),
        aux=init_aux(channels, int(seeds[3])),
    )


def encode_frames(frames, params: ModelParameters):
    """Initial node states for a list of frames (arrays or tensors)."""
    return [encode(f, params.encoder) for f in frames]


def predict_clip(frames, params: ModelParameters, k_iters=3, gated=True):
    """Masks for a clip: encode, run the graph, read out every node.

    Returns (probability maps, initial embeddings, final states); the maps
    are tensors at feature resolution with values in [0, 1].
    """
    embeddings = encode_frames(frames, params)
    g = graph_from_states(embeddings, k_iters=k_iters, gated=gated)
    finals = run_graph(g, k_iters, params.attention)
    masks = [head_mod.readout(h, v, params.readout) for h, v in zip(finals, embeddings)]
    return masks, embeddings, finals


def clip_loss(frames, grid_masks, params: ModelParameters, k_iters=3, gated=True):
    """Per-frame weighted BCE against grid-resolution binary masks."""
    preds, _, _ = predict_clip(frames, params, k_iters=k_iters, gated=gated)
    return [weighted_bce(gt, pred) for gt, pred in zip(grid_masks, preds)]


def static_loss(images, grid_masks, params: ModelParameters):
    """Auxiliary-head losses for single images, bypassing the graph."""
    stats = []
    for image, gt in zip(images, grid_masks):
        v = encode(image, params.encoder)
        pred = head_mod.aux_static_predict(v, params.aux)
        stats.append(weighted_bce(gt, pred))
    return stats


def save_model(path, params: ModelParameters, k_iters=3):
    """Write all named tensors plus the hyperparameters inference needs."""
    named = [(name, t.data) for name, t in params.named_tensors()]
    meta = {
        "channels": params.channels,
        "downsample": params.downsample,
        "k_iters": k_iters,
    }
    ckpt.write_checkpoint(path, named, meta)


def load_model(path):
    """Rebuild ModelParameters from a checkpoint; returns (params, meta)."""
    tensors, meta = ckpt.read_checkpoint(path)
    for key in ("channels", "downsample", "k_iters"):
        if key not in meta:
            raise CheckpointMismatchError(f"{path}: missing meta.{key} record")
    channels = int(meta["channels"])
    downsample = int(meta["downsample"])
    try:
        params = init_model(channels=channels, downsample=downsample, seed=0)
    except ValueError as exc:
        raise CheckpointMismatchError(f"{path}: {exc}") from exc
    expected = params.named_tensors()
    missing = [name for name, _ in expected if name not in tensors]
    if missing:
        raise CheckpointMismatchError(f"{path}: missing tensors {missing}")
    extra = sorted(set(tensors) - {name for name, _ in expected})
    if extra:
        raise CheckpointMismatchError(f"{path}: unexpected tensors {extra}")
    for name, tensor in expected:
        stored = tensors[name]
        if stored.shape != tensor.data.shape:
            raise CheckpointMismatchError(
                f"{path}: tensor {name} has shape {stored.shape}, expected {tensor.data.shape}"
            )
        tensor.data = stored.copy()
    return params, meta
