"""Training, test-time scheduling, co-segmentation inference, and evaluation.

Training alternates static-image iterations (auxiliary head on single
synthetic scenes) with dynamic-video iterations (full graph loss on sampled
clips), both driving plain SGD with momentum.  Test videos are split into
strided frame subsets that partition the video; each subset runs as one
graph.  Co-segmentation chains graph runs, carrying the target image's raw
node state from group to group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import head as head_mod
from . import metrics
from .engine import NonFiniteError, Tape, Tensor, backward
from .graph import graph_from_states, run_graph
from .head import mean_loss
from .model import (
    ModelParameters,
    clip_loss,
    encode_frames,
    init_model,
    static_loss,
)
from .synthdata import (
    DatasetManifest,
    downsample_mask,
    load_manifest,
    load_video,
    render_static_scene,
    sample_training_clip,
)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter update."""

    def __init__(self, iteration, message):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    videos_per_batch: int = 2
    n_prime: int = 3
    k_iters: int = 3
    lr: float = 1e-3
    momentum: float = 0.9
    iterations: int = 2000
    alternation: bool = True
    gated: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.videos_per_batch, self.n_prime, self.k_iters, self.iterations) < 1:
            raise ValueError("videos_per_batch, n_prime, k_iters, iterations must be >= 1")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr >= 0 and momentum in [0, 1)")


@dataclass
class TrainResult:
    params: ModelParameters
    losses: list


class SGD:
    """Plain momentum SGD over named tensors; no weight decay."""

    def __init__(self, named_tensors, lr, momentum):
        self.named = list(named_tensors)
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.named}

    def step(self, grads):
        for name, tensor in self.named:
            v = self.momentum * self.velocity[name] - self.lr * grads[tensor]
            self.velocity[name] = v
            tensor.data = tensor.data + v


def _grid_targets(masks, downsample):
    return [downsample_mask(m, downsample) for m in masks]


def dynamic_batch_loss(batch, params, config: TrainConfig):
    """Mean frame loss over one graph per video in the batch."""
    stats = []
    for frames, grid_masks in batch:
        stats.extend(clip_loss(frames, grid_masks, params, k_iters=config.k_iters, gated=config.gated))
    return mean_loss(stats)


def static_batch_loss(scenes, params):
    return mean_loss(static_loss([s[0] for s in scenes], [s[1] for s in scenes], params))


def train(dataset, config: TrainConfig, channels=32, downsample=4, params=None):
    """Optimize the model on a dataset's train split.

    ``dataset`` is a DatasetManifest or a path to one.  Static and dynamic
    iterations alternate (static on even steps) unless alternation is off.
    Returns the trained parameters and one loss value per iteration; raises
    DivergenceError the moment anything goes non-finite.
    """
    manifest = dataset if isinstance(dataset, DatasetManifest) else load_manifest(dataset)
    entries = manifest.split("train")
    if len(entries) < config.videos_per_batch:
        raise ValueError(
            f"train split has {len(entries)} videos, need >= {config.videos_per_batch}"
        )
    videos = [load_video(manifest, e) for e in entries]
    canvas = videos[0][0].shape[1]
    if canvas % downsample:
        raise ValueError(f"canvas {canvas} not divisible by downsample factor {downsample}")
    grid_targets = [_grid_targets(masks, downsample) for _, masks in videos]

    if params is None:
        params = init_model(channels=channels, downsample=downsample, seed=config.seed)
    optimizer = SGD(params.named_tensors(), config.lr, config.momentum)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 17)))

    losses = []
    batch_images = config.videos_per_batch * config.n_prime
    for iteration in range(config.iterations):
        is_static = config.alternation and iteration % 2 == 0
        try:
            # overflow on divergence is detected via NonFiniteError, not warnings
            with np.errstate(over="ignore", invalid="ignore"), Tape() as tape:
                if is_static:
                    scenes = []
                    for _ in range(batch_images):
                        frame, mask, _ = render_static_scene(canvas, int(rng.integers(2**63)))
                        scenes.append((frame, downsample_mask(mask, downsample)))
                    loss = static_batch_loss(scenes, params)
                else:
                    picks = rng.choice(len(videos), size=config.videos_per_batch, replace=False)
                    batch = []
                    for vi in picks:
                        frames, _ = videos[vi]
                        indices = sample_training_clip(list(range(len(frames))), config.n_prime, rng)
                        batch.append(
                            ([frames[t] for t in indices], [grid_targets[vi][t] for t in indices])
                        )
                    loss = dynamic_batch_loss(batch, params, config)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(iteration, f"loss is {value}")
            grads = backward(tape, np.ones(()))
            optimizer.step(grads)
        except NonFiniteError as exc:
            raise DivergenceError(iteration, str(exc)) from exc
        losses.append(value)
    return TrainResult(params=params, losses=losses)


# ---------------------------------------------------------------------------
# inference scheduling


@dataclass
class InferenceSchedule:
    """Strided subsets I_t = {t, t+T, t+2T, ...} with T = ceil(N / N')."""

    num_frames: int
    n_prime: int
    stride: int = field(init=False)
    subsets: list = field(init=False)

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("schedule needs at least one frame")
        if self.n_prime < 1:
            raise ValueError("n_prime must be >= 1")
        self.stride = -(-self.num_frames // self.n_prime)
        self.subsets = [
            list(range(t, self.num_frames, self.stride)) for t in range(self.stride)
        ]


def infer_video(frames, params: ModelParameters, n_prime=5, k_iters=3, gated=True):
    """Per-frame foreground probability maps, one strided subset at a time.

    Each subset becomes a graph (the last ones may hold fewer than n_prime
    nodes); masks come back in original frame order as float arrays at
    feature-grid resolution.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("cannot run inference on an empty video")
    schedule = InferenceSchedule(len(frames), n_prime)
    out = [None] * len(frames)
    for subset in schedule.subsets:
        embeddings = encode_frames([frames[t] for t in subset], params)
        finals = run_graph(graph_from_states(embeddings, k_iters=k_iters, gated=gated),
                           k_iters, params.attention)
        for t, h, v in zip(subset, finals, embeddings):
            out[t] = head_mod.readout(h, v, params.readout).data
    return out


def iocs_infer(images, target_index, params: ModelParameters, n_prime=3, k_iters=3, gated=True):
    """Co-segmentation of one image against the rest of its group.

    The other images are split in dataset order into ceil((N-1)/(n_prime-1))
    near-equal groups; each group joins the target's carried node state in a
    fresh graph, and the target's raw state (no readout in between) seeds the
    next run.  Returns the target's foreground probability map.
    """
    images = list(images)
    n = len(images)
    if not 0 <= target_index < n:
        raise ValueError(f"target index {target_index} outside 0..{n - 1}")
    (v_target,) = encode_frames([images[target_index]], params)
    others = [i for i in range(n) if i != target_index]
    state = v_target
    if others:
        if n_prime < 2:
            raise ValueError("n_prime must be >= 2 when the group has other images")
        groups = _near_equal_chunks(others, per_group=n_prime - 1)
        for group in groups:
            embeddings = encode_frames([images[i] for i in group], params)
            nodes = [state] + embeddings
            finals = run_graph(graph_from_states(nodes, k_iters=k_iters, gated=gated),
                               k_iters, params.attention)
            state = finals[0]
    else:
        finals = run_graph(graph_from_states([state], k_iters=k_iters, gated=gated),
                           k_iters, params.attention)
        state = finals[0]
    return head_mod.readout(state, v_target, params.readout).data


def _near_equal_chunks(items, per_group):
    count = -(-len(items) // per_group)
    base, rem = divmod(len(items), count)
    sizes = [base + 1] * rem + [base] * (count - rem)
    chunks = []
    start = 0
    for size in sizes:
        chunks.append(items[start : start + size])
        start += size
    return chunks


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    rows: list  # (video_id, mean_j, mean_f)
    mean_j: float
    mean_f: float


def evaluate(dataset, params: ModelParameters, split="test", n_prime=5, k_iters=3,
             gated=True, threshold=0.5):
    """Mean region and boundary agreement per video and across a split.

    Predictions are binarized at the sigmoid midpoint and compared at
    feature-grid resolution against majority-downsampled ground truth.
    """
    manifest = dataset if isinstance(dataset, DatasetManifest) else load_manifest(dataset)
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    d = params.downsample
    rows = []
    for entry in entries:
        frames, masks = load_video(manifest, entry)
        probs = infer_video(list(frames), params, n_prime=n_prime, k_iters=k_iters, gated=gated)
        js, fs = [], []
        for prob, mask in zip(probs, masks):
            pred = prob > threshold
            gt = downsample_mask(mask, d)
            js.append(metrics.region_similarity(pred, gt))
            fs.append(metrics.boundary_f(pred, gt))
        rows.append((entry.video_id, float(np.mean(js)), float(np.mean(fs))))
    return EvalReport(
        rows=rows,
        mean_j=float(np.mean([r[1] for r in rows])),
        mean_f=float(np.mean([r[2] for r in rows])),
    )
