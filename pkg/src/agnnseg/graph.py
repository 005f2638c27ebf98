"""Attention message passing over a fully connected frame graph.

Each node is a spatial feature grid.  One round computes, from the previous
round's states only (Jacobi semantics): a self-attention loop edge per node,
a bilinear line edge per node pair, row-softmax weighted neighbor messages,
per-channel confidence gates, a gated sum, and a convolutional GRU state
update.  All parameters are shared across nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor


@dataclass(frozen=True)
class GraphConfig:
    k_iters: int = 3
    n_nodes: int = 5
    channels: int = 32
    gated: bool = True

    def __post_init__(self):
        if self.k_iters < 1:
            raise ValueError(f"k_iters must be >= 1, got {self.k_iters}")
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")


@dataclass
class VideoGraph:
    """Ordered node states plus the run configuration; fully connected."""

    nodes: list
    config: GraphConfig = field(default_factory=GraphConfig)

    def __post_init__(self):
        if len(self.nodes) != self.config.n_nodes:
            raise ValueError(
                f"graph has {len(self.nodes)} nodes but config says {self.config.n_nodes}"
            )
        shapes = {n.shape for n in self.nodes}
        if len(shapes) != 1:
            raise ValueError(f"node states disagree on shape: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 3 or shape[2] != self.config.channels:
            raise ValueError(f"node state shape {shape} does not match config {self.config}")


def graph_from_states(states, k_iters=3, gated=True):
    """Convenience constructor: config inferred from the state list."""
    return VideoGraph(
        nodes=list(states),
        config=GraphConfig(
            k_iters=k_iters,
            n_nodes=len(states),
            channels=states[0].shape[2],
            gated=gated,
        ),
    )


@dataclass
class AttentionParams:
    """Shared learnable tensors for edges, gates, and the state update."""

    channels: int
    w_f: Tensor
    w_h: Tensor
    w_l: Tensor
    alpha: Tensor
    w_c: Tensor
    gate_w: Tensor
    gate_b: Tensor
    w_z: Tensor
    b_z: Tensor
    w_r: Tensor
    b_r: Tensor
    w_u: Tensor
    b_u: Tensor

    def named(self):
        return [
            ("attn.w_f", self.w_f),
            ("attn.w_h", self.w_h),
            ("attn.w_l", self.w_l),
            ("attn.alpha", self.alpha),
            ("attn.w_c", self.w_c),
            ("attn.gate.w", self.gate_w),
            ("attn.gate.b", self.gate_b),
            ("attn.gru.w_z", self.w_z),
            ("attn.gru.b_z", self.b_z),
            ("attn.gru.w_r", self.w_r),
            ("attn.gru.b_r", self.b_r),
            ("attn.gru.w_u", self.w_u),
            ("attn.gru.b_u", self.b_u),
        ]


def init_attention_params(channels, seed) -> AttentionParams:
    """Residual-friendly start: alpha = 0, near-identity pair similarity."""
    from .encoder import he_uniform

    rng = np.random.default_rng(seed)
    c = channels
    return AttentionParams(
        channels=c,
        w_f=Tensor(he_uniform(rng, (1, 1, c, c)), name="attn.w_f"),
        w_h=Tensor(he_uniform(rng, (1, 1, c, c)), name="attn.w_h"),
        w_l=Tensor(he_uniform(rng, (1, 1, c, c)), name="attn.w_l"),
        alpha=Tensor(0.0, name="attn.alpha"),
        w_c=Tensor(np.eye(c) + rng.uniform(-0.01, 0.01, size=(c, c)), name="attn.w_c"),
        gate_w=Tensor(he_uniform(rng, (1, 1, c, c)), name="attn.gate.w"),
        gate_b=Tensor(np.zeros(c), name="attn.gate.b"),
        w_z=Tensor(he_uniform(rng, (1, 1, 2 * c, c)), name="attn.gru.w_z"),
        b_z=Tensor(np.zeros(c), name="attn.gru.b_z"),
        w_r=Tensor(he_uniform(rng, (1, 1, 2 * c, c)), name="attn.gru.w_r"),
        b_r=Tensor(np.zeros(c), name="attn.gru.b_r"),
        w_u=Tensor(he_uniform(rng, (1, 1, 2 * c, c)), name="attn.gru.w_u"),
        b_u=Tensor(np.zeros(c), name="attn.gru.b_u"),
    )


def _flatten(h):
    hh, ww, c = h.shape
    return engine.reshape(h, (hh * ww, c))


def intra_attention(h, params: AttentionParams) -> Tensor:
    """Loop-edge embedding: residual self-attention over all grid positions.

    Query/key/value projections are 1x1 convs; the (HW, HW) similarity matrix
    is row-softmaxed, applied to the values, scaled by the learnable alpha,
    and added back onto the state.
    """
    hh, ww, c = h.shape
    q = _flatten(engine.conv2d(h, params.w_f))
    k = _flatten(engine.conv2d(h, params.w_h))
    v = _flatten(engine.conv2d(h, params.w_l))
    att = engine.row_softmax(engine.matmul(q, engine.transpose(k)))
    mixed = engine.reshape(engine.matmul(att, v), (hh, ww, c))
    return engine.add(engine.mul(mixed, params.alpha), h)


def inter_attention(h_i, h_j, w_c):
    """Line-edge pair: bilinear similarities between two nodes' positions.

    The two directions of a pair must be exact transposes of each other, and
    relabeling the nodes of a graph must relabel the edges; both hold only
    when the bilinear weight is symmetric, so the learnable matrix enters as
    (w_c + w_c^T) / 2.  Returns (e_ij, e_ji) with e_ji materialized as the
    exact transpose of e_ij.
    """
    if h_i.shape != h_j.shape:
        raise ValueError(f"node shapes differ: {h_i.shape} vs {h_j.shape}")
    w_sym = engine.scalar_scale(engine.add(w_c, engine.transpose(w_c)), 0.5)
    e_ij = engine.matmul(engine.matmul(_flatten(h_i), w_sym), engine.transpose(_flatten(h_j)))
    return e_ij, engine.transpose(e_ij)


def loop_message(e_ii: Tensor) -> Tensor:
    """The loop edge already carries context plus content; pass it through."""
    return e_ii


def neighbor_message(h_j, e_ij) -> Tensor:
    """Content of node j, mixed per-position by the row-softmaxed line edge."""
    hh, ww, c = h_j.shape
    n = hh * ww
    if e_ij.shape != (n, n):
        raise ValueError(f"edge shape {e_ij.shape} does not match {n} positions")
    mixed = engine.matmul(engine.row_softmax(e_ij), _flatten(h_j))
    return engine.reshape(mixed, (hh, ww, c))


def message_gate(m, params: AttentionParams) -> Tensor:
    """Per-channel confidence in (0, 1): 1x1 conv, average pool, sigmoid."""
    return engine.sigmoid(engine.global_avg_pool(engine.conv2d(m, params.gate_w, params.gate_b)))


def aggregate_messages(messages, gates) -> Tensor:
    """Gated sum of incoming messages, in ascending node-index order."""
    if len(messages) != len(gates):
        raise ValueError(f"{len(messages)} messages but {len(gates)} gates")
    if not messages:
        raise ValueError("no messages to aggregate")
    total = engine.channel_broadcast_mul(messages[0], gates[0])
    for msg, gate in zip(messages[1:], gates[1:]):
        total = engine.add(total, engine.channel_broadcast_mul(msg, gate))
    return total


def _sum_messages(messages) -> Tensor:
    total = messages[0]
    for msg in messages[1:]:
        total = engine.add(total, msg)
    return total


def convgru_update(h_prev, m, params: AttentionParams) -> Tensor:
    """Convolutional GRU: two sigmoid gates and a tanh candidate, 1x1 kernels.

    h' = (1 - z) * h_prev + z * tanh(W_u * [r * h_prev, m] + b_u), computed
    as h_prev + z * (candidate - h_prev).
    """
    if h_prev.shape != m.shape:
        raise ValueError(f"state {h_prev.shape} and message {m.shape} shapes differ")
    cat = engine.concat_channels(h_prev, m)
    z = engine.sigmoid(engine.conv2d(cat, params.w_z, params.b_z))
    r = engine.sigmoid(engine.conv2d(cat, params.w_r, params.b_r))
    cand = engine.tanh(engine.conv2d(engine.concat_channels(engine.mul(r, h_prev), m), params.w_u, params.b_u))
    return engine.add(h_prev, engine.mul(z, engine.add(cand, engine.scalar_scale(h_prev, -1.0))))


def propagate_round(graph: VideoGraph, params: AttentionParams) -> VideoGraph:
    """One message-passing round with Jacobi semantics.

    Every edge, message, and gate is computed from the incoming states; all
    nodes then update simultaneously.  Aggregation sums over senders in
    ascending node-index order.
    """
    states = graph.nodes
    n = len(states)
    loop_edges = [intra_attention(h, params) for h in states]
    line_edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            e_ij, e_ji = inter_attention(states[i], states[j], params.w_c)
            line_edges[(i, j)] = e_ij
            line_edges[(j, i)] = e_ji
    new_states = []
    for i in range(n):
        messages = [
            loop_message(loop_edges[i]) if j == i else neighbor_message(states[j], line_edges[(i, j)])
            for j in range(n)
        ]
        if graph.config.gated:
            gates = [message_gate(m, params) for m in messages]
            m_i = aggregate_messages(messages, gates)
        else:
            m_i = _sum_messages(messages)
        new_states.append(convgru_update(states[i], m_i, params))
    return VideoGraph(new_states, graph.config)


def run_graph(graph: VideoGraph, k_iters: int, params: AttentionParams):
    """Apply ``k_iters`` sequential rounds; returns the final node states."""
    if k_iters < 1:
        raise ValueError(f"k_iters must be >= 1, got {k_iters}")
    current = graph
    for _ in range(k_iters):
        current = propagate_round(current, params)
    return current.nodes
