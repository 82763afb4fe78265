"""Graph-attention layer on small dense tensors: scoring, neighborhood
softmax, attention-weighted aggregation, and exact reverse-mode gradients,
with a central-difference oracle for verification.

Score for a node u and in-neighbor v (edge v->u, feature e; global vector g):

    eta(u, v) = a . leaky_relu(x_u W_u + x_v W_v + e W_e + g W_g)

Self pairs (u, u) participate in every softmax with a zero edge feature.
Aggregation:

    out_u = alpha_uu (x_u W_s) + sum_v alpha_uv (x_v W_t)

All arithmetic is float64. Reductions that merge per-node or per-graph
contributions accumulate in ascending-value order, which makes forward
outputs bit-identical under any node relabeling (the summand multisets are
permutation-invariant, so a value-canonical order is too).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class LayerDims:
    d_in: int
    d_out: int
    d_attn: int
    d_edge: int = 1
    d_global: int = 3


@dataclass(frozen=True)
class GatLayerParams:
    """Trainable tensors of one attention layer (see module formula)."""

    a: np.ndarray  # (d_attn,)
    w_u: np.ndarray  # (d_in, d_attn)
    w_v: np.ndarray  # (d_in, d_attn)
    w_e: np.ndarray  # (d_edge, d_attn)
    w_g: np.ndarray  # (d_global, d_attn)
    w_s: np.ndarray  # (d_in, d_out)
    w_t: np.ndarray  # (d_in, d_out)
    dims: LayerDims

    def __post_init__(self):
        d = self.dims
        expected = {
            "a": (d.d_attn,),
            "w_u": (d.d_in, d.d_attn),
            "w_v": (d.d_in, d.d_attn),
            "w_e": (d.d_edge, d.d_attn),
            "w_g": (d.d_global, d.d_attn),
            "w_s": (d.d_in, d.d_out),
            "w_t": (d.d_in, d.d_out),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    def tensors(self) -> dict:
        return {
            "a": self.a,
            "w_u": self.w_u,
            "w_v": self.w_v,
            "w_e": self.w_e,
            "w_g": self.w_g,
            "w_s": self.w_s,
            "w_t": self.w_t,
        }


@dataclass(frozen=True)
class DirectedGraphBatch:
    """One directed graph prepared for a layer pass.

    Neighborhoods follow incoming edges: node u aggregates over
    {v | (v, u) in E} plus itself. The support-pair arrays list every
    (target u, source v) pair: first the N self pairs, then one pair per
    edge; `pair_edge` holds -1 for self pairs, else the edge row.
    """

    node_features: np.ndarray  # (N, d_in)
    edge_src: np.ndarray  # (E,)
    edge_dst: np.ndarray  # (E,)
    edge_features: np.ndarray  # (E, d_edge)
    global_features: np.ndarray  # (d_global,)
    pair_u: np.ndarray  # (N + E,)
    pair_v: np.ndarray  # (N + E,)
    pair_edge: np.ndarray  # (N + E,)

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def with_node_features(self, x: np.ndarray) -> "DirectedGraphBatch":
        return DirectedGraphBatch(
            x,
            self.edge_src,
            self.edge_dst,
            self.edge_features,
            self.global_features,
            self.pair_u,
            self.pair_v,
            self.pair_edge,
        )


def make_batch(node_features, edge_src, edge_dst, edge_features, global_features) -> DirectedGraphBatch:
    node_features = np.asarray(node_features, dtype=np.float64)
    edge_src = np.asarray(edge_src, dtype=np.int64)
    edge_dst = np.asarray(edge_dst, dtype=np.int64)
    edge_features = np.asarray(edge_features, dtype=np.float64).reshape(len(edge_src), -1)
    global_features = np.asarray(global_features, dtype=np.float64)
    n = node_features.shape[0]
    if len(edge_src) and (edge_src.min() < 0 or edge_src.max() >= n or edge_dst.min() < 0 or edge_dst.max() >= n):
        raise ValueError("edge endpoint out of range")
    arange = np.arange(n, dtype=np.int64)
    pair_u = np.concatenate([arange, edge_dst])
    pair_v = np.concatenate([arange, edge_src])
    pair_edge = np.concatenate(
        [np.full(n, -1, dtype=np.int64), np.arange(len(edge_src), dtype=np.int64)]
    )
    return DirectedGraphBatch(
        node_features, edge_src, edge_dst, edge_features, global_features, pair_u, pair_v, pair_edge
    )


def batch_from_observation(obs) -> DirectedGraphBatch:
    return make_batch(
        obs.node_features, obs.edge_src, obs.edge_dst, obs.edge_features, obs.global_features
    )


@dataclass
class LayerCache:
    """Forward intermediates needed to reproduce the pass exactly."""

    x: np.ndarray  # layer input (N, d_in)
    slope_mask: np.ndarray  # (P, d_attn) leaky-relu derivative factors
    hidden: np.ndarray  # (P, d_attn) post-activation score features
    alpha: np.ndarray  # (P,) attention weights
    xs: np.ndarray  # (N, d_out) x @ w_s
    xt: np.ndarray  # (N, d_out) x @ w_t


def ordered_segment_sum(values: np.ndarray, segments: np.ndarray, n: int) -> np.ndarray:
    """Per-segment sums reduced in ascending-value order (a canonical order,
    therefore invariant to any reordering of the contributions).

    Every segment 0..n-1 must be non-empty; layer supports satisfy this
    because each node carries a self pair.
    """
    values = np.asarray(values)
    starts = np.arange(n)
    if values.ndim == 1:
        order = np.lexsort((values, segments))
        bounds = np.searchsorted(segments[order], starts)
        return np.add.reduceat(values[order], bounds)
    d = values.shape[1]
    flat = values.T.reshape(-1)
    seg_flat = (np.arange(d)[:, None] * n + segments[None, :]).reshape(-1)
    order = np.lexsort((flat, seg_flat))
    bounds = np.searchsorted(seg_flat[order], np.arange(n * d))
    return np.add.reduceat(flat[order], bounds).reshape(d, n).T


def ordered_sum(values: np.ndarray) -> float:
    """Scalar sum over the ascending-value ordering of the inputs."""
    return float(np.sort(np.asarray(values, dtype=np.float64), kind="stable").sum())


def _segment_max(values: np.ndarray, segments: np.ndarray, n: int) -> np.ndarray:
    out = np.full(n, -np.inf, dtype=np.float64)
    np.maximum.at(out, segments, values)
    return out


def attention_scores(p: GatLayerParams, g: DirectedGraphBatch):
    """Raw scores eta for every support pair, plus backward intermediates."""
    x = g.node_features
    if x.shape[1] != p.dims.d_in:
        raise ValueError(f"node feature dim {x.shape[1]} != layer d_in {p.dims.d_in}")
    if g.edge_features.shape[1] != p.dims.d_edge:
        raise ValueError(f"edge feature dim {g.edge_features.shape[1]} != layer d_edge {p.dims.d_edge}")
    if g.global_features.shape[0] != p.dims.d_global:
        raise ValueError(
            f"global feature dim {g.global_features.shape[0]} != layer d_global {p.dims.d_global}"
        )
    proj_u = x @ p.w_u
    proj_v = x @ p.w_v
    proj_g = g.global_features @ p.w_g
    pre = proj_u[g.pair_u] + proj_v[g.pair_v] + proj_g
    if g.edge_features.shape[0]:
        # Edge pairs occupy the tail of the support arrays, in edge order.
        pre[g.n_nodes :] += g.edge_features @ p.w_e
    slope_mask = np.where(pre > 0.0, 1.0, LEAKY_SLOPE)
    hidden = pre * slope_mask  # leaky relu
    scores = hidden @ p.a
    return scores, hidden, slope_mask


def attention_softmax(scores: np.ndarray, g: DirectedGraphBatch) -> np.ndarray:
    """Per-node softmax over each support (neighbors plus self), stabilized by
    subtracting the per-node max."""
    n = g.n_nodes
    shift = scores - _segment_max(scores, g.pair_u, n)[g.pair_u]
    expd = np.exp(shift)
    denom = ordered_segment_sum(expd, g.pair_u, n)
    return expd / denom[g.pair_u]


def gat_layer_forward(p: GatLayerParams, g: DirectedGraphBatch):
    scores, hidden, slope_mask = attention_scores(p, g)
    alpha = attention_softmax(scores, g)
    x = g.node_features
    xs = x @ p.w_s
    xt = x @ p.w_t
    n = g.n_nodes
    contrib = np.empty((len(alpha), p.dims.d_out), dtype=np.float64)
    contrib[:n] = alpha[:n, None] * xs
    contrib[n:] = alpha[n:, None] * xt[g.pair_v[n:]]
    out = ordered_segment_sum(contrib, g.pair_u, n)
    cache = LayerCache(x=x, slope_mask=slope_mask, hidden=hidden, alpha=alpha, xs=xs, xt=xt)
    return out, cache


def gat_layer_backward(p: GatLayerParams, g: DirectedGraphBatch, cache: LayerCache, upstream: np.ndarray):
    """Gradients of <upstream, output> w.r.t. layer parameters and inputs.

    The softmax max-shift is analytically transparent (softmax is shift
    invariant), so the standard softmax Jacobian applies. The leaky-relu
    derivative at exactly 0 takes the negative-slope branch.
    """
    n = g.n_nodes
    x, alpha = cache.x, cache.alpha
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (n, p.dims.d_out):
        raise ValueError(f"upstream shape {upstream.shape} != {(n, p.dims.d_out)}")
    pair_u, pair_v = g.pair_u, g.pair_v
    src = pair_v[n:]

    # d<U, out>/d alpha per pair.
    s_pair = np.empty(len(alpha), dtype=np.float64)
    s_pair[:n] = np.einsum("nd,nd->n", upstream, cache.xs)
    s_pair[n:] = np.einsum("ed,ed->e", upstream[pair_u[n:]], cache.xt[src])

    # Softmax backward: d eta = alpha * (s - sum_support alpha * s).
    weighted = np.zeros(n, dtype=np.float64)
    np.add.at(weighted, pair_u, alpha * s_pair)
    d_eta = alpha * (s_pair - weighted[pair_u])

    d_hidden = d_eta[:, None] * p.a[None, :]
    d_a = cache.hidden.T @ d_eta
    d_pre = d_hidden * cache.slope_mask

    d_w_u = x[pair_u].T @ d_pre
    d_w_v = x[pair_v].T @ d_pre
    d_pre_edges = d_pre[n:]
    if g.edge_features.shape[0]:
        d_w_e = g.edge_features.T @ d_pre_edges
    else:
        d_w_e = np.zeros_like(p.w_e)
    d_w_g = np.outer(g.global_features, d_pre.sum(axis=0))

    alpha_self = alpha[:n]
    alpha_edge = alpha[n:]
    d_w_s = (x * alpha_self[:, None]).T @ upstream
    d_w_t = (x[src] * alpha_edge[:, None]).T @ upstream[pair_u[n:]]

    d_x = alpha_self[:, None] * (upstream @ p.w_s.T)
    np.add.at(d_x, src, alpha_edge[:, None] * (upstream[pair_u[n:]] @ p.w_t.T))
    np.add.at(d_x, pair_u, d_pre @ p.w_u.T)
    np.add.at(d_x, pair_v, d_pre @ p.w_v.T)

    grads = {
        "a": d_a,
        "w_u": d_w_u,
        "w_v": d_w_v,
        "w_e": d_w_e,
        "w_g": d_w_g,
        "w_s": d_w_s,
        "w_t": d_w_t,
    }
    return grads, d_x


def init_params(dims: LayerDims, seed: int) -> GatLayerParams:
    """Glorot-uniform tensors, deterministic per seed; the score vector is
    treated as a (d_attn, 1) map for its fan computation."""
    rng = np.random.default_rng(seed)

    def glorot(rows, cols, shape=None):
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=shape if shape is not None else (rows, cols))

    return GatLayerParams(
        a=glorot(dims.d_attn, 1, shape=(dims.d_attn,)),
        w_u=glorot(dims.d_in, dims.d_attn),
        w_v=glorot(dims.d_in, dims.d_attn),
        w_e=glorot(dims.d_edge, dims.d_attn),
        w_g=glorot(dims.d_global, dims.d_attn),
        w_s=glorot(dims.d_in, dims.d_out),
        w_t=glorot(dims.d_in, dims.d_out),
        dims=dims,
    )


def finite_diff_gradients(loss: Callable[[dict], float], tensors: dict, step: float = 1e-5) -> dict:
    """Central differences per scalar parameter of `tensors` (name -> array)."""
    grads = {}
    for name, value in tensors.items():
        work = {k: (v.copy() if k == name else v) for k, v in tensors.items()}
        g = np.zeros_like(value, dtype=np.float64)
        flat = work[name].reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss(work)
            flat[i] = orig - step
            down = loss(work)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict):
    """Worst relative disagreement; denominators floor at 1 so near-zero
    gradients are compared absolutely."""
    worst = 0.0
    worst_coord = ("", ())
    for name in analytic:
        a = np.asarray(analytic[name], dtype=np.float64)
        b = np.asarray(numeric[name], dtype=np.float64)
        denom = np.maximum(1.0, np.abs(a))
        rel = np.abs(a - b) / denom
        idx = np.unravel_index(np.argmax(rel), rel.shape) if rel.size else ()
        if rel.size and rel[idx] > worst:
            worst = float(rel[idx])
            worst_coord = (name, idx)
    return worst, worst_coord


def finite_diff_check(loss: Callable[[dict], float], tensors: dict, analytic: dict, step: float = 1e-5):
    """Max relative error between analytic gradients and central differences."""
    numeric = finite_diff_gradients(loss, tensors, step)
    return max_relative_error(analytic, numeric)
