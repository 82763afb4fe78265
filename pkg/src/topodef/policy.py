"""The defender policy: a 2-layer graph-attention network over the
observation graph with a per-node linear head.

Each node emits scores for its local actions plus contributions to the two
system-wide actions; the system-wide logits are the value-ordered column
sums over nodes, so the joint action space scales as
(local_actions * N + 2) with node count and one checkpoint runs on any
topology size.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import gatcore
from .actions import (
    NUM_CANONICAL_LOCAL_ACTIONS,
    NUM_GLOBAL_ACTIONS,
    BlueAction,
    action_to_index,
    index_to_action,
)
from .gatcore import DirectedGraphBatch, GatLayerParams, LayerDims
from .observe import EDGE_FEATURE_DIM, GLOBAL_FEATURE_DIM, NODE_FEATURE_DIM

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class PolicySpec:
    num_layers: int = 2
    hidden_dim: int = 3
    attention_dim: int = 8
    local_action_count: int = NUM_CANONICAL_LOCAL_ACTIONS
    global_action_count: int = NUM_GLOBAL_ACTIONS
    node_feature_dim: int = NODE_FEATURE_DIM
    edge_feature_dim: int = EDGE_FEATURE_DIM
    global_feature_dim: int = GLOBAL_FEATURE_DIM
    activation: str = "tanh"
    neighborhood: str = "in"

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.local_action_count < 1:
            raise ValueError("num_layers, hidden_dim and local_action_count must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.neighborhood != "in":
            raise ValueError(f"unsupported neighborhood {self.neighborhood!r}")

    def layer_dims(self, layer: int) -> LayerDims:
        d_in = self.node_feature_dim if layer == 0 else self.hidden_dim
        return LayerDims(
            d_in=d_in,
            d_out=self.hidden_dim,
            d_attn=self.attention_dim,
            d_edge=self.edge_feature_dim,
            d_global=self.global_feature_dim,
        )

    @property
    def head_columns(self) -> int:
        return self.local_action_count + self.global_action_count

    def action_count(self, n_nodes: int) -> int:
        return self.local_action_count * n_nodes + self.global_action_count


@dataclass(frozen=True)
class PolicyParams:
    layers: tuple  # of GatLayerParams
    head_w: np.ndarray  # (hidden_dim, local + global)
    head_b: np.ndarray  # (local + global,)
    spec: PolicySpec

    def named_tensors(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, tensor in layer.tensors().items():
                out[f"layer{i}.{name}"] = tensor
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def replace_tensors(self, tensors: dict) -> "PolicyParams":
        layers = []
        for i, layer in enumerate(self.layers):
            layers.append(
                GatLayerParams(
                    a=tensors[f"layer{i}.a"],
                    w_u=tensors[f"layer{i}.w_u"],
                    w_v=tensors[f"layer{i}.w_v"],
                    w_e=tensors[f"layer{i}.w_e"],
                    w_g=tensors[f"layer{i}.w_g"],
                    w_s=tensors[f"layer{i}.w_s"],
                    w_t=tensors[f"layer{i}.w_t"],
                    dims=layer.dims,
                )
            )
        return PolicyParams(tuple(layers), tensors["head.w"], tensors["head.b"], self.spec)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_tensors().values())


def init_policy_params(spec: PolicySpec, seed: int) -> PolicyParams:
    """Glorot-uniform layers and head, zero head bias; deterministic per seed."""
    layer_seeds = [
        int(np.random.SeedSequence(entropy=seed, spawn_key=(k,)).generate_state(1)[0])
        for k in range(spec.num_layers + 1)
    ]
    layers = tuple(
        gatcore.init_params(spec.layer_dims(k), layer_seeds[k]) for k in range(spec.num_layers)
    )
    head_rng = np.random.default_rng(layer_seeds[-1])
    limit = np.sqrt(6.0 / (spec.hidden_dim + spec.head_columns))
    head_w = head_rng.uniform(-limit, limit, size=(spec.hidden_dim, spec.head_columns))
    head_b = np.zeros(spec.head_columns, dtype=np.float64)
    return PolicyParams(layers, head_w, head_b, spec)


@dataclass(frozen=True)
class ActionDistribution:
    logits: np.ndarray
    log_probs: np.ndarray
    n_nodes: int
    local_action_count: int
    global_action_count: int

    @property
    def size(self) -> int:
        return self.logits.shape[0]

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass
class PolicyCache:
    batches: list  # layer input batches
    layer_caches: list
    activations: list  # post-tanh inputs of layers 1..; last entry is head input
    node_scores: np.ndarray  # (N, head_columns)


def _check_observation(spec: PolicySpec, obs) -> None:
    if obs.node_features.shape[1] != spec.node_feature_dim:
        raise ValueError(
            f"observation node feature dim {obs.node_features.shape[1]} != {spec.node_feature_dim}"
        )
    if obs.edge_features.shape[1] != spec.edge_feature_dim:
        raise ValueError(
            f"observation edge feature dim {obs.edge_features.shape[1]} != {spec.edge_feature_dim}"
        )
    if obs.global_features.shape[0] != spec.global_feature_dim:
        raise ValueError(
            f"observation global feature dim {obs.global_features.shape[0]} != {spec.global_feature_dim}"
        )


def _distribution_from_scores(spec: PolicySpec, scores: np.ndarray) -> ActionDistribution:
    n = scores.shape[0]
    local, glob = spec.local_action_count, spec.global_action_count
    logits = np.empty(glob + n * local, dtype=np.float64)
    for c in range(glob):
        logits[c] = gatcore.ordered_sum(scores[:, local + c])
    logits[glob:] = scores[:, :local].reshape(-1)
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    log_probs = shifted - log_norm
    return ActionDistribution(logits, log_probs, n, local, glob)


def policy_forward_with_cache(params: PolicyParams, obs):
    spec = params.spec
    _check_observation(spec, obs)
    batch = gatcore.batch_from_observation(obs)
    batches, caches, activations = [], [], []
    x = batch.node_features
    for k, layer in enumerate(params.layers):
        batch = batch.with_node_features(x)
        batches.append(batch)
        out, cache = gatcore.gat_layer_forward(layer, batch)
        caches.append(cache)
        if k < len(params.layers) - 1:
            x = np.tanh(out)
        else:
            x = out
        activations.append(x)
    scores = x @ params.head_w + params.head_b
    dist = _distribution_from_scores(spec, scores)
    cache = PolicyCache(batches=batches, layer_caches=caches, activations=activations, node_scores=scores)
    return dist, cache


def policy_forward(params: PolicyParams, obs) -> ActionDistribution:
    """Action distribution over the joint layout
    [globals..., node 0 locals..., node 1 locals, ...]."""
    dist, _ = policy_forward_with_cache(params, obs)
    return dist


def policy_backward(params: PolicyParams, cache: PolicyCache, d_logits: np.ndarray) -> dict:
    """Gradient of <d_logits, logits> w.r.t. every parameter tensor."""
    spec = params.spec
    n = cache.batches[0].n_nodes
    local, glob = spec.local_action_count, spec.global_action_count
    d_scores = np.empty((n, spec.head_columns), dtype=np.float64)
    d_scores[:, :local] = d_logits[glob:].reshape(n, local)
    for c in range(glob):
        d_scores[:, local + c] = d_logits[c]
    x_final = cache.activations[-1]
    grads = {
        "head.w": x_final.T @ d_scores,
        "head.b": d_scores.sum(axis=0),
    }
    d_x = d_scores @ params.head_w.T
    for k in range(len(params.layers) - 1, -1, -1):
        if k < len(params.layers) - 1:
            act = cache.activations[k]
            d_x = d_x * (1.0 - act * act)  # tanh derivative
        layer_grads, d_x = gatcore.gat_layer_backward(
            params.layers[k], cache.batches[k], cache.layer_caches[k], d_x
        )
        for name, g in layer_grads.items():
            grads[f"layer{k}.{name}"] = g
    return grads


def sample_action(dist: ActionDistribution, rng: np.random.Generator):
    """Inverse-CDF draw over the canonical layout; returns the decoded action
    and its log-probability."""
    cdf = np.cumsum(np.exp(dist.log_probs))
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    idx = min(idx, dist.size - 1)
    action = index_to_action(idx, dist.n_nodes, dist.local_action_count)
    return action, float(dist.log_probs[idx])


def action_logprob(dist: ActionDistribution, action: BlueAction) -> float:
    idx = action_to_index(action, dist.n_nodes, dist.local_action_count)
    return float(dist.log_probs[idx])


def grad_logprob_wrt_logits(dist: ActionDistribution, action: BlueAction) -> np.ndarray:
    """d log pi(a)/d logits = onehot(a) - softmax(logits)."""
    idx = action_to_index(action, dist.n_nodes, dist.local_action_count)
    g = -np.exp(dist.log_probs)
    g[idx] += 1.0
    return g


def uniform_distribution(n_nodes: int, spec: PolicySpec | None = None) -> ActionDistribution:
    """The uniform-random policy over the same layout (baseline rows)."""
    spec = spec or PolicySpec()
    size = spec.action_count(n_nodes)
    logits = np.zeros(size, dtype=np.float64)
    log_probs = np.full(size, -np.log(size), dtype=np.float64)
    return ActionDistribution(logits, log_probs, n_nodes, spec.local_action_count, spec.global_action_count)


def save_checkpoint(params: PolicyParams, path, meta: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "spec": asdict(params.spec),
        "tensors": {
            name: {"shape": list(t.shape), "data": t.reshape(-1).tolist()}
            for name, t in params.named_tensors().items()
        },
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def load_checkpoint(path, expected_spec: PolicySpec | None = None):
    """Returns (params, meta); round-trips save_checkpoint bit-exactly."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    try:
        spec = PolicySpec(**payload["spec"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"bad checkpoint spec: {e}") from e
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(f"checkpoint spec {spec} does not match expected {expected_spec}")
    reference = init_policy_params(spec, seed=0)
    tensors = {}
    stored = payload.get("tensors", {})
    for name, ref in reference.named_tensors().items():
        if name not in stored:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != ref.shape:
            raise CheckpointError(f"tensor {name} has shape {shape}, expected {ref.shape}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != ref.size:
            raise CheckpointError(f"tensor {name} has {data.size} values, expected {ref.size}")
        if not np.all(np.isfinite(data)):
            raise CheckpointError(f"tensor {name} contains non-finite values")
        tensors[name] = data.reshape(shape)
    extra = set(stored) - set(reference.named_tensors())
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors {sorted(extra)}")
    params = reference.replace_tensors(tensors)
    return params, payload.get("meta", {})
