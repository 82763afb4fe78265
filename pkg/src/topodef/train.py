"""REINFORCE training loop: frozen-parameter batch rollouts, rewards-to-go,
batch-wide return normalization, exact policy gradients through the
attention layers, and Adam updates.

Episode randomness is derived from (seed, batch index, episode index) by
seed-sequence expansion, so runs are bit-reproducible and episode collection
parallelizes without changing results (per-episode gradient bundles are
reduced in fixed episode order).
"""

from __future__ import annotations

import csv
import multiprocessing
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from .netsim import blue_step, reset
from .observe import encode_graph
from .policy import (
    PolicyParams,
    PolicySpec,
    grad_logprob_wrt_logits,
    init_policy_params,
    policy_backward,
    policy_forward_with_cache,
    sample_action,
    save_checkpoint,
    uniform_distribution,
)
from .scenario import Scenario

METRICS_COLUMNS = (
    "iteration",
    "mean_return",
    "median_return",
    "p25",
    "p75",
    "grad_norm",
    "eps_per_sec",
    "wall_ms",
)


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    episodes_per_batch: int = 1000
    horizon: int = 30
    learning_rate: float = 0.01
    iterations: int = 300
    gamma: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    norm_eps: float = 1e-8
    eval_cadence: int = 10
    ckpt_every: int = 0
    workers: int = 1
    clip_norm: float | None = None
    normalize: str = "batch"  # "batch" | "per_timestep"
    deterministic_timing: bool = False

    def __post_init__(self):
        if self.episodes_per_batch < 2:
            raise ValueError("episodes_per_batch must be >= 2 (return normalization needs spread)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.normalize not in ("batch", "per_timestep"):
            raise ValueError(f"unknown normalization mode {self.normalize!r}")


#: The acceptance-scale preset: small enough for a desk run, big enough to
#: separate a trained policy from random play. Timing columns are zeroed so
#: repeated runs emit byte-identical metrics files.
DESK_PRESET = {
    "iterations": 60,
    "episodes_per_batch": 128,
    "deterministic_timing": True,
}
DESK_EVAL_EPISODES = 500


@dataclass
class Trajectory:
    observations: list
    actions: list
    log_probs: np.ndarray
    rewards: np.ndarray
    rewards_to_go: np.ndarray | None = None


def derive_episode_seeds(seed: int, batch_index: int, episode_index: int):
    """(environment seed, action-sampling seed) for one episode."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(batch_index, episode_index))
    env_seed, policy_seed = (int(v) for v in ss.generate_state(2, dtype=np.uint64))
    return env_seed, policy_seed


def run_policy_episode(params, scenario: Scenario, env_seed: int, policy_seed: int, horizon: int) -> Trajectory:
    """One full-horizon episode; params=None plays the uniform-random policy."""
    if scenario.dynamics.horizon != horizon:
        scenario = replace(scenario, dynamics=scenario.dynamics.replace(horizon=horizon))
    st = reset(scenario, env_seed)
    rng = np.random.default_rng(policy_seed)
    observations, actions = [], []
    log_probs = np.empty(horizon, dtype=np.float64)
    rewards = np.empty(horizon, dtype=np.float64)
    for t in range(horizon):
        obs = encode_graph(st)
        if params is None:
            dist = uniform_distribution(obs.n_nodes)
        else:
            dist, _ = policy_forward_with_cache(params, obs)
        action, lp = sample_action(dist, rng)
        st, outcome, _ = blue_step(st, action)
        observations.append(obs)
        actions.append(action)
        log_probs[t] = lp
        rewards[t] = outcome.reward
    return Trajectory(observations, actions, log_probs, rewards)


def _episode_task(args):
    params, scenario, horizon, env_seed, policy_seed = args
    return run_policy_episode(params, scenario, env_seed, policy_seed, horizon)


def collect_batch(params: PolicyParams, scenario: Scenario, cfg: TrainConfig, batch_index: int, pool=None):
    """episodes_per_batch full-horizon trajectories under frozen parameters."""
    tasks = []
    for e in range(cfg.episodes_per_batch):
        env_seed, policy_seed = derive_episode_seeds(cfg.seed, batch_index, e)
        tasks.append((params, scenario, cfg.horizon, env_seed, policy_seed))
    if pool is not None:
        return pool.map(_episode_task, tasks, chunksize=max(1, len(tasks) // 64))
    return [_episode_task(t) for t in tasks]


def rewards_to_go(rewards: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    """G_t = sum_{k>=t} gamma^(k-t) r_k by a single backward sweep."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def normalize_returns(returns: np.ndarray, eps: float = 1e-8, mode: str = "batch") -> np.ndarray:
    """Standardize rewards-to-go over the whole batch (every episode, every
    step); a zero-spread batch normalizes to all zeros."""
    returns = np.asarray(returns, dtype=np.float64)
    if returns.size < 2:
        raise ValueError("normalization needs at least 2 values")
    if mode == "per_timestep":
        mean = returns.mean(axis=0, keepdims=True)
        std = returns.std(axis=0, keepdims=True)
        out = np.where(std > 0.0, (returns - mean) / (std + eps), 0.0)
        return out
    mean = returns.mean()
    std = returns.std()
    if std == 0.0:
        return np.zeros_like(returns)
    return (returns - mean) / (std + eps)


def zero_grads(params: PolicyParams) -> dict:
    return {name: np.zeros_like(t) for name, t in params.named_tensors().items()}


def episode_gradient(params: PolicyParams, traj: Trajectory, ghat: np.ndarray) -> dict:
    """Unscaled surrogate-loss gradient contribution of one episode,
    accumulated in step order; the 1/B factor is applied by the caller."""
    total = zero_grads(params)
    for t, obs in enumerate(traj.observations):
        if ghat[t] == 0.0:
            continue
        dist, cache = policy_forward_with_cache(params, obs)
        d_logits = -ghat[t] * grad_logprob_wrt_logits(dist, traj.actions[t])
        step_grads = policy_backward(params, cache, d_logits)
        for name, g in step_grads.items():
            total[name] += g
    return total


def _gradient_task(args):
    params, traj, ghat = args
    return episode_gradient(params, traj, ghat)


def policy_gradient(params: PolicyParams, batch, normalized_returns: np.ndarray, pool=None):
    """Gradient of L = -(1/B) sum_episodes sum_t log pi(a_t|s_t) * Ghat_t,
    with Ghat treated as constant. Returns (grads, grad_norm)."""
    b = len(batch)
    tasks = [(params, traj, normalized_returns[i]) for i, traj in enumerate(batch)]
    if pool is not None:
        bundles = pool.map(_gradient_task, tasks, chunksize=max(1, b // 64))
    else:
        bundles = [_gradient_task(t) for t in tasks]
    total = zero_grads(params)
    for bundle in bundles:
        for name in total:
            total[name] += bundle[name]
    for name in total:
        total[name] = total[name] / b
    norm_sq = 0.0
    for name in sorted(total):
        norm_sq += float(np.sum(total[name] * total[name]))
    return total, float(np.sqrt(norm_sq))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam_state(params: PolicyParams) -> AdamState:
    return AdamState(m=zero_grads(params), v=zero_grads(params), t=0)


def adam_step(params: PolicyParams, grads: dict, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update; aborts on non-finite gradient entries."""
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(f"non-finite gradient in tensor {name}")
    if cfg.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in (grads[n] for n in sorted(grads))))
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
            grads = {name: g * scale for name, g in grads.items()}
    t = state.t + 1
    tensors = params.named_tensors()
    new_tensors, new_m, new_v = {}, {}, {}
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for name in tensors:
        g = grads[name]
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        new_tensors[name] = tensors[name] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        new_m[name] = m
        new_v[name] = v
    return params.replace_tensors(new_tensors), AdamState(m=new_m, v=new_v, t=t)


def _metrics_row(iteration, returns, grad_norm, eps_per_sec, wall_ms):
    return {
        "iteration": iteration,
        "mean_return": float(np.mean(returns)),
        "median_return": float(np.median(returns)),
        "p25": float(np.percentile(returns, 25)),
        "p75": float(np.percentile(returns, 75)),
        "grad_norm": grad_norm,
        "eps_per_sec": eps_per_sec,
        "wall_ms": wall_ms,
    }


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in METRICS_COLUMNS])


def train(cfg: TrainConfig, scenario: Scenario, out_dir=None, scenario_label: str = "", log=None):
    """Full training run; returns (final params, metrics rows).

    Writes checkpoint.json, metrics.csv, and periodic ckpt_iter*.json files
    when out_dir is given; a partial checkpoint is flushed if the run aborts.
    """
    if scenario.dynamics.horizon != cfg.horizon:
        scenario = replace(scenario, dynamics=scenario.dynamics.replace(horizon=cfg.horizon))
    params = init_policy_params(PolicySpec(), cfg.seed)
    state = init_adam_state(params)
    metrics = []
    meta = {"seed": cfg.seed, "trained_on_scenario": scenario_label, "iterations": 0}
    pool = None
    if cfg.workers > 1:
        pool = multiprocessing.get_context("fork").Pool(cfg.workers)
    try:
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            batch = collect_batch(params, scenario, cfg, it, pool)
            returns_to_go = np.stack([rewards_to_go(traj.rewards, cfg.gamma) for traj in batch])
            for traj, g in zip(batch, returns_to_go):
                traj.rewards_to_go = g
            ghat = normalize_returns(returns_to_go, cfg.norm_eps, cfg.normalize)
            grads, grad_norm = policy_gradient(params, batch, ghat, pool)
            params, state = adam_step(params, grads, state, cfg)
            wall = time.perf_counter() - t0
            episode_returns = np.array([traj.rewards.sum() for traj in batch])
            if cfg.deterministic_timing:
                eps_per_sec, wall_ms = 0.0, 0.0
            else:
                eps_per_sec = cfg.episodes_per_batch / wall if wall > 0 else 0.0
                wall_ms = wall * 1000.0
            row = _metrics_row(it, episode_returns, grad_norm, eps_per_sec, wall_ms)
            metrics.append(row)
            meta["iterations"] = it + 1
            if log and cfg.eval_cadence and (it % cfg.eval_cadence == 0 or it == cfg.iterations - 1):
                log(
                    f"iter {it:4d}  mean={row['mean_return']:9.3f}  "
                    f"median={row['median_return']:9.3f}  grad_norm={grad_norm:.4f}"
                )
            if out_dir is not None and cfg.ckpt_every and (it + 1) % cfg.ckpt_every == 0:
                save_checkpoint(params, f"{out_dir}/ckpt_iter{it + 1:05d}.json", meta=dict(meta))
    except BaseException:
        if out_dir is not None:
            save_checkpoint(params, f"{out_dir}/checkpoint_abort.json", meta=dict(meta))
            write_metrics_csv(metrics, f"{out_dir}/metrics.csv")
        raise
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    if out_dir is not None:
        save_checkpoint(params, f"{out_dir}/checkpoint.json", meta=dict(meta))
        write_metrics_csv(metrics, f"{out_dir}/metrics.csv")
    return params, metrics


def stderr_log(message: str) -> None:
    print(message, file=sys.stderr)
