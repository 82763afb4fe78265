"""Evaluation and experiment harness: seeded rollout summaries, per-step
reward-to-go distributions, local-vs-foreign cross-topology comparison
matrices with a random baseline, Welch significance tests, and dynamic-edge
stress runs.

Policies compared on the same seed share environment seed streams (common
random numbers); because the attacker reacts to defence, this aligns initial
streams rather than whole traces.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as scipy_stats

from .netsim import blue_step, reset
from .observe import encode_graph
from .policy import PolicyParams, policy_forward_with_cache, sample_action, uniform_distribution
from .scenario import Scenario, base_edges
from .train import rewards_to_go, run_policy_episode

DEFAULT_HISTOGRAM_BINS = 20


@dataclass(frozen=True)
class ReturnSummary:
    episodes: int
    mean: float
    median: float
    p25: float
    p75: float
    min: float
    max: float
    hist_edges: tuple
    hist_counts: tuple
    seed: int


@dataclass(frozen=True)
class CrossEvalCell:
    policy: str
    scenario: str
    summary: ReturnSummary


@dataclass(frozen=True)
class StressReport:
    injection_rate: float
    episodes: int
    injected_edges: int
    forward_failures: int
    clean: ReturnSummary
    stressed: ReturnSummary

    @property
    def mean_degradation(self) -> float:
        return self.clean.mean - self.stressed.mean


def derive_eval_seeds(seed: int, episode: int):
    """(environment, action-sampling, injection) seeds for one eval episode."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(episode,))
    env_seed, policy_seed, inject_seed = (int(v) for v in ss.generate_state(3, dtype=np.uint64))
    return env_seed, policy_seed, inject_seed


def summarize_returns(returns: np.ndarray, seed: int, bins: int = DEFAULT_HISTOGRAM_BINS) -> ReturnSummary:
    returns = np.asarray(returns, dtype=np.float64)
    counts, edges = np.histogram(returns, bins=bins)
    return ReturnSummary(
        episodes=len(returns),
        mean=float(returns.mean()),
        median=float(np.median(returns)),
        p25=float(np.percentile(returns, 25)),
        p75=float(np.percentile(returns, 75)),
        min=float(returns.min()),
        max=float(returns.max()),
        hist_edges=tuple(float(e) for e in edges),
        hist_counts=tuple(int(c) for c in counts),
        seed=seed,
    )


def evaluate_returns(params: PolicyParams | None, scenario: Scenario, episodes: int, seed: int) -> np.ndarray:
    """Final episode returns over seeded rollouts; params=None plays the
    uniform-random baseline."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    horizon = scenario.dynamics.horizon
    returns = np.empty(episodes, dtype=np.float64)
    for e in range(episodes):
        env_seed, policy_seed, _ = derive_eval_seeds(seed, e)
        traj = run_policy_episode(params, scenario, env_seed, policy_seed, horizon)
        returns[e] = traj.rewards.sum()
    return returns


def evaluate(params: PolicyParams | None, scenario: Scenario, episodes: int, seed: int,
             bins: int = DEFAULT_HISTOGRAM_BINS) -> ReturnSummary:
    return summarize_returns(evaluate_returns(params, scenario, episodes, seed), seed, bins)


@dataclass(frozen=True)
class RtgHistogram:
    horizon: int
    episodes: int
    edges: tuple  # shared bin edges over all steps
    counts: tuple  # per step: tuple of bin counts
    step_min: tuple
    step_max: tuple


def rtg_histogram_from_rewards(reward_arrays, gamma: float = 1.0, bins: int = DEFAULT_HISTOGRAM_BINS) -> RtgHistogram:
    """Pool rewards-to-go by step index over a set of reward sequences."""
    gs = np.stack([rewards_to_go(np.asarray(r, dtype=np.float64), gamma) for r in reward_arrays])
    episodes, horizon = gs.shape
    edges = np.histogram_bin_edges(gs.reshape(-1), bins=bins)
    counts = tuple(tuple(int(c) for c in np.histogram(gs[:, t], bins=edges)[0]) for t in range(horizon))
    return RtgHistogram(
        horizon=horizon,
        episodes=episodes,
        edges=tuple(float(e) for e in edges),
        counts=counts,
        step_min=tuple(float(v) for v in gs.min(axis=0)),
        step_max=tuple(float(v) for v in gs.max(axis=0)),
    )


def rtg_histogram(params: PolicyParams | None, scenario: Scenario, episodes: int, seed: int,
                  bins: int = DEFAULT_HISTOGRAM_BINS, gamma: float = 1.0) -> RtgHistogram:
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    horizon = scenario.dynamics.horizon
    rewards = []
    for e in range(episodes):
        env_seed, policy_seed, _ = derive_eval_seeds(seed, e)
        traj = run_policy_episode(params, scenario, env_seed, policy_seed, horizon)
        rewards.append(traj.rewards)
    return rtg_histogram_from_rewards(rewards, gamma, bins)


def cross_eval(checkpoints: dict, scenarios: dict, episodes: int, seed: int,
               with_random: bool = True, bins: int = DEFAULT_HISTOGRAM_BINS):
    """Evaluate every (policy, scenario) pair under shared seeds; the
    "random" row is the uniform baseline."""
    policies = dict(checkpoints)
    if with_random:
        if "random" in policies:
            raise ValueError("policy label 'random' is reserved for the baseline row")
        policies["random"] = None
    cells = []
    for policy_label in sorted(policies):
        for scenario_label in sorted(scenarios):
            returns = evaluate_returns(policies[policy_label], scenarios[scenario_label], episodes, seed)
            cells.append(
                CrossEvalCell(
                    policy=policy_label,
                    scenario=scenario_label,
                    summary=summarize_returns(returns, seed, bins),
                )
            )
    return cells


def welch_test(returns_a, returns_b) -> float:
    """One-sided p-value that mean(a) > mean(b), by Welch's unequal-variance
    t statistic with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(returns_a, dtype=np.float64)
    b = np.asarray(returns_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("welch_test needs at least 2 samples per side")
    if a.std(ddof=1) == 0.0 and b.std(ddof=1) == 0.0:
        if a.mean() == b.mean():
            return 0.5
        return 0.0 if a.mean() > b.mean() else 1.0
    result = scipy_stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    return float(result.pvalue)


def sample_offlayout_edge(rng: np.random.Generator, n: int, blocked: set, max_tries: int = 200):
    """A random ordered pair outside the base layout (and `blocked`)."""
    for _ in range(max_tries):
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u != v and (u, v) not in blocked:
            return u, v
    return None


def stress_dynamic_edges(params: PolicyParams, scenario: Scenario, injection_rate: float,
                         episodes: int, seed: int, bins: int = DEFAULT_HISTOGRAM_BINS) -> StressReport:
    """Rollouts with random off-layout detected connections spliced into each
    observation; completing every forward pass is the contract under test."""
    if not 0.0 <= injection_rate <= 1.0:
        raise ValueError("injection_rate must be in [0, 1]")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    horizon = scenario.dynamics.horizon
    base = set(base_edges(scenario))
    n = scenario.n_hosts
    injected = 0
    failures = 0
    stressed_returns = np.empty(episodes, dtype=np.float64)
    for e in range(episodes):
        env_seed, policy_seed, inject_seed = derive_eval_seeds(seed, e)
        st = reset(scenario, env_seed)
        rng = np.random.default_rng(policy_seed)
        inj_rng = np.random.default_rng(inject_seed)
        total = 0.0
        for _ in range(horizon):
            obs = encode_graph(st)
            if inj_rng.random() < injection_rate:
                pair = sample_offlayout_edge(inj_rng, n, base | obs.edge_set())
                if pair is not None:
                    obs = obs.with_extra_edges([(pair[0], pair[1], 1.0)])
                    injected += 1
            try:
                if params is None:
                    dist = uniform_distribution(obs.n_nodes)
                else:
                    dist, _ = policy_forward_with_cache(params, obs)
            except Exception:
                failures += 1
                dist = uniform_distribution(obs.n_nodes)
            action, _ = sample_action(dist, rng)
            st, outcome, _ = blue_step(st, action)
            total += outcome.reward
        stressed_returns[e] = total
    clean = evaluate(params, scenario, episodes, seed, bins)
    return StressReport(
        injection_rate=injection_rate,
        episodes=episodes,
        injected_edges=injected,
        forward_failures=failures,
        clean=clean,
        stressed=summarize_returns(stressed_returns, seed, bins),
    )


REPORT_CSV_COLUMNS = ("policy", "scenario", "episodes", "mean", "median", "p25", "p75", "min", "max")


def emit_report(cells, path_base, formats=("csv", "json"), seed: int | None = None) -> list:
    """Write the comparison table as CSV (tabular) and JSON (with histograms).

    Deterministic: cells are ordered by (policy, scenario) and floats are
    serialized by repr, so identical inputs produce byte-identical files.
    Returns the written paths.
    """
    ordered = sorted(cells, key=lambda c: (c.policy, c.scenario))
    written = []
    path_base = str(path_base)
    if "csv" in formats:
        path = path_base + ".csv"
        lines = [",".join(REPORT_CSV_COLUMNS)]
        for c in ordered:
            s = c.summary
            lines.append(
                ",".join(
                    [
                        c.policy,
                        c.scenario,
                        str(s.episodes),
                        repr(s.mean),
                        repr(s.median),
                        repr(s.p25),
                        repr(s.p75),
                        repr(s.min),
                        repr(s.max),
                    ]
                )
            )
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("\n".join(lines) + "\n")
        written.append(path)
    if "json" in formats:
        path = path_base + ".json"
        payload = {
            "seed": seed,
            "cells": [
                {"policy": c.policy, "scenario": c.scenario, "summary": asdict(c.summary)}
                for c in ordered
            ],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True, indent=2)
            f.write("\n")
        written.append(path)
    return written
