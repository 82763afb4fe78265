"""Command-line entry point.

Subcommands: train, eval, crosseval, rollout, gradcheck, scenario.
Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime failure.
All randomness sits behind --seed (environment variable TOPODEF_SEED is the
fallback), so every subcommand is deterministic given its flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalkit, gatcore, netsim, observe, policy, scenario as scenario_mod, train as train_mod
from .actions import BlueAction
from .policy import CheckpointError, PolicySpec

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

GRADCHECK_THRESHOLD = 1e-4


class _Parser(argparse.ArgumentParser):
    # argparse uses exit code 2 for usage errors; this tool reserves 2 for
    # validation failures, so remap.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    return int(os.environ.get("TOPODEF_SEED", "0"))


def _resolve_scenario(arg: str, args=None) -> scenario_mod.Scenario:
    """Load from a path, or by bundled name (e.g. "scenario2")."""
    path = Path(arg)
    if path.exists():
        sc = scenario_mod.load_scenario_file(path)
    elif path.suffix == "" and "/" not in arg:
        try:
            sc = scenario_mod.load_bundled(arg)
        except FileNotFoundError:
            raise scenario_mod.ScenarioError(f"scenario file or bundled name not found: {arg}")
    else:
        raise scenario_mod.ScenarioError(f"scenario file not found: {arg}")
    if args is not None:
        sc = _apply_dynamics_flags(sc, args)
    return sc


def _apply_dynamics_flags(sc: scenario_mod.Scenario, args) -> scenario_mod.Scenario:
    dyn = sc.dynamics.replace(
        p_exploit=getattr(args, "p_exploit", None),
        p_green=getattr(args, "p_green", None),
        p_detect=getattr(args, "p_detect", None),
        horizon=getattr(args, "horizon", None),
    )
    return sc if dyn == sc.dynamics else replace(sc, dynamics=dyn)


def _add_dynamics_flags(p, with_horizon=True):
    p.add_argument("--p-exploit", type=float, default=None, help="attacker exploit success probability")
    p.add_argument("--p-green", type=float, default=None, help="benign traffic probability per step")
    p.add_argument("--p-detect", type=float, default=None, help="exploit detection probability")
    if with_horizon:
        p.add_argument("--horizon", type=int, default=None, help="episode length in steps (default 30)")


def _load_policy(path: str):
    if not Path(path).exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    params, meta = policy.load_checkpoint(path)
    return params, meta


def build_parser() -> _Parser:
    parser = _Parser(prog="topodef", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a defender policy with REINFORCE")
    p.add_argument("--scenario", required=True, help="scenario JSON path or bundled name")
    p.add_argument("--iters", type=int, default=None, help="optimizer iterations (default 300)")
    p.add_argument("--batch", type=int, default=None, help="episodes per batch (default 1000)")
    p.add_argument("--lr", type=float, default=0.01, help="learning rate (default 0.01)")
    p.add_argument("--gamma", type=float, default=1.0, help="reward-to-go discount (default 1.0)")
    p.add_argument("--seed", type=int, default=None, help="training seed (default $TOPODEF_SEED or 0)")
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics.csv")
    p.add_argument("--ckpt-every", type=int, default=0, help="write a checkpoint every N iterations")
    p.add_argument("--workers", type=int, default=1, help="parallel episode workers (bit-identical to 1)")
    p.add_argument("--preset", choices=("desk",), default=None,
                   help="desk = 60 iterations x 128 episodes with deterministic timing columns")
    p.add_argument("--eval-cadence", type=int, default=10, help="progress log every N iterations")
    _add_dynamics_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a scenario")
    p.add_argument("--policy", required=True, help="checkpoint path")
    p.add_argument("--scenario", required=True)
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="report base path (writes .csv and .json)")
    _add_dynamics_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crosseval", help="matrix of policies x scenarios with a random baseline")
    p.add_argument("--policy", action="append", default=[], metavar="LABEL=PATH",
                   help="repeatable; checkpoint per policy label")
    p.add_argument("--scenario", action="append", required=True, metavar="LABEL=PATH",
                   help="repeatable; scenario per label")
    p.add_argument("--with-random", action="store_true", help="add the uniform-random baseline row")
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="report base path (writes .csv and .json)")
    _add_dynamics_flags(p, with_horizon=False)
    p.set_defaults(func=cmd_crosseval)

    p = sub.add_parser("rollout", help="print one seeded episode step by step")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", default=None, help="checkpoint path (omit for the uniform-random policy)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="steps to run (default: scenario horizon)")
    p.add_argument("--dump-obs", default=None, metavar="PATH", help="write per-step observation JSON lines")
    p.add_argument("--trace", default=None, metavar="PATH", help="write the JSON-lines episode trace log")
    _add_dynamics_flags(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("gradcheck", help="analytic vs central-difference policy gradients")
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--corrupt-grad", type=float, default=0.0,
                   help="test hook: offset added to one analytic gradient entry")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("scenario", help="scenario tooling")
    ssub = p.add_subparsers(dest="scenario_command", required=True)
    v = ssub.add_parser("validate", help="check a scenario file against all invariants")
    v.add_argument("path")
    v.set_defaults(func=cmd_scenario_validate)
    v = ssub.add_parser("variant", help="add or remove user hosts")
    v.add_argument("path")
    v.add_argument("--delta", type=int, required=True, help="user hosts to add (+) or remove (-)")
    v.add_argument("--out", required=True)
    v.add_argument("--seed", type=int, default=None)
    v.set_defaults(func=cmd_scenario_variant)
    v = ssub.add_parser("edges", help="print base-layout edge counts")
    v.add_argument("path")
    v.set_defaults(func=cmd_scenario_edges)

    return parser


def cmd_train(args) -> int:
    preset = dict(train_mod.DESK_PRESET) if args.preset == "desk" else {}
    cfg = train_mod.TrainConfig(
        episodes_per_batch=args.batch if args.batch is not None else preset.get("episodes_per_batch", 1000),
        horizon=args.horizon if args.horizon is not None else 30,
        learning_rate=args.lr,
        iterations=args.iters if args.iters is not None else preset.get("iterations", 300),
        gamma=args.gamma,
        seed=args.seed if args.seed is not None else _default_seed(),
        eval_cadence=args.eval_cadence,
        ckpt_every=args.ckpt_every,
        workers=args.workers,
        deterministic_timing=preset.get("deterministic_timing", False),
    )
    try:
        sc = _resolve_scenario(args.scenario, args)
    except scenario_mod.ScenarioError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = Path(args.scenario).stem
    try:
        train_mod.train(cfg, sc, out_dir=out_dir, scenario_label=label, log=train_mod.stderr_log)
    except train_mod.NonFiniteGradientError as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out_dir / 'checkpoint.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        sc = _resolve_scenario(args.scenario, args)
        params, _ = _load_policy(args.policy)
    except (scenario_mod.ScenarioError, CheckpointError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        summary = evalkit.evaluate(params, sc, args.episodes, seed)
    except ValueError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    policy_label = Path(args.policy).stem
    scenario_label = Path(args.scenario).stem
    cell = evalkit.CrossEvalCell(policy=policy_label, scenario=scenario_label, summary=summary)
    print(
        f"{policy_label} on {scenario_label}: episodes={summary.episodes} "
        f"mean={summary.mean:.3f} median={summary.median:.3f} "
        f"p25={summary.p25:.3f} p75={summary.p75:.3f}"
    )
    if args.out:
        base = args.out if args.out else f"eval_{policy_label}_{scenario_label}_seed{seed}"
        for path in evalkit.emit_report([cell], base, seed=seed):
            print(f"wrote {path}")
    return EXIT_OK


def _parse_labeled(values, what):
    out = {}
    for item in values:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise ValueError(f"{what} must look like LABEL=PATH, got {item!r}")
        if label in out:
            raise ValueError(f"duplicate {what} label {label!r}")
        out[label] = path
    return out


def cmd_crosseval(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        policy_paths = _parse_labeled(args.policy, "--policy")
        scenario_paths = _parse_labeled(args.scenario, "--scenario")
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if not policy_paths and not args.with_random:
        print("error: need at least one --policy or --with-random", file=sys.stderr)
        return EXIT_USAGE
    try:
        checkpoints = {label: _load_policy(path)[0] for label, path in policy_paths.items()}
        scenarios = {
            label: _apply_dynamics_flags(_resolve_scenario(path), args)
            for label, path in scenario_paths.items()
        }
    except (scenario_mod.ScenarioError, CheckpointError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    cells = evalkit.cross_eval(checkpoints, scenarios, args.episodes, seed, with_random=args.with_random)
    for c in cells:
        print(
            f"{c.policy:>12} | {c.scenario:<16} mean={c.summary.mean:9.3f} "
            f"median={c.summary.median:9.3f} p25={c.summary.p25:9.3f} p75={c.summary.p75:9.3f}"
        )
    if args.out:
        for path in evalkit.emit_report(cells, args.out, seed=seed):
            print(f"wrote {path}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        sc = _resolve_scenario(args.scenario, args)
        if args.steps is not None:
            sc = replace(sc, dynamics=sc.dynamics.replace(horizon=args.steps))
        params = None
        if args.policy is not None:
            params, _ = _load_policy(args.policy)
    except (scenario_mod.ScenarioError, CheckpointError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    env_seed, policy_seed, _ = evalkit.derive_eval_seeds(seed, 0)
    st = netsim.reset(sc, env_seed)
    rng = np.random.default_rng(policy_seed)
    hostnames = tuple(h.name for h in sc.hosts)
    last_host_action = [None] * sc.n_hosts
    obs_file = open(args.dump_obs, "w", encoding="utf-8") if args.dump_obs else None
    trace_file = open(args.trace, "w", encoding="utf-8") if args.trace else None
    total = 0.0
    try:
        for step in range(sc.dynamics.horizon):
            obs = observe.encode_graph(st)
            if obs_file:
                obs_file.write(json.dumps(obs.to_json_dict(), sort_keys=True) + "\n")
            if params is None:
                dist = policy.uniform_distribution(obs.n_nodes)
            else:
                dist = policy.policy_forward(params, obs)
            action, _ = policy.sample_action(dist, rng)
            st, outcome, _ = netsim.blue_step(st, action)
            last_host_action = observe.track_last_host_action(last_host_action, action)
            total += outcome.reward
            print(
                f"step {step:3d} | {action.label(hostnames):<24} | "
                f"success={st.last_blue.success} | reward={outcome.reward:8.2f} | "
                f"red={st.last_red.label(sc)}"
            )
            print(observe.render_table(observe.blue_table(st, last_host_action)))
            print()
            if trace_file:
                trace_file.write(json.dumps(netsim.trace_record(step, action, st, outcome), sort_keys=True) + "\n")
    finally:
        if obs_file:
            obs_file.close()
        if trace_file:
            trace_file.close()
    print(f"episode return: {total:.2f}")
    return EXIT_OK


def random_observation(n_nodes: int, seed: int, edge_prob: float = 0.35):
    """Synthetic observation with realistic feature scales for gradient checks."""
    rng = np.random.default_rng(seed)
    nodes = np.column_stack(
        [
            rng.integers(0, 3, size=n_nodes).astype(np.float64),
            rng.integers(1, 9, size=n_nodes).astype(np.float64),
            rng.integers(0, 2, size=n_nodes).astype(np.float64),
        ]
    )
    src, dst, feats = [], [], []
    for u in range(n_nodes):
        for v in range(n_nodes):
            if u != v and rng.random() < edge_prob:
                src.append(u)
                dst.append(v)
                feats.append([float(rng.integers(0, 4))])
    global_feat = np.array(
        [float(rng.integers(0, n_nodes + 1)), float(rng.integers(0, 10)), float(rng.integers(0, 2))]
    )
    return observe.GraphObservation(
        node_features=nodes,
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        edge_features=np.array(feats, dtype=np.float64).reshape(len(src), 1),
        global_features=global_feat,
        hostnames=tuple(f"node{i}" for i in range(n_nodes)),
    )


def gradcheck_once(n_nodes: int, seed: int, step: float = 1e-5, corrupt: float = 0.0):
    """Max relative error of the full surrogate-loss gradient on one random
    graph; returns (error, worst coordinate)."""
    obs = random_observation(n_nodes, seed)
    spec = PolicySpec()
    params = policy.init_policy_params(spec, seed)
    rng = np.random.default_rng(seed + 1)
    action_index = int(rng.integers(spec.action_count(n_nodes)))
    coeff = float(rng.normal())

    def loss(tensors):
        p = params.replace_tensors(tensors)
        dist = policy.policy_forward(p, obs)
        return -coeff * float(dist.log_probs[action_index])

    dist, cache = policy.policy_forward_with_cache(params, obs)
    from .actions import index_to_action

    action = index_to_action(action_index, n_nodes, spec.local_action_count)
    d_logits = -coeff * policy.grad_logprob_wrt_logits(dist, action)
    analytic = policy.policy_backward(params, cache, d_logits)
    if corrupt:
        first = sorted(analytic)[0]
        analytic[first] = analytic[first].copy()
        analytic[first].reshape(-1)[0] += corrupt
    return gatcore.finite_diff_check(loss, params.named_tensors(), analytic, step)


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.nodes < 1:
        print("error: --nodes must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    err, (name, idx) = gradcheck_once(args.nodes, seed, args.step, args.corrupt_grad)
    print(f"max relative error: {err:.3e} (worst: {name}{list(idx)})")
    if err < GRADCHECK_THRESHOLD:
        return EXIT_OK
    print(f"gradient check failed: {err:.3e} >= {GRADCHECK_THRESHOLD:.0e}", file=sys.stderr)
    return EXIT_RUNTIME


def cmd_scenario_validate(args) -> int:
    try:
        sc = scenario_mod.load_scenario_file(args.path)
    except (OSError, scenario_mod.ScenarioError) as e:
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"ok: {len(sc.hosts)} hosts, {len(sc.subnets)} subnets, {len(sc.bridges)} bridges")
    return EXIT_OK


def cmd_scenario_variant(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        sc = scenario_mod.load_scenario_file(args.path)
        variant = scenario_mod.make_variant(sc, args.delta, seed)
    except (OSError, scenario_mod.ScenarioError) as e:
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(scenario_mod.scenario_to_document(variant), f, indent=2, sort_keys=False)
        f.write("\n")
    print(f"wrote {args.out} ({variant.n_hosts} hosts)")
    return EXIT_OK


def cmd_scenario_edges(args) -> int:
    try:
        sc = scenario_mod.load_scenario_file(args.path)
    except (OSError, scenario_mod.ScenarioError) as e:
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    edges = scenario_mod.base_edges(sc)
    intra = scenario_mod.intra_subnet_edge_count(sc)
    print(f"intra: {intra}")
    print(f"bridge: {len(edges) - intra}")
    print(f"total: {len(edges)}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except BrokenPipeError:
        return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
