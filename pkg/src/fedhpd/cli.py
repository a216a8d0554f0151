"""Command-line entry points.

    fedhpd generate-states --config exp.cfg [--out states.txt]
    fedhpd train          --config exp.cfg [--set key=value ...]
    fedhpd sweep          --config exp.cfg --d 5,10,20 [--seeds 20,25]
    fedhpd diagnose       --config exp.cfg --snapshot net.fhpd [--states f]
                          [--consensus batch.bin]

Exit codes: 0 success, 2 configuration error, 3 numeric error (including
failed sweep cells), 4 file I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .diagnostics import chebyshev_samples, gradient_variance, lipschitz_probe
from .env import EnvSpec, load_state_set, save_state_set
from .errors import ArtifactIOError, ConfigurationError, NumericError
from .experiment import (
    ExperimentConfig,
    fmt,
    load_experiment_config,
    train_experiment,
    write_provenance,
)
from .nn_core import glorot_init, load_network
from .policy import CategoricalPolicy, DistributionBatch, GaussianPolicy
from .public_states import generate_public_states

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

DIAGNOSTICS_COLUMNS = [
    "probe", "round_index", "n_samples",
    "var_j_trace", "var_j_mean", "var_kl_trace", "cov_trace",
    "var_jprime_direct", "var_jprime_reconstructed", "var_jprime_predicted",
    "identity_residual", "cos_angle", "grad_norm_ratio",
    "condition_holds", "condition_vacuous",
    "chebyshev_n_j", "chebyshev_n_jprime",
    "n_pairs", "radius", "lipschitz_estimate",
    "grad_log_prob_bound", "hessian_bound_estimate", "theory_bound",
]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedhpd",
        description="Federated policy distillation across heterogeneous agents",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (dotted keys)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--output-dir", help="override run.output_dir")

    p_gen = sub.add_parser("generate-states", help="write a public state-set file")
    common(p_gen)
    p_gen.add_argument("--out", help="target path (default: <output_dir>/states.txt)")

    p_train = sub.add_parser("train", help="run the configured training grid")
    common(p_train)

    p_sweep = sub.add_parser("sweep", help="train over an interval/seed grid")
    common(p_sweep)
    p_sweep.add_argument("--d", help="comma-separated distillation intervals")
    p_sweep.add_argument("--seeds", help="comma-separated seeds")

    p_diag = sub.add_parser("diagnose", help="variance and smoothness probes")
    common(p_diag)
    p_diag.add_argument("--snapshot", required=True, help="parameter snapshot file")
    p_diag.add_argument("--states", help="state-set file (default: states.path)")
    p_diag.add_argument("--consensus",
                        help="consensus batch file (default: self-consensus)")
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f'run.output_dir = "{args.output_dir}"')
    return load_experiment_config(args.config, overrides)


def cmd_generate_states(args) -> int:
    config = _load_config(args)
    out_dir = Path(config["run.output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    target = Path(args.out) if args.out else out_dir / "states.txt"
    spec = EnvSpec(config["env.kind"], config["env.max_steps"])
    states = generate_public_states(
        spec,
        warmup_rounds=config["states.warmup_rounds"],
        rollouts=config["states.rollouts"],
        n=config["states.size"],
        seed=config["states.seed"],
    )
    save_state_set(states, target)
    write_provenance(config, target)
    print(f"wrote {states.size} states to {target}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    outcome = train_experiment(config, config["run.output_dir"])
    for path in outcome["metrics_files"]:
        print(f"wrote {path}")
    print(f"wrote {outcome['summary_file']}")
    if outcome["failures"]:
        for line in outcome["failures"]:
            print(f"cell failed: {line}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def cmd_sweep(args) -> int:
    if args.d:
        args.overrides.append(f"fed.d = {args.d}")
    if args.seeds:
        args.overrides.append(f"run.seeds = {args.seeds}")
    return cmd_train(args)


def _policy_from_snapshot(path, spec: EnvSpec):
    net, extras = load_network(path)
    if spec.discrete:
        if extras.size:
            raise ConfigurationError(
                f"snapshot {path} carries a log-std tail but {spec.kind} is discrete"
            )
        if net.output_dim != spec.action_count:
            raise ConfigurationError(
                f"snapshot output dim {net.output_dim} does not match {spec.kind}"
            )
        return CategoricalPolicy(net)
    if extras.size not in (0, net.output_dim):
        raise ConfigurationError(
            f"snapshot {path}: log-std tail has {extras.size} entries, "
            f"expected {net.output_dim}"
        )
    return GaussianPolicy(net, extras if extras.size else None)


def cmd_diagnose(args) -> int:
    config = _load_config(args)
    spec = EnvSpec(config["env.kind"], config["env.max_steps"])
    policy = _policy_from_snapshot(args.snapshot, spec)

    states_path = args.states or config["states.path"]
    if not states_path:
        raise ConfigurationError("diagnose needs --states or states.path")
    states = load_state_set(states_path).states

    if args.consensus:
        try:
            consensus = DistributionBatch.from_bytes(Path(args.consensus).read_bytes())
        except OSError as exc:
            raise ArtifactIOError(f"cannot read consensus {args.consensus}: {exc}") from exc
        if consensus.kind != policy.kind or consensus.n_states != states.shape[0]:
            raise ConfigurationError("consensus file does not match snapshot/states")
    else:
        consensus = policy.extract_batch(states)

    epsilon = float(config["diag.epsilon"])
    delta = float(config["diag.delta"])
    rows = []
    for rep in range(config["diag.repeats"]):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([config["diag.seed"], rep])
        ))
        report = gradient_variance(
            policy, spec, states, consensus, config["diag.samples"], rng,
            round_index=rep,
        )
        rows.append([
            f"variance-{rep}", str(report.round_index), str(report.n_samples),
            fmt(report.var_j_trace), fmt(report.var_j_mean),
            fmt(report.var_kl_trace), fmt(report.cov_trace),
            fmt(report.var_jprime_direct), fmt(report.var_jprime_reconstructed),
            fmt(report.var_jprime_predicted), fmt(report.identity_residual),
            fmt(report.cos_angle), fmt(report.grad_norm_ratio),
            fmt(report.condition_holds), fmt(report.condition_vacuous),
            str(chebyshev_samples(report.var_j_trace, epsilon, delta)),
            str(chebyshev_samples(report.var_jprime_direct, epsilon, delta)),
            "", "", "", "", "", "",
        ])

    layers = policy.net.layers

    def factory(rng):
        net = glorot_init(layers, rng)
        return CategoricalPolicy(net) if spec.discrete else GaussianPolicy(net)

    probe_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([config["diag.seed"], 0xF00D])
    ))
    probe = lipschitz_probe(
        factory, states, consensus,
        n_pairs=config["diag.pairs"], radius=float(config["diag.radius"]),
        rng=probe_rng,
    )
    rows.append([
        "smoothness", "", "", "", "", "", "", "", "", "", "", "", "", "", "",
        "", "",
        str(probe.n_pairs), fmt(probe.radius), fmt(probe.lipschitz_estimate),
        fmt(probe.grad_log_prob_bound), fmt(probe.hessian_bound_estimate),
        fmt(probe.theory_bound),
    ])

    out_dir = Path(config["run.output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "diagnostics.csv"
    lines = [",".join(DIAGNOSTICS_COLUMNS)]
    lines.extend(",".join(row) for row in rows)
    target.write_text("\n".join(lines) + "\n")
    print(f"wrote {target}")
    return 0


_COMMANDS = {
    "generate-states": cmd_generate_states,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArtifactIOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
