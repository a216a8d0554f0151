"""Experiment configuration, sweep execution, and CSV emission.

Configs are flat text files of dotted keys (diff-friendly, no nesting):

    env.kind = "cartpole-discrete"
    run.rounds = 600
    run.seeds = 20, 25, 30
    fed.d = 5, 10, 20
    agents.preset = "cartpole-4"

Every known key has a default; unknown keys are rejected by name before any
computation starts. A training invocation expands into a grid of cells
(mode, interval, seed) - the NoFed baseline plus one federated variant per
interval - and each cell writes one metrics CSV. Reals are printed with 17
significant digits so downstream comparisons can reproduce results exactly.

Cells are independent and may run in a process pool; outputs are written by
the parent in a fixed order, so byte-identical results do not depend on the
worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import ENV_KINDS, EnvSpec, PublicStateSet, load_state_set, save_state_set
from .errors import ConfigurationError
from .federation import FedRunConfig, RunResult, run
from .presets import PRESET_NAMES, preset_agents, preset_head
from .public_states import generate_public_states
from .reinforce import AgentConfig

# ------------------------------------------------------------------ config keys

_KEY_DEFAULTS = {
    "env.kind": "cartpole-discrete",
    "env.max_steps": 500,
    "run.rounds": 600,
    "run.seeds": [20, 25, 30, 35, 40],
    "run.gamma": 0.99,
    "run.workers": 1,
    "run.output_dir": "runs",
    "run.episodes_per_round": 1,
    "run.reward_to_go": False,
    "run.dump_consensus": False,
    "fed.d": [5, 10, 20],
    "fed.include_nofed": True,
    "agents.preset": "cartpole-4",
    "agents.spec": "",
    "agents.head": "",
    "states.source": "generate",
    "states.path": "",
    "states.size": 512,
    "states.warmup_rounds": 200,
    "states.rollouts": 20,
    "states.seed": 7,
    "diag.samples": 64,
    "diag.repeats": 3,
    "diag.pairs": 200,
    "diag.radius": 0.05,
    "diag.epsilon": 0.1,
    "diag.delta": 0.05,
    "diag.seed": 99,
}


def _parse_scalar(raw: str):
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment, commas make lists."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEY_DEFAULTS:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        if "," in raw and not (raw.strip().startswith(("'", '"'))):
            values[key] = [_parse_scalar(part) for part in raw.split(",")]
        else:
            values[key] = _parse_scalar(raw)
    return values


def _as_list(value) -> list:
    return list(value) if isinstance(value, list) else [value]


def parse_agent_spec(spec: str, head: str, episodes_per_round: int,
                     reward_to_go: bool, gamma: float) -> list[AgentConfig]:
    """Inline lineup grammar: '64:relu@1e-3; 16x16:relu,tanh@2e-3'."""
    if head not in ("categorical", "gaussian"):
        raise ConfigurationError("agents.head must be 'categorical' or 'gaussian'")
    agents = []
    for i, entry in enumerate(part for part in spec.split(";") if part.strip()):
        try:
            arch, lr_text = entry.rsplit("@", 1)
            widths_text, acts_text = arch.split(":")
            widths = [int(w) for w in widths_text.strip().split("x")]
            acts = [a.strip() for a in acts_text.split(",")]
            lr = float(lr_text)
        except ValueError as exc:
            raise ConfigurationError(f"agents.spec entry {entry.strip()!r}: {exc}") from exc
        if len(acts) == 1:
            acts = acts * len(widths)
        if len(acts) != len(widths):
            raise ConfigurationError(
                f"agents.spec entry {entry.strip()!r}: {len(widths)} widths "
                f"but {len(acts)} activations"
            )
        agents.append(
            AgentConfig(
                agent_id=f"agent-{i + 1}",
                hidden=list(zip(widths, acts)),
                head=head,
                learning_rate=lr,
                episodes_per_round=episodes_per_round,
                reward_to_go=reward_to_go,
                gamma=gamma,
            )
        )
    if not agents:
        raise ConfigurationError("agents.spec is empty")
    return agents


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(_KEY_DEFAULTS)
        merged.update(self.values)
        self.values = merged
        self._validate()

    def __getitem__(self, key: str):
        return self.values[key]

    def _fail(self, key, message):
        raise ConfigurationError(f"{key}: {message}")

    def _validate(self):
        v = self.values
        for key in v:
            if key not in _KEY_DEFAULTS:
                self._fail(key, "unknown config key")
        if v["env.kind"] not in ENV_KINDS:
            self._fail("env.kind", f"must be one of {', '.join(ENV_KINDS)}")
        for key in ("env.max_steps", "run.rounds", "run.workers",
                    "run.episodes_per_round", "states.size", "states.rollouts",
                    "diag.samples", "diag.repeats", "diag.pairs"):
            if not isinstance(v[key], int) or v[key] < 1:
                self._fail(key, "must be a positive integer")
        if not isinstance(v["states.warmup_rounds"], int) or v["states.warmup_rounds"] < 0:
            self._fail("states.warmup_rounds", "must be a non-negative integer")
        if not (0.0 < float(v["run.gamma"]) < 1.0):
            self._fail("run.gamma", "must lie in (0, 1)")
        seeds = _as_list(v["run.seeds"])
        if not seeds or not all(isinstance(s, int) for s in seeds):
            self._fail("run.seeds", "must be one or more integers")
        v["run.seeds"] = seeds
        ds = _as_list(v["fed.d"])
        if not all(isinstance(d, int) and d >= 1 for d in ds):
            self._fail("fed.d", "intervals must be integers >= 1")
        if any(d > v["run.rounds"] for d in ds):
            self._fail("fed.d", "intervals beyond run.rounds never fire; drop them "
                                "or use fed.include_nofed")
        v["fed.d"] = ds
        if v["states.source"] not in ("generate", "file"):
            self._fail("states.source", "must be 'generate' or 'file'")
        if v["states.source"] == "file" and not v["states.path"]:
            self._fail("states.path", "required when states.source = 'file'")
        for key in ("diag.radius", "diag.epsilon", "diag.delta"):
            if not float(v[key]) > 0.0:
                self._fail(key, "must be positive")
        if not v["agents.spec"] and v["agents.preset"] not in PRESET_NAMES:
            self._fail("agents.preset", f"must be one of {', '.join(PRESET_NAMES)}")
        spec_discrete = v["env.kind"] == "cartpole-discrete"
        head = (v["agents.head"] if v["agents.spec"]
                else preset_head(v["agents.preset"]))
        if spec_discrete != (head == "categorical"):
            self._fail("agents.preset" if not v["agents.spec"] else "agents.head",
                       f"head kind {head!r} does not fit {v['env.kind']}")
        # build once so per-agent validation fires before any run starts
        self.agent_configs()

    def agent_configs(self) -> list[AgentConfig]:
        v = self.values
        if v["agents.spec"]:
            return parse_agent_spec(
                v["agents.spec"], v["agents.head"], v["run.episodes_per_round"],
                v["run.reward_to_go"], float(v["run.gamma"]),
            )
        return preset_agents(
            v["agents.preset"], v["run.episodes_per_round"],
            v["run.reward_to_go"], float(v["run.gamma"]),
        )

    def resolved_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, list):
                rendered = ", ".join(str(x) for x in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, str):
                rendered = f'"{value}"'
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"


def load_experiment_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        values.update(parse_config_text(item))
    return ExperimentConfig(values)


# --------------------------------------------------------------------- metrics

METRICS_COLUMNS = [
    "run_id", "seed", "mode", "d", "round", "agent_id",
    "episode_return", "discounted_return", "kl_loss",
    "policy_grad_norm", "kl_grad_norm", "bytes_communicated",
]

SUMMARY_COLUMNS = ["mode", "d", "seed", "final_window_mean", "overall_mean"]

FINAL_WINDOW = 100


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


@dataclass(frozen=True)
class Cell:
    mode: str  # "nofed" | "fedhpd"
    interval: int | None
    seed: int

    @property
    def run_id(self) -> str:
        return "nofed" if self.mode == "nofed" else f"fedhpd-d{self.interval}"

    @property
    def file_name(self) -> str:
        return f"run-{self.run_id}-seed{self.seed}.csv"


def experiment_cells(config: ExperimentConfig) -> list[Cell]:
    cells = []
    if config["fed.include_nofed"]:
        cells.extend(Cell("nofed", None, seed) for seed in config["run.seeds"])
    for d in config["fed.d"]:
        cells.extend(Cell("fedhpd", d, seed) for seed in config["run.seeds"])
    return cells


def metrics_rows(cell: Cell, result: RunResult) -> list[list[str]]:
    """One row per agent per round plus a system row, already formatted."""
    rows = []
    d_text = "" if cell.interval is None else str(cell.interval)
    for i, per_agent in enumerate(result.round_stats):
        record = result.consensus_at(i)
        for k, stats in enumerate(per_agent):
            kl_loss = record.kl_losses[k] if record else None
            kl_norm = record.kl_grad_norms[k] if record else None
            rows.append([
                cell.run_id, str(cell.seed), cell.mode, d_text, str(i),
                stats.agent_id,
                fmt(stats.mean_episode_return), fmt(stats.mean_discounted_return),
                fmt(kl_loss), fmt(stats.grad_norm), fmt(kl_norm), "",
            ])
        system_return = float(np.mean([s.mean_episode_return for s in per_agent]))
        system_disc = float(np.mean([s.mean_discounted_return for s in per_agent]))
        system_kl = float(np.mean(record.kl_losses)) if record else None
        rows.append([
            cell.run_id, str(cell.seed), cell.mode, d_text, str(i), "system",
            fmt(system_return), fmt(system_disc), fmt(system_kl), "", "",
            str(result.bytes_per_round[i]),
        ])
    return rows


def _system_returns(result: RunResult) -> np.ndarray:
    return np.array([
        np.mean([s.mean_episode_return for s in per_agent])
        for per_agent in result.round_stats
    ])


def run_cell(config_values: dict, cell: Cell, states_rows) -> dict:
    """Execute one grid cell; returns formatted rows and summary scalars."""
    config = ExperimentConfig(dict(config_values))
    fed_config = FedRunConfig(
        env_kind=config["env.kind"],
        rounds=config["run.rounds"],
        interval=cell.interval,
        agent_configs=config.agent_configs(),
        seed=cell.seed,
        max_steps=config["env.max_steps"],
    )
    states = PublicStateSet(states_rows) if states_rows is not None else None
    result = run(fed_config, states)
    system = _system_returns(result)
    window = min(FINAL_WINDOW, system.size)
    return {
        "cell": cell,
        "rows": metrics_rows(cell, result),
        "final_window_mean": float(system[-window:].mean()),
        "overall_mean": float(system.mean()),
        "snapshots": list(zip(
            [a.agent_id for a in fed_config.agent_configs], result.final_snapshots
        )),
        "consensus_dumps": [
            (record.round_index, record.consensus.to_bytes())
            for record in result.consensus_records
        ] if config["run.dump_consensus"] else [],
    }


def _run_cell_checked(args):
    config_values, cell, states_rows = args
    try:
        return run_cell(config_values, cell, states_rows)
    except Exception as exc:  # cell failures are recorded, not fatal
        return {"cell": cell, "error": f"{type(exc).__name__}: {exc}"}


def resolve_states(config: ExperimentConfig, output_dir: Path) -> PublicStateSet:
    """Load or generate the public state set; generated sets are saved."""
    if config["states.source"] == "file":
        return load_state_set(config["states.path"])
    spec = EnvSpec(config["env.kind"], config["env.max_steps"])
    states = generate_public_states(
        spec,
        warmup_rounds=config["states.warmup_rounds"],
        rollouts=config["states.rollouts"],
        n=config["states.size"],
        seed=config["states.seed"],
    )
    path = output_dir / "states.txt"
    save_state_set(states, path)
    write_provenance(config, path)
    return states


def write_provenance(config: ExperimentConfig, state_path: Path) -> None:
    sidecar = state_path.with_suffix(".provenance.json")
    sidecar.write_text(json.dumps({
        "seed": config["states.seed"],
        "warmup_rounds": config["states.warmup_rounds"],
        "rollouts": config["states.rollouts"],
        "size": config["states.size"],
        "env_kind": config["env.kind"],
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }, indent=2) + "\n")


def train_experiment(config: ExperimentConfig, output_dir) -> dict:
    """Run every cell of the grid and write metrics, summary, and config."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / "config.resolved").write_text(config.resolved_text())

    cells = experiment_cells(config)
    needs_states = any(cell.mode == "fedhpd" for cell in cells)
    states = resolve_states(config, output_dir) if needs_states else None
    states_rows = states.states if states is not None else None

    jobs = [(config.values, cell, states_rows) for cell in cells]
    workers = config["run.workers"]
    if workers == 1:
        outcomes = [_run_cell_checked(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell_checked, jobs))

    summary_rows = []
    failures = []
    written = []
    for outcome in outcomes:
        cell = outcome["cell"]
        if "error" in outcome:
            failures.append(f"{cell.file_name}: {outcome['error']}")
            continue
        path = output_dir / cell.file_name
        lines = [",".join(METRICS_COLUMNS)]
        lines.extend(",".join(row) for row in outcome["rows"])
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        snap_dir = output_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for agent_id, blob in outcome["snapshots"]:
            (snap_dir / f"{cell.run_id}-seed{cell.seed}-{agent_id}.fhpd").write_bytes(blob)
        if outcome["consensus_dumps"]:
            dump_dir = output_dir / "consensus"
            dump_dir.mkdir(exist_ok=True)
            for round_index, blob in outcome["consensus_dumps"]:
                name = f"{cell.run_id}-seed{cell.seed}-round{round_index}.bin"
                (dump_dir / name).write_bytes(blob)
        summary_rows.append([
            cell.mode, "" if cell.interval is None else str(cell.interval),
            str(cell.seed), fmt(outcome["final_window_mean"]), fmt(outcome["overall_mean"]),
        ])

    pooled = {}
    for row in summary_rows:
        pooled.setdefault((row[0], row[1]), []).append(
            (float(row[3]), float(row[4]))
        )
    def pooled_key(item):
        mode, d_text = item[0]
        return (mode, int(d_text) if d_text else -1)

    for (mode, d_text), entries in sorted(pooled.items(), key=pooled_key):
        finals = [e[0] for e in entries]
        overalls = [e[1] for e in entries]
        summary_rows.append([
            mode, d_text, "pooled",
            fmt(float(np.mean(finals))), fmt(float(np.mean(overalls))),
        ])
    summary_path = output_dir / "summary.csv"
    summary_lines = [",".join(SUMMARY_COLUMNS)]
    summary_lines.extend(",".join(row) for row in summary_rows)
    summary_path.write_text("\n".join(summary_lines) + "\n")

    if failures:
        (output_dir / "failures.txt").write_text("\n".join(failures) + "\n")
    return {
        "metrics_files": written,
        "summary_file": summary_path,
        "failures": failures,
    }
