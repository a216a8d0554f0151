"""Vanilla on-policy REINFORCE local training.

Each round an agent collects whole episodes from its private environment
copy and forms the score-function gradient estimate

    g_hat = mean over episodes of [sum_t grad log pi(a_t|s_t)] * R(tau)

with R(tau) the episode's discounted return - no baseline, no advantage,
no normalization. The ascent step runs through Adam on the negated estimate.

The per-step gradient sum is evaluated as one batched backward pass over the
episode's states (gradients are additive over batch rows), which is what
keeps desk-scale sweeps fast; `policy_gradient` is verified against the
term-by-term sum in the tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import env as envmod
from .errors import ConfigurationError
from .nn_core import AdamState, LayerSpec, adam_step, glorot_init
from .policy import CategoricalPolicy, GaussianPolicy, softmax


@dataclass
class AgentConfig:
    """One heterogeneous agent: hidden stack, head kind, and training knobs."""

    agent_id: str
    hidden: list[tuple[int, str]]  # (width, activation) per hidden layer
    head: str  # "categorical" | "gaussian"
    learning_rate: float
    episodes_per_round: int = 1
    reward_to_go: bool = False
    gamma: float = 0.99

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"agent {self.agent_id}: learning rate must be > 0")
        if self.episodes_per_round < 1:
            raise ConfigurationError(f"agent {self.agent_id}: episodes_per_round must be >= 1")
        if self.head not in ("categorical", "gaussian"):
            raise ConfigurationError(f"agent {self.agent_id}: unknown head {self.head!r}")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigurationError(f"agent {self.agent_id}: gamma must be in (0, 1)")


@dataclass
class RoundStats:
    agent_id: str
    round_index: int
    episode_returns: list[float]
    discounted_returns: list[float]
    grad_norm: float
    wall_time: float

    @property
    def mean_episode_return(self) -> float:
        return float(np.mean(self.episode_returns))

    @property
    def mean_discounted_return(self) -> float:
        return float(np.mean(self.discounted_returns))


def build_policy(config: AgentConfig, spec: envmod.EnvSpec, rng: np.random.Generator):
    """Instantiate the agent's policy for the given environment."""
    if config.head == "categorical" and not spec.discrete:
        raise ConfigurationError(f"agent {config.agent_id}: categorical head on continuous env")
    if config.head == "gaussian" and spec.discrete:
        raise ConfigurationError(f"agent {config.agent_id}: gaussian head on discrete env")
    layers = []
    prev = envmod.STATE_DIM
    for width, activation in config.hidden:
        layers.append(LayerSpec(prev, width, activation))
        prev = width
    layers.append(LayerSpec(prev, spec.action_count, "identity"))
    net = glorot_init(layers, rng)
    if config.head == "categorical":
        return CategoricalPolicy(net)
    return GaussianPolicy(net)


def collect_trajectories(policy, spec: envmod.EnvSpec, config: AgentConfig,
                         rng: np.random.Generator) -> list[envmod.Trajectory]:
    """Roll out `episodes_per_round` complete episodes."""
    trajectories = []
    for _ in range(config.episodes_per_round):
        traj = envmod.Trajectory()
        state = envmod.reset(spec, rng)
        for _ in range(spec.max_steps):
            action = policy.sample_action(state, rng)
            next_state, reward, done = envmod.step(spec, state, action)
            traj.append(envmod.Transition(state, action, reward, next_state, done))
            state = next_state
            if done:
                break
        trajectories.append(traj)
    return trajectories


def _step_weights(traj: envmod.Trajectory, config: AgentConfig) -> np.ndarray:
    rewards = traj.rewards()
    discounts = config.gamma ** np.arange(len(traj))
    if config.reward_to_go:
        # per-step coefficient sum_{t' >= t} gamma^{t'} r_{t'}
        return np.cumsum((discounts * rewards)[::-1])[::-1]
    return np.full(len(traj), float(np.sum(discounts * rewards)))


def policy_gradient(policy, trajectories: list[envmod.Trajectory],
                    config: AgentConfig) -> np.ndarray:
    """Ascent-direction estimate of grad J from whole trajectories."""
    if not trajectories:
        raise ConfigurationError("policy_gradient needs at least one trajectory")
    total = np.zeros(policy.num_params)
    for traj in trajectories:
        states = traj.states()
        weights = _step_weights(traj, config)
        if policy.kind == "categorical":
            logits, cache = policy.net.forward(states)
            probs = softmax(logits)
            seeds = -probs
            seeds[np.arange(len(traj)), traj.actions()] += 1.0
            total += policy.net.backward(cache, seeds * weights[:, None])
        else:
            actions = np.array(traj.actions())
            mu, cache = policy.net.forward(states)
            var = np.exp(2.0 * policy.log_std)
            seeds = (actions - mu) / var * weights[:, None]
            net_grad = policy.net.backward(cache, seeds)
            log_std_grad = (((actions - mu) ** 2 / var - 1.0) * weights[:, None]).sum(axis=0)
            total += np.concatenate([net_grad, log_std_grad])
    return total / len(trajectories)


def local_update(policy, adam_state: AdamState, ascent_grad: np.ndarray,
                 lr: float) -> AdamState:
    """Adam ascent step: descend on the negated gradient estimate."""
    params, new_state = adam_step(policy.get_params(), -ascent_grad, adam_state, lr)
    policy.set_params(params)
    return new_state


class Agent:
    """A self-contained trainer: policy, optimizer state, and private RNG."""

    def __init__(self, config: AgentConfig, spec: envmod.EnvSpec,
                 seed_seq: np.random.SeedSequence):
        self.config = config
        self.spec = spec
        self.rng = np.random.Generator(np.random.PCG64(seed_seq))
        self.policy = build_policy(config, spec, self.rng)
        self.adam = AdamState.zeros(self.policy.num_params)

    def local_round(self, round_index: int) -> RoundStats:
        start = time.perf_counter()
        trajectories = collect_trajectories(self.policy, self.spec, self.config, self.rng)
        grad = policy_gradient(self.policy, trajectories, self.config)
        self.adam = local_update(self.policy, self.adam, grad, self.config.learning_rate)
        return RoundStats(
            agent_id=self.config.agent_id,
            round_index=round_index,
            episode_returns=[t.undiscounted_return() for t in trajectories],
            discounted_returns=[
                envmod.discounted_return(t, self.config.gamma) for t in trajectories
            ],
            grad_norm=float(np.linalg.norm(grad)),
            wall_time=time.perf_counter() - start,
        )


def make_agents(configs: list[AgentConfig], spec: envmod.EnvSpec, seed: int) -> list[Agent]:
    """One agent per config, each on its own deterministic RNG stream."""
    return [
        Agent(cfg, spec, np.random.SeedSequence([seed, k]))
        for k, cfg in enumerate(configs)
    ]


def train_independent(agents: list[Agent], rounds: int,
                      trace_params: bool = False) -> dict:
    """The NoFed baseline: every agent trains alone for `rounds` rounds."""
    stats: list[list[RoundStats]] = []
    traces: list[list[np.ndarray]] = []
    for i in range(rounds):
        stats.append([agent.local_round(i) for agent in agents])
        if trace_params:
            traces.append([agent.policy.get_params() for agent in agents])
    return {"round_stats": stats, "param_traces": traces}
