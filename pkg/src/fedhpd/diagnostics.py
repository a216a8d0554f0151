"""Empirical checks of the variance-reduction story behind distillation.

The regularized objective J' = J - KL(local || consensus) has gradient
g_J - g_KL. Over trajectory sampling, g_KL is a constant vector for fixed
parameters (it depends on the public state set only), while g_J is estimated
per trajectory. `variance_report_from_samples` measures, on one shared
sample set:

* the sample variance decomposition Var[g_J - g_KL] =
  Var[g_J] + Var[g_KL] - 2 Cov, which must hold as floating-point algebra;
* the alignment condition cos(angle) > ||g_KL|| / (2 ||g_J||), evaluated on
  mean gradients, which predicts when subtracting the distillation gradient
  shrinks the variance (treating g_KL as exactly its mean).

Vector-valued variance is reduced to the trace of the sample covariance
(the sum of per-coordinate variances); the mean per-coordinate variance is
reported alongside.

`lipschitz_probe` estimates the smoothness of the KL gradient over random
parameter pairs and compares it with the softmax-derived ceiling
G * (2 + log n_actions), where G is the largest observed log-policy gradient
norm. The ceiling is meaningful for categorical heads only; for Gaussian
heads it is reported as indicative, never asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvSpec, Trajectory, Transition, reset, step
from .errors import ConfigurationError
from .policy import DistributionBatch
from .reinforce import policy_gradient


@dataclass(frozen=True)
class ProbeSettings:
    """Gradient-estimator knobs used when sampling diagnostic trajectories."""

    gamma: float = 0.99
    reward_to_go: bool = False


@dataclass
class VarianceReport:
    round_index: int
    n_samples: int
    var_j_trace: float
    var_j_mean: float
    var_kl_trace: float
    cov_trace: float
    var_jprime_direct: float
    var_jprime_reconstructed: float
    var_jprime_predicted: float
    cos_angle: float
    grad_norm_ratio: float
    condition_holds: bool
    condition_vacuous: bool

    @property
    def identity_residual(self) -> float:
        scale = max(abs(self.var_jprime_direct), 1e-300)
        return abs(self.var_jprime_direct - self.var_jprime_reconstructed) / scale


def variance_report_from_samples(
    samples: np.ndarray, grad_kl: np.ndarray, round_index: int = 0
) -> VarianceReport:
    """Build the full report from n gradient samples and the fixed KL gradient.

    `samples` is [n x P]; `grad_kl` is the deterministic distillation gradient
    at the same parameters. All variance terms are ddof=1 sample estimators
    computed on this one sample set.
    """
    samples = np.asarray(samples, dtype=np.float64)
    grad_kl = np.asarray(grad_kl, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ConfigurationError("need at least 2 gradient samples")
    if grad_kl.shape != (samples.shape[1],):
        raise ConfigurationError("KL gradient length does not match samples")
    n = samples.shape[0]

    kl_samples = np.broadcast_to(grad_kl, samples.shape)
    diff_samples = samples - kl_samples

    def trace_var(x):
        return float(np.sum(np.var(x, axis=0, ddof=1)))

    mean_g = samples.mean(axis=0)
    var_j = trace_var(samples)
    var_kl = trace_var(kl_samples)
    dev_g = samples - mean_g
    dev_kl = kl_samples - kl_samples.mean(axis=0)
    cov = float(np.sum(dev_g * dev_kl) / (n - 1))

    var_direct = trace_var(diff_samples)
    var_reconstructed = var_j + var_kl - 2.0 * cov

    norm_g = float(np.linalg.norm(mean_g))
    norm_kl = float(np.linalg.norm(grad_kl))
    vacuous = False
    if norm_kl == 0.0:
        # J' coincides with J: no reduction and nothing to align with
        cos, ratio, condition = 0.0, 0.0, False
    elif norm_g == 0.0:
        # angle undefined; the condition cannot be evaluated
        cos, ratio, condition, vacuous = 0.0, math.inf, False, True
    else:
        cos = float(mean_g @ grad_kl) / (norm_g * norm_kl)
        ratio = norm_kl / norm_g
        condition = cos > 0.5 * ratio
    var_predicted = var_j + norm_kl**2 - 2.0 * float(mean_g @ grad_kl)

    return VarianceReport(
        round_index=round_index,
        n_samples=n,
        var_j_trace=var_j,
        var_j_mean=var_j / samples.shape[1],
        var_kl_trace=var_kl,
        cov_trace=cov,
        var_jprime_direct=var_direct,
        var_jprime_reconstructed=var_reconstructed,
        var_jprime_predicted=var_predicted,
        cos_angle=cos,
        grad_norm_ratio=ratio,
        condition_holds=condition,
        condition_vacuous=vacuous,
    )


def sample_trajectory_gradients(
    policy,
    spec: EnvSpec,
    n_samples: int,
    rng: np.random.Generator,
    settings: ProbeSettings = ProbeSettings(),
) -> np.ndarray:
    """n independent single-trajectory score-function gradient estimates."""
    if n_samples < 2:
        raise ConfigurationError("need at least 2 samples")
    samples = np.empty((n_samples, policy.num_params))
    for i in range(n_samples):
        traj = Trajectory()
        state = reset(spec, rng)
        for _ in range(spec.max_steps):
            action = policy.sample_action(state, rng)
            next_state, reward, done = step(spec, state, action)
            traj.append(Transition(state, action, reward, next_state, done))
            state = next_state
            if done:
                break
        samples[i] = policy_gradient(policy, [traj], settings)
    return samples


def gradient_variance(
    policy,
    spec: EnvSpec,
    states: np.ndarray,
    consensus: DistributionBatch,
    n_samples: int,
    rng: np.random.Generator,
    settings: ProbeSettings = ProbeSettings(),
    round_index: int = 0,
) -> VarianceReport:
    """Sample gradients in the environment and report the variance identity."""
    samples = sample_trajectory_gradients(policy, spec, n_samples, rng, settings)
    _, grad_kl = policy.kl_batch_loss(states, consensus)
    return variance_report_from_samples(samples, grad_kl, round_index)


def chebyshev_samples(variance: float, epsilon: float, delta: float) -> int:
    """ceil(Var / (delta * epsilon^2)): samples for P(|err| >= eps) <= delta."""
    if epsilon <= 0.0 or delta <= 0.0:
        raise ConfigurationError("epsilon and delta must be positive")
    if variance < 0.0:
        raise ConfigurationError("variance cannot be negative")
    return math.ceil(variance / (delta * epsilon * epsilon))


@dataclass
class SmoothnessProbe:
    n_pairs: int
    radius: float
    lipschitz_estimate: float  # max ||d grad_KL|| / ||d theta|| over pairs
    grad_log_prob_bound: float  # G: max ||grad log pi(a|s)|| over samples
    hessian_bound_estimate: float  # M: max finite-difference Hessian-dir norm
    theory_bound: float  # G * (2 + log n_actions); softmax-derived


def _grad_log_prob_max(policy, states: np.ndarray, rng: np.random.Generator) -> float:
    best = 0.0
    if policy.kind == "categorical":
        for s in states:
            for a in range(policy.action_count):
                best = max(best, float(np.linalg.norm(policy.log_prob_grad(s, a))))
    else:
        for s in states:
            for _ in range(2):
                a = policy.sample_action(s, rng)
                best = max(best, float(np.linalg.norm(policy.log_prob_grad(s, a))))
    return best


def _hessian_dir_max(policy, states: np.ndarray, rng: np.random.Generator,
                     h: float = 1e-4, n_probes: int = 5) -> float:
    params = policy.get_params()
    best = 0.0
    for _ in range(n_probes):
        s = states[rng.integers(0, states.shape[0])]
        if policy.kind == "categorical":
            a = int(rng.integers(0, policy.action_count))
        else:
            a = policy.sample_action(s, rng)
        u = rng.normal(size=params.size)
        u /= np.linalg.norm(u)
        policy.set_params(params + h * u)
        g_up = policy.log_prob_grad(s, a)
        policy.set_params(params - h * u)
        g_down = policy.log_prob_grad(s, a)
        best = max(best, float(np.linalg.norm(g_up - g_down) / (2.0 * h)))
    policy.set_params(params)
    return best


def lipschitz_probe(
    policy_factory,
    states: np.ndarray,
    consensus: DistributionBatch,
    n_pairs: int,
    radius: float,
    rng: np.random.Generator,
) -> SmoothnessProbe:
    """Estimate the KL-gradient Lipschitz constant over random parameter pairs.

    Each pair is a freshly drawn policy and a copy displaced by `radius`
    along a random unit direction; the reported estimate is the largest
    observed gradient-difference ratio.
    """
    if n_pairs < 1:
        raise ConfigurationError("need at least one probe pair")
    if radius <= 0.0:
        raise ConfigurationError("probe radius must be positive")
    states = np.asarray(states, dtype=np.float64)
    lipschitz = 0.0
    g_bound = 0.0
    m_bound = 0.0
    action_card = None
    for _ in range(n_pairs):
        policy = policy_factory(rng)
        if action_card is None:
            action_card = (
                policy.action_count if policy.kind == "categorical" else policy.action_dim
            )
        theta = policy.get_params()
        _, grad_a = policy.kl_batch_loss(states, consensus)
        g_bound = max(g_bound, _grad_log_prob_max(policy, states, rng))
        m_bound = max(m_bound, _hessian_dir_max(policy, states, rng))

        u = rng.normal(size=theta.size)
        u /= np.linalg.norm(u)
        policy.set_params(theta + radius * u)
        actual_delta = float(np.linalg.norm(policy.get_params() - theta))
        if actual_delta == 0.0:
            raise ConfigurationError("probe displacement collapsed to zero")
        _, grad_b = policy.kl_batch_loss(states, consensus)
        g_bound = max(g_bound, _grad_log_prob_max(policy, states, rng))
        lipschitz = max(lipschitz, float(np.linalg.norm(grad_b - grad_a)) / actual_delta)
    return SmoothnessProbe(
        n_pairs=n_pairs,
        radius=radius,
        lipschitz_estimate=lipschitz,
        grad_log_prob_bound=g_bound,
        hessian_bound_estimate=m_bound,
        theory_bound=g_bound * (2.0 + math.log(action_card)),
    )
