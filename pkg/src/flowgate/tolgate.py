"""Stochastic per-layer solver-tolerance policy trained by REINFORCE.

Each flow layer owns a small gate network mapping the batch-mean of the
layer's input features to the mean and log-std of a Gaussian over
log10-tolerance. A sampled value is clamped to [-8, -1] before being
exponentiated, so solvers only ever see tolerances in [1e-8, 1e-1]. The
reward for layer i is -NFE_i; the returns fold the task loss in as well,
so the policy trades solver effort against fit quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as frng
from .diffcore import Mlp, ParamRegistry, Tape, Tensor, slice_cols, square, exp

__all__ = [
    "GatePolicy",
    "GateSample",
    "RewardBaseline",
    "gate_feature_summary",
    "sample_tolerances",
    "returns",
    "reinforce_surrogate",
    "LOG10_TOL_MIN",
    "LOG10_TOL_MAX",
]

LOG10_TOL_MIN = -8.0
LOG10_TOL_MAX = -1.0
LOG_2PI = float(np.log(2.0 * np.pi))


class GatePolicy:
    """One gate Mlp per flow layer; zero-init head centered on mu0."""

    def __init__(
        self,
        registry: ParamRegistry,
        name: str,
        n_layers: int,
        feature_dim: int,
        hidden: int = 16,
        gen=None,
        mu0: float = -5.0,
        log_sigma0: float = float(np.log(0.5)),
    ):
        self.n_layers = n_layers
        self.gates: list[Mlp] = []
        for i in range(n_layers):
            mlp = Mlp.create(
                registry, f"{name}.gate{i}", [feature_dim, hidden, 2],
                activation="tanh", gen=gen,
            )
            # zero the head and bias it so the policy starts at 10^mu0
            registry.set(f"{name}.gate{i}.w1", np.zeros((hidden, 2)))
            registry.set(f"{name}.gate{i}.b1", np.array([mu0, log_sigma0]))
            self.gates.append(mlp)


@dataclass
class GateSample:
    layer: int
    log10_tol: float  # clamped sampled value
    tol: float
    mu: float
    sigma: float
    log_prob: Tensor  # differentiable w.r.t. gate parameters
    nfe: int | None = None

    @property
    def reward(self) -> float:
        if self.nfe is None:
            raise ValueError("reward queried before the solve recorded its NFE")
        return -float(self.nfe)


def gate_feature_summary(batch: np.ndarray) -> np.ndarray:
    """Per-dimension mean over the batch: one tolerance per batch per layer."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError(f"need a nonempty (batch, features) array, got {batch.shape}")
    return batch.mean(axis=0)


def _gaussian_log_prob(tape: Tape, value: float, mu: Tensor, log_sigma: Tensor) -> Tensor:
    # value is the detached sample; gradient flows into mu / log_sigma only
    diff = tape.const(np.full(mu.value.shape, value)) - mu
    return (square(diff) * exp(log_sigma * (-2.0))) * (-0.5) - log_sigma - 0.5 * LOG_2PI


def sample_tolerance(tape: Tape, policy: GatePolicy, layer: int,
                     summary: np.ndarray, gen) -> GateSample:
    """Draw g = 10^clamp(mu + sigma*eta); log-prob is of the pre-clamp value."""
    out = policy.gates[layer](tape, tape.const(summary.reshape(1, -1)))
    mu = slice_cols(out, 0, 1)
    log_sigma = slice_cols(out, 1, 2)
    sigma = float(np.exp(log_sigma.value[0, 0]))
    eta = float(frng.normal(gen, ()))
    raw = float(mu.value[0, 0]) + sigma * eta
    lp = _gaussian_log_prob(tape, raw, mu, log_sigma)
    clamped = min(max(raw, LOG10_TOL_MIN), LOG10_TOL_MAX)
    return GateSample(
        layer=layer,
        log10_tol=clamped,
        tol=10.0**clamped,
        mu=float(mu.value[0, 0]),
        sigma=sigma,
        log_prob=lp,
    )


def sample_tolerances(tape: Tape, policy: GatePolicy, summaries, gen) -> list[GateSample]:
    if len(summaries) != policy.n_layers:
        raise ValueError(f"expected {policy.n_layers} summaries, got {len(summaries)}")
    return [
        sample_tolerance(tape, policy, i, s, gen) for i, s in enumerate(summaries)
    ]


def returns(loss_value: float, rewards, alpha: float) -> list[float]:
    """r_i = -[L - (alpha/N) * sum_{j>=i} R_j]; plain detached floats."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    n = len(rewards)
    if n < 1:
        raise ValueError("need at least one reward")
    out = []
    for i in range(n):
        tail = sum(rewards[i:])
        out.append(-(loss_value - (alpha / n) * tail))
    return out


@dataclass
class RewardBaseline:
    """Per-layer EMA of returns; disabling recovers the raw estimator."""

    n_layers: int
    decay: float = 0.99
    enabled: bool = True
    values: list[float] = field(default_factory=list)
    initialized: bool = False

    def __post_init__(self):
        if not self.values:
            self.values = [0.0] * self.n_layers

    def baselines(self, rets) -> list[float]:
        if not self.enabled:
            return [0.0] * self.n_layers
        if not self.initialized:
            return [0.0] * self.n_layers
        return list(self.values)

    def update(self, rets) -> None:
        if not self.enabled:
            return
        if not self.initialized:
            self.values = [float(r) for r in rets]
            self.initialized = True
            return
        self.values = [
            self.decay * v + (1.0 - self.decay) * float(r)
            for v, r in zip(self.values, rets)
        ]


def reinforce_surrogate(
    loss: Tensor,
    samples: list[GateSample],
    rets: list[float],
    baseline: RewardBaseline | None = None,
) -> Tensor:
    """Scalar whose gradient is the loss gradient plus the policy term.

    surrogate = L - sum_i log p(g_i | x) * (r_i - b_i); the returns are
    detached, so zeroing them reduces the gradient to that of L alone.
    """
    bs = baseline.baselines(rets) if baseline is not None else [0.0] * len(samples)
    surrogate = loss
    for s, r, b in zip(samples, rets, bs):
        from .diffcore import tsum

        surrogate = surrogate - tsum(s.log_prob) * (r - b)
    if baseline is not None:
        baseline.update(rets)
    return surrogate


def calibrate_alpha(loss0: float, rewards0, target_ratio: float = 0.1) -> float:
    """alpha such that the reward term starts at ~target_ratio of |L0|."""
    total = sum(abs(r) for r in rewards0)
    if total == 0:
        return 0.0
    return target_ratio * abs(loss0) * len(rewards0) / total
