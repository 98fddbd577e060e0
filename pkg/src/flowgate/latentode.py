"""Latent ODE sequence model for the bi-directional spiral task.

A tanh RNN encodes an observation window in reverse time order into a
diagonal-Gaussian posterior over the 5-dim initial latent state; the
state evolves by an autonomous learned ODE and a small decoder maps it
back to 2-D points. The partitioned variant places a label-conditional
Gaussian prior on latent dims 0-2 (label = spiral parameters a, b and
direction) and supervises them through a linear readout; the baseline
uses a standard normal prior on all 5 dims and no supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as frng
from .diffcore import (
    Mlp,
    ParamRegistry,
    Tape,
    Tensor,
    add,
    concat,
    exp,
    logsumexp,
    matmul,
    mul,
    slice_cols,
    square,
    tanh,
    tmean,
    tsum,
)
from .odesolve import SolverConfig, integrate

__all__ = [
    "SpiralSystem",
    "gen_spiral",
    "gen_spiral_curve",
    "LatentOdeModel",
    "encode",
    "elbo",
    "extrapolate",
    "ElboParts",
]

LOG_2PI = float(np.log(2.0 * np.pi))

LATENT_DIM = 5
SUPERVISED_DIM = 3
RNN_HIDDEN = 25
ODE_HIDDEN = 20
OBS_NOISE_STD = 0.3


@dataclass(frozen=True)
class SpiralSystem:
    a: float
    b: float
    direction: str  # clockwise | counter_clockwise

    def __post_init__(self):
        if self.direction not in ("clockwise", "counter_clockwise"):
            raise ValueError(f"bad direction {self.direction!r}")
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("system parameters must be finite")

    @property
    def direction_index(self) -> int:
        return 0 if self.direction == "clockwise" else 1

    def label_vector(self) -> np.ndarray:
        return np.array([self.a, self.b, float(self.direction_index)])


def gen_spiral(system: SpiralSystem, t) -> np.ndarray:
    """Point(s) on the spiral at time t; clockwise curves need t > 0."""
    t = np.asarray(t, dtype=np.float64)
    if system.direction == "clockwise":
        if np.any(t <= 0.0):
            raise ValueError("clockwise spiral is singular at t <= 0")
        r = system.a + system.b * (50.0 / t)
        x = r * np.cos(t) - 5.0
    else:
        r = system.a + system.b * t
        x = r * np.cos(t) + 5.0
    y = r * np.sin(t)
    return np.stack([x, y], axis=-1)


def gen_spiral_curve(system: SpiralSystem, times: np.ndarray) -> np.ndarray:
    return gen_spiral(system, times)


class LatentOdeModel:
    """Parameter bundle; `partitioned` toggles the conditional-prior variant."""

    def __init__(self, registry: ParamRegistry, gen, partitioned: bool, name: str = "lode"):
        self.registry = registry
        self.partitioned = partitioned
        self.name = name
        registry.register(f"{name}.enc.wx", frng.normal(gen, (2, RNN_HIDDEN), std=1.0 / np.sqrt(2)))
        registry.register(
            f"{name}.enc.wh", frng.normal(gen, (RNN_HIDDEN, RNN_HIDDEN), std=1.0 / np.sqrt(RNN_HIDDEN))
        )
        registry.register(f"{name}.enc.b", np.zeros(RNN_HIDDEN))
        # zero-init head: posterior starts at N(0, I)
        self.head = Mlp.create(registry, f"{name}.enc.head", [RNN_HIDDEN, 2 * LATENT_DIM], zero_init=True)
        self.dynamics = Mlp.create(
            registry, f"{name}.dyn", [LATENT_DIM, ODE_HIDDEN, LATENT_DIM],
            activation="softplus", gen=gen, init_scale=0.3,
        )
        self.decoder = Mlp.create(
            registry, f"{name}.dec", [LATENT_DIM, ODE_HIDDEN, 2],
            activation="tanh", gen=gen,
        )
        # conditional prior and supervision heads exist in both variants so
        # checkpoints share a schema; the baseline never calls them
        self.q_phi = Mlp.create(registry, f"{name}.qphi", [3, 2 * SUPERVISED_DIM], zero_init=True)
        self.q_theta = Mlp.create(registry, f"{name}.qtheta", [SUPERVISED_DIM, 4], zero_init=True)


def encode(model: LatentOdeModel, tape: Tape, obs: np.ndarray) -> tuple[Tensor, Tensor]:
    """Reverse-time tanh recurrence; returns (mu0, log_sigma0), each (B, 5)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 3 or obs.shape[2] != 2:
        raise ValueError(f"expected (batch, time, 2) observations, got {obs.shape}")
    n, T, _ = obs.shape
    reg = model.registry
    wx = reg.leaf(tape, f"{model.name}.enc.wx")
    wh = reg.leaf(tape, f"{model.name}.enc.wh")
    b = reg.leaf(tape, f"{model.name}.enc.b")
    h = tape.const(np.zeros((n, RNN_HIDDEN)))
    for t in range(T - 1, -1, -1):
        xt = tape.const(obs[:, t, :])
        h = tanh(add(add(matmul(xt, wx), matmul(h, wh)), b))
    out = model.head(tape, h)
    return slice_cols(out, 0, LATENT_DIM), slice_cols(out, LATENT_DIM, 2 * LATENT_DIM)


def _latent_trajectory(model: LatentOdeModel, tape: Tape, z0: Tensor,
                       times: np.ndarray, cfg: SolverConfig) -> list[Tensor]:
    """Latent state at each requested time, integrating interval by interval."""
    dyn = model.dynamics

    def f(tp, y, t):
        return dyn(tp, y)

    states = [z0]
    z = z0
    for t0, t1 in zip(times[:-1], times[1:]):
        z, _ = integrate(tape, f, z, float(t0), float(t1), cfg)
        states.append(z)
    return states


def _decode_all(model: LatentOdeModel, tape: Tape, states: list[Tensor]) -> Tensor:
    stacked = concat(states, axis=0)  # (T*B, latent)
    return model.decoder(tape, stacked)  # (T*B, 2)


DEFAULT_LATENT_CFG = SolverConfig(method="rk4_fixed", fixed_step_count=1)


@dataclass
class ElboParts:
    loss: Tensor
    recon: Tensor
    kl: Tensor
    sup: Tensor


def _gaussian_kl(mu: Tensor, log_sigma: Tensor, mu_p: Tensor, log_sigma_p: Tensor) -> Tensor:
    """Row-wise KL(N(mu, sigma) || N(mu_p, sigma_p)) for diagonal Gaussians."""
    var_ratio = exp((log_sigma - log_sigma_p) * 2.0)
    mean_term = mul(square(mu - mu_p), exp(log_sigma_p * (-2.0)))
    per_dim = ((log_sigma_p - log_sigma) * 2.0 + var_ratio + mean_term - 1.0) * 0.5
    return tsum(per_dim, axis=1)


def elbo(
    model: LatentOdeModel,
    tape: Tape,
    obs: np.ndarray,
    times: np.ndarray,
    labels: np.ndarray | None = None,
    beta_sup: float = 1.0,
    cfg: SolverConfig = DEFAULT_LATENT_CFG,
    gen=None,
    sample_posterior: bool = True,
    obs_noise_std: float = OBS_NOISE_STD,
) -> ElboParts:
    """Negative ELBO (to minimize) with optional supervised term.

    labels rows are (a, b, direction_index); required when the model is
    partitioned.
    """
    if obs_noise_std <= 0:
        raise ValueError("obs_noise_std must be positive")
    n, T, _ = obs.shape
    mu0, log_sigma0 = encode(model, tape, obs)
    if sample_posterior:
        eta = tape.const(frng.normal(gen, (n, LATENT_DIM)))
        z0 = mu0 + mul(exp(log_sigma0), eta)
    else:
        z0 = mu0
    rel_times = np.asarray(times, dtype=np.float64) - float(times[0])
    states = _latent_trajectory(model, tape, z0, rel_times, cfg)
    decoded = _decode_all(model, tape, states)  # (T*B, 2)
    target = tape.const(np.concatenate([obs[:, t, :] for t in range(T)], axis=0))
    resid = decoded - target
    var = obs_noise_std**2
    point_ll = (square(resid) * (-0.5 / var)) + (-0.5 * (LOG_2PI + 2.0 * np.log(obs_noise_std)))
    recon = tsum(point_ll) * (1.0 / n)  # mean over batch, summed over time/coords

    if model.partitioned:
        if labels is None:
            raise ValueError("partitioned model needs labels (a, b, direction)")
        prior_out = model.q_phi(tape, tape.const(np.asarray(labels, dtype=np.float64)))
        mu_p_sup = slice_cols(prior_out, 0, SUPERVISED_DIM)
        ls_p_sup = slice_cols(prior_out, SUPERVISED_DIM, 2 * SUPERVISED_DIM)
        zeros_u = tape.const(np.zeros((n, LATENT_DIM - SUPERVISED_DIM)))
        mu_p = concat([mu_p_sup, zeros_u], axis=1)
        ls_p = concat([ls_p_sup, zeros_u], axis=1)
    else:
        mu_p = tape.const(np.zeros((n, LATENT_DIM)))
        ls_p = tape.const(np.zeros((n, LATENT_DIM)))
    kl = tmean(_gaussian_kl(mu0, log_sigma0, mu_p, ls_p))

    if model.partitioned and beta_sup > 0.0:
        z_y = slice_cols(z0, 0, SUPERVISED_DIM)
        pred = model.q_theta(tape, z_y)
        ab_hat = slice_cols(pred, 0, 2)
        dir_logits = slice_cols(pred, 2, 4)
        ab = tape.const(np.asarray(labels, dtype=np.float64)[:, :2])
        mse = tmean(tsum(square(ab_hat - ab), axis=1))
        dir_idx = np.asarray(labels)[:, 2].astype(int)
        onehot = np.eye(2)[dir_idx]
        picked = tsum(mul(dir_logits, tape.const(onehot)), axis=1)
        xent = tmean(logsumexp(dir_logits, axis=1) - picked)
        sup = mse + xent
    else:
        sup = tape.const(np.zeros(()))

    loss = recon * (-1.0) + kl + sup * beta_sup
    return ElboParts(loss=loss, recon=recon, kl=kl, sup=sup)


def extrapolate(
    model: LatentOdeModel,
    obs_prefix: np.ndarray,
    prefix_times: np.ndarray,
    future_times: np.ndarray,
    cfg: SolverConfig = DEFAULT_LATENT_CFG,
    truth: np.ndarray | None = None,
) -> tuple[np.ndarray, float | None]:
    """Encode the prefix, roll the dynamics to future_times, decode.

    Returns predictions (B, len(future_times), 2) and the MSE against
    `truth` when it is provided.
    """
    tape = Tape()
    mu0, _ = encode(model, tape, obs_prefix)
    prefix_times = np.asarray(prefix_times, dtype=np.float64)
    future_times = np.asarray(future_times, dtype=np.float64)
    # union grid keeps the solve monotone even when future times fall
    # inside the observed window (then this reduces to plain fitting)
    grid = np.union1d(prefix_times, future_times)
    rel = grid - prefix_times[0]
    states = _latent_trajectory(model, tape, mu0, rel, cfg)
    pick = np.searchsorted(grid, future_times)
    future_states = [states[i] for i in pick]
    decoded = _decode_all(model, tape, future_states)
    n = obs_prefix.shape[0]
    preds = decoded.value.reshape(len(future_times), n, 2).transpose(1, 0, 2)
    mse = None
    if truth is not None:
        mse = float(np.mean((preds - truth) ** 2))
    return preds, mse
