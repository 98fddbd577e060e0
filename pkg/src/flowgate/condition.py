"""Class conditioning for the flow stack.

Two variants share the machinery: the partitioned model conditions only
the supervised block z_y of the latent code (class-conditional diagonal
Gaussian, linear classifier on z_y, standard normal on the rest), while
the full-code baseline conditions the entire code (d_y = d_total).
Condition encoder and classifier are single linear maps, zero-initialized,
so at init every class sees an identical standard-normal prior.
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
    exp,
    logsumexp,
    mul,
    slice_cols,
    square,
    tmean,
    tsum,
)
from .flow import FlowStack, forward_density, sample as flow_sample
from .odesolve import SolverConfig

__all__ = [
    "LatentPartition",
    "ConditionalPrior",
    "Classifier",
    "conditional_log_prior",
    "factored_log_prior",
    "infocnf_loss",
    "ccnf_loss",
    "marginal_nll",
    "conditional_sample",
    "LossParts",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LatentPartition:
    d_total: int
    d_y: int  # supervised dims occupy [0, d_y)

    def __post_init__(self):
        if not (0 < self.d_y <= self.d_total):
            raise ValueError(f"need 0 < d_y <= d_total, got {self.d_y}/{self.d_total}")

    @property
    def d_u(self) -> int:
        return self.d_total - self.d_y


class ConditionalPrior:
    """Linear map from one-hot label to (mu, log sigma) of the supervised block."""

    def __init__(self, registry: ParamRegistry, name: str, n_classes: int, d_y: int):
        self.n_classes = n_classes
        self.d_y = d_y
        self.encoder = Mlp.create(registry, name, [n_classes, 2 * d_y], zero_init=True)

    def params_for(self, tape: Tape, y: np.ndarray) -> tuple[Tensor, Tensor]:
        onehot = np.eye(self.n_classes)[np.asarray(y, dtype=int)]
        out = self.encoder(tape, tape.const(onehot))
        mu = slice_cols(out, 0, self.d_y)
        log_sigma = slice_cols(out, self.d_y, 2 * self.d_y)
        return mu, log_sigma


class Classifier:
    """Linear logits with inverted dropout (rate 0.5) on the input features."""

    def __init__(self, registry: ParamRegistry, name: str, d_in: int, n_classes: int,
                 dropout: float = 0.5):
        self.n_classes = n_classes
        self.dropout = dropout
        self.linear = Mlp.create(registry, name, [d_in, n_classes], zero_init=True)

    def logits(self, tape: Tape, z_y: Tensor, train: bool = False, gen=None) -> Tensor:
        h = z_y
        if train and self.dropout > 0.0:
            keep = 1.0 - self.dropout
            mask = (gen.uniform(size=z_y.value.shape) < keep) / keep
            h = mul(h, tape.const(mask))
        return self.linear(tape, h)


def _diag_gaussian_logpdf(z: Tensor, mu: Tensor, log_sigma: Tensor) -> Tensor:
    """Row-wise log N(z; mu, exp(log_sigma)^2), shape (batch, 1)."""
    inv_var = exp(log_sigma * (-2.0))
    quad = mul(square(z - mu), inv_var)
    per_dim = (quad + log_sigma * 2.0 + LOG_2PI) * (-0.5)
    return tsum(per_dim, axis=1)


def _standard_normal_logpdf(z: Tensor) -> Tensor:
    d = z.value.shape[1]
    return smul_half(tsum(square(z), axis=1), d)


def smul_half(sq_sum: Tensor, d: int) -> Tensor:
    return sq_sum * (-0.5) - 0.5 * d * LOG_2PI


def conditional_log_prior(
    tape: Tape,
    z: Tensor,
    y: np.ndarray,
    partition: LatentPartition,
    prior: ConditionalPrior,
) -> Tensor:
    """log N(z_y; mu(y), sigma^2(y)) + log N(z_u; 0, I), shape (batch, 1)."""
    if z.value.shape[1] != partition.d_total:
        raise ValueError(f"z width {z.value.shape[1]} != d_total {partition.d_total}")
    y = np.asarray(y, dtype=int)
    if np.any(y < 0) or np.any(y >= prior.n_classes):
        raise ValueError(f"label out of range [0, {prior.n_classes})")
    z_y = slice_cols(z, 0, partition.d_y)
    mu, log_sigma = prior.params_for(tape, y)
    lp = _diag_gaussian_logpdf(z_y, mu, log_sigma)
    if partition.d_u > 0:
        z_u = slice_cols(z, partition.d_y, partition.d_total)
        lp = lp + _standard_normal_logpdf(z_u)
    return lp


def factored_log_prior(
    tape: Tape,
    z: Tensor,
    factor_labels,
    blocks: list[tuple[int, int]],
    priors: list[ConditionalPrior],
) -> Tensor:
    """Supervised log prior for independent label factors on disjoint blocks.

    Each factor i owns the contiguous block [blocks[i][0], blocks[i][1]) of
    z; any trailing dimensions keep the standard normal prior. Independence
    of the factors makes this a plain sum of per-block Gaussian terms.
    """
    d = z.value.shape[1]
    covered = sorted(blocks)
    if any(b0 >= b1 for b0, b1 in blocks) or any(
        a1 > b0 for (_, a1), (b0, _) in zip(covered, covered[1:])
    ):
        raise ValueError("blocks must be disjoint, non-empty index ranges")
    lp = None
    for (start, stop), y_i, prior in zip(blocks, factor_labels, priors):
        z_i = slice_cols(z, start, stop)
        mu, log_sigma = prior.params_for(tape, np.asarray(y_i, dtype=int))
        term = _diag_gaussian_logpdf(z_i, mu, log_sigma)
        lp = term if lp is None else lp + term
    tail = covered[-1][1]
    if tail < d:
        lp = lp + _standard_normal_logpdf(slice_cols(z, tail, d))
    return lp


def cross_entropy(tape: Tape, logits: Tensor, y: np.ndarray) -> Tensor:
    """Per-item softmax cross-entropy, shape (batch, 1)."""
    onehot = np.eye(logits.value.shape[1])[np.asarray(y, dtype=int)]
    picked = tsum(mul(logits, tape.const(onehot)), axis=1)
    return logsumexp(logits, axis=1) - picked


@dataclass
class LossParts:
    total: Tensor
    nll: Tensor
    xent: Tensor
    z: Tensor
    stats: list


def infocnf_loss(
    tape: Tape,
    x: Tensor,
    y: np.ndarray,
    stack: FlowStack,
    partition: LatentPartition,
    prior: ConditionalPrior,
    classifier: Classifier,
    beta: float,
    cfg: SolverConfig,
    trace_mode: str = "exact",
    layer_tols: list[float] | None = None,
    train: bool = False,
    gen=None,
) -> LossParts:
    """Mean conditional NLL plus beta-weighted classification cross-entropy."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    fw = forward_density(
        tape, stack, x, cfg, trace_mode=trace_mode, layer_tols=layer_tols, eps_gen=gen
    )
    log_px = fw.log_prob(conditional_log_prior(tape, fw.z, y, partition, prior))
    nll = tmean(log_px) * (-1.0)
    z_y = slice_cols(fw.z, 0, partition.d_y)
    logits = classifier.logits(tape, z_y, train=train, gen=gen)
    xent = tmean(cross_entropy(tape, logits, y))
    total = nll + xent * beta
    return LossParts(total=total, nll=nll, xent=xent, z=fw.z, stats=fw.stats)


def ccnf_loss(
    tape: Tape,
    x: Tensor,
    y: np.ndarray,
    stack: FlowStack,
    prior: ConditionalPrior,
    classifier: Classifier,
    beta: float,
    cfg: SolverConfig,
    **kwargs,
) -> LossParts:
    """Full-code conditioning baseline: the partition degenerates to d_y = d."""
    partition = LatentPartition(stack.dim, stack.dim)
    return infocnf_loss(
        tape, x, y, stack, partition, prior, classifier, beta, cfg, **kwargs
    )


def marginal_nll(
    tape: Tape,
    x: Tensor,
    stack: FlowStack,
    partition: LatentPartition,
    prior: ConditionalPrior,
    cfg: SolverConfig,
    class_probs: np.ndarray | None = None,
) -> Tensor:
    """-log sum_y p(x|y) p(y) via logsumexp; one flow pass serves all classes."""
    if class_probs is None:
        class_probs = np.full(prior.n_classes, 1.0 / prior.n_classes)
    class_probs = np.asarray(class_probs, dtype=np.float64)
    if abs(class_probs.sum() - 1.0) > 1e-9 or np.any(class_probs < 0):
        raise ValueError("class_probs must be a distribution")
    fw = forward_density(tape, stack, x, cfg)
    per_class = []
    n = x.value.shape[0]
    for c in range(prior.n_classes):
        yc = np.full(n, c, dtype=int)
        lp = fw.log_prob(conditional_log_prior(tape, fw.z, yc, partition, prior))
        per_class.append(lp + float(np.log(class_probs[c])))
    stacked = concat_cols(per_class)
    return tmean(logsumexp(stacked, axis=1)) * (-1.0)


def concat_cols(cols):
    from .diffcore import concat

    return concat(cols, axis=1)


def conditional_sample(
    y: np.ndarray,
    partition: LatentPartition,
    prior: ConditionalPrior,
    stack: FlowStack,
    cfg: SolverConfig,
    gen,
) -> np.ndarray:
    """Draw z_y from the class prior, z_u standard normal, and decode."""
    tape = Tape()
    y = np.asarray(y, dtype=int)
    n = y.shape[0]
    mu, log_sigma = prior.params_for(tape, y)
    eta = frng.normal(gen, (n, partition.d_y))
    z_y = mu.value + np.exp(log_sigma.value) * eta
    if partition.d_u > 0:
        z_u = frng.normal(gen, (n, partition.d_u))
        z = np.concatenate([z_y, z_u], axis=1)
    else:
        z = z_y
    x = flow_sample(tape, stack, tape.const(z), cfg)
    return x.value
