"""Continuous normalizing flow stack.

Data-to-latent integration runs t: 0 -> 1 per layer (x = z_0, z = z_K);
sampling reverses both the time direction and the layer order. Each
layer integrates the augmented system [dz/dt = f_k(z, t),
d(delta)/dt = -Tr(df_k/dz)], so the accumulated `delta_logp` is the
change in log-density along the trajectory and

    log p(x) = log p_prior(z) - sum_k delta_k.
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
    concat,
    mul,
    slice_cols,
    smul,
    tsum,
)
from .odesolve import SolveStats, SolverConfig, SolverDivergence, integrate

__all__ = [
    "FlowLayer",
    "FlowStack",
    "build_flow_stack",
    "trace_exact",
    "trace_hutchinson",
    "forward_density",
    "sample",
    "FlowForward",
]

EXACT_TRACE_MAX_DIM = 16


@dataclass
class FlowLayer:
    dynamics: Mlp
    index: int


@dataclass
class FlowStack:
    layers: list[FlowLayer]
    dim: int
    registry: ParamRegistry

    @property
    def depth(self) -> int:
        return len(self.layers)


def build_flow_stack(
    registry: ParamRegistry,
    gen,
    dim: int,
    depth: int = 2,
    hidden=(32, 32),
    name: str = "flow",
    init_scale: float | None = 0.1,
) -> FlowStack:
    layers = []
    for k in range(depth):
        widths = [dim, *hidden, dim]
        mlp = Mlp.create(
            registry,
            f"{name}.layer{k}",
            widths,
            activation="softplus",
            time_input=True,
            gen=gen,
            init_scale=init_scale,
        )
        layers.append(FlowLayer(dynamics=mlp, index=k))
    return FlowStack(layers=layers, dim=dim, registry=registry)


def trace_exact(tape: Tape, f: Mlp, z: Tensor, t: float) -> Tensor:
    """Jacobian trace via one tangent pass per basis vector; (batch, 1)."""
    n, d = z.value.shape
    if d > EXACT_TRACE_MAX_DIM:
        raise ValueError(
            f"exact trace limited to d <= {EXACT_TRACE_MAX_DIM} (got {d}); "
            "use trace_hutchinson"
        )
    basis = [tape.const(np.tile(np.eye(d)[j : j + 1], (n, 1))) for j in range(d)]
    _, tangents = f.call_with_jvp(tape, z, t, basis)
    tr = None
    for j, jv in enumerate(tangents):
        diag = slice_cols(jv, j, j + 1)
        tr = diag if tr is None else tr + diag
    return tr


def trace_hutchinson(tape: Tape, f: Mlp, z: Tensor, t: float, eps: np.ndarray) -> Tensor:
    """Unbiased trace estimate eps . (df/dz) eps with Rademacher probes.

    The probe is drawn once per solve and held fixed across solver steps.
    """
    e = tape.const(eps)
    _, tangents = f.call_with_jvp(tape, z, t, [e])
    return tsum(mul(e, tangents[0]), axis=1)


@dataclass
class FlowForward:
    z: Tensor
    delta_logp: Tensor  # (batch, 1); change in log-density, data -> latent
    stats: list[SolveStats]

    def log_prob(self, log_prior: Tensor) -> Tensor:
        return log_prior - self.delta_logp


def _augmented_dynamics(layer: FlowLayer, dim: int, trace_mode: str, eps: np.ndarray | None):
    def dyn(tape: Tape, y: Tensor, t: float) -> Tensor:
        z = slice_cols(y, 0, dim)
        if trace_mode == "exact":
            n, d = z.value.shape
            basis = [tape.const(np.tile(np.eye(d)[j : j + 1], (n, 1))) for j in range(d)]
            fz, tangents = layer.dynamics.call_with_jvp(tape, z, t, basis)
            tr = None
            for j, jv in enumerate(tangents):
                diag = slice_cols(jv, j, j + 1)
                tr = diag if tr is None else tr + diag
        elif trace_mode == "hutchinson":
            e = tape.const(eps)
            fz, tangents = layer.dynamics.call_with_jvp(tape, z, t, [e])
            tr = tsum(mul(e, tangents[0]), axis=1)
        else:
            raise ValueError(f"unknown trace mode {trace_mode!r}")
        return concat([fz, smul(tr, -1.0)], axis=1)

    return dyn


def forward_density(
    tape: Tape,
    stack: FlowStack,
    x: Tensor,
    cfg: SolverConfig,
    trace_mode: str = "exact",
    layer_tols: list[float] | None = None,
    eps_gen=None,
) -> FlowForward:
    """Push a data batch through all layers, accumulating the trace integral."""
    n, d = x.value.shape
    if d != stack.dim:
        raise ValueError(f"input width {d} != stack dim {stack.dim}")
    if trace_mode == "exact" and d > EXACT_TRACE_MAX_DIM:
        raise ValueError(f"d={d} too large for exact trace; use hutchinson")
    z = x
    delta = tape.const(np.zeros((n, 1)))
    stats: list[SolveStats] = []
    for layer in stack.layers:
        eps = frng.rademacher(eps_gen, (n, d)) if trace_mode == "hutchinson" else None
        layer_cfg = cfg if layer_tols is None else cfg.with_tolerance(layer_tols[layer.index])
        y0 = concat([z, tape.const(np.zeros((n, 1)))], axis=1)
        dyn = _augmented_dynamics(layer, d, trace_mode, eps)
        try:
            y1, st = integrate(tape, dyn, y0, 0.0, 1.0, layer_cfg)
        except SolverDivergence as exc:
            raise SolverDivergence(f"layer {layer.index}: {exc}", exc.stats) from exc
        z = slice_cols(y1, 0, d)
        delta = delta + slice_cols(y1, d, d + 1)
        stats.append(st)
    return FlowForward(z=z, delta_logp=delta, stats=stats)


def sample(tape: Tape, stack: FlowStack, z: Tensor, cfg: SolverConfig) -> Tensor:
    """Latent-to-data pass: layers K..1 with time reversed (t: 1 -> 0)."""
    n, d = z.value.shape
    if d != stack.dim:
        raise ValueError(f"latent width {d} != stack dim {stack.dim}")
    x = z
    for layer in reversed(stack.layers):
        dyn_net = layer.dynamics

        def reversed_dyn(tp, y, s, _net=dyn_net):
            return smul(_net(tp, y, 1.0 - s), -1.0)

        x, _ = integrate(tape, reversed_dyn, x, 0.0, 1.0, cfg)
    return x
