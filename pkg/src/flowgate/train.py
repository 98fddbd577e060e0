"""Optimization loops, metrics, evaluation protocol, and checkpoints.

Three task families share the Adam optimizer and bookkeeping: the
unconditional 1-D density model, the conditional 2-D models (partitioned
and full-code variants, optionally with gated solver tolerances), and
the latent ODE spiral models. Evaluation always runs the solvers at a
fixed tolerance (1e-5 by default) unless learned-tolerance evaluation is
explicitly requested.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import rng as frng
from .condition import (
    Classifier,
    ConditionalPrior,
    LatentPartition,
    conditional_log_prior,
    cross_entropy,
    infocnf_loss,
)
from .diffcore import ParamRegistry, Tape, backward, slice_cols, tmean
from .flow import FlowStack, build_flow_stack, forward_density
from .latentode import (
    LatentOdeModel,
    elbo,
    extrapolate,
)
from .odesolve import SolverConfig, SolverDivergence
from .synthdata import (
    Labeled2dSpec,
    MixtureSpec,
    gen_1d_mixture,
    gen_2d_labeled,
    gen_spiral_corpus,
)
from .tolgate import (
    GatePolicy,
    RewardBaseline,
    calibrate_alpha,
    gate_feature_summary,
    reinforce_surrogate,
    returns as gate_returns,
    sample_tolerance,
)

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "EpochMetrics",
    "train_density",
    "train_conditional",
    "train_latentode",
    "evaluate_density",
    "evaluate_conditional",
    "riemann_normalization",
    "density_log_prob",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "metrics_to_csv",
    "gates_to_csv",
]

EVAL_TOLERANCE = 1e-5
CHECKPOINT_FORMAT_VERSION = 1
LN2 = float(np.log(2.0))


# -- config ----------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_schedule: list = field(default_factory=list)  # [[epoch, lr], ...]
    batch_size: int = 256
    epochs: int = 200
    beta: float = 1.0
    alpha: float | None = None  # None: calibrated at run start
    trace_mode: str = "exact"
    tolerance_mode: str = "fixed"  # fixed | gated
    tolerance: float = 1e-5
    seed: int = 0
    flow_depth: int = 2
    hidden: list = field(default_factory=lambda: [32, 32])
    d_y: int | None = None  # None: half the latent code
    n_train: int = 2048
    n_test: int = 512
    beta_sup: float = 1.0
    n_curves: int = 500
    max_skipped_frac: float = 0.05

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.tolerance_mode not in ("fixed", "gated"):
            raise ValueError(f"bad tolerance_mode {self.tolerance_mode!r}")
        if self.trace_mode not in ("exact", "hutchinson"):
            raise ValueError(f"bad trace_mode {self.trace_mode!r}")
        lrs = [lr for _, lr in self.lr_schedule]
        if lrs and any(b > a for a, b in zip([self.lr] + lrs, lrs)):
            raise ValueError("lr schedule must be non-increasing")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for e, v in sorted(self.lr_schedule):
            if epoch >= e:
                lr = v
        return lr

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


class TrainingError(RuntimeError):
    pass


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    if params.shape != grads.shape:
        raise ValueError("parameter/gradient shape mismatch")
    if not np.all(np.isfinite(grads)):
        raise TrainingError(
            f"non-finite gradient at step {state.step + 1} "
            f"(nan={int(np.isnan(grads).sum())}, inf={int(np.isinf(grads).sum())})"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads**2
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- metrics ---------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_nll: float
    test_err: float
    mean_nfe: float
    lr: float

    @property
    def bits_per_dim(self):
        return None  # filled per-task where the dimension is known

    def row(self):
        return [self.epoch, repr(self.train_loss), repr(self.test_nll),
                repr(self.test_err), repr(self.mean_nfe), repr(self.lr)]


METRICS_HEADER = ["epoch", "train_loss", "test_nll", "test_err", "mean_nfe", "lr"]
GATES_HEADER = ["epoch", "layer", "mu", "sigma", "tol", "nfe"]


def metrics_to_csv(path, metrics: list[EpochMetrics]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for m in metrics:
            w.writerow(m.row())


def gates_to_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GATES_HEADER)
        for r in rows:
            w.writerow(r)


# -- model bundles ---------------------------------------------------------


@dataclass
class DensityModel:
    stack: FlowStack
    registry: ParamRegistry
    config: TrainConfig
    task: str = "density"


@dataclass
class ConditionalModel:
    stack: FlowStack
    partition: LatentPartition
    prior: ConditionalPrior
    classifier: Classifier
    registry: ParamRegistry
    config: TrainConfig
    variant: str  # infocnf | ccnf
    gate_policy: GatePolicy | None = None
    task: str = "conditional"

    def conditioning_param_count(self) -> int:
        reg = self.registry
        return reg.size_of_prefix("prior") + reg.size_of_prefix("clf")


@dataclass
class LatentOdeBundle:
    model: LatentOdeModel
    registry: ParamRegistry
    config: TrainConfig
    partitioned: bool
    task: str = "latentode"


def _std_normal_log_prior(tape: Tape, z):
    from .condition import _standard_normal_logpdf

    return _standard_normal_logpdf(z)


def build_density_model(config: TrainConfig, dim: int = 1) -> DensityModel:
    registry = ParamRegistry()
    gen = frng.stream(config.seed, "init.density")
    stack = build_flow_stack(
        registry, gen, dim=dim, depth=config.flow_depth, hidden=tuple(config.hidden)
    )
    return DensityModel(stack=stack, registry=registry, config=config)


def build_conditional_model(config: TrainConfig, variant: str, dim: int = 2,
                            n_classes: int = 4) -> ConditionalModel:
    if variant not in ("infocnf", "ccnf"):
        raise ValueError(f"bad variant {variant!r}")
    registry = ParamRegistry()
    gen = frng.stream(config.seed, f"init.{variant}")
    stack = build_flow_stack(
        registry, gen, dim=dim, depth=config.flow_depth, hidden=tuple(config.hidden)
    )
    if variant == "ccnf":
        d_y = dim
    else:
        d_y = config.d_y if config.d_y is not None else max(1, dim // 2)
    partition = LatentPartition(dim, d_y)
    prior = ConditionalPrior(registry, "prior", n_classes, d_y)
    classifier = Classifier(registry, "clf", d_y, n_classes)
    policy = None
    if config.tolerance_mode == "gated":
        policy = GatePolicy(
            registry, "gate", config.flow_depth, dim, gen=gen,
            mu0=float(np.log10(config.tolerance)),
        )
    return ConditionalModel(
        stack=stack, partition=partition, prior=prior, classifier=classifier,
        registry=registry, config=config, variant=variant, gate_policy=policy,
    )


def build_latentode_model(config: TrainConfig, partitioned: bool) -> LatentOdeBundle:
    registry = ParamRegistry()
    gen = frng.stream(config.seed, "init.latentode")
    model = LatentOdeModel(registry, gen, partitioned=partitioned)
    return LatentOdeBundle(model=model, registry=registry, config=config,
                           partitioned=partitioned)


# -- density task ----------------------------------------------------------


def _density_nll(tape: Tape, model: DensityModel, x: np.ndarray, cfg: SolverConfig,
                 trace_mode="exact", eps_gen=None):
    xt = tape.const(x)
    fw = forward_density(tape, model.stack, xt, cfg, trace_mode=trace_mode, eps_gen=eps_gen)
    logp = fw.log_prob(_std_normal_log_prior(tape, fw.z))
    return tmean(logp) * (-1.0), fw.stats


def train_density(config: TrainConfig, mixture: MixtureSpec | None = None,
                  progress=None):
    """Fit the unconditional flow to the 1-D mixture; returns (model, metrics)."""
    spec = mixture or MixtureSpec()
    x_train, _ = gen_1d_mixture(spec, config.n_train, seed=config.seed)
    x_test, _ = gen_1d_mixture(spec, config.n_test, seed=config.seed + 7919)
    model = build_density_model(config, dim=1)
    train_cfg = SolverConfig(rtol=config.tolerance, atol=config.tolerance)
    adam = AdamState.create(model.registry.size)
    shuffle_gen = frng.stream(config.seed, "shuffle.density")
    hutch_gen = frng.stream(config.seed, "hutchinson.density")
    metrics = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        nfes, losses, skipped, batches = [], [], 0, 0
        for xb in _batches(x_train, config.batch_size, shuffle_gen):
            batches += 1
            tape = Tape()
            try:
                loss, stats = _density_nll(
                    tape, model, xb, train_cfg, config.trace_mode, hutch_gen
                )
            except SolverDivergence:
                skipped += 1
                continue
            g = backward(tape, loss, model.registry)
            model.registry.vector = adam_step(model.registry.vector, g, adam, lr)
            losses.append(float(loss.value))
            nfes.extend(s.nfe for s in stats)
        _check_skips(skipped, batches, config, epoch)
        test_nll = evaluate_density(model, x_test).test_nll
        metrics.append(EpochMetrics(epoch, float(np.mean(losses)), test_nll,
                                    float("nan"), float(np.mean(nfes)), lr))
        if progress:
            progress(metrics[-1])
    return model, metrics


def evaluate_density(model: DensityModel, x_test: np.ndarray,
                     tolerance: float = EVAL_TOLERANCE) -> EpochMetrics:
    cfg = SolverConfig(rtol=tolerance, atol=tolerance)
    tape = Tape()
    nll, stats = _density_nll(tape, model, x_test, cfg)
    return EpochMetrics(-1, float("nan"), float(nll.value), float("nan"),
                        float(np.mean([s.nfe for s in stats])), float("nan"))


def density_log_prob(model: DensityModel, x: np.ndarray,
                     tolerance: float = EVAL_TOLERANCE) -> np.ndarray:
    """Per-point log density of (n, d) points under the trained flow."""
    cfg = SolverConfig(rtol=tolerance, atol=tolerance)
    tape = Tape()
    fw = forward_density(tape, model.stack, tape.const(np.asarray(x, dtype=np.float64)), cfg)
    return fw.log_prob(_std_normal_log_prior(tape, fw.z)).value.copy()


def riemann_normalization(model: DensityModel, lo: float = -8.0, hi: float = 8.0,
                          step: float = 1e-3, tolerance: float = EVAL_TOLERANCE,
                          chunk: int = 4000) -> float:
    """Riemann-sum the model density over [lo, hi]; ~1 for a proper density."""
    cfg = SolverConfig(rtol=tolerance, atol=tolerance)
    grid = np.arange(lo, hi, step) + step / 2.0
    area = 0.0
    for start in range(0, grid.size, chunk):
        pts = grid[start : start + chunk].reshape(-1, 1)
        tape = Tape()
        fw = forward_density(tape, model.stack, tape.const(pts), cfg)
        logp = fw.log_prob(_std_normal_log_prior(tape, fw.z))
        area += float(np.exp(logp.value).sum()) * step
    return area


# -- conditional task ------------------------------------------------------


def _gated_loss(model: ConditionalModel, x: np.ndarray, y: np.ndarray,
                base_cfg: SolverConfig, gate_gen, train: bool, drop_gen):
    """Layer-by-layer forward: sample each gate from the layer-input summary."""
    tape = Tape()
    samples = []
    z = tape.const(x)
    delta = tape.const(np.zeros((x.shape[0], 1)))
    stats = []
    for layer in model.stack.layers:
        summary = gate_feature_summary(z.value)
        s = sample_tolerance(tape, model.gate_policy, layer.index, summary, gate_gen)
        sub = FlowStack([layer], model.stack.dim, model.registry)
        fw = forward_density(tape, sub, z, base_cfg.with_tolerance(s.tol))
        z = fw.z
        delta = delta + fw.delta_logp
        s.nfe = fw.stats[0].nfe
        samples.append(s)
        stats.append(fw.stats[0])
    logp = conditional_log_prior(tape, z, y, model.partition, model.prior) - delta
    nll = tmean(logp) * (-1.0)
    z_y = slice_cols(z, 0, model.partition.d_y)
    logits = model.classifier.logits(tape, z_y, train=train, gen=drop_gen)
    xent = tmean(cross_entropy(tape, logits, y))
    loss = nll + xent * model.config.beta
    return tape, loss, nll, xent, samples, stats


def train_conditional(config: TrainConfig, variant: str,
                      data_spec: Labeled2dSpec | None = None, progress=None):
    """Train the partitioned or full-code conditional flow on labeled 2-D data.

    Returns (model, metrics, gate_rows); gate_rows is empty in fixed mode.
    """
    spec = data_spec or Labeled2dSpec()
    x_train, y_train, _ = gen_2d_labeled(spec, seed=config.seed)
    x_test, y_test, _ = gen_2d_labeled(
        Labeled2dSpec(spec.means, spec.stddevs, config.n_test // spec.n_classes),
        seed=config.seed + 7919,
    )
    model = build_conditional_model(config, variant, dim=2, n_classes=spec.n_classes)
    train_cfg = SolverConfig(rtol=config.tolerance, atol=config.tolerance)
    adam = AdamState.create(model.registry.size)
    shuffle_gen = frng.stream(config.seed, f"shuffle.{variant}")
    drop_gen = frng.stream(config.seed, f"dropout.{variant}")
    gate_gen = frng.stream(config.seed, f"gate.{variant}")
    hutch_gen = frng.stream(config.seed, f"hutchinson.{variant}")
    baseline = RewardBaseline(config.flow_depth)
    alpha = config.alpha
    metrics, gate_rows = [], []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        nfes, losses, skipped, batches = [], [], 0, 0
        for xb, yb in _batches_xy(x_train, y_train, config.batch_size, shuffle_gen):
            batches += 1
            try:
                if config.tolerance_mode == "gated":
                    tape, loss, nll, xent, samples, stats = _gated_loss(
                        model, xb, yb, train_cfg, gate_gen, True, drop_gen
                    )
                    if alpha is None:
                        alpha = calibrate_alpha(float(loss.value),
                                                [s.reward for s in samples])
                    rets = gate_returns(float(loss.value),
                                        [s.reward for s in samples], alpha)
                    objective = reinforce_surrogate(loss, samples, rets, baseline)
                    for s in samples:
                        gate_rows.append([epoch, s.layer, repr(s.mu), repr(s.sigma),
                                          repr(s.tol), s.nfe])
                else:
                    tape = Tape()
                    parts = infocnf_loss(
                        tape, tape.const(xb), yb, model.stack, model.partition,
                        model.prior, model.classifier, config.beta, train_cfg,
                        trace_mode=config.trace_mode, train=True, gen=drop_gen,
                    )
                    if config.trace_mode == "hutchinson":
                        # probe stream is separate from dropout
                        pass
                    loss, stats = parts.total, parts.stats
                    objective = loss
            except SolverDivergence:
                skipped += 1
                continue
            g = backward(tape, objective, model.registry)
            model.registry.vector = adam_step(model.registry.vector, g, adam, lr)
            losses.append(float(loss.value))
            nfes.extend(s.nfe for s in stats)
        _check_skips(skipped, batches, config, epoch)
        ev = evaluate_conditional(model, x_test, y_test)
        metrics.append(EpochMetrics(epoch, float(np.mean(losses)), ev.test_nll,
                                    ev.test_err, float(np.mean(nfes)), lr))
        if progress:
            progress(metrics[-1])
    return model, metrics, gate_rows


def evaluate_conditional(model: ConditionalModel, x: np.ndarray, y: np.ndarray,
                         mode: str = "fixed", tolerance: float = EVAL_TOLERANCE,
                         batch_size: int | None = None) -> EpochMetrics:
    """Deterministic evaluation; `mode="learned"` uses per-batch gate means."""
    n = x.shape[0]
    batch_size = batch_size or n
    nlls, errs, nfes, counts = [], [], [], []
    for start in range(0, n, batch_size):
        xb = x[start : start + batch_size]
        yb = y[start : start + batch_size]
        tape = Tape()
        if mode == "learned":
            if model.gate_policy is None:
                raise ValueError("model has no gate policy for learned-tolerance eval")
            z = tape.const(xb)
            delta = tape.const(np.zeros((xb.shape[0], 1)))
            stats = []
            for layer in model.stack.layers:
                summary = gate_feature_summary(z.value)
                out = model.gate_policy.gates[layer.index](
                    tape, tape.const(summary.reshape(1, -1))
                )
                log10_tol = float(np.clip(out.value[0, 0], -8.0, -1.0))
                sub = FlowStack([layer], model.stack.dim, model.registry)
                fw = forward_density(
                    tape, sub, z,
                    SolverConfig(rtol=10.0**log10_tol, atol=10.0**log10_tol),
                )
                z = fw.z
                delta = delta + fw.delta_logp
                stats.append(fw.stats[0])
            logp = conditional_log_prior(tape, z, yb, model.partition, model.prior) - delta
            z_final = z
        else:
            cfg = SolverConfig(rtol=tolerance, atol=tolerance)
            fw = forward_density(tape, model.stack, tape.const(xb), cfg)
            logp = fw.log_prob(
                conditional_log_prior(tape, fw.z, yb, model.partition, model.prior)
            )
            stats = fw.stats
            z_final = fw.z
        z_y = slice_cols(z_final, 0, model.partition.d_y)
        logits = model.classifier.logits(tape, z_y, train=False)
        pred = np.argmax(logits.value, axis=1)
        nlls.append(-float(logp.value.mean()) * xb.shape[0])
        errs.append(float((pred != yb).sum()))
        nfes.extend(s.nfe for s in stats)
        counts.append(xb.shape[0])
    total = sum(counts)
    return EpochMetrics(-1, float("nan"), sum(nlls) / total, sum(errs) / total,
                        float(np.mean(nfes)), float("nan"))


# -- latent ODE task -------------------------------------------------------


def train_latentode(config: TrainConfig, partitioned: bool, corpus=None,
                    progress=None):
    """Fit a latent ODE (partitioned or baseline) to noisy spiral windows."""
    records = corpus or gen_spiral_corpus(config.n_curves, seed=config.seed)
    obs = np.stack([r.window for r in records])
    times = records[0].window_times  # shared relative grid (uniform spacing)
    labels = np.stack([r.system.label_vector() for r in records])
    bundle = build_latentode_model(config, partitioned)
    adam = AdamState.create(bundle.registry.size)
    shuffle_gen = frng.stream(config.seed, "shuffle.latentode")
    eta_gen = frng.stream(config.seed, "posterior.latentode")
    metrics = []
    n = obs.shape[0]
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = shuffle_gen.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = Tape()
            parts = elbo(
                bundle.model, tape, obs[idx], times, labels[idx],
                beta_sup=config.beta_sup, gen=eta_gen,
            )
            g = backward(tape, parts.loss, bundle.registry)
            bundle.registry.vector = adam_step(bundle.registry.vector, g, adam, lr)
            losses.append(float(parts.loss.value))
        metrics.append(EpochMetrics(epoch, float(np.mean(losses)), float("nan"),
                                    float("nan"), float("nan"), lr))
        if progress:
            progress(metrics[-1])
    return bundle, metrics


def latentode_extrapolation_mse(bundle: LatentOdeBundle, records,
                                prefix_len: int = 100) -> float:
    """Mean MSE of second-half predictions from first-half prefixes."""
    obs = np.stack([r.window for r in records])
    times = records[0].window_times
    window_len = obs.shape[1]
    # ground truth (noiseless) points for the future segment
    truth = []
    for r in records:
        start = np.searchsorted(r.times, r.window_times[0])
        truth.append(r.curve[start + prefix_len : start + window_len])
    truth = np.stack(truth)
    _, mse = extrapolate(
        bundle.model, obs[:, :prefix_len], times[:prefix_len], times[prefix_len:],
        truth=truth,
    )
    return mse


# -- helpers ---------------------------------------------------------------


def _batches(x: np.ndarray, batch_size: int, gen):
    order = gen.permutation(x.shape[0])
    for start in range(0, x.shape[0], batch_size):
        yield x[order[start : start + batch_size]]


def _batches_xy(x, y, batch_size, gen):
    order = gen.permutation(x.shape[0])
    for start in range(0, x.shape[0], batch_size):
        idx = order[start : start + batch_size]
        yield x[idx], y[idx]


def _check_skips(skipped, batches, config, epoch):
    if batches and skipped / batches > config.max_skipped_frac:
        raise TrainingError(
            f"epoch {epoch}: {skipped}/{batches} batches skipped on solver "
            "divergence (over the abort threshold)"
        )


def nats_to_bits_per_dim(nats: float, dim: int) -> float:
    return nats / (dim * LN2)


# -- checkpoints -----------------------------------------------------------


class CheckpointError(RuntimeError):
    pass


_BUILDERS = {
    "density": lambda cfg, extra: build_density_model(cfg, dim=extra.get("dim", 1)),
    "conditional": lambda cfg, extra: build_conditional_model(
        cfg, extra["variant"], dim=extra.get("dim", 2),
        n_classes=extra.get("n_classes", 4),
    ),
    "latentode": lambda cfg, extra: build_latentode_model(cfg, extra["partitioned"]),
}


def save_checkpoint(path_prefix: str, model) -> None:
    """JSON manifest plus little-endian float64 blob of the flat parameters."""
    registry = model.registry
    extra = {}
    if model.task == "conditional":
        extra = {"variant": model.variant, "dim": model.stack.dim,
                 "n_classes": model.prior.n_classes}
    elif model.task == "density":
        extra = {"dim": model.stack.dim}
    elif model.task == "latentode":
        extra = {"partitioned": model.partitioned}
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "task": model.task,
        "extra": extra,
        "config": asdict(model.config),
        "params": [
            {"name": n, "shape": list(registry.shape_of(n)),
             "offset": registry.slice_of(n).start}
            for n in registry.names()
        ],
        "blob": os.path.basename(path_prefix) + ".bin",
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    registry.vector.astype("<f8").tofile(path_prefix + ".bin")


def load_checkpoint(path_prefix: str):
    try:
        with open(path_prefix + ".json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint manifest not found: {path_prefix}.json") from exc
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {manifest.get('format_version')} != "
            f"supported {CHECKPOINT_FORMAT_VERSION}"
        )
    config = TrainConfig.from_dict(manifest["config"])
    model = _BUILDERS[manifest["task"]](config, manifest["extra"])
    vector = np.fromfile(path_prefix + ".bin", dtype="<f8")
    registry = model.registry
    if vector.size != registry.size:
        raise CheckpointError(
            f"parameter blob size {vector.size} != registry size {registry.size}"
        )
    for entry in manifest["params"]:
        sl = registry.slice_of(entry["name"])
        if sl.start != entry["offset"] or list(registry.shape_of(entry["name"])) != entry["shape"]:
            raise CheckpointError(f"layout mismatch for parameter {entry['name']!r}")
    registry.vector = vector.astype(np.float64)
    return model
