"""Cross-module verification oracles, runnable as one command.

Every oracle is an independent check (finite differences, duplicate
formulas, Monte Carlo with 3-sigma bounds, high-order reference
integration) of a code path used elsewhere. All randomness is
fixed-seed, so the suite is deterministic; statistical bounds use
pre-registered sample sizes.
"""

from __future__ import annotations

import fnmatch
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as frng
from . import diffcore as dc
from . import odesolve as od
from . import flow as fl
from . import latentode as lo
from . import synthdata as sd
from . import tolgate as tg

__all__ = ["OracleReport", "ORACLES", "run_oracles", "oracle"]


@dataclass
class OracleReport:
    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool
    runtime: float


ORACLES: dict[str, callable] = {}


def oracle(name):
    def deco(fn):
        ORACLES[name] = fn
        return fn

    return deco


def _report(name, measured, expected, tolerance, start) -> OracleReport:
    return OracleReport(
        name=name,
        measured=float(measured),
        expected=float(expected),
        tolerance=float(tolerance),
        passed=bool(abs(measured - expected) <= tolerance),
        runtime=time.time() - start,
    )


def _bound_report(name, measured, bound, start) -> OracleReport:
    """Pass when measured <= bound."""
    return OracleReport(
        name=name, measured=float(measured), expected=0.0,
        tolerance=float(bound), passed=bool(measured <= bound),
        runtime=time.time() - start,
    )


@oracle("grad.finite_difference_mlp")
def _grad_fd():
    start = time.time()
    reg = dc.ParamRegistry()
    gen = frng.stream(11, "oracle.fd")
    mlp = dc.Mlp.create(reg, "f", [3, 8, 8, 1], gen=gen, time_input=False)
    x = frng.normal(gen, (4, 3))
    tape = dc.Tape()
    loss = dc.tsum(dc.square(mlp(tape, tape.const(x))))
    g = dc.backward(tape, loss, reg)
    v0 = reg.vector.copy()
    h = 1e-5

    def f(vec):
        reg.vector[:] = vec
        t2 = dc.Tape()
        return float(dc.tsum(dc.square(mlp(t2, t2.const(x)))).value)

    worst = 0.0
    idx = np.argsort(-np.abs(g))[:25]
    for i in idx:
        vp, vm = v0.copy(), v0.copy()
        vp[i] += h
        vm[i] -= h
        fd = (f(vp) - f(vm)) / (2 * h)
        worst = max(worst, abs(g[i] - fd) / (1 + abs(fd)))
    reg.vector[:] = v0
    return _bound_report("grad.finite_difference_mlp", worst, 1e-6, start)


@oracle("grad.jvp_duality")
def _jvp_duality():
    start = time.time()
    reg = dc.ParamRegistry()
    gen = frng.stream(12, "oracle.dual")
    mlp = dc.Mlp.create(reg, "f", [4, 10, 4], gen=gen, time_input=True)
    worst = 0.0
    for _ in range(10):
        z = frng.normal(gen, (1, 4))
        v = frng.normal(gen, (1, 4))
        u = frng.normal(gen, (1, 4))
        tape = dc.Tape()
        jv = dc.jvp(tape, mlp, tape.const(z), 0.5, tape.const(v))
        lhs = float((u * jv.value).sum())
        t2 = dc.Tape()
        zleaf = t2.leaf(z)
        s = dc.tsum(dc.mul(t2.const(u), mlp(t2, zleaf, 0.5)))
        gz = dc.grad(t2, s, [zleaf])[0]
        rhs = float((v * gz).sum())
        worst = max(worst, abs(lhs - rhs) / (1e-12 * (1 + abs(lhs))) * 1e-12)
    return _bound_report("grad.jvp_duality", worst, 1e-12, start)


@oracle("solver.order_rk4")
def _order_rk4():
    start = time.time()

    def err(n):
        tape = dc.Tape()
        y0 = tape.leaf(np.array([[1.0]]))
        cfg = od.SolverConfig(method="rk4_fixed", fixed_step_count=n)
        y1, _ = od.integrate(tape, lambda tp, y, t: y, y0, 0.0, 1.0, cfg)
        return abs(y1.value[0, 0] - np.e)

    ratio = err(20) / err(40)
    return OracleReport("solver.order_rk4", ratio, 16.0, 4.0,
                        12.0 <= ratio <= 20.0, time.time() - start)


@oracle("solver.order_dopri5_forced")
def _order_dp5():
    start = time.time()

    def err(n):
        tape = dc.Tape()
        y0 = tape.leaf(np.array([[1.0]]))
        cfg = od.SolverConfig(method="dopri5_fixed", fixed_step_count=n)
        y1, _ = od.integrate(tape, lambda tp, y, t: y, y0, 0.0, 1.0, cfg)
        return abs(y1.value[0, 0] - np.e)

    ratio = err(10) / err(20)
    return OracleReport("solver.order_dopri5_forced", ratio, 32.0, 8.0,
                        24.0 <= ratio <= 40.0, time.time() - start)


@oracle("solver.harmonic_reference")
def _harmonic():
    start = time.time()
    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0, 0.0]]))

    def osc(tp, y, t):
        p = dc.slice_cols(y, 0, 1)
        q = dc.slice_cols(y, 1, 2)
        return dc.concat([q, dc.smul(p, -1.0)], axis=1)

    y1, _ = od.integrate(tape, osc, y0, 0.0, 2 * np.pi,
                         od.SolverConfig(rtol=1e-10, atol=1e-10))
    err = float(np.abs(y1.value - y0.value).max())
    return _bound_report("solver.harmonic_reference", err, 1e-8, start)


@oracle("solver.nfe_exactness")
def _nfe_exact():
    start = time.time()
    calls = [0]

    def f(tp, y, t):
        calls[0] += 1
        return dc.tanh(y)

    tape = dc.Tape()
    y0 = tape.leaf(np.array([[0.4, -0.8]]))
    _, stats = od.integrate(tape, f, y0, 0.0, 1.0, od.SolverConfig(rtol=1e-7, atol=1e-7))
    return _report("solver.nfe_exactness", stats.nfe, calls[0], 0, start)


@oracle("solver.endpoint_gradient")
def _solver_grad():
    start = time.time()
    a = 0.9
    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0]]))
    y1, _ = od.integrate(
        tape, lambda tp, y, t: dc.smul(y, a), y0, 0.0, 1.0,
        od.SolverConfig(rtol=1e-10, atol=1e-10),
    )
    g = dc.grad(tape, dc.tsum(y1), [y0])[0][0, 0]
    return _report("solver.endpoint_gradient", g, np.exp(a), 1e-6, start)


@oracle("solver.error_norm_duplicate")
def _err_norm_dup():
    start = time.time()
    gen = frng.stream(13, "oracle.errnorm")
    worst = 0.0
    for _ in range(20):
        err = frng.normal(gen, (3, 4))
        y0 = frng.normal(gen, (3, 4))
        y1 = frng.normal(gen, (3, 4))
        atol, rtol = 10.0 ** gen.uniform(-8, -2), 10.0 ** gen.uniform(-8, -2)
        got = od.error_norm(err, y0, y1, atol, rtol)
        # independently coded formula
        ref = np.sqrt(
            np.mean((err / (atol + rtol * np.maximum(np.abs(y0), np.abs(y1)))) ** 2)
        )
        worst = max(worst, abs(got - ref))
    return _bound_report("solver.error_norm_duplicate", worst, 1e-15, start)


@oracle("trace.exact_vs_fd_jacobian")
def _trace_fd():
    start = time.time()
    reg = dc.ParamRegistry()
    gen = frng.stream(14, "oracle.trace")
    mlp = dc.Mlp.create(reg, "f", [3, 12, 3], gen=gen, time_input=True)
    z = frng.normal(gen, (1, 3))
    tape = dc.Tape()
    tr = fl.trace_exact(tape, mlp, tape.const(z), 0.2)

    def f(zv):
        t2 = dc.Tape()
        return mlp(t2, t2.const(zv.reshape(1, -1)), 0.2).value.ravel()

    h = 1e-6
    fd_tr = 0.0
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd_tr += (f(z.ravel() + e)[j] - f(z.ravel() - e)[j]) / (2 * h)
    return _report("trace.exact_vs_fd_jacobian", tr.value[0, 0], fd_tr, 1e-6, start)


@oracle("trace.hutchinson_unbiased")
def _hutch():
    start = time.time()
    gen = frng.stream(15, "oracle.hutch")
    n_probes = 10000
    worst_sigmas = 0.0
    for trial in range(10):
        reg = dc.ParamRegistry()
        mlp = dc.Mlp.create(reg, f"f{trial}", [4, 10, 4], gen=gen, time_input=True)
        z = frng.normal(gen, (1, 4))
        tape = dc.Tape()
        exact = fl.trace_exact(tape, mlp, tape.const(z), 0.1).value[0, 0]
        zt = np.tile(z, (n_probes, 1))
        eps = frng.rademacher(gen, (n_probes, 4))
        t2 = dc.Tape()
        est = fl.trace_hutchinson(t2, mlp, t2.const(zt), 0.1, eps).value.ravel()
        se = est.std(ddof=1) / np.sqrt(n_probes)
        worst_sigmas = max(worst_sigmas, abs(est.mean() - exact) / se)
    return _bound_report("trace.hutchinson_unbiased", worst_sigmas, 3.0, start)


@oracle("density.mixture_riemann")
def _mix_riemann():
    start = time.time()
    _, logp = sd.gen_1d_mixture(sd.MixtureSpec(), 1, seed=0)
    grid = np.arange(-10.0, 10.0, 1e-3) + 5e-4
    area = float(np.exp(logp(grid)).sum() * 1e-3)
    return _report("density.mixture_riemann", area, 1.0, 1e-6, start)


@oracle("density.identity_flow_riemann")
def _id_flow_riemann():
    start = time.time()
    from .train import TrainConfig, build_density_model, riemann_normalization

    cfg = TrainConfig(flow_depth=1, hidden=[8])
    model = build_density_model(cfg, dim=1)
    model.registry.vector[:] = 0.0  # zero dynamics: exact identity flow
    area = riemann_normalization(model, step=1e-3)
    return _report("density.identity_flow_riemann", area, 1.0, 1e-4, start)


@oracle("reinforce.toy_gradient")
def _reinforce_toy():
    """Score-function estimate vs analytic d/d(mu) E[(g-c)^2] on a 1-gate toy."""
    start = time.time()
    mu, sigma, c = -4.0, 0.7, -4.8
    reg = dc.ParamRegistry()
    policy = tg.GatePolicy(reg, "toy", 1, 1, hidden=4, mu0=mu,
                           log_sigma0=float(np.log(sigma)))
    gen = frng.stream(16, "oracle.toy")
    n = 50000
    mu_slice = reg.slice_of("toy.gate0.b1")
    vals = np.empty(n)
    for i in range(n):
        tape = dc.Tape()
        s = tg.sample_tolerance(tape, policy, 0, np.zeros(1), gen)
        s.nfe = 0
        loss_val = (s.log10_tol - c) ** 2
        rets = tg.returns(loss_val, [s.reward], alpha=0.0)  # r = -L
        loss = tape.const(np.full((), loss_val))  # no parameter path: pure policy term
        surr = tg.reinforce_surrogate(loss, [s], rets, baseline=None)
        # minimizing surr descends E[L]; its mu-gradient estimates dE[L]/dmu
        vals[i] = dc.backward(tape, surr, reg)[mu_slice][0]
    analytic = 2.0 * (mu - c)
    se = vals.std(ddof=1) / np.sqrt(n)
    sigmas = abs(vals.mean() - analytic) / se
    return _bound_report("reinforce.toy_gradient", sigmas, 3.0, start)


@oracle("spiral.parameter_statistics")
def _spiral_stats():
    start = time.time()
    records = sd.gen_spiral_corpus(5000, seed=21)
    a = np.array([r.system.a for r in records])
    b = np.array([r.system.b for r in records])
    da = abs(a.mean() - 1.0) / (0.08 / np.sqrt(5000))
    db = abs(b.mean() - 0.25) / (0.03 / np.sqrt(5000))
    return _bound_report("spiral.parameter_statistics", max(da, db), 3.0, start)


@oracle("gate.returns_formula")
def _returns_formula():
    start = time.time()
    got = tg.returns(1.0, [-10.0, -20.0], 2.0)
    err = max(abs(got[0] - (-31.0)), abs(got[1] - (-21.0)))
    return _bound_report("gate.returns_formula", err, 0.0, start)


def run_oracles(pattern: str = "*") -> tuple[list[OracleReport], bool]:
    reports = []
    for name, fn in ORACLES.items():
        if fnmatch.fnmatch(name, pattern) or pattern in name:
            reports.append(fn())
    ok = all(r.passed for r in reports)
    return reports, ok


def write_report(path, reports: list[OracleReport]):
    with open(path, "w") as fh:
        json.dump([asdict(r) for r in reports], fh, indent=2)
