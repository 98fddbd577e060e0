"""Acceptance gate: twelve system-level checks, one printed verdict each.

Each test trains or evaluates at full desk scale and prints a single
``PASS``/``FAIL`` line (bypassing pytest capture) before asserting, so a
run of this module yields one verdict per criterion. Heavy training runs
are cached at module scope and shared between criteria that examine the
same models.
"""

import functools
import time

import numpy as np
import pytest

import conftest

from flowgate import diffcore as dc
from flowgate import flow as fl
from flowgate import rng as frng
from flowgate import tolgate as tg
from flowgate.condition import infocnf_loss
from flowgate.odesolve import SolverConfig
from flowgate.oracles import ORACLES, run_oracles
from flowgate.synthdata import Labeled2dSpec, gen_2d_labeled, gen_spiral_corpus
from flowgate.train import (
    TrainConfig,
    build_conditional_model,
    evaluate_conditional,
    latentode_extrapolation_mse,
    load_checkpoint,
    riemann_normalization,
    save_checkpoint,
    train_conditional,
    train_density,
    train_latentode,
)

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)

# conditional-task training recipe (criteria 2, 3, 7, 8); calibrated so the
# partitioned variant's test error converges within the 30-minute budget
COND_EPOCHS = 250
COND_LR = 0.01
COND_SCHEDULE = ((60, 0.003), (140, 0.001))

# latent-ODE recipe (criterion 10); full-batch training on 500 curves
LODE_EPOCHS = 400
LODE_CURVES = 500
HELD_OUT_SEED = 10_007
HELD_OUT_CURVES = 200


def _verdict(num: int, name: str, passed: bool, detail: str):
    line = f"{'PASS' if passed else 'FAIL'} criterion-{num:02d} {name}: {detail}"
    print(line, flush=True)
    conftest.VERDICTS.append(line)
    assert passed, line


def _cond_cfg(seed: int, mode: str) -> TrainConfig:
    return TrainConfig(seed=seed, lr=COND_LR, epochs=COND_EPOCHS,
                       lr_schedule=[list(e) for e in COND_SCHEDULE],
                       tolerance_mode=mode)


@functools.lru_cache(maxsize=None)
def _cond_run(variant: str, seed: int, mode: str = "fixed"):
    start = time.time()
    model, metrics, _ = train_conditional(_cond_cfg(seed, mode), variant)
    return model, metrics, time.time() - start


def _cond_test_set(seed: int):
    spec = Labeled2dSpec()
    n_test = TrainConfig().n_test
    x, y, _ = gen_2d_labeled(
        Labeled2dSpec(spec.means, spec.stddevs, n_test // spec.n_classes),
        seed=seed + 7919,
    )
    return x, y


@functools.lru_cache(maxsize=None)
def _lode_run(partitioned: bool, seed: int):
    cfg = TrainConfig(seed=seed, lr=0.01, epochs=LODE_EPOCHS,
                      n_curves=LODE_CURVES, batch_size=LODE_CURVES)
    start = time.time()
    bundle, _ = train_latentode(cfg, partitioned=partitioned)
    return bundle, time.time() - start


# -- 1: trained density integrates to one ------------------------------------


def test_criterion_01_normalization():
    start = time.time()
    model, _ = train_density(TrainConfig(seed=0))
    area = riemann_normalization(model, lo=-8.0, hi=8.0, step=1e-3, tolerance=1e-5)
    elapsed = time.time() - start
    gap = abs(area - 1.0)
    _verdict(1, "normalization", gap <= 0.01 and elapsed <= 900,
             f"|area-1|={gap:.2e} (<=0.01), runtime={elapsed:.0f}s (<=900s)")


# -- 2: evaluation NLL/error insensitive to solver tolerance -----------------


def test_criterion_02_tolerance_insensitivity():
    model, _, _ = _cond_run("infocnf", 0)
    x, y = _cond_test_set(0)
    results = [evaluate_conditional(model, x, y, tolerance=t)
               for t in (1e-5, 1e-6, 1e-7, 1e-8)]
    nll_spread = max(r.test_nll for r in results) - min(r.test_nll for r in results)
    errs = [r.test_err for r in results]
    ok = nll_spread <= 1e-3 and len(set(errs)) == 1
    _verdict(2, "tolerance-insensitivity", ok,
             f"nll spread={nll_spread:.2e} (<=1e-3), errors={errs}")


# -- 3: NFE grows as tolerance tightens ---------------------------------------


def test_criterion_03_nfe_monotonicity():
    model, _, _ = _cond_run("infocnf", 0)
    x, y = _cond_test_set(0)
    loose = evaluate_conditional(model, x, y, tolerance=1e-3).mean_nfe
    tight = evaluate_conditional(model, x, y, tolerance=1e-7).mean_nfe
    _verdict(3, "nfe-monotonicity", tight > loose,
             f"mean NFE {tight:.1f} @1e-7 > {loose:.1f} @1e-3")


# -- 4: end-to-end gradient matches finite differences ------------------------


def test_criterion_04_gradient_fidelity():
    cfg = TrainConfig(seed=0, flow_depth=1, hidden=[16])
    model = build_conditional_model(cfg, "infocnf", dim=2)
    reg = model.registry
    solver = SolverConfig(rtol=1e-10, atol=1e-10)
    x, y, _ = gen_2d_labeled(Labeled2dSpec(samples_per_class=4), seed=11)

    def loss_at(vec):
        reg.vector[:] = vec
        tape = dc.Tape()
        parts = infocnf_loss(tape, tape.const(x), y, model.stack, model.partition,
                             model.prior, model.classifier, cfg.beta, solver,
                             train=False)
        return float(parts.total.value)

    tape = dc.Tape()
    parts = infocnf_loss(tape, tape.const(x), y, model.stack, model.partition,
                         model.prior, model.classifier, cfg.beta, solver,
                         train=False)
    g = dc.backward(tape, parts.total, reg)
    v0 = reg.vector.copy()
    pick_gen = frng.stream(0, "acceptance.fd")
    idx = pick_gen.permutation(reg.size)[:20]
    h = 1e-5
    worst = 0.0
    for i in idx:
        vp, vm = v0.copy(), v0.copy()
        vp[i] += h
        vm[i] -= h
        fd = (loss_at(vp) - loss_at(vm)) / (2 * h)
        worst = max(worst, abs(g[i] - fd) / (1.0 + abs(fd)))
    reg.vector[:] = v0
    _verdict(4, "gradient-fidelity", worst <= 1e-4,
             f"worst relative error={worst:.2e} (<=1e-4, 20 random params)")


# -- 5: solver convergence orders ---------------------------------------------


def test_criterion_05_solver_order():
    rk4 = ORACLES["solver.order_rk4"]()
    dp5 = ORACLES["solver.order_dopri5_forced"]()
    ok = 12.0 <= rk4.measured <= 20.0 and 24.0 <= dp5.measured <= 40.0
    _verdict(5, "solver-order", ok,
             f"rk4 ratio={rk4.measured:.2f} (in [12,20]), "
             f"dopri5 ratio={dp5.measured:.2f} (in [24,40])")


# -- 6: Hutchinson trace estimator is unbiased --------------------------------


def test_criterion_06_hutchinson():
    general = ORACLES["trace.hutchinson_unbiased"]()

    # diagonal Jacobian: every Rademacher sample recovers the trace exactly
    reg = dc.ParamRegistry()
    mlp = dc.Mlp.create(reg, "diag", [4, 4], zero_init=True)
    w = np.diag([0.7, -1.3, 0.2, 2.1])
    reg.set("diag.w0", w)
    gen = frng.stream(0, "acceptance.diag")
    z = frng.normal(gen, (64, 4))
    eps = frng.rademacher(gen, (64, 4))
    tape = dc.Tape()
    est = fl.trace_hutchinson(tape, mlp, tape.const(z), 0.0, eps).value.ravel()
    diag_gap = float(np.abs(est - np.trace(w)).max())

    ok = general.passed and diag_gap <= 1e-12
    _verdict(6, "hutchinson-unbiased", ok,
             f"worst |mean-exact|={general.measured:.2f} SE (<=3), "
             f"diagonal case max gap={diag_gap:.1e} (<=1e-12)")


# -- 7: partitioned conditioning: fewer parameters, comparable error ----------


def test_criterion_07_partitioning_efficiency():
    info_errs, ccnf_errs, max_runtime = [], [], 0.0
    info_params = ccnf_params = None
    for seed in SEEDS:
        im, imetrics, it = _cond_run("infocnf", seed)
        cm, cmetrics, ct = _cond_run("ccnf", seed)
        info_errs.append(imetrics[-1].test_err)
        ccnf_errs.append(cmetrics[-1].test_err)
        info_params = im.conditioning_param_count()
        ccnf_params = cm.conditioning_param_count()
        max_runtime = max(max_runtime, it, ct)
    info_err = float(np.mean(info_errs))
    ccnf_err = float(np.mean(ccnf_errs))
    ok = (info_params < ccnf_params
          and info_err <= ccnf_err + 0.01
          and max_runtime <= 1800)
    _verdict(7, "partitioning-efficiency", ok,
             f"cond params {info_params}<{ccnf_params}, mean err "
             f"{info_err:.4f}<= {ccnf_err:.4f}+0.01, slowest run "
             f"{max_runtime:.0f}s (<=1800s)")


# -- 8: learned tolerances cut training NFE without hurting NLL ---------------


def test_criterion_08_gated_nfe_reduction():
    fixed_nfe, gated_nfe, fixed_nll, gated_nll = [], [], [], []
    for seed in SEEDS:
        _, fm, _ = _cond_run("infocnf", seed, "fixed")
        _, gm, _ = _cond_run("infocnf", seed, "gated")
        fixed_nfe.append(np.mean([m.mean_nfe for m in fm]))
        gated_nfe.append(np.mean([m.mean_nfe for m in gm]))
        fixed_nll.append(fm[-1].test_nll)
        gated_nll.append(gm[-1].test_nll)
    f_nfe, g_nfe = float(np.mean(fixed_nfe)), float(np.mean(gated_nfe))
    nll_gap = abs(float(np.mean(gated_nll)) - float(np.mean(fixed_nll)))
    reduction = 1.0 - g_nfe / f_nfe
    ok = reduction >= 0.05 and nll_gap <= 0.05
    _verdict(8, "gated-nfe-reduction", ok,
             f"epoch-mean NFE {g_nfe:.1f} vs {f_nfe:.1f} "
             f"(reduction {100*reduction:.1f}% >= 5%), |dNLL|={nll_gap:.3f} (<=0.05)")


# -- 9: REINFORCE gradient matches the analytic toy ---------------------------


def _toy_gradients(n: int, use_baseline: bool, stream: str) -> np.ndarray:
    mu, sigma, c = -4.0, 0.7, -4.8
    reg = dc.ParamRegistry()
    policy = tg.GatePolicy(reg, "toy", 1, 1, hidden=4, mu0=mu,
                           log_sigma0=float(np.log(sigma)))
    gen = frng.stream(17, stream)
    baseline = tg.RewardBaseline(1) if use_baseline else None
    mu_slice = reg.slice_of("toy.gate0.b1")
    vals = np.empty(n)
    for i in range(n):
        tape = dc.Tape()
        s = tg.sample_tolerance(tape, policy, 0, np.zeros(1), gen)
        s.nfe = 0
        loss_val = (s.log10_tol - c) ** 2
        rets = tg.returns(loss_val, [s.reward], alpha=0.0)
        loss = tape.const(np.full((), loss_val))
        surr = tg.reinforce_surrogate(loss, [s], rets, baseline=baseline)
        vals[i] = dc.backward(tape, surr, reg)[mu_slice][0]
    return vals


def test_criterion_09_reinforce():
    mu, c = -4.0, -4.8
    vals = _toy_gradients(50_000, use_baseline=False, stream="acc.toy")
    analytic = 2.0 * (mu - c)
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    sigmas = abs(vals.mean() - analytic) / se

    with_b = _toy_gradients(20_000, use_baseline=True, stream="acc.toy.b")
    without_b = _toy_gradients(20_000, use_baseline=False, stream="acc.toy.b")
    var_ok = with_b.var(ddof=1) < without_b.var(ddof=1)

    ok = sigmas <= 3.0 and var_ok
    _verdict(9, "reinforce-gradient", ok,
             f"estimate {vals.mean():.3f} vs analytic {analytic:.3f} "
             f"({sigmas:.2f} SE <= 3), variance {with_b.var(ddof=1):.2f} (baseline) "
             f"< {without_b.var(ddof=1):.2f} (none)")


# -- 10: partitioned latent ODE extrapolates better ---------------------------


def test_criterion_10_spiral_extrapolation():
    held_out = gen_spiral_corpus(HELD_OUT_CURVES, seed=HELD_OUT_SEED)
    wins, pairs, max_runtime = 0, [], 0.0
    for seed in SEEDS:
        part, pt = _lode_run(True, seed)
        base, bt = _lode_run(False, seed)
        p_mse = latentode_extrapolation_mse(part, held_out)
        b_mse = latentode_extrapolation_mse(base, held_out)
        wins += p_mse < b_mse
        pairs.append((round(p_mse, 3), round(b_mse, 3)))
        max_runtime = max(max_runtime, pt, bt)
    ok = wins >= 2 and max_runtime <= 2700
    _verdict(10, "spiral-extrapolation", ok,
             f"partitioned wins {wins}/3 (mse part,base per seed: {pairs}), "
             f"slowest run {max_runtime:.0f}s (<=2700s)")


# -- 11: bit-exact determinism and checkpoint round trip -----------------------


def test_criterion_11_determinism(tmp_path):
    cfg = dict(seed=123, epochs=3, n_train=256, n_test=128, batch_size=64,
               hidden=[16], flow_depth=1)
    m1, r1, _ = train_conditional(TrainConfig(**cfg), "infocnf")
    m2, r2, _ = train_conditional(TrainConfig(**cfg), "infocnf")
    rows_equal = [m.row() for m in r1] == [m.row() for m in r2]

    x, y = _cond_test_set(123)
    before = evaluate_conditional(m1, x, y)
    save_checkpoint(str(tmp_path / "ckpt"), m1)
    loaded = load_checkpoint(str(tmp_path / "ckpt"))
    after = evaluate_conditional(loaded, x, y)
    round_trip = (before.test_nll == after.test_nll
                  and before.test_err == after.test_err
                  and before.mean_nfe == after.mean_nfe)

    ok = rows_equal and round_trip
    _verdict(11, "determinism-roundtrip", ok,
             f"identical-seed metrics bit-exact={rows_equal}, "
             f"checkpoint round trip metric-identical={round_trip}")


# -- 12: the verification-oracle suite is green --------------------------------


def test_criterion_12_oracle_suite():
    start = time.time()
    reports, ok_all = run_oracles("*")
    elapsed = time.time() - start
    failing = [r.name for r in reports if not r.passed]
    ok = ok_all and elapsed <= 1800
    _verdict(12, "oracle-suite", ok,
             f"{len(reports)} oracles, failures={failing or 'none'}, "
             f"runtime={elapsed:.0f}s (<=1800s)")
