"""Adaptive / fixed Runge-Kutta solver: accuracy, accounting, step control."""

import numpy as np
import pytest

from flowgate import diffcore as dc
from flowgate import odesolve as od
from flowgate import rng as frng


def _solve(f, y0, t0=0.0, t1=1.0, **cfg_kwargs):
    tape = dc.Tape()
    y = tape.leaf(np.asarray(y0, dtype=float).reshape(1, -1))
    cfg = od.SolverConfig(**cfg_kwargs)
    y1, stats = od.integrate(tape, f, y, t0, t1, cfg)
    return y1, stats, tape


def test_tableau_row_sums_match_nodes():
    tab = od.DOPRI5
    for row, c in zip(tab.a, tab.c):
        assert abs(sum(row) - c) <= 1e-15


def test_tableau_order_conditions():
    tab = od.DOPRI5
    assert abs(sum(tab.b) - 1.0) <= 1e-15
    assert abs(sum(b * c for b, c in zip(tab.b, tab.c)) - 0.5) <= 1e-15
    assert abs(sum(tab.b_hat) - 1.0) <= 1e-15


def test_exponential_growth():
    y1, _, _ = _solve(lambda tp, y, t: y, [1.0], rtol=1e-8, atol=1e-8)
    assert y1.value[0, 0] == pytest.approx(np.e, abs=1e-7)


def test_constant_solution_is_exact():
    def zero(tp, y, t):
        return dc.smul(y, 0.0)

    y1, stats, _ = _solve(zero, [2.5, -1.0])
    np.testing.assert_array_equal(y1.value, [[2.5, -1.0]])
    assert stats.accepted_steps <= 5
    assert stats.rejected_steps == 0


def test_harmonic_oscillator_returns_to_start():
    def osc(tp, y, t):
        p = dc.slice_cols(y, 0, 1)
        q = dc.slice_cols(y, 1, 2)
        return dc.concat([q, dc.smul(p, -1.0)], axis=1)

    y1, _, _ = _solve(osc, [1.0, 0.0], t1=2 * np.pi, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(y1.value, [[1.0, 0.0]], atol=1e-8)


def test_error_norm_zero_error():
    assert od.error_norm(np.zeros(3), np.ones(3), np.ones(3), 1e-6, 1e-6) == 0.0


def test_error_norm_unit_case():
    atol = 1e-4
    err = np.full(5, atol)
    zero = np.zeros(5)
    assert od.error_norm(err, zero, zero, atol, 0.123) == pytest.approx(1.0, abs=1e-15)


def test_error_norm_against_duplicate_formula():
    gen = frng.stream(42, "errnorm")
    for _ in range(10):
        err = frng.normal(gen, (2, 3))
        y0 = frng.normal(gen, (2, 3))
        y1 = frng.normal(gen, (2, 3))
        atol, rtol = 1e-6, 1e-4
        ref = np.sqrt(
            np.mean((err / (atol + rtol * np.maximum(np.abs(y0), np.abs(y1)))) ** 2)
        )
        assert od.error_norm(err, y0, y1, atol, rtol) == pytest.approx(ref, abs=1e-15)


def test_next_step_unit_error():
    cfg = od.SolverConfig()
    assert od.next_step_size(1.0, 1.0, cfg) == pytest.approx(0.9)


def test_next_step_clamps_at_min_factor():
    cfg = od.SolverConfig()
    assert od.next_step_size(1.0, 1e10, cfg) == pytest.approx(0.2)


def test_next_step_doubling_case():
    cfg = od.SolverConfig()
    en = (0.9 / 2.0) ** 5
    assert od.next_step_size(1.0, en, cfg) == pytest.approx(2.0, rel=1e-12)


def test_next_step_zero_error_grows_at_max_factor():
    cfg = od.SolverConfig()
    assert od.next_step_size(0.5, 0.0, cfg) == pytest.approx(0.5 * cfg.max_factor)


def test_initial_step_zero_derivative_fallback():
    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0, 2.0]]))
    stats = od.SolveStats()

    def zero(tp, y, t):
        return dc.smul(y, 0.0)

    h0, _ = od.initial_step_size(zero, y0, 0.0, 1.0, od.SolverConfig(), stats)
    assert h0 == pytest.approx(0.01)


def test_initial_step_bounded_by_interval():
    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0]]))
    stats = od.SolveStats()
    h0, _ = od.initial_step_size(
        lambda tp, y, t: y, y0, 0.0, 1.0, od.SolverConfig(), stats
    )
    assert 0.0 < h0 <= 1.0


def test_initial_step_shrinks_for_stiffer_dynamics():
    def h_for(rate):
        tape = dc.Tape()
        y0 = tape.leaf(np.array([[1.0]]))
        h0, _ = od.initial_step_size(
            lambda tp, y, t: dc.smul(y, rate), y0, 0.0, 1.0,
            od.SolverConfig(), od.SolveStats(),
        )
        return h0

    assert h_for(-50.0) < h_for(-0.5)


@pytest.mark.parametrize(
    "method,n,lo,hi",
    [("rk4_fixed", 20, 12.0, 20.0), ("dopri5_fixed", 10, 24.0, 40.0)],
)
def test_order_of_convergence(method, n, lo, hi):
    def endpoint_err(steps):
        tape = dc.Tape()
        y0 = tape.leaf(np.array([[1.0]]))
        cfg = od.SolverConfig(method=method, fixed_step_count=steps)
        y1, _ = od.integrate(tape, lambda tp, y, t: y, y0, 0.0, 1.0, cfg)
        return abs(y1.value[0, 0] - np.e)

    ratio = endpoint_err(n) / endpoint_err(2 * n)
    assert lo <= ratio <= hi


def test_nfe_matches_counting_wrapper():
    calls = [0]

    def f(tp, y, t):
        calls[0] += 1
        return dc.tanh(y)

    _, stats, _ = _solve(f, [0.3, -0.6], rtol=1e-7, atol=1e-7)
    assert stats.nfe == calls[0]
    assert stats.nfe >= stats.accepted_steps


def test_fsal_six_evaluations_per_step():
    # nfe = 2 (initial-step heuristic) + 6 per trial step
    _, stats, _ = _solve(lambda tp, y, t: y, [1.0], rtol=1e-7, atol=1e-7)
    assert stats.nfe == 2 + 6 * (stats.accepted_steps + stats.rejected_steps)


def test_tolerance_monotonicity():
    def nfe(tol):
        _, stats, _ = _solve(
            lambda tp, y, t: dc.tanh(dc.smul(y, 3.0)), [0.8], rtol=tol, atol=tol
        )
        return stats.nfe

    assert nfe(1e-7) >= nfe(1e-3)


def test_endpoint_gradient_matches_exponential():
    a = 1.3
    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0]]))
    y1, _ = od.integrate(
        tape, lambda tp, y, t: dc.smul(y, a), y0, 0.0, 1.0,
        od.SolverConfig(rtol=1e-10, atol=1e-10),
    )
    g = dc.grad(tape, dc.tsum(y1), [y0])[0]
    assert g[0, 0] == pytest.approx(np.exp(a), abs=1e-6)


def test_max_steps_divergence_carries_partial_stats():
    def blowup(tp, y, t):
        return dc.smul(dc.square(y), 10.0)

    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0]]))
    cfg = od.SolverConfig(max_steps=8, rtol=1e-10, atol=1e-10)
    with pytest.raises(od.SolverDivergence) as exc:
        od.integrate(tape, blowup, y0, 0.0, 100.0, cfg)
    assert exc.value.stats.nfe > 0


def test_nan_derivative_raises_numeric_error():
    def bad(tp, y, t):
        out = dc.smul(y, 1.0)
        out.value = out.value * np.nan
        return out

    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0]]))
    with pytest.raises(od.SolverNumericError):
        od.integrate(tape, bad, y0, 0.0, 1.0, od.SolverConfig())


def test_reversed_interval_rejected():
    tape = dc.Tape()
    y0 = tape.leaf(np.array([[1.0]]))
    with pytest.raises(ValueError, match="t0 < t1"):
        od.integrate(tape, lambda tp, y, t: y, y0, 1.0, 0.0, od.SolverConfig())


def test_gate_tolerance_range_enforced():
    cfg = od.SolverConfig()
    assert cfg.with_tolerance(1e-3).rtol == 1e-3
    with pytest.raises(ValueError):
        cfg.with_tolerance(0.5)
    with pytest.raises(ValueError):
        cfg.with_tolerance(1e-9)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        od.SolverConfig(rtol=-1e-5)
    with pytest.raises(ValueError):
        od.SolverConfig(min_factor=1.5)
