"""Explicit Runge-Kutta integration with exact function-evaluation accounting.

The adaptive method is Dormand-Prince 5(4) with FSAL; a fixed-step
classic RK4 is available for convergence tests and as a deterministic
fallback. All accepted steps are recorded on the caller's tape, so the
endpoint is differentiable w.r.t. the initial state and the dynamics
parameters (discretize-then-optimize). Step-size control itself runs on
detached values and carries no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tape, Tensor, add, smul

__all__ = [
    "SolverConfig",
    "SolveStats",
    "SolverDivergence",
    "SolverNumericError",
    "DOPRI5",
    "error_norm",
    "next_step_size",
    "initial_step_size",
    "integrate",
]

GATE_TOL_MIN = 1e-8
GATE_TOL_MAX = 1e-1


@dataclass
class SolverConfig:
    method: str = "dopri5"  # dopri5 | rk4_fixed | dopri5_fixed (test helper)
    rtol: float = 1e-5
    atol: float = 1e-5
    max_steps: int = 10000
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 10.0
    fixed_step_count: int | None = None

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.min_factor < 1 < self.max_factor):
            raise ValueError("need 0 < min_factor < 1 < max_factor")

    def with_tolerance(self, tol: float) -> "SolverConfig":
        """Single gate value sets rtol = atol = tol."""
        if not (GATE_TOL_MIN <= tol <= GATE_TOL_MAX):
            raise ValueError(f"gated tolerance {tol} outside [{GATE_TOL_MIN}, {GATE_TOL_MAX}]")
        return SolverConfig(
            method=self.method,
            rtol=tol,
            atol=tol,
            max_steps=self.max_steps,
            safety=self.safety,
            min_factor=self.min_factor,
            max_factor=self.max_factor,
            fixed_step_count=self.fixed_step_count,
        )


@dataclass
class SolveStats:
    nfe: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0


class SolverDivergence(RuntimeError):
    def __init__(self, msg, stats: SolveStats):
        super().__init__(msg)
        self.stats = stats


class SolverNumericError(RuntimeError):
    def __init__(self, msg, stats: SolveStats):
        super().__init__(msg)
        self.stats = stats


@dataclass(frozen=True)
class ButcherTableau:
    a: tuple
    c: tuple
    b: tuple
    b_hat: tuple


# Dormand-Prince 5(4), FSAL: the 7th stage equals f at the accepted endpoint.
DOPRI5 = ButcherTableau(
    a=(
        (),
        (1 / 5,),
        (3 / 40, 9 / 40),
        (44 / 45, -56 / 15, 32 / 9),
        (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
        (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
        (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
    ),
    c=(0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0),
    b=(35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
    b_hat=(
        5179 / 57600,
        0.0,
        7571 / 16695,
        393 / 640,
        -92097 / 339200,
        187 / 2100,
        1 / 40,
    ),
)


def error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, atol: float, rtol: float) -> float:
    """RMS of the error scaled by atol + rtol * max(|y0|, |y1|) per component."""
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def next_step_size(h: float, en: float, cfg: SolverConfig) -> float:
    if en <= 0.0:
        return h * cfg.max_factor
    factor = cfg.safety * en ** (-0.2)
    return h * min(max(factor, cfg.min_factor), cfg.max_factor)


def initial_step_size(f, y0: Tensor, t0: float, t1: float, cfg: SolverConfig, stats: SolveStats,
                      f0: Tensor | None = None) -> tuple[float, Tensor]:
    """Hairer-style heuristic; returns (h0, f(y0)) so the evaluation is reused."""
    span = t1 - t0
    tape = y0.tape
    if f0 is None:
        f0 = f(tape, y0, t0)
        stats.nfe += 1
    scale = cfg.atol + cfg.rtol * np.abs(y0.value)
    d0 = float(np.sqrt(np.mean((y0.value / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0.value / scale) ** 2)))
    if d1 < 1e-10:
        return span / 100.0, f0
    h0 = 0.01 * d0 / d1 if d0 >= 1e-5 else 1e-6
    y1 = add(y0, smul(f0, h0))
    f1 = f(tape, y1, t0 + h0)
    stats.nfe += 1
    d2 = float(np.sqrt(np.mean(((f1.value - f0.value) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, span), f0


def _check_finite(val: np.ndarray, stats: SolveStats):
    if not np.all(np.isfinite(val)):
        raise SolverNumericError("non-finite derivative during solve", stats)


def _dopri5_step(tape: Tape, f, y: Tensor, t: float, h: float, k1: Tensor,
                 stats: SolveStats) -> tuple[Tensor, Tensor, np.ndarray]:
    """One trial step; returns (y1, k7, embedded error estimate)."""
    tab = DOPRI5
    ks = [k1]
    for s in range(1, 7):
        incr = None
        for j, a in enumerate(tab.a[s]):
            if a == 0.0:
                continue
            term = smul(ks[j], a * h)
            incr = term if incr is None else add(incr, term)
        ys = y if incr is None else add(y, incr)
        ki = f(tape, ys, t + tab.c[s] * h)
        stats.nfe += 1
        _check_finite(ki.value, stats)
        ks.append(ki)
    y1 = y
    for i, b in enumerate(tab.b):
        if b != 0.0:
            y1 = add(y1, smul(ks[i], b * h))
    err = np.zeros_like(y.value)
    for i, (b, bh) in enumerate(zip(tab.b, tab.b_hat)):
        d = b - bh
        if d != 0.0:
            err += d * h * ks[i].value
    return y1, ks[6], err


def integrate(tape: Tape, f, y0: Tensor, t0: float, t1: float,
              cfg: SolverConfig) -> tuple[Tensor, SolveStats]:
    """Solve y' = f(y, t) from t0 to t1; counts every dynamics evaluation.

    Rejected steps stay on the tape but are unreachable from the result,
    so they contribute nothing to gradients while still costing NFE.
    """
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got [{t0}, {t1}]")
    _require_finite_start(y0)
    if cfg.method == "rk4_fixed":
        return _rk4_fixed(tape, f, y0, t0, t1, cfg)
    if cfg.method == "dopri5_fixed":
        return _dopri5_forced(tape, f, y0, t0, t1, cfg)
    if cfg.method != "dopri5":
        raise ValueError(f"unknown method {cfg.method!r}")

    stats = SolveStats()
    h, k1 = initial_step_size(f, y0, t0, t1, cfg, stats)
    y, t = y0, t0
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        if stats.accepted_steps + stats.rejected_steps >= cfg.max_steps:
            raise SolverDivergence(
                f"exceeded max_steps={cfg.max_steps} at t={t:.6g}", stats
            )
        h = min(h, t1 - t)
        y1, k7, err = _dopri5_step(tape, f, y, t, h, k1, stats)
        en = error_norm(err, y.value, y1.value, cfg.atol, cfg.rtol)
        if en <= 1.0:
            t += h
            y, k1 = y1, k7  # FSAL: endpoint stage seeds the next step
            stats.accepted_steps += 1
        else:
            stats.rejected_steps += 1
        h = next_step_size(h, en, cfg)
    return y, stats


def _require_finite_start(y0: Tensor):
    if not np.all(np.isfinite(y0.value)):
        raise ValueError("initial state contains non-finite values")


def _rk4_fixed(tape: Tape, f, y0: Tensor, t0: float, t1: float,
               cfg: SolverConfig) -> tuple[Tensor, SolveStats]:
    n = cfg.fixed_step_count or 50
    h = (t1 - t0) / n
    stats = SolveStats()
    y = y0
    for i in range(n):
        t = t0 + i * h
        k1 = f(tape, y, t)
        k2 = f(tape, add(y, smul(k1, h / 2)), t + h / 2)
        k3 = f(tape, add(y, smul(k2, h / 2)), t + h / 2)
        k4 = f(tape, add(y, smul(k3, h)), t + h)
        stats.nfe += 4
        _check_finite(k4.value, stats)
        incr = add(add(k1, smul(add(k2, k3), 2.0)), k4)
        y = add(y, smul(incr, h / 6))
        stats.accepted_steps += 1
    return y, stats


def _dopri5_forced(tape: Tape, f, y0: Tensor, t0: float, t1: float,
                   cfg: SolverConfig) -> tuple[Tensor, SolveStats]:
    """Fixed-step Dormand-Prince with acceptance forced; for order tests."""
    n = cfg.fixed_step_count or 50
    h = (t1 - t0) / n
    stats = SolveStats()
    y = y0
    k1 = f(tape, y, t0)
    stats.nfe += 1
    for i in range(n):
        t = t0 + i * h
        y, k1, _ = _dopri5_step(tape, f, y, t, h, k1, stats)
        stats.accepted_steps += 1
    return y, stats
