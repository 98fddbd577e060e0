"""Seeded generators for the synthetic corpora.

Every generator is a pure function of (spec, seed): randomness comes
from the package's Philox streams (see rng.py), so outputs are
byte-identical across runs. Each density generator also returns its
closed-form log-density for oracle comparisons.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng as frng
from .latentode import SpiralSystem, gen_spiral_curve

__all__ = [
    "MixtureSpec",
    "Labeled2dSpec",
    "SpiralRecord",
    "gen_1d_mixture",
    "gen_2d_labeled",
    "gen_spiral_corpus",
    "write_mixture_csv",
    "write_labeled2d_csv",
    "write_spiral_csv",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MixtureSpec:
    weights: tuple = (0.3, 0.4, 0.3)
    means: tuple = (-2.0, 0.0, 2.0)
    stddevs: tuple = (0.4, 0.5, 0.4)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if len(self.weights) != len(self.means) or len(self.means) != len(self.stddevs):
            raise ValueError("weights/means/stddevs must have equal length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(np.asarray(self.stddevs) <= 0):
            raise ValueError("stddevs must be positive")


def gen_1d_mixture(spec: MixtureSpec, n: int, seed: int):
    """Samples plus the exact mixture log-density (vectorized callable)."""
    if n < 1:
        raise ValueError("need n >= 1")
    gen = frng.stream(seed, "mix1d")
    comp = gen.choice(len(spec.weights), size=n, p=np.asarray(spec.weights))
    eps = frng.normal(gen, (n,))
    x = np.asarray(spec.means)[comp] + np.asarray(spec.stddevs)[comp] * eps
    w = np.asarray(spec.weights)
    mu = np.asarray(spec.means)
    sd = np.asarray(spec.stddevs)

    def log_density(pts):
        pts = np.atleast_1d(np.asarray(pts, dtype=np.float64))
        z = (pts[:, None] - mu[None, :]) / sd[None, :]
        comp_lp = -0.5 * z**2 - np.log(sd)[None, :] - 0.5 * LOG_2PI + np.log(w)[None, :]
        m = comp_lp.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(comp_lp - m).sum(axis=1, keepdims=True))).ravel()

    return x.reshape(-1, 1), log_density


@dataclass(frozen=True)
class Labeled2dSpec:
    """One diagonal Gaussian per class; default 4 classes at square corners."""

    means: tuple = ((-2.0, -2.0), (-2.0, 2.0), (2.0, -2.0), (2.0, 2.0))
    stddevs: tuple = ((0.5, 0.5),) * 4
    samples_per_class: int = 512

    def __post_init__(self):
        if len(self.means) < 2:
            raise ValueError("need at least 2 classes")
        if len(self.means) != len(self.stddevs):
            raise ValueError("means/stddevs class count mismatch")
        if np.any(np.asarray(self.stddevs) <= 0):
            raise ValueError("stddevs must be positive")

    @property
    def n_classes(self) -> int:
        return len(self.means)


def gen_2d_labeled(spec: Labeled2dSpec, seed: int):
    """(points, labels) plus the exact per-class log-density."""
    gen = frng.stream(seed, "labeled2d")
    pts, labels = [], []
    for c in range(spec.n_classes):
        eps = frng.normal(gen, (spec.samples_per_class, 2))
        pts.append(np.asarray(spec.means[c]) + np.asarray(spec.stddevs[c]) * eps)
        labels.append(np.full(spec.samples_per_class, c, dtype=int))
    points = np.concatenate(pts)
    labels = np.concatenate(labels)
    mu = np.asarray(spec.means)
    sd = np.asarray(spec.stddevs)

    def class_log_density(pts_, c):
        pts_ = np.asarray(pts_, dtype=np.float64)
        z = (pts_ - mu[c]) / sd[c]
        return (-0.5 * z**2 - np.log(sd[c]) - 0.5 * LOG_2PI).sum(axis=1)

    return points, labels, class_log_density


@dataclass
class SpiralRecord:
    system: SpiralSystem
    times: np.ndarray  # ground-truth grid, length 1000
    curve: np.ndarray  # (1000, 2) noiseless
    window_times: np.ndarray  # (200,)
    window: np.ndarray  # (200, 2) noisy


# ground-truth grid: clockwise curves are singular at t=0, so start above it
SPIRAL_T_MIN = 0.05 * 2.0 * np.pi
SPIRAL_T_MAX = 6.0 * np.pi
SPIRAL_CURVE_LEN = 1000
SPIRAL_WINDOW_LEN = 200
SPIRAL_NOISE_STD = 0.3


def gen_spiral_corpus(n_curves: int = 5000, seed: int = 0,
                      window_len: int = SPIRAL_WINDOW_LEN) -> list[SpiralRecord]:
    """Half clockwise, half counter-clockwise; noisy contiguous windows."""
    if n_curves % 2 != 0:
        raise ValueError("n_curves must be even (half per direction)")
    gen = frng.stream(seed, "spirals")
    grid = np.linspace(SPIRAL_T_MIN, SPIRAL_T_MAX, SPIRAL_CURVE_LEN)
    records = []
    for i in range(n_curves):
        direction = "clockwise" if i < n_curves // 2 else "counter_clockwise"
        a = float(frng.normal(gen, (), mean=1.0, std=0.08))
        b = float(frng.normal(gen, (), mean=0.25, std=0.03))
        system = SpiralSystem(a=a, b=b, direction=direction)
        curve = gen_spiral_curve(system, grid)
        start = int(gen.integers(0, SPIRAL_CURVE_LEN - window_len + 1))
        wt = grid[start : start + window_len]
        noise = frng.normal(gen, (window_len, 2), std=SPIRAL_NOISE_STD)
        records.append(
            SpiralRecord(
                system=system,
                times=grid,
                curve=curve,
                window_times=wt,
                window=curve[start : start + window_len] + noise,
            )
        )
    return records


# -- CSV dumps -------------------------------------------------------------


def write_mixture_csv(path, samples: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"])
        for v in samples.ravel():
            w.writerow([repr(float(v))])


def write_labeled2d_csv(path, points: np.ndarray, labels: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x0", "x1", "label"])
        for p, l in zip(points, labels):
            w.writerow([repr(float(p[0])), repr(float(p[1])), int(l)])


def write_spiral_csv(path, records: list[SpiralRecord]):
    """One row per window time step: seq id, t, noisy x/y, system parameters."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq", "t", "x", "y", "a", "b", "direction"])
        for i, rec in enumerate(records):
            for t, (x, y) in zip(rec.window_times, rec.window):
                w.writerow(
                    [i, repr(float(t)), repr(float(x)), repr(float(y)),
                     repr(rec.system.a), repr(rec.system.b), rec.system.direction]
                )
