"""Mean-field dynamics and convergence diagnostics.

The suprema over ``X^M x U`` that define mean-field convergence cannot be
computed, so each diagnostic replaces them by a maximum over seeded samples
and reports how that maximum decays with the population size ``M``. Sample
``i`` at population size ``M`` always draws from the generator seeded by
``(seed, M, i)``; statistics are reduced from the sorted sample list, so
reports are bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from ._sampling import stream
from .exceptions import InputError
from .kernels import Kernel, clamped_sqrt
from .measures import AtomicMeasure, empirical, kme_inner, mmd
from .systems import SystemModel, sampled_lipschitz


def mf_step(model: SystemModel, mu: AtomicMeasure, u) -> AtomicMeasure:
    return model.mf_step(mu, u)


def mf_trajectory(model: SystemModel, mu0: AtomicMeasure, useq) -> list[AtomicMeasure]:
    return model.mf_trajectory(mu0, useq)


def mf_stage_cost(model: SystemModel, mu: AtomicMeasure, u) -> float:
    return model.mf_stage_cost(mu, u)


def mf_total_cost(model: SystemModel, mu0: AtomicMeasure, useq) -> float:
    return model.mf_total_cost(mu0, useq)


# -- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    max: float
    mean: float
    median: float
    n_samples: int

    @classmethod
    def of(cls, values: Sequence[float]) -> Summary:
        arr = np.sort(np.asarray(values, dtype=float))
        return cls(float(arr.max()), float(arr.mean()), float(np.median(arr)), int(arr.size))


@dataclass(frozen=True)
class ConvergenceRow:
    M: int
    max: float
    mean: float
    median: float
    n_samples: int
    seed: int


def fit_rate(ms: Sequence[int], values: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of ``log(values)`` against ``log(ms)`` and the RMS log residual.

    Returns ``(nan, nan)`` when fewer than two points are given or any value is zero.
    """
    ms = np.asarray(ms, dtype=float)
    values = np.asarray(values, dtype=float)
    if ms.size < 2 or np.any(values <= 0):
        return math.nan, math.nan
    x, y = np.log(ms), np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), residual


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _json_float(value: float):
    return None if isinstance(value, float) and not math.isfinite(value) else value


CSV_COLUMNS = ("M", "max", "mean", "median", "n_samples", "seed")


@dataclass
class ConvergenceReport:
    """Per-``M`` discrepancy statistics plus a fitted log-log rate."""

    experiment: str
    rows: list[ConvergenceRow]
    fit_on: str = "max"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        ms = [row.M for row in self.rows]
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise InputError("M values in a report must be strictly increasing")

    @property
    def ms(self) -> list[int]:
        return [row.M for row in self.rows]

    def statistic(self, name: str | None = None) -> list[float]:
        return [getattr(row, name or self.fit_on) for row in self.rows]

    @property
    def slope(self) -> float:
        return fit_rate(self.ms, self.statistic())[0]

    @property
    def residual(self) -> float:
        return fit_rate(self.ms, self.statistic())[1]

    @property
    def seeds(self) -> list[int]:
        return sorted({row.seed for row in self.rows})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(getattr(row, col)) for col in CSV_COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "fit_on": self.fit_on,
            "slope": _json_float(self.slope),
            "residual": _json_float(self.residual),
            "seeds": self.seeds,
            "rows": [asdict(row) for row in self.rows],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- parallel map -----------------------------------------------------------------


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """``[fn(item) for item in items]``, optionally spread over worker processes.

    Output order follows ``items`` whatever the worker count.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


# -- per-sample kernels (top level so they pickle) ----------------------------------


def _one_step_sample(model: SystemModel, kernel: Kernel, m: int, seed: int, i: int) -> float:
    rng = stream(seed, m, i)
    x = model.sample_state(rng, m)
    u = model.sample_control(rng)
    return mmd(kernel, empirical(model.step(x, u)), model.mf_step(empirical(x), u))


def _cost_sample(model: SystemModel, m: int, horizon: int, seed: int, i: int) -> float:
    rng = stream(seed, m, i)
    x0 = model.sample_state(rng, m)
    useq = np.array([model.sample_control(rng) for _ in range(horizon)])
    return abs(model.total_cost(x0, useq) - model.mf_total_cost(empirical(x0), useq))


def _embedding_sample(kernel: Kernel, ref: AtomicMeasure, ref_self: float, m: int, seed: int, s: int) -> float:
    rng = stream(seed, m, s)
    idx = rng.choice(ref.n_atoms, size=m, p=ref.weights)
    sample = empirical(ref.atoms[idx])
    radicand = kme_inner(kernel, sample, sample) - 2.0 * kme_inner(kernel, sample, ref) + ref_self
    return clamped_sqrt(radicand, what="MMD")


def _check_schedule(ms: Sequence[int], minimum: int = 1) -> list[int]:
    ms = [int(m) for m in ms]
    if not ms or any(m < minimum for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
        raise InputError(f"M schedule must be strictly increasing integers >= {minimum}, got {ms}")
    return ms


# -- diagnostics -------------------------------------------------------------------


def one_step_discrepancy(
    model: SystemModel, m: int, n_samples: int, seed: int, kernel: Kernel | None = None, jobs: int = 1
) -> Summary:
    """Sampled ``MMD(empirical(f_M(x, u)), f(empirical(x), u))`` over random ``(x, u)``."""
    if m < 2:
        raise InputError("one-step discrepancy needs M >= 2")
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    fn = partial(_one_step_sample, model, kernel or model.kernel, m, seed)
    return Summary.of(parallel_map(fn, range(n_samples), jobs))


def one_step_convergence(
    model: SystemModel, ms: Sequence[int], n_samples: int, seed: int, jobs: int = 1
) -> ConvergenceReport:
    ms = _check_schedule(ms, minimum=2)
    rows = []
    for m in ms:
        s = one_step_discrepancy(model, m, n_samples, seed, jobs=jobs)
        rows.append(ConvergenceRow(m, s.max, s.mean, s.median, s.n_samples, seed))
    return ConvergenceReport("one-step", rows)


@dataclass(frozen=True)
class TrajectoryBoundCheck:
    lhs: float
    rhs: float
    residuals: list[float]
    lipschitz: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-9


def trajectory_bound_check(model: SystemModel, x0, useq, lipschitz: float | None = None) -> TrajectoryBoundCheck:
    """Compare ``MMD(empirical(x(N)), mu(N))`` with the accumulated one-step residuals.

    ``residuals[n] = MMD(empirical(x(n+1)), f(empirical(x(n)), u(n)))`` and the
    bound is ``sum_n L_f^(N-1-n) residuals[n]``.
    """
    lip = model.lipschitz_dynamics if lipschitz is None else float(lipschitz)
    useq = model.check_controls(useq)
    states = model.trajectory(x0, useq)
    measures = model.mf_trajectory(empirical(states[0]), useq)
    kernel = model.kernel
    residuals = [
        mmd(kernel, empirical(states[n + 1]), model.mf_step(empirical(states[n]), u)) for n, u in enumerate(useq)
    ]
    horizon = len(useq)
    rhs = sum(lip ** (horizon - 1 - n) * r for n, r in enumerate(residuals))
    lhs = mmd(kernel, empirical(states[-1]), measures[-1])
    return TrajectoryBoundCheck(lhs, float(rhs), residuals, lip)


def cost_convergence(
    model: SystemModel, ms: Sequence[int], horizon: int, n_samples: int, seed: int, jobs: int = 1
) -> ConvergenceReport:
    """Sampled ``|J_N^M(x0, u) - J_N(empirical(x0), u)|`` per population size."""
    if horizon < 1:
        raise InputError("horizon N must be at least 1")
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    ms = _check_schedule(ms)
    rows = []
    for m in ms:
        fn = partial(_cost_sample, model, m, horizon, seed)
        s = Summary.of(parallel_map(fn, range(n_samples), jobs))
        rows.append(ConvergenceRow(m, s.max, s.mean, s.median, s.n_samples, seed))
    return ConvergenceReport("cost-convergence", rows)


def stage_cost_convergence(
    model: SystemModel, ms: Sequence[int], n_samples: int, seed: int, jobs: int = 1
) -> ConvergenceReport:
    """Sampled ``|l_M(x, u) - l(empirical(x), u)|``; the horizon-one case of :func:`cost_convergence`."""
    report = cost_convergence(model, ms, 1, n_samples, seed, jobs)
    report.experiment = "stage-cost-convergence"
    return report


def embedding_convergence(
    kernel: Kernel, mu_ref: AtomicMeasure, ms: Sequence[int], n_seeds: int, seed: int = 0, jobs: int = 1
) -> ConvergenceReport:
    """MMD between ``M`` i.i.d. draws from ``mu_ref`` and ``mu_ref``; the rate is fitted on the median."""
    if n_seeds < 1:
        raise InputError("n_seeds must be at least 1")
    ms = _check_schedule(ms)
    kernel.box.check(mu_ref.atoms)
    ref_self = kme_inner(kernel, mu_ref, mu_ref)
    rows = []
    for m in ms:
        fn = partial(_embedding_sample, kernel, mu_ref, ref_self, m, seed)
        s = Summary.of(parallel_map(fn, range(n_seeds), jobs))
        rows.append(ConvergenceRow(m, s.max, s.mean, s.median, s.n_samples, seed))
    return ConvergenceReport("embedding-convergence", rows, fit_on="median")


def estimate_lipschitz(
    target: str | Callable, model: SystemModel, n_pairs: int, seed: int, m: int = 20
) -> float:
    """Sampled lower bound on a Lipschitz constant w.r.t. the embedded product norm.

    ``target`` is ``"dynamics"``, ``"meanfield"``, ``"stage_cost"`` or a callable
    ``(x, u) -> value``; see :func:`kmfl.systems.sampled_lipschitz`.
    """
    return sampled_lipschitz(model, target, m, n_pairs, seed)
