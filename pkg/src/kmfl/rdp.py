"""Relaxed dynamic programming certificates.

For a value candidate ``V``, a feedback ``kappa`` and ``alpha`` in ``(0, 1]``
the relaxed dynamic programming inequality reads

    V(x) >= V(f(x, kappa(x))) + alpha * l(x, kappa(x)).

This module evaluates its residual on M-agent states and on measures, finds
the largest ``alpha`` supported by a sample of states, and ships concrete
candidates for ``V`` and ``kappa``.
"""

from __future__ import annotations

import itertools
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._sampling import perturb_state, stream
from .exceptions import CertificateError, EstimationError, InputError
from .kernels import Kernel
from .measures import AtomicMeasure, empirical, mmd
from .systems import (
    CALIBRATION_MS,
    CALIBRATION_PAIRS,
    CALIBRATION_SEED,
    DEGENERATE_DISTANCE,
    SAFETY_FACTOR,
    SystemModel,
    embedding_sq_norm,
    measure_variance,
    output_distance,
    variance_lipschitz,
)

RESIDUAL_TOL = 1e-9
ZERO_COST_TOL = 1e-12


# -- value candidates ------------------------------------------------------------


class ValueCandidate(ABC):
    """Nonnegative, permutation invariant value function candidate."""

    kind = "custom"

    @abstractmethod
    def meanfield(self, mu: AtomicMeasure, kernel: Kernel) -> float:
        """Measure-level value ``V(mu)``."""

    def micro(self, x, kernel: Kernel) -> float:
        return self.meanfield(empirical(x), kernel)

    def declared_lipschitz(self, kernel: Kernel) -> float | None:
        return None


class VarianceValue(ValueCandidate):
    kind = "variance_value"

    def __init__(self, c: float = 1.0):
        if not c > 0:
            raise InputError(f"value scale c must be positive, got {c}")
        self.c = float(c)

    def meanfield(self, mu, kernel):
        return self.c * measure_variance(mu)

    def declared_lipschitz(self, kernel):
        base = variance_lipschitz(kernel)
        return None if base is None else self.c * base


class KernelCohesionValue(ValueCandidate):
    """``c * (k_max - ||Pi_k(mu)||^2)``, MMD-Lipschitz with constant ``2 c sqrt(k_max)``."""

    kind = "kernel_cohesion_value"

    def __init__(self, c: float = 1.0):
        if not c > 0:
            raise InputError(f"value scale c must be positive, got {c}")
        self.c = float(c)

    def meanfield(self, mu, kernel):
        return self.c * max(kernel.bound - embedding_sq_norm(kernel, mu), 0.0)

    def declared_lipschitz(self, kernel):
        return 2.0 * self.c * math.sqrt(kernel.bound)


class CustomValue(ValueCandidate):
    def __init__(self, meanfield: Callable, micro: Callable | None = None, lipschitz: float | None = None):
        self._meanfield = meanfield
        self._micro = micro
        self._lipschitz = lipschitz

    def meanfield(self, mu, kernel):
        return float(self._meanfield(mu, kernel))

    def micro(self, x, kernel):
        if self._micro is None:
            return super().micro(x, kernel)
        return float(self._micro(x, kernel))

    def declared_lipschitz(self, kernel):
        return self._lipschitz


# -- feedback maps -------------------------------------------------------------------


class FeedbackMap(ABC):
    """Permutation invariant feedback ``kappa_M: X^M -> U`` and its measure-level form."""

    kind = "custom"
    declared_lipschitz: float | None = None

    @abstractmethod
    def meanfield(self, mu: AtomicMeasure) -> np.ndarray:
        """Control applied to the population ``mu``."""

    def micro(self, x) -> np.ndarray:
        return self.meanfield(empirical(x))


class ZeroFeedback(FeedbackMap):
    kind = "zero"
    declared_lipschitz = 0.0

    def __init__(self, control_dim: int):
        self.control_dim = int(control_dim)

    def meanfield(self, mu):
        return np.zeros(self.control_dim)


class CustomFeedback(FeedbackMap):
    def __init__(self, meanfield: Callable, micro: Callable | None = None, lipschitz: float | None = None):
        self._meanfield = meanfield
        self._micro = micro
        self.declared_lipschitz = lipschitz

    def meanfield(self, mu):
        return np.asarray(self._meanfield(mu), dtype=float).reshape(-1)

    def micro(self, x):
        if self._micro is None:
            return super().micro(x)
        return np.asarray(self._micro(x), dtype=float).reshape(-1)


class GreedyGridFeedback(FeedbackMap):
    """One-step lookahead ``argmin_u l(x, u) + V(f(x, u))`` over a tensor grid of ``U``.

    Ties go to the lexicographically smallest grid index. The argmin can jump
    between grid points, so no Lipschitz constant is declared.
    """

    kind = "greedy_grid"

    def __init__(self, model: SystemModel, value: ValueCandidate, grid_res: int):
        if grid_res < 2:
            raise InputError("grid_res must be at least 2")
        self.model = model
        self.value = value
        self.grid_res = int(grid_res)
        axis = np.linspace(-model.u_max, model.u_max, self.grid_res)
        self.grid = np.array(list(itertools.product(axis, repeat=model.control_dim)))

    def micro(self, x):
        model, kernel = self.model, self.model.kernel
        scores = [model.stage_cost(x, u) + self.value.micro(model.step(x, u), kernel) for u in self.grid]
        return self.grid[int(np.argmin(scores))].copy()

    def meanfield(self, mu):
        model, kernel = self.model, self.model.kernel
        scores = [model.mf_stage_cost(mu, u) + self.value.meanfield(model.mf_step(mu, u), kernel) for u in self.grid]
        return self.grid[int(np.argmin(scores))].copy()


def greedy_feedback(model: SystemModel, value: ValueCandidate, grid_res: int) -> GreedyGridFeedback:
    return GreedyGridFeedback(model, value, grid_res)


# -- certificates ------------------------------------------------------------------------


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise InputError(f"alpha must lie in (0, 1], got {alpha}")
    return float(alpha)


def _micro_terms(model: SystemModel, value: ValueCandidate, kappa: FeedbackMap, x) -> tuple[float, float, float]:
    """``(V(x), V(f(x, kappa(x))), l(x, kappa(x)))``."""
    x = model.check_state(x)
    u = model.check_control(kappa.micro(x))
    kernel = model.kernel
    return value.micro(x, kernel), value.micro(model.step(x, u), kernel), model.stage_cost(x, u)


def rdp_residual_micro(model: SystemModel, value: ValueCandidate, kappa: FeedbackMap, x, alpha: float) -> float:
    """``V_M(x) - V_M(f_M(x, kappa_M(x))) - alpha * l_M(x, kappa_M(x))``."""
    alpha = _check_alpha(alpha)
    v_now, v_next, cost = _micro_terms(model, value, kappa, x)
    return v_now - v_next - alpha * cost


@dataclass(frozen=True)
class AlphaEstimate:
    """Largest ``alpha`` supported by a sample of states."""

    alpha: float
    vacuous: bool
    n_ratio: int
    n_zero_cost: int

    def __float__(self):
        return self.alpha


def max_alpha_micro(
    model: SystemModel, value: ValueCandidate, kappa: FeedbackMap, m: int, n_samples: int, seed: int
) -> AlphaEstimate:
    """``min (V(x) - V(f(x, kappa(x)))) / l(x, kappa(x))`` over sampled states, capped at 1.

    States with zero stage cost are excluded from the ratio but must satisfy
    ``V(x) >= V(f(x, kappa(x)))`` on their own. When no state contributes a
    ratio the estimate is 1 and flagged vacuous.
    """
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    states = [model.sample_state(stream(seed, m, i), m) for i in range(n_samples)]
    return max_alpha_states(model, value, kappa, states)


def max_alpha_states(model: SystemModel, value: ValueCandidate, kappa: FeedbackMap, states: Sequence) -> AlphaEstimate:
    """As :func:`max_alpha_micro` but over an explicit list of states."""
    ratios, n_zero = [], 0
    for i, x in enumerate(states):
        v_now, v_next, cost = _micro_terms(model, value, kappa, x)
        if cost > ZERO_COST_TOL:
            ratios.append((v_now - v_next) / cost)
        else:
            n_zero += 1
            if v_now - v_next < -RESIDUAL_TOL:
                raise CertificateError(f"state {i} has zero stage cost but V increases by {v_next - v_now:.3e}")
    return _alpha_from(ratios, n_zero)


def max_alpha_meanfield(
    model: SystemModel, value: ValueCandidate, kappa: FeedbackMap, measures: Sequence[AtomicMeasure]
) -> AlphaEstimate:
    """Mean-field counterpart of :func:`max_alpha_states` over explicit measures."""
    kernel = model.kernel
    ratios, n_zero = [], 0
    for i, mu in enumerate(measures):
        u = model.check_control(kappa.meanfield(mu))
        drop = value.meanfield(mu, kernel) - value.meanfield(model.mf_step(mu, u), kernel)
        cost = model.mf_stage_cost(mu, u)
        if cost > ZERO_COST_TOL:
            ratios.append(drop / cost)
        else:
            n_zero += 1
            if drop < -RESIDUAL_TOL:
                raise CertificateError(f"measure {i} has zero stage cost but V increases by {-drop:.3e}")
    return _alpha_from(ratios, n_zero)


def _alpha_from(ratios: list[float], n_zero: int) -> AlphaEstimate:
    if not ratios:
        return AlphaEstimate(1.0, True, 0, n_zero)
    alpha = min(ratios)
    if alpha <= 0:
        raise CertificateError(f"no alpha in (0, 1] works: smallest decrease ratio is {alpha:.6g}")
    return AlphaEstimate(min(alpha, 1.0), False, len(ratios), n_zero)


@dataclass
class RdpCertificate:
    alpha: float
    residuals: list[float]
    config: dict = field(default_factory=dict)

    @property
    def min_residual(self) -> float:
        return min(self.residuals)

    @property
    def passed(self) -> bool:
        return self.min_residual >= -RESIDUAL_TOL

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "min_residual": self.min_residual,
            "pass": self.passed,
            "residuals": list(self.residuals),
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def rdp_residual_meanfield(
    model: SystemModel, value: ValueCandidate, kappa: FeedbackMap, mu: AtomicMeasure, alpha: float
) -> float:
    alpha = _check_alpha(alpha)
    kernel = model.kernel
    u = model.check_control(kappa.meanfield(mu))
    return value.meanfield(mu, kernel) - value.meanfield(model.mf_step(mu, u), kernel) - alpha * model.mf_stage_cost(mu, u)


def rdp_check_meanfield(
    model: SystemModel, value: ValueCandidate, kappa: FeedbackMap, measures: Sequence[AtomicMeasure], alpha: float
) -> RdpCertificate:
    """Evaluate the mean-field inequality on each measure, in input order."""
    if not measures:
        raise InputError("need at least one test measure")
    residuals = [rdp_residual_meanfield(model, value, kappa, mu, alpha) for mu in measures]
    return RdpCertificate(float(alpha), residuals)


# -- Lipschitz checks ---------------------------------------------------------------------


def _state_ratio(model: SystemModel, fn: Callable, m: int, n_pairs: int, seed: int) -> float:
    if n_pairs < 1:
        raise InputError("n_pairs must be at least 1")
    best, used = 0.0, 0
    for i in range(n_pairs):
        rng = stream(seed, m, i)
        x = model.sample_state(rng, m)
        x2 = perturb_state(rng, model.box, x) if rng.random() < 0.5 else model.sample_state(rng, m)
        dist_in = mmd(model.kernel, empirical(x), empirical(x2))
        if dist_in < DEGENERATE_DISTANCE:
            continue
        used += 1
        best = max(best, output_distance(model.kernel, fn(x), fn(x2)) / dist_in)
    if used == 0:
        raise EstimationError("every sampled pair was degenerate")
    return best


def lipschitz_check_value(value: ValueCandidate, model: SystemModel, n_pairs: int, seed: int, m: int = 20) -> float:
    """Sampled lower bound on ``|V_M(x) - V_M(x')| / MMD(empirical(x), empirical(x'))``."""
    return _state_ratio(model, lambda x: value.micro(x, model.kernel), m, n_pairs, seed)


def feedback_lipschitz(kappa: FeedbackMap, model: SystemModel, n_pairs: int, seed: int, m: int = 20) -> float:
    """Sampled lower bound on the MMD-Lipschitz constant of ``kappa_M``; large values flag argmin jumps."""
    return _state_ratio(model, kappa.micro, m, n_pairs, seed)


def declared_value_lipschitz(value: ValueCandidate, model: SystemModel) -> tuple[float, str]:
    """Analytic constant when available, otherwise the calibrated sampled estimate."""
    analytic = value.declared_lipschitz(model.kernel)
    if analytic is not None:
        return analytic, "analytic"
    sampled = max(lipschitz_check_value(value, model, CALIBRATION_PAIRS, CALIBRATION_SEED, m) for m in CALIBRATION_MS)
    return SAFETY_FACTOR * sampled, "sampled"
