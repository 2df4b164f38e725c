"""Finite-population multiagent control systems and their mean-field maps.

A :class:`SystemModel` bundles three things:

* a :class:`Dynamics` object giving the M-agent transition map and its
  measure-level (mean-field) counterpart,
* a :class:`StageCost` with a micro and a measure-level form,
* the :class:`~kmfl.kernels.Kernel` whose box is the state space and whose
  MMD is the metric in which Lipschitz constants are declared.

Agent states are ``(M, d)`` arrays and controls are length-``p`` vectors in
``U = [-u_max, u_max]^p``. The control is broadcast to every agent.
After each update agents are clamped back into the box.

Interaction terms are always computed against the atoms of the empirical
measure, which are held in canonical order. That makes every micro map
exactly permutation equivariant, every micro cost exactly invariant, and
models whose micro map is the restriction of the mean-field map agree with
it bit for bit on uniform empirical measures.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from ._sampling import perturb_state, sample_control, sample_state, stream
from .exceptions import EstimationError, InputError, InvariantError
from .kernels import AugmentedKernel, Kernel, StateBox
from .measures import AtomicMeasure, empirical, mmd

#: Population sizes used to calibrate sampled Lipschitz constants.
CALIBRATION_MS = (2, 5, 20, 100)
CALIBRATION_PAIRS = 100
CALIBRATION_SEED = 20240917
#: Safety factor applied to sampled Lipschitz estimates.
SAFETY_FACTOR = 1.5
#: Input distances below this are skipped by the ratio estimators.
DEGENERATE_DISTANCE = 1e-10


# -- dynamics ---------------------------------------------------------------


class Dynamics(ABC):
    """Transition rule shared by the M-agent and the mean-field system."""

    name = ""
    #: True when the micro map is exactly the mean-field map restricted to
    #: uniform empirical measures.
    exact_restriction = False

    def __init__(self, h: float, u_max: float):
        if not (math.isfinite(h) and 0.0 <= h <= 1.0):
            raise InvariantError(f"step size h must lie in [0, 1], got {h}")
        if not (math.isfinite(u_max) and u_max >= 0.0):
            raise InvariantError(f"u_max must be nonnegative, got {u_max}")
        self.h = float(h)
        self.u_max = float(u_max)

    def control_dim(self, box: StateBox) -> int:
        return box.dim

    def validate_box(self, box: StateBox) -> None:
        """Raise if the model cannot live on ``box``."""

    @abstractmethod
    def _advance(self, queries, sources, weights, u, m: int | None) -> np.ndarray:
        """Unclamped next positions of ``queries`` given the population ``(sources, weights)``.

        ``m`` is the population size for the micro map and ``None`` for the
        mean-field map.
        """

    @property
    def params(self) -> dict:
        return {"h": self.h, "u_max": self.u_max}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


class LinearConsensus(Dynamics):
    """Drift toward the population mean with self-exclusion.

    Micro map: ``x_i + h * M/(M-1) * (mean(x) - x_i) + u``. Since
    ``sum_{j != i} (x_j - x_i) / M = mean(x) - x_i``, this is the averaged
    interaction over the other agents rescaled by ``M/(M-1)``. The mean-field
    map drops the factor: ``y + h * (m_1(mu) - y) + u``. The two differ by
    ``h/(M-1) * (mean - x_i)`` per agent, so the one-step discrepancy decays
    like ``1/M``.
    """

    name = "linear_consensus"

    def _advance(self, queries, sources, weights, u, m):
        mean = np.sum(weights[:, None] * sources, axis=0)
        if m is None:
            factor = 1.0
        else:
            factor = m / (m - 1.0) if m > 1 else 0.0
        return queries + self.h * factor * (mean - queries) + u


def smooth_cutoff(s: np.ndarray, r: float) -> np.ndarray:
    """C-infinity bump: 1 at 0, decreasing, identically 0 for ``s >= r``."""
    t = np.clip(s / r, 0.0, 1.0)
    out = np.zeros_like(t)
    inside = t < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


class BoundedConfidence(Dynamics):
    """Smoothed Hegselmann-Krause opinion dynamics.

    ``x_i + (h/M) sum_j phi_r(|x_j - x_i|) (x_j - x_i) + u`` with the self
    term included, so the micro map is the mean-field map evaluated on the
    empirical measure.
    """

    name = "bounded_confidence"
    exact_restriction = True

    def __init__(self, h: float, r: float, u_max: float):
        super().__init__(h, u_max)
        if not (math.isfinite(r) and r > 0):
            raise InvariantError(f"confidence radius must be positive, got {r}")
        self.r = float(r)

    @property
    def params(self) -> dict:
        return {"h": self.h, "r": self.r, "u_max": self.u_max}

    def _advance(self, queries, sources, weights, u, m):
        diff = sources[None, :, :] - queries[:, None, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        coupling = weights[None, :] * smooth_cutoff(dist, self.r)
        drift = np.sum(coupling[:, :, None] * diff, axis=1)
        return queries + self.h * drift + u


class CuckerSmale(Dynamics):
    """Discrete Cucker-Smale flocking on (position, velocity) pairs.

    The state of one agent is ``(x, v)`` with ``x, v`` in ``R^q``; the box has
    dimension ``2q``. Velocities relax toward each other with communication
    weight ``(1 + |x_j - x_i|^2)^(-beta)``, the control is a shared
    acceleration and positions move with the new velocity.
    """

    name = "cucker_smale_discrete"
    exact_restriction = True

    def __init__(self, h: float, beta: float, u_max: float):
        super().__init__(h, u_max)
        if not (math.isfinite(beta) and beta >= 0):
            raise InvariantError(f"beta must be nonnegative, got {beta}")
        self.beta = float(beta)

    @property
    def params(self) -> dict:
        return {"h": self.h, "beta": self.beta, "u_max": self.u_max}

    def control_dim(self, box):
        return box.dim // 2

    def validate_box(self, box):
        if box.dim % 2:
            raise InvariantError("cucker_smale_discrete needs an even-dimensional box (positions, velocities)")

    def _advance(self, queries, sources, weights, u, m):
        q = queries.shape[1] // 2
        xq, vq = queries[:, :q], queries[:, q:]
        xs, vs = sources[:, :q], sources[:, q:]
        dx = xs[None, :, :] - xq[:, None, :]
        comm = (1.0 + np.sum(dx * dx, axis=2)) ** (-self.beta)
        coupling = weights[None, :] * comm
        dv = vs[None, :, :] - vq[:, None, :]
        v_next = vq + self.h * np.sum(coupling[:, :, None] * dv, axis=1) + u
        return np.hstack([xq + self.h * v_next, v_next])


DYNAMICS = {cls.name: cls for cls in (LinearConsensus, BoundedConfidence, CuckerSmale)}


# -- stage costs --------------------------------------------------------------


def measure_variance(mu: AtomicMeasure) -> float:
    """Total variance ``E|x - E x|^2`` of an atomic measure."""
    centered = mu.atoms - mu.mean()
    return float(mu.weights @ np.sum(centered * centered, axis=1))


def embedding_sq_norm(kernel: Kernel, mu: AtomicMeasure) -> float:
    """``||Pi_k(mu)||_k^2``."""
    return float(mu.weights @ kernel.gram(mu.atoms) @ mu.weights)


class StageCost(ABC):
    """State cost on measures plus the control penalty ``lambda_u |u|^2``."""

    name = ""

    def __init__(self, control_weight: float = 0.1):
        if not (math.isfinite(control_weight) and control_weight >= 0):
            raise InvariantError(f"control_weight must be nonnegative, got {control_weight}")
        self.control_weight = float(control_weight)

    @abstractmethod
    def state_cost(self, mu: AtomicMeasure, kernel: Kernel) -> float:
        """Measure-level state part of the cost."""

    def micro_factor(self, m: int) -> float:
        """Multiplier applied to the state part for an M-agent population."""
        return 1.0

    def max_micro_factor(self) -> float:
        return 1.0

    @abstractmethod
    def state_bound(self, kernel: Kernel) -> float:
        """Bound on ``|state_cost|`` over the box (before the micro factor)."""

    def state_lipschitz(self, kernel: Kernel) -> float | None:
        """Analytic MMD-Lipschitz constant of the state part, if one is known."""
        return None

    def penalty(self, u: np.ndarray) -> float:
        return self.control_weight * float(u @ u)

    @property
    def params(self) -> dict:
        return {"control_weight": self.control_weight}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


def variance_lipschitz(kernel: Kernel) -> float | None:
    """MMD-Lipschitz constant of ``mu -> Var(mu)``, when the kernel makes it explicit.

    With the augmented kernel ``k_g + lam (1 + x.y)^2`` the functions
    ``sum_d x_d^2`` and ``<a, x>`` have RKHS norms at most ``sqrt(d / lam)``
    and ``|a| / sqrt(2 lam)``. Writing ``Var = E|x|^2 - |E x|^2`` gives
    ``|Var(mu) - Var(nu)| <= (sqrt(d) + sqrt(2) R) / sqrt(lam) * MMD`` with
    ``R`` the largest norm in the box.
    """
    if isinstance(kernel, AugmentedKernel) and kernel.poly_weight > 0:
        box = kernel.box
        return (math.sqrt(box.dim) + math.sqrt(2.0) * box.max_norm) / math.sqrt(kernel.poly_weight)
    return None


class VarianceCost(StageCost):
    """Population variance. ``unbiased=True`` uses the ``1/(M-1)`` sample variance on M agents."""

    name = "variance"

    def __init__(self, control_weight: float = 0.1, unbiased: bool = False):
        super().__init__(control_weight)
        self.unbiased = bool(unbiased)

    @property
    def params(self) -> dict:
        return {"control_weight": self.control_weight, "unbiased": self.unbiased}

    def state_cost(self, mu, kernel):
        return measure_variance(mu)

    def micro_factor(self, m):
        if self.unbiased and m > 1:
            return m / (m - 1.0)
        return 1.0

    def max_micro_factor(self):
        return 2.0 if self.unbiased else 1.0

    def state_bound(self, kernel):
        return float(np.sum(kernel.box.widths**2) / 4.0)

    def state_lipschitz(self, kernel):
        return variance_lipschitz(kernel)


class KernelCohesionCost(StageCost):
    """``-||Pi_k(mu)||_k^2``: rewards concentrated populations.

    ``| ||a||^2 - ||b||^2 | <= (||a|| + ||b||) ||a - b||`` and
    ``||Pi_k(mu)|| <= sqrt(k_max)`` give the constant ``2 sqrt(k_max)``.
    """

    name = "kernel_cohesion"

    def state_cost(self, mu, kernel):
        return -embedding_sq_norm(kernel, mu)

    def state_bound(self, kernel):
        return kernel.bound

    def state_lipschitz(self, kernel):
        return 2.0 * math.sqrt(kernel.bound)


COSTS = {cls.name: cls for cls in (VarianceCost, KernelCohesionCost)}


# -- the model ------------------------------------------------------------------


@dataclass(frozen=True)
class DeclaredConstants:
    lipschitz_dynamics: float
    lipschitz_cost: float
    cost_bound: float
    dynamics_source: str
    cost_source: str


class SystemModel:
    """An M-agent control system together with its mean-field limit."""

    def __init__(self, dynamics: Dynamics, cost: StageCost, kernel: Kernel, name: str | None = None):
        dynamics.validate_box(kernel.box)
        self.dynamics = dynamics
        self.cost = cost
        self.kernel = kernel
        self.name = name or dynamics.name

    @property
    def box(self) -> StateBox:
        return self.kernel.box

    @property
    def h(self) -> float:
        return self.dynamics.h

    @property
    def u_max(self) -> float:
        return self.dynamics.u_max

    @property
    def control_dim(self) -> int:
        return self.dynamics.control_dim(self.box)

    def __repr__(self):
        return f"SystemModel({self.dynamics!r}, {self.cost!r}, kernel={self.kernel.family})"

    # validation

    def check_state(self, x) -> np.ndarray:
        arr = self.box.check(x)
        if arr.shape[0] == 0:
            raise InputError("an agent state needs at least one agent")
        return arr

    def check_control(self, u) -> np.ndarray:
        arr = np.asarray(u, dtype=float).reshape(-1)
        if arr.shape[0] != self.control_dim:
            raise InputError(f"control must have {self.control_dim} components, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > self.u_max):
            raise InputError(f"control {arr.tolist()} lies outside U = [-{self.u_max}, {self.u_max}]^{self.control_dim}")
        return arr

    def check_controls(self, useq) -> np.ndarray:
        arr = np.asarray(useq, dtype=float)
        if arr.ndim == 1 and self.control_dim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise InputError("a control sequence needs horizon N >= 1")
        return np.array([self.check_control(u) for u in arr])

    # micro system

    def step(self, x, u) -> np.ndarray:
        x = self.check_state(x)
        u = self.check_control(u)
        mu = empirical(x)
        nxt = self.dynamics._advance(x, mu.atoms, mu.weights, u, x.shape[0])
        return self.box.clip(nxt)

    def trajectory(self, x0, useq) -> list[np.ndarray]:
        useq = self.check_controls(useq)
        states = [self.check_state(x0)]
        for u in useq:
            states.append(self.step(states[-1], u))
        return states

    def stage_cost(self, x, u) -> float:
        x = self.check_state(x)
        u = self.check_control(u)
        state = self.cost.micro_factor(x.shape[0]) * self.cost.state_cost(empirical(x), self.kernel)
        return state + self.cost.penalty(u)

    def total_cost(self, x0, useq) -> float:
        useq = self.check_controls(useq)
        states = self.trajectory(x0, useq)
        return float(sum(self.stage_cost(x, u) for x, u in zip(states[:-1], useq)))

    # mean-field system

    def mf_step(self, mu: AtomicMeasure, u) -> AtomicMeasure:
        u = self.check_control(u)
        atoms = self.box.check(mu.atoms)
        nxt = self.dynamics._advance(atoms, atoms, mu.weights, u, None)
        return AtomicMeasure(self.box.clip(nxt), mu.weights)

    def mf_trajectory(self, mu0: AtomicMeasure, useq) -> list[AtomicMeasure]:
        useq = self.check_controls(useq)
        measures = [mu0]
        for u in useq:
            measures.append(self.mf_step(measures[-1], u))
        return measures

    def mf_stage_cost(self, mu: AtomicMeasure, u) -> float:
        u = self.check_control(u)
        self.box.check(mu.atoms)
        return self.cost.state_cost(mu, self.kernel) + self.cost.penalty(u)

    def mf_total_cost(self, mu0: AtomicMeasure, useq) -> float:
        useq = self.check_controls(useq)
        measures = self.mf_trajectory(mu0, useq)
        return float(sum(self.mf_stage_cost(mu, u) for mu, u in zip(measures[:-1], useq)))

    # declared constants

    @cached_property
    def constants(self) -> DeclaredConstants:
        """Declared ``L_f``, ``L_l`` and ``B_l``.

        ``B_l`` and, where the kernel allows it, ``L_l`` are analytic; the
        control penalty contributes ``2 lambda_u sqrt(p) u_max`` in the control
        direction and the two directions are combined in the product norm.
        ``L_f`` (and ``L_l`` otherwise) is the sampled estimate over
        :data:`CALIBRATION_MS` times :data:`SAFETY_FACTOR`.
        """
        cost = self.cost
        p = self.control_dim
        bound = cost.max_micro_factor() * cost.state_bound(self.kernel) + cost.control_weight * p * self.u_max**2
        control_part = 2.0 * cost.control_weight * math.sqrt(p) * self.u_max
        state_part = cost.state_lipschitz(self.kernel)
        if state_part is not None:
            l_cost = math.hypot(cost.max_micro_factor() * state_part, control_part)
            cost_source = "analytic"
        else:
            l_cost = SAFETY_FACTOR * max(
                sampled_lipschitz(self, "stage_cost", m, CALIBRATION_PAIRS, CALIBRATION_SEED) for m in CALIBRATION_MS
            )
            cost_source = "sampled"
        l_dyn = SAFETY_FACTOR * max(
            sampled_lipschitz(self, target, m, CALIBRATION_PAIRS, CALIBRATION_SEED)
            for m in CALIBRATION_MS
            for target in ("dynamics", "meanfield")
        )
        return DeclaredConstants(l_dyn, l_cost, bound, "sampled", cost_source)

    @property
    def lipschitz_dynamics(self) -> float:
        return self.constants.lipschitz_dynamics

    @property
    def lipschitz_cost(self) -> float:
        return self.constants.lipschitz_cost

    @property
    def cost_bound(self) -> float:
        return self.constants.cost_bound

    def sample_state(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return sample_state(rng, self.box, m)

    def sample_control(self, rng: np.random.Generator) -> np.ndarray:
        return sample_control(rng, self.u_max, self.control_dim)


def sampled_lipschitz(
    model: SystemModel,
    target: str | Callable,
    m: int,
    n_pairs: int,
    seed: int,
) -> float:
    """Largest sampled ratio ``output distance / input distance``.

    The input distance is the product norm ``sqrt(MMD^2 + |u - u'|^2)`` of
    ``(empirical(x), u)`` and ``(empirical(x'), u')``. ``target`` is one of
    ``"dynamics"`` (MMD between micro images), ``"meanfield"`` (MMD between
    mean-field images of the empirical measures), ``"stage_cost"`` (absolute
    difference of micro costs) or a callable ``(x, u) -> value`` whose outputs
    are compared by MMD (measures), absolute value (scalars) or Euclidean norm
    (arrays). Half the pairs are local perturbations, half independent; half
    share the control.
    """
    if n_pairs < 1:
        raise InputError("n_pairs must be at least 1")
    if callable(target):
        out_fn = target
    elif target == "dynamics":
        out_fn = lambda x, u: empirical(model.step(x, u))  # noqa: E731
    elif target == "meanfield":
        out_fn = lambda x, u: model.mf_step(empirical(x), u)  # noqa: E731
    elif target == "stage_cost":
        out_fn = model.stage_cost
    else:
        raise InputError(f"unknown Lipschitz target {target!r}")

    best, used = 0.0, 0
    for i in range(n_pairs):
        rng = stream(seed, m, i)
        x = model.sample_state(rng, m)
        x2 = perturb_state(rng, model.box, x) if rng.random() < 0.5 else model.sample_state(rng, m)
        u = model.sample_control(rng)
        u2 = u.copy() if rng.random() < 0.5 else model.sample_control(rng)
        dist_in = math.hypot(mmd(model.kernel, empirical(x), empirical(x2)), float(np.linalg.norm(u - u2)))
        if dist_in < DEGENERATE_DISTANCE:
            continue
        used += 1
        best = max(best, output_distance(model.kernel, out_fn(x, u), out_fn(x2, u2)) / dist_in)
    if used == 0:
        raise EstimationError("every sampled pair was degenerate")
    return best


def output_distance(kernel: Kernel, a, b) -> float:
    if isinstance(a, AtomicMeasure):
        return mmd(kernel, a, b)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.ndim == 0:
        return abs(float(a) - float(b))
    return float(np.linalg.norm(a - b))


# -- zoo constructors -------------------------------------------------------------


def linear_consensus(kernel: Kernel, h: float = 0.5, u_max: float = 0.1, cost: StageCost | None = None) -> SystemModel:
    return SystemModel(LinearConsensus(h, u_max), cost or VarianceCost(), kernel)


def bounded_confidence(
    kernel: Kernel, h: float = 0.5, r: float = 0.3, u_max: float = 0.1, cost: StageCost | None = None
) -> SystemModel:
    return SystemModel(BoundedConfidence(h, r, u_max), cost or VarianceCost(), kernel)


def cucker_smale_discrete(
    kernel: Kernel, h: float = 0.1, beta: float = 0.5, u_max: float = 0.1, cost: StageCost | None = None
) -> SystemModel:
    return SystemModel(CuckerSmale(h, beta, u_max), cost or VarianceCost(), kernel)


MODEL_ZOO = {
    "linear_consensus": linear_consensus,
    "bounded_confidence": bounded_confidence,
    "cucker_smale_discrete": cucker_smale_discrete,
}


# functional aliases


def step(model: SystemModel, x, u) -> np.ndarray:
    return model.step(x, u)


def trajectory(model: SystemModel, x0, useq) -> list[np.ndarray]:
    return model.trajectory(x0, useq)


def stage_cost(model: SystemModel, x, u) -> float:
    return model.stage_cost(x, u)


def total_cost(model: SystemModel, x0, useq) -> float:
    return model.total_cost(x0, useq)
