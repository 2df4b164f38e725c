"""Atomic probability measures, kernel mean embeddings and MMD.

Every probability measure is represented by an :class:`AtomicMeasure`: a
finite list of atoms with nonnegative weights summing to one. Atoms are
stored in a canonical (lexicographic) order, which makes every quantity
computed from a measure exactly invariant under relabelling of the atoms.
Coincident atoms are kept as they are; :func:`measure_equal` merges them
logically when comparing.

Continuous reference measures are handled by quantization on a tensor grid
(:func:`uniform_grid`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .exceptions import InvariantError, NumericalError, SizeError
from .kernels import Kernel, StateBox, clamped_sqrt

#: Cap on the total atom count accepted by :func:`wasserstein1`.
W1_MAX_ATOMS = 64

_WEIGHT_TOL = 1e-12


def _canonical_order(atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    keys = (weights,) + tuple(atoms[:, j] for j in reversed(range(atoms.shape[1])))
    return np.lexsort(keys)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finitely supported probability measure ``sum_i w_i delta_{x_i}``."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise InvariantError("a measure needs at least one atom")
        if atoms.shape[0] != weights.shape[0]:
            raise InvariantError(f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise InvariantError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise InvariantError("weights must be nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise InvariantError(f"weights sum to {total!r}, not 1")
        order = _canonical_order(atoms, weights)
        object.__setattr__(self, "atoms", _frozen(atoms[order]))
        object.__setattr__(self, "weights", _frozen(weights[order]))

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def to_json(self) -> list[dict]:
        return [{"atom": a.tolist(), "weight": float(w)} for a, w in zip(self.atoms, self.weights)]

    @classmethod
    def from_json(cls, records) -> AtomicMeasure:
        if isinstance(records, str):
            records = json.loads(records)
        try:
            atoms = [list(map(float, r["atom"])) for r in records]
            weights = [float(r["weight"]) for r in records]
        except (KeyError, TypeError) as exc:
            raise InvariantError(f"malformed measure record: {exc}") from exc
        return cls(np.array(atoms, dtype=float), np.array(weights))

    def __repr__(self):
        return f"AtomicMeasure(n_atoms={self.n_atoms}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class RkhsCombination:
    """Finite kernel expansion ``f = sum_j c_j k(., z_j)``."""

    centers: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim == 1:
            centers = centers.reshape(-1, 1)
        coefficients = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if centers.shape[0] != coefficients.shape[0] or centers.shape[0] == 0:
            raise InvariantError("need one coefficient per center and at least one center")
        object.__setattr__(self, "centers", _frozen(centers))
        object.__setattr__(self, "coefficients", _frozen(coefficients))

    def evaluate(self, k: Kernel, points) -> np.ndarray:
        return k.gram(points, self.centers) @ self.coefficients


def empirical(x) -> AtomicMeasure:
    """Uniform measure on the rows of ``x`` (a 1-d array is read as scalar agents)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvariantError("an agent state needs at least one agent")
    m = arr.shape[0]
    return AtomicMeasure(arr, np.full(m, 1.0 / m))


def dirac(point) -> AtomicMeasure:
    return AtomicMeasure(np.asarray(point, dtype=float).reshape(1, -1), np.ones(1))


def mix(lam: float, mu: AtomicMeasure, nu: AtomicMeasure) -> AtomicMeasure:
    """Convex combination ``lam * mu + (1 - lam) * nu``."""
    if not 0.0 <= lam <= 1.0:
        raise InvariantError(f"mixing weight must lie in [0, 1], got {lam}")
    atoms = np.concatenate([mu.atoms, nu.atoms])
    weights = np.concatenate([lam * mu.weights, (1.0 - lam) * nu.weights])
    return AtomicMeasure(atoms, weights)


def uniform_grid(box: StateBox, n_atoms: int) -> AtomicMeasure:
    """Quantize the uniform distribution on ``box`` by equal-weight cell centres.

    ``n_atoms`` must be a perfect ``box.dim``-th power.
    """
    per_axis = round(n_atoms ** (1.0 / box.dim))
    if per_axis**box.dim != n_atoms or per_axis < 1:
        raise InvariantError(f"{n_atoms} atoms is not a perfect power of dimension {box.dim}")
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in zip(box.lower, box.upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    return AtomicMeasure(grid, np.full(n_atoms, 1.0 / n_atoms))


def kme_inner(k: Kernel, mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """``<Pi_k(mu), Pi_k(nu)>_k``, the weighted Gram double sum."""
    return float(mu.weights @ k.gram(mu.atoms, nu.atoms) @ nu.weights)


def kme_eval(k: Kernel, mu: AtomicMeasure, z) -> float:
    """Evaluate the embedding ``Pi_k(mu)`` at a single point ``z``."""
    z = np.asarray(z, dtype=float).reshape(1, k.box.dim)
    return float(k.gram(z, mu.atoms)[0] @ mu.weights)


def integrate_rkhs(k: Kernel, f: RkhsCombination, mu: AtomicMeasure) -> float:
    """``int f dmu`` computed pointwise, i.e. ``sum_i w_i f(x_i)``."""
    return float(mu.weights @ f.evaluate(k, mu.atoms))


def embedding_pairing(k: Kernel, f: RkhsCombination, mu: AtomicMeasure) -> float:
    """``<f, Pi_k(mu)>_k`` computed from the embedding side."""
    return float(f.coefficients @ (k.gram(f.centers, mu.atoms) @ mu.weights))


def mmd(k: Kernel, mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """Maximum mean discrepancy ``||Pi_k(mu) - Pi_k(nu)||_k``."""
    radicand = kme_inner(k, mu, mu) - 2.0 * kme_inner(k, mu, nu) + kme_inner(k, nu, nu)
    return clamped_sqrt(radicand, what="MMD")


def kernel_cost_matrix(k: Kernel, xs, ys) -> np.ndarray:
    """Pairwise kernel metric ``d_k(x_i, y_j)``."""
    return k.metric_matrix(xs, ys)


def wasserstein1(k: Kernel, mu: AtomicMeasure, nu: AtomicMeasure, max_atoms: int = W1_MAX_ATOMS) -> float:
    """Exact 1-Wasserstein distance with ground metric ``d_k``.

    Equal-size uniform measures are solved as an assignment problem; anything
    else goes through the transport linear program.
    """
    n, m = mu.n_atoms, nu.n_atoms
    if n + m > max_atoms:
        raise SizeError(f"{n + m} atoms exceeds the exact solver cap of {max_atoms}")
    for name, meas in (("mu", mu), ("nu", nu)):
        if abs(meas.weights.sum() - 1.0) > _WEIGHT_TOL:
            raise InvariantError(f"weights of {name} do not sum to 1")
    cost = kernel_cost_matrix(k, mu.atoms, nu.atoms)
    if n == m and np.all(mu.weights == mu.weights[0]) and np.all(nu.weights == nu.weights[0]):
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / n)
    # transport polytope: row sums = mu.weights, column sums = nu.weights
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x, 0.0)
    return float(plan @ cost.ravel())


def measure_equal(mu: AtomicMeasure, nu: AtomicMeasure, tol: float = 1e-12) -> bool:
    """True when both measures put the same mass (within ``tol``) on the same atoms."""
    if mu.dim != nu.dim:
        return False
    reps: list[np.ndarray] = []
    mass: list[list[float]] = []
    for side, meas in enumerate((mu, nu)):
        for atom, w in zip(meas.atoms, meas.weights):
            for idx, rep in enumerate(reps):
                if np.max(np.abs(rep - atom)) <= tol:
                    mass[idx][side] += w
                    break
            else:
                reps.append(atom)
                mass.append([0.0, 0.0])
                mass[-1][side] += w
    return all(abs(a - b) <= tol for a, b in mass)
