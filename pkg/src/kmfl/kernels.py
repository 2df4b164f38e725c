"""Bounded kernels on an axis-aligned state box.

Three families are shipped:

* ``gaussian``: ``exp(-|x - y|^2 / (2 sigma^2))``. Characteristic on any
  compact box (Sriperumbudur et al., 2011).
* ``inverse_multiquadric``: ``(1 + |x - y|^2 / c^2)^(-1/2)``. Characteristic
  for the same reason (its spectral measure has full support).
* ``augmented``: the Gaussian kernel plus ``lambda_poly * (1 + x.y)^2``. The
  polynomial part puts the coordinate functions and their squares into the
  RKHS, so mean and variance functionals become MMD-Lipschitz with explicit
  constants. Still characteristic because the Gaussian summand is.

Every kernel carries its :class:`StateBox` and refuses points outside it.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, InvariantError, NumericalError

#: Tolerance for PSD checks and for clamping slightly negative radicands.
EPS_PSD = 1e-9


@dataclass(frozen=True)
class StateBox:
    """Compact box ``[lower, upper]`` in ``R^d``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) != len(upper) or not lower:
            raise InvariantError("box bounds must be nonempty and of equal length")
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(lower, upper)):
            raise InvariantError(f"box requires finite lower < upper, got {lower} and {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int = 1) -> StateBox:
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def max_norm(self) -> float:
        """Largest Euclidean norm of a point in the box."""
        corner = np.maximum(np.abs(self.lower), np.abs(self.upper))
        return float(np.linalg.norm(corner))

    def as_points(self, points) -> np.ndarray:
        """Coerce ``points`` to an ``(n, dim)`` float array without checking membership."""
        arr = np.asarray(points, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            # a bare vector is one point, except in 1-d where it is a list of scalars
            arr = arr.reshape(-1, 1) if self.dim == 1 else arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got array of shape {np.shape(points)}")
        return arr

    def contains(self, points) -> np.ndarray:
        arr = self.as_points(points)
        return np.all((arr >= self.lower) & (arr <= self.upper), axis=1)

    def check(self, points) -> np.ndarray:
        """Return ``points`` as an ``(n, dim)`` array, raising if any lies outside the box."""
        arr = self.as_points(points)
        if not np.all(np.isfinite(arr)):
            raise DomainError("points must be finite")
        inside = np.all((arr >= self.lower) & (arr <= self.upper), axis=1)
        if not inside.all():
            bad = arr[~inside][0]
            raise DomainError(f"point {bad.tolist()} lies outside the box {self.lower}..{self.upper}")
        return arr

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)


def _point(box: StateBox, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or (arr.ndim == 1 and arr.shape[0] == box.dim):
        return box.check(arr.reshape(1, box.dim))
    raise DomainError(f"expected a single point of dimension {box.dim}, got shape {arr.shape}")


def _sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # explicit differences: (x - y)^2 == (y - x)^2 bitwise, so gram(X, X) is exactly symmetric
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class Kernel(ABC):
    """Symmetric positive semidefinite kernel restricted to ``box``."""

    box: StateBox

    family: str = field(init=False, default="")

    @abstractmethod
    def _pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Kernel matrix for already validated ``(n, d)`` and ``(m, d)`` arrays."""

    @property
    @abstractmethod
    def bound(self) -> float:
        """``sup |k(x, y)|`` over the box."""

    @property
    @abstractmethod
    def params(self) -> dict:
        """Family parameters, as they appear in a configuration file."""

    def __call__(self, x, y) -> float:
        return self.eval(x, y)

    def eval(self, x, y) -> float:
        return float(self._pairwise(_point(self.box, x), _point(self.box, y))[0, 0])

    def gram(self, xs, ys=None) -> np.ndarray:
        X = self.box.check(xs)
        Y = X if ys is None else self.box.check(ys)
        return self._pairwise(X, Y)

    def diag(self, xs) -> np.ndarray:
        """``k(x_i, x_i)`` for each row of ``xs``."""
        X = self.box.check(xs)
        return np.array([self._pairwise(row[None, :], row[None, :])[0, 0] for row in X])

    def _metric_sq(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Matrix of ``k(x, x) - 2 k(x, y) + k(y, y)``.

        Families override this with a cancellation-free form; the generic
        three-term expansion loses about half the digits for nearby points.
        """
        dx = np.array([self._pairwise(r[None, :], r[None, :])[0, 0] for r in X])
        dy = np.array([self._pairwise(r[None, :], r[None, :])[0, 0] for r in Y])
        return dx[:, None] - 2.0 * self._pairwise(X, Y) + dy[None, :]

    def metric(self, x, y) -> float:
        """Kernel metric ``||k(., x) - k(., y)||_k``."""
        radicand = self._metric_sq(_point(self.box, x), _point(self.box, y))[0, 0]
        return clamped_sqrt(radicand, what="kernel metric")

    def metric_matrix(self, xs, ys) -> np.ndarray:
        """Pairwise kernel metric ``d_k(x_i, y_j)``."""
        sq = self._metric_sq(self.box.check(xs), self.box.check(ys))
        if sq.size and sq.min() < -EPS_PSD:
            raise NumericalError(f"kernel metric radicand {sq.min():.3e} is negative")
        return np.sqrt(np.maximum(sq, 0.0))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            **self.params,
            "box": {"lower": list(self.box.lower), "upper": list(self.box.upper)},
        }


def clamped_sqrt(radicand: float, what: str = "distance") -> float:
    """Square root that forgives radicands in ``[-EPS_PSD, 0)``."""
    if radicand < -EPS_PSD:
        raise NumericalError(f"{what} radicand {radicand:.3e} is negative; is the kernel positive semidefinite?")
    return math.sqrt(max(float(radicand), 0.0))


@dataclass(frozen=True)
class GaussianKernel(Kernel):
    bandwidth: float = 1.0

    family: str = field(init=False, default="gaussian")

    def __post_init__(self):
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvariantError(f"bandwidth must be positive, got {self.bandwidth}")

    def _pairwise(self, X, Y):
        return np.exp(-_sq_dists(X, Y) / (2.0 * self.bandwidth**2))

    def _metric_sq(self, X, Y):
        return -2.0 * np.expm1(-_sq_dists(X, Y) / (2.0 * self.bandwidth**2))

    @property
    def bound(self) -> float:
        return 1.0

    @property
    def params(self) -> dict:
        return {"bandwidth": self.bandwidth}


@dataclass(frozen=True)
class InverseMultiquadricKernel(Kernel):
    scale: float = 1.0

    family: str = field(init=False, default="inverse_multiquadric")

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvariantError(f"scale must be positive, got {self.scale}")

    def _pairwise(self, X, Y):
        return 1.0 / np.sqrt(1.0 + _sq_dists(X, Y) / self.scale**2)

    def _metric_sq(self, X, Y):
        return -2.0 * np.expm1(-0.5 * np.log1p(_sq_dists(X, Y) / self.scale**2))

    @property
    def bound(self) -> float:
        return 1.0

    @property
    def params(self) -> dict:
        return {"scale": self.scale}


@dataclass(frozen=True)
class AugmentedKernel(Kernel):
    """Gaussian kernel plus ``poly_weight * (1 + x.y)^2``."""

    bandwidth: float = 1.0
    poly_weight: float = 1.0

    family: str = field(init=False, default="augmented")

    def __post_init__(self):
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvariantError(f"bandwidth must be positive, got {self.bandwidth}")
        if not (math.isfinite(self.poly_weight) and self.poly_weight >= 0):
            raise InvariantError(f"poly_weight must be nonnegative, got {self.poly_weight}")

    def _pairwise(self, X, Y):
        gauss = np.exp(-_sq_dists(X, Y) / (2.0 * self.bandwidth**2))
        return gauss + self.poly_weight * (1.0 + X @ Y.T) ** 2

    def _metric_sq(self, X, Y):
        # feature map of (1 + x.y)^2 is (1, sqrt(2) x, x x^T)
        gauss = -2.0 * np.expm1(-_sq_dists(X, Y) / (2.0 * self.bandwidth**2))
        outer_x = X[:, :, None] * X[:, None, :]
        outer_y = Y[:, :, None] * Y[:, None, :]
        d_outer = outer_x[:, None] - outer_y[None, :]
        poly = 2.0 * _sq_dists(X, Y) + np.einsum("ijkl,ijkl->ij", d_outer, d_outer)
        return gauss + self.poly_weight * poly

    @property
    def bound(self) -> float:
        # x.y is bilinear, so its extremes over box x box sit at corner products, per coordinate
        lo, hi = np.asarray(self.box.lower), np.asarray(self.box.upper)
        products = np.stack([lo * lo, lo * hi, hi * hi])
        s_max, s_min = products.max(axis=0).sum(), products.min(axis=0).sum()
        return 1.0 + self.poly_weight * max((1.0 + s_max) ** 2, (1.0 + s_min) ** 2)

    @property
    def params(self) -> dict:
        return {"bandwidth": self.bandwidth, "poly_weight": self.poly_weight}


KERNEL_FAMILIES = {
    "gaussian": GaussianKernel,
    "inverse_multiquadric": InverseMultiquadricKernel,
    "augmented": AugmentedKernel,
}


def make_kernel(family: str, box: StateBox, **params) -> Kernel:
    """Build a kernel by family name, e.g. ``make_kernel("gaussian", box, bandwidth=0.5)``."""
    try:
        cls = KERNEL_FAMILIES[family]
    except KeyError:
        raise InvariantError(f"unknown kernel family {family!r}; choose from {sorted(KERNEL_FAMILIES)}") from None
    return cls(box, **params)


def kernel_eval(k: Kernel, x, y) -> float:
    return k.eval(x, y)


def gram(k: Kernel, xs, ys=None) -> np.ndarray:
    return k.gram(xs, ys)


def kernel_metric(k: Kernel, x, y) -> float:
    return k.metric(x, y)
