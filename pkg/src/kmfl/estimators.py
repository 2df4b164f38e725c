"""scikit-learn compatible front end for kernel mean embeddings."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .kernels import StateBox, make_kernel
from .measures import AtomicMeasure, kme_inner, mmd


class KernelMeanEmbedding(TransformerMixin, BaseEstimator):
    """Embed the (weighted) empirical measure of the training rows in an RKHS.

    ``transform`` evaluates the embedding at new points, giving one feature
    per sample; ``mmd`` and ``score`` compare another sample with the fitted
    one.

    Parameters
    ----------
    kernel : {"gaussian", "inverse_multiquadric", "augmented"}
    bandwidth : float
        Gaussian bandwidth (``gaussian`` and ``augmented``).
    scale : float
        Scale of the inverse multiquadric kernel.
    poly_weight : float
        Weight of the polynomial term of the ``augmented`` kernel.
    lower, upper : array-like or None
        State box. Points outside an explicit box raise ``DomainError``. When
        omitted the box is the bounding box of the training data, grown on
        demand to cover the points passed to ``transform`` and friends; kernel
        values do not depend on the box.
    """

    def __init__(self, kernel="gaussian", bandwidth=1.0, scale=1.0, poly_weight=1.0, lower=None, upper=None):
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.scale = scale
        self.poly_weight = poly_weight
        self.lower = lower
        self.upper = upper

    def _kernel_params(self):
        if self.kernel == "gaussian":
            return {"bandwidth": self.bandwidth}
        if self.kernel == "inverse_multiquadric":
            return {"scale": self.scale}
        if self.kernel == "augmented":
            return {"bandwidth": self.bandwidth, "poly_weight": self.poly_weight}
        raise ValueError(f"unknown kernel {self.kernel!r}")

    def _box(self, X):
        lower = X.min(axis=0) if self.lower is None else np.broadcast_to(np.asarray(self.lower, float), X.shape[1:])
        upper = X.max(axis=0) if self.upper is None else np.broadcast_to(np.asarray(self.upper, float), X.shape[1:])
        # a degenerate data range still needs a nonempty box
        upper = np.where(upper > lower, upper, lower + 1.0)
        return StateBox(tuple(lower), tuple(upper))

    def _kernel_for(self, X):
        if self.lower is not None or self.upper is not None:
            return self.kernel_
        box = self.kernel_.box
        lower = np.minimum(box.lower, X.min(axis=0))
        upper = np.maximum(box.upper, X.max(axis=0))
        if np.array_equal(lower, box.lower) and np.array_equal(upper, box.upper):
            return self.kernel_
        return make_kernel(self.kernel, StateBox(tuple(lower), tuple(upper)), **self._kernel_params())

    def fit(self, X, y=None, sample_weight=None):
        X = validate_data(self, X, dtype=float)
        if sample_weight is None:
            weights = np.full(X.shape[0], 1.0 / X.shape[0])
        else:
            weights = np.asarray(sample_weight, dtype=float)
            if weights.shape != (X.shape[0],) or np.any(weights < 0) or weights.sum() <= 0:
                raise ValueError("sample_weight must be nonnegative with a positive sum, one per sample")
            # zero-weight rows must not influence the inferred box
            X, weights = X[weights > 0], weights[weights > 0] / weights.sum()
        self.kernel_ = make_kernel(self.kernel, self._box(X), **self._kernel_params())
        self.kernel_.box.check(X)
        self.measure_ = AtomicMeasure(X, weights)
        return self

    def transform(self, X):
        """Embedding values ``sum_i w_i k(x, x_i)`` as a single-column array."""
        check_is_fitted(self, "measure_")
        X = validate_data(self, X, dtype=float, reset=False)
        values = self._kernel_for(X).gram(X, self.measure_.atoms) @ self.measure_.weights
        return values[:, None]

    def _measure(self, X, sample_weight=None):
        check_is_fitted(self, "measure_")
        X = validate_data(self, X, dtype=float, reset=False)
        n = X.shape[0]
        weights = np.full(n, 1.0 / n) if sample_weight is None else np.asarray(sample_weight, float) / np.sum(sample_weight)
        return self._kernel_for(X), AtomicMeasure(X, weights)

    def mmd(self, X, sample_weight=None) -> float:
        """MMD between the fitted measure and the (weighted) empirical measure of ``X``."""
        kernel, other = self._measure(X, sample_weight)
        return mmd(kernel, self.measure_, other)

    def inner(self, X, sample_weight=None) -> float:
        kernel, other = self._measure(X, sample_weight)
        return kme_inner(kernel, self.measure_, other)

    def score(self, X, y=None, sample_weight=None) -> float:
        """Negative MMD, so that larger is better."""
        return -self.mmd(X, sample_weight)
