"""Weighted empirical measures over V or over (Y, V)."""

from __future__ import annotations

import numpy as np


class EmpiricalMeasure:
    """Weighted samples; rows are ``(V,)`` or ``(Y1, Y2, Y3, V)``."""

    def __init__(self, samples, weights=None, dim: str = "YV"):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        width = {"V": 1, "YV": 4}[dim]
        if samples.shape[1] != width:
            raise ValueError(f"{dim} samples need {width} columns")
        n = samples.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n) if n else np.zeros(0)
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        total = weights.sum()
        if n and abs(total - 1.0) > 1e-12:
            weights = weights / total
        self.samples = samples
        self.weights = weights
        self.dim = dim

    def __len__(self):
        return self.samples.shape[0]

    @property
    def V(self) -> np.ndarray:
        return self.samples[:, -1]

    @property
    def Y(self) -> np.ndarray:
        if self.dim != "YV":
            raise ValueError("measure has no position component")
        return self.samples[:, :3]

    def marginal_V(self) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.V, self.weights, dim="V")

    def expect(self, g):
        """Weighted mean of ``g(samples)`` and its standard error.

        ``g`` receives the (n, d) sample array and returns n values.  The
        standard error uses the effective sample size of the weights.
        """
        vals = np.asarray(g(self.samples), dtype=float)
        w = self.weights
        mean = float(np.sum(w * vals) / np.sum(w))
        ess = float(np.sum(w)) ** 2 / float(w @ w)
        if ess <= 1:
            return mean, float("nan")
        var = float(w @ (vals - mean) ** 2) * ess / (ess - 1.0)
        return mean, (var / ess) ** 0.5

    def mean_V(self):
        return self.expect(lambda s: s[:, -1])
