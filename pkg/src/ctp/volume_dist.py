"""Obstacle volume laws G(v): inverse-CDF sampling, CDF/density, moments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DivergentMoment

DIRAC, UNIFORM, PARETO, TABULATED = 0, 1, 2, 3
_KIND_CODES = {"dirac": DIRAC, "uniform": UNIFORM, "pareto": PARETO, "tabulated": TABULATED}

#: tail probability at which unbounded laws are cut (the 1 - 1e-12 quantile)
TRUNCATION_TAIL = 1e-12


@njit(cache=True)
def quantile(kind, params, grid, cdf, u):
    """Inverse CDF; shared by the Python API and the compiled field kernels."""
    if kind == 0:
        return params[0]
    if kind == 1:
        return params[0] + u * (params[1] - params[0])
    if kind == 2:
        alpha, vmin, c = params[0], params[1], params[2]
        return vmin * (1.0 - u * c) ** (-1.0 / alpha)
    # tabulated: linear interpolation of the CDF
    if u < cdf[0]:
        return grid[0]
    i = np.searchsorted(cdf, u, side="right")
    if i >= cdf.shape[0]:
        return grid[-1]
    lo = cdf[i - 1]
    hi = cdf[i]
    return grid[i - 1] + (u - lo) / (hi - lo) * (grid[i] - grid[i - 1])


@njit(cache=True)
def _quantile_array(kind, params, grid, cdf, u):
    out = np.empty(u.shape[0])
    for k in range(u.shape[0]):
        out[k] = quantile(kind, params, grid, cdf, u[k])
    return out


@dataclass(frozen=True, eq=False)
class VolumeDistribution:
    """A probability law on [0, v_max] for the rescaled obstacle volumes.

    Build instances with :meth:`dirac`, :meth:`uniform`, :meth:`pareto` or
    :meth:`tabulated`.
    """

    kind: str
    params: tuple
    v_max: float
    v_min: float
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cdf_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    # -- constructors ----------------------------------------------------
    @classmethod
    def dirac(cls, v0: float) -> "VolumeDistribution":
        if not v0 > 0:
            raise ValueError("Dirac location must be > 0")
        return cls("dirac", (float(v0),), float(v0), float(v0))

    @classmethod
    def uniform(cls, a: float, b: float) -> "VolumeDistribution":
        if not (0 <= a < b):
            raise ValueError("uniform law needs 0 <= a < b")
        return cls("uniform", (float(a), float(b)), float(b), float(a))

    @classmethod
    def pareto(cls, exponent: float, v_min: float, v_max: float = math.inf,
               truncate: bool = True) -> "VolumeDistribution":
        """Power law with density proportional to v^(-exponent-1) on [v_min, v_max].

        An infinite ``v_max`` is replaced by the 1-1e-12 quantile unless
        ``truncate`` is False, in which case moments of order >= exponent
        raise :class:`DivergentMoment`.
        """
        if not (exponent > 0 and v_min > 0):
            raise ValueError("pareto law needs exponent > 0 and v_min > 0")
        if math.isinf(v_max) and truncate:
            v_max = v_min * TRUNCATION_TAIL ** (-1.0 / exponent)
        if v_max <= v_min:
            raise ValueError("pareto law needs v_max > v_min")
        return cls("pareto", (float(exponent), float(v_min), float(v_max)),
                   float(v_max), float(v_min))

    @classmethod
    def tabulated(cls, grid, cdf_values) -> "VolumeDistribution":
        grid = np.asarray(grid, dtype=float)
        cdf_values = np.asarray(cdf_values, dtype=float)
        if grid.ndim != 1 or grid.shape != cdf_values.shape or grid.size < 2:
            raise ValueError("grid and cdf_values must be 1-d arrays of equal length >= 2")
        if grid[0] < 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be nonnegative and strictly increasing")
        if cdf_values[0] < 0 or np.any(np.diff(cdf_values) < 0):
            raise ValueError("cdf values must be nonnegative and nondecreasing")
        if abs(cdf_values[-1] - 1.0) > 1e-12:
            raise ValueError("cdf must reach 1 at the last node")
        cdf_values = cdf_values.copy()
        cdf_values[-1] = 1.0
        grid.setflags(write=False)
        cdf_values.setflags(write=False)
        return cls("tabulated", (), float(grid[-1]), float(grid[0]), grid, cdf_values)

    # -- compiled-kernel view ---------------------------------------------
    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    def kernel_args(self):
        """(kind code, params array, grid, cdf) as consumed by :func:`quantile`."""
        if self.kind == "pareto":
            alpha, vmin, vmax = self.params
            p = np.array([alpha, vmin, self._pareto_mass(), vmax])
        else:
            p = np.array(self.params + (0.0,) * (4 - len(self.params)), dtype=float)
        grid = self.grid if self.kind == "tabulated" else np.zeros(1)
        cdf = self.cdf_values if self.kind == "tabulated" else np.zeros(1)
        return self.code, p, np.ascontiguousarray(grid), np.ascontiguousarray(cdf)

    def _pareto_mass(self):
        alpha, vmin, vmax = self.params
        if math.isinf(vmax):
            return 1.0
        return -math.expm1(alpha * math.log(vmin / vmax))

    # -- law ---------------------------------------------------------------
    def sample(self, u):
        """Inverse-CDF transform of ``u`` in [0, 1); scalar or array."""
        kind, p, g, c = self.kernel_args()
        if np.ndim(u) == 0:
            return float(quantile(kind, p, g, c, float(u)))
        return _quantile_array(kind, p, g, c, np.ascontiguousarray(u, dtype=float))

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "dirac":
            out = (v >= self.params[0]).astype(float)
        elif self.kind == "uniform":
            a, b = self.params
            out = np.clip((v - a) / (b - a), 0.0, 1.0)
        elif self.kind == "pareto":
            alpha, vmin, vmax = self.params
            vv = np.clip(v, vmin, vmax)
            out = -np.expm1(alpha * np.log(vmin / vv)) / self._pareto_mass()
            out = np.where(v >= vmax, 1.0, out)
        else:
            out = np.interp(v, self.grid, self.cdf_values, left=0.0, right=1.0)
            if self.cdf_values[0] > 0:
                out = np.where(v < self.grid[0], 0.0, out)
        return out if out.ndim else float(out)

    def pdf(self, v):
        """Density of the absolutely continuous part (zero for a point mass)."""
        v = np.asarray(v, dtype=float)
        if self.kind == "dirac":
            out = np.zeros_like(v)
        elif self.kind == "uniform":
            a, b = self.params
            out = np.where((v >= a) & (v <= b), 1.0 / (b - a), 0.0)
        elif self.kind == "pareto":
            alpha, vmin, vmax = self.params
            inside = (v >= vmin) & (v <= vmax)
            vv = np.where(inside, v, vmin)
            out = np.where(inside, alpha * vmin ** alpha * vv ** (-alpha - 1.0), 0.0)
            out = out / self._pareto_mass()
        else:
            dens = np.diff(self.cdf_values) / np.diff(self.grid)
            idx = np.clip(np.searchsorted(self.grid, v, side="right") - 1, 0, dens.size - 1)
            inside = (v >= self.grid[0]) & (v <= self.grid[-1])
            out = np.where(inside, dens[idx], 0.0)
        return out if out.ndim else float(out)

    @property
    def atoms(self):
        """Point masses as a list of (location, probability)."""
        if self.kind == "dirac":
            return [(self.params[0], 1.0)]
        if self.kind == "tabulated" and self.cdf_values[0] > 0:
            return [(float(self.grid[0]), float(self.cdf_values[0]))]
        return []

    @property
    def breakpoints(self):
        """Points where the density may be discontinuous."""
        if self.kind == "dirac":
            return np.array([self.params[0]])
        if self.kind == "tabulated":
            return np.asarray(self.grid)
        return np.array([self.v_min, self.v_max])

    def moment(self, gamma: float) -> float:
        """M_gamma = integral of v**gamma against G, in closed form."""
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.kind == "dirac":
            return self.params[0] ** gamma
        if self.kind == "uniform":
            a, b = self.params
            return (b ** (gamma + 1) - a ** (gamma + 1)) / ((gamma + 1) * (b - a))
        if self.kind == "pareto":
            alpha, vmin, vmax = self.params
            if math.isinf(vmax):
                if gamma >= alpha:
                    raise DivergentMoment(
                        f"moment of order {gamma} diverges for tail exponent {alpha}")
                return alpha * vmin ** gamma / (alpha - gamma)
            scale = alpha * vmin ** alpha / self._pareto_mass()
            if gamma == alpha:
                return scale * math.log(vmax / vmin)
            e = gamma - alpha
            return scale * (vmax ** e - vmin ** e) / e
        g = self.grid
        dens = np.diff(self.cdf_values) / np.diff(g)
        pieces = dens * (g[1:] ** (gamma + 1) - g[:-1] ** (gamma + 1)) / (gamma + 1)
        atom = self.cdf_values[0] * g[0] ** gamma if self.cdf_values[0] > 0 else 0.0
        return float(pieces.sum() + atom)

    def mean(self) -> float:
        return self.moment(1.0)

    def describe(self) -> dict:
        """Self-describing key/value block (inverse of :func:`from_description`)."""
        d = {"kind": self.kind}
        if self.kind == "dirac":
            d["v0"] = self.params[0]
        elif self.kind == "uniform":
            d["a"], d["b"] = self.params
        elif self.kind == "pareto":
            d["exponent"], d["v_min"], d["v_max"] = self.params
        else:
            d["grid"] = [float(x) for x in self.grid]
            d["cdf"] = [float(x) for x in self.cdf_values]
        return d


def from_description(d: dict) -> VolumeDistribution:
    kind = d["kind"]
    if kind == "dirac":
        return VolumeDistribution.dirac(d["v0"])
    if kind == "uniform":
        return VolumeDistribution.uniform(d["a"], d["b"])
    if kind == "pareto":
        return VolumeDistribution.pareto(d["exponent"], d["v_min"], d.get("v_max", math.inf))
    if kind == "tabulated":
        return VolumeDistribution.tabulated(d["grid"], d["cdf"])
    raise ValueError(f"unknown distribution kind {kind!r}")


def sample(dist: VolumeDistribution, u):
    return dist.sample(u)


def moment(dist: VolumeDistribution, gamma: float) -> float:
    return dist.moment(gamma)
