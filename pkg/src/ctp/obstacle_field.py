"""Marked Poisson obstacle field with lazy, order-independent materialization.

Space is tiled by cubic cells of side ``cell_side``.  The content of a cell
is a pure function of ``(seed, cell)``: the cell key is a SplitMix64 mix of
the seed and the three cell indices, and the obstacle count, positions and
volumes are successive outputs of the SplitMix64 stream seeded by that key.
Nothing depends on query order, so any set of queries over any partition of
work yields the same obstacles.

Obstacle ids are flat tuples ``(cell_x, cell_y, cell_z, local_index)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from numba import njit
from scipy.stats import poisson

from ._hash import cell_key, uniform
from .errors import DoubleConsume
from .volume_dist import VolumeDistribution, quantile


class Obstacle(NamedTuple):
    id: tuple
    x: tuple
    v: float


@dataclass(frozen=True)
class Region:
    """Capsule: points within distance ``rho`` of the segment [p0, p1]."""

    p0: tuple
    p1: tuple
    rho: float

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError("rho must be >= 0")

    def volume(self) -> float:
        length = float(np.linalg.norm(np.subtract(self.p1, self.p0)))
        return math.pi * self.rho ** 2 * length + 4.0 / 3.0 * math.pi * self.rho ** 3


@dataclass(frozen=True)
class FieldParams:
    seed: int
    cell_side: float
    dist: VolumeDistribution
    intensity: float = 1.0

    def __post_init__(self):
        if not self.cell_side > 0:
            raise ValueError("cell_side must be > 0")
        if self.intensity != 1.0:
            raise ValueError("only unit intensity is supported")
        if not math.isfinite(self.dist.v_max):
            raise ValueError("the field needs a bounded volume law")


def default_cell_side(phi: float, v_budget: float, v_max: float) -> float:
    sigma = (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    return max(1.0, 4.0 * phi ** (1.0 / 3.0) * sigma * (v_budget ** (1 / 3) + v_max ** (1 / 3)))


def poisson_cdf_table(mean: float) -> np.ndarray:
    kmax = int(mean + 20.0 * math.sqrt(mean) + 40.0)
    table = poisson.cdf(np.arange(kmax + 1), mean)
    return np.ascontiguousarray(table, dtype=float)


# -- compiled kernels ---------------------------------------------------------

@njit(cache=True, nogil=True)
def _cell_count(key, pcdf):
    u = uniform(key, 0)
    n = np.searchsorted(pcdf, u, side="right")
    return min(n, pcdf.shape[0])


@njit(cache=True, nogil=True)
def _cell_obstacle(key, i, cx, cy, cz, side, kind, params, grid, cdf):
    base = 1 + 4 * i
    x = (cx + uniform(key, base)) * side
    y = (cy + uniform(key, base + 1)) * side
    z = (cz + uniform(key, base + 2)) * side
    v = quantile(kind, params, grid, cdf, uniform(key, base + 3))
    return x, y, z, v


@njit(cache=True, nogil=True)
def _materialize_cell(seed, cx, cy, cz, side, pcdf, kind, params, grid, cdf):
    key = cell_key(seed, cx, cy, cz)
    n = _cell_count(key, pcdf)
    xs = np.empty((n, 3))
    vs = np.empty(n)
    for i in range(n):
        x, y, z, v = _cell_obstacle(key, i, cx, cy, cz, side, kind, params, grid, cdf)
        xs[i, 0] = x
        xs[i, 1] = y
        xs[i, 2] = z
        vs[i] = v
    return xs, vs


@njit(cache=True, nogil=True)
def _cell_counts_block(seed, c0, n_cells, pcdf):
    """Counts for a block of cells starting at ``c0``; used by statistics tests."""
    out = np.empty(n_cells, dtype=np.int64)
    for k in range(n_cells):
        out[k] = _cell_count(cell_key(seed, c0[0] + k, c0[1], c0[2]), pcdf)
    return out


@njit(cache=True, nogil=True)
def _query_capsule(seed, side, pcdf, kind, params, grid, cdf, p0, p1, rho):
    lo = np.empty(3, dtype=np.int64)
    hi = np.empty(3, dtype=np.int64)
    for a in range(3):
        lo[a] = np.int64(np.floor((min(p0[a], p1[a]) - rho) / side))
        hi[a] = np.int64(np.floor((max(p0[a], p1[a]) + rho) / side))
    d0 = p1[0] - p0[0]
    d1 = p1[1] - p0[1]
    d2 = p1[2] - p0[2]
    dd = d0 * d0 + d1 * d1 + d2 * d2
    rho2 = rho * rho
    cap = 16
    ids = np.empty((cap, 4), dtype=np.int64)
    xs = np.empty((cap, 3))
    vs = np.empty(cap)
    m = 0
    for cx in range(lo[0], hi[0] + 1):
        for cy in range(lo[1], hi[1] + 1):
            for cz in range(lo[2], hi[2] + 1):
                key = cell_key(seed, cx, cy, cz)
                n = _cell_count(key, pcdf)
                for i in range(n):
                    x, y, z, v = _cell_obstacle(key, i, cx, cy, cz, side, kind, params, grid, cdf)
                    e0 = x - p0[0]
                    e1 = y - p0[1]
                    e2 = z - p0[2]
                    s = 0.0
                    if dd > 0.0:
                        s = (e0 * d0 + e1 * d1 + e2 * d2) / dd
                        s = min(1.0, max(0.0, s))
                    f0 = e0 - s * d0
                    f1 = e1 - s * d1
                    f2 = e2 - s * d2
                    if f0 * f0 + f1 * f1 + f2 * f2 <= rho2:
                        if m == cap:
                            cap *= 2
                            ids2 = np.empty((cap, 4), dtype=np.int64)
                            xs2 = np.empty((cap, 3))
                            vs2 = np.empty(cap)
                            ids2[:m] = ids[:m]
                            xs2[:m] = xs[:m]
                            vs2[:m] = vs[:m]
                            ids, xs, vs = ids2, xs2, vs2
                        ids[m, 0] = cx
                        ids[m, 1] = cy
                        ids[m, 2] = cz
                        ids[m, 3] = i
                        xs[m, 0] = x
                        xs[m, 1] = y
                        xs[m, 2] = z
                        vs[m] = v
                        m += 1
    return ids[:m], xs[:m], vs[:m]


# -- fields -------------------------------------------------------------------

class ObstacleBatch(NamedTuple):
    ids: np.ndarray  # (n, 4) int64
    x: np.ndarray  # (n, 3) physical positions
    v: np.ndarray  # (n,) rescaled volumes

    def obstacles(self):
        return [Obstacle(tuple(int(c) for c in i), tuple(float(c) for c in x), float(v))
                for i, x, v in zip(self.ids, self.x, self.v)]

    def without(self, consumed):
        if not consumed or len(self.v) == 0:
            return self
        keep = ~consumed_mask(consumed, self.ids)
        return ObstacleBatch(self.ids[keep], self.x[keep], self.v[keep])


def _id_keys(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1, 4).view(np.uint64)
    with np.errstate(over="ignore"):
        h = ids[:, 0] * np.uint64(0x9E3779B97F4A7C15)
        h ^= ids[:, 1] * np.uint64(0xBF58476D1CE4E5B9)
        h ^= ids[:, 2] * np.uint64(0x94D049BB133111EB)
        h ^= ids[:, 3] * np.uint64(0xD6E8FEB86659FD93)
    return h


class ConsumedSet(set):
    """Set of obstacle ids with a sorted hash index for vectorized membership."""

    def __init__(self, items=()):
        super().__init__()
        self._keys = np.zeros(0, dtype=np.uint64)
        self._rows = np.zeros((0, 4), dtype=np.int64)
        self.update(items)

    def update(self, *others):
        new = [tuple(int(c) for c in i) for o in others for i in o if tuple(i) not in self]
        new = list(dict.fromkeys(new))
        if not new:
            return
        super().update(new)
        rows = np.array(new, dtype=np.int64)
        keys = _id_keys(rows)
        order = np.argsort(keys, kind="stable")  # np.insert keeps ties in input order
        rows, keys = rows[order], keys[order]
        at = np.searchsorted(self._keys, keys)
        self._keys = np.insert(self._keys, at, keys)
        self._rows = np.insert(self._rows, at, rows, axis=0)

    def add(self, item):
        self.update([item])

    def mask(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1, 4)
        if not len(self) or not len(ids):
            return np.zeros(len(ids), dtype=bool)
        keys = _id_keys(ids)
        pos = np.searchsorted(self._keys, keys)
        pos_c = np.minimum(pos, len(self._keys) - 1)
        hit = self._keys[pos_c] == keys
        out = hit & np.all(self._rows[pos_c] == ids, axis=1)
        # equal hashes of distinct ids: settle exactly
        for k in np.flatnonzero(hit & ~out):
            out[k] = tuple(ids[k].tolist()) in self
        return out


def consumed_mask(consumed, ids) -> np.ndarray:
    if isinstance(consumed, ConsumedSet):
        return consumed.mask(ids)
    return np.array([tuple(i) in consumed for i in np.asarray(ids).tolist()], dtype=bool)


class PoissonField:
    """Unit-intensity Poisson field of point obstacles with i.i.d. volume marks."""

    def __init__(self, params: FieldParams, cache: bool = False):
        self.params = params
        self._seed = np.uint64(params.seed & ((1 << 64) - 1))
        self._pcdf = poisson_cdf_table(params.cell_side ** 3)
        self._dist_args = params.dist.kernel_args()
        self._cache = {} if cache else None

    def reseeded(self, seed: int) -> "PoissonField":
        """Same geometry and volume law under a new seed, sharing lookup tables."""
        out = PoissonField.__new__(PoissonField)
        out.params = FieldParams(seed, self.params.cell_side, self.params.dist)
        out._seed = np.uint64(seed & ((1 << 64) - 1))
        out._pcdf = self._pcdf
        out._dist_args = self._dist_args
        out._cache = None if self._cache is None else {}
        return out

    @property
    def v_max(self) -> float:
        return self.params.dist.v_max

    def materialize_cell(self, cell) -> list:
        cell = tuple(int(c) for c in cell)
        if self._cache is not None and cell in self._cache:
            return self._cache[cell]
        xs, vs = _materialize_cell(self._seed, cell[0], cell[1], cell[2],
                                   self.params.cell_side, self._pcdf, *self._dist_args)
        obs = [Obstacle(cell + (i,), tuple(xs[i].tolist()), float(vs[i])) for i in range(len(vs))]
        if self._cache is not None:
            # generation is pure, so a racing writer stores an identical list
            obs = self._cache.setdefault(cell, obs)
        return obs

    def query(self, p0, p1, rho: float) -> ObstacleBatch:
        ids, xs, vs = _query_capsule(self._seed, self.params.cell_side, self._pcdf,
                                     *self._dist_args,
                                     np.asarray(p0, dtype=float), np.asarray(p1, dtype=float),
                                     float(rho))
        return ObstacleBatch(ids, xs, vs)

    def obstacles_in(self, region: Region, consumed=frozenset()) -> list:
        return self.query(region.p0, region.p1, region.rho).without(consumed).obstacles()

    def cell_counts(self, n_cells: int, start=(0, 0, 0)) -> np.ndarray:
        """Obstacle counts of ``n_cells`` consecutive cells along the first axis."""
        return _cell_counts_block(self._seed, np.asarray(start, dtype=np.int64), n_cells, self._pcdf)

    def dump_csv(self, region: Region, path, consumed=frozenset()):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_x", "cell_y", "cell_z", "local_index", "x1", "x2", "x3", "v"])
            for ob in sorted(self.obstacles_in(region, consumed)):
                w.writerow(list(ob.id) + [f"{c:.17g}" for c in ob.x] + [f"{ob.v:.17g}"])


class ScriptedField:
    """A fixed, finite list of obstacles (for constructed scenes and oracles).

    Obstacles get ids ``(0, 0, 0, k)`` in the order given.
    """

    def __init__(self, positions, volumes):
        xs = np.atleast_2d(np.asarray(positions, dtype=float))
        vs = np.asarray(volumes, dtype=float).reshape(-1)
        if xs.shape != (len(vs), 3) and not (len(vs) == 0):
            raise ValueError("positions must be (n, 3) matching volumes")
        if len(vs) == 0:
            xs = np.zeros((0, 3))
        order = np.argsort(xs[:, 0], kind="stable")
        self._x = xs[order]
        self._v = vs[order]
        self._ids = np.zeros((len(vs), 4), dtype=np.int64)
        self._ids[:, 3] = order
        self._x0 = self._x[:, 0].copy()

    @property
    def v_max(self) -> float:
        return float(self._v.max()) if len(self._v) else 0.0

    def translated(self, delta) -> "ScriptedField":
        out = ScriptedField.__new__(ScriptedField)
        out._x = self._x + np.asarray(delta, dtype=float)
        out._v = self._v
        out._ids = self._ids
        out._x0 = out._x[:, 0].copy()
        return out

    def query(self, p0, p1, rho: float) -> ObstacleBatch:
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        a = np.searchsorted(self._x0, min(p0[0], p1[0]) - rho, side="left")
        b = np.searchsorted(self._x0, max(p0[0], p1[0]) + rho, side="right")
        xs = self._x[a:b]
        d = p1 - p0
        dd = d @ d
        e = xs - p0
        s = np.clip(e @ d / dd, 0.0, 1.0) if dd > 0 else np.zeros(len(xs))
        f = e - s[:, None] * d
        keep = np.einsum("ij,ij->i", f, f) <= rho * rho
        return ObstacleBatch(self._ids[a:b][keep], xs[keep], self._v[a:b][keep])

    def obstacles_in(self, region: Region, consumed=frozenset()) -> list:
        return self.query(region.p0, region.p1, region.rho).without(consumed).obstacles()


# -- functional interface -------------------------------------------------------

def materialize_cell(params: FieldParams, cell) -> list:
    return PoissonField(params).materialize_cell(cell)


def obstacles_in(params: FieldParams, region: Region, consumed=frozenset()) -> list:
    return PoissonField(params).obstacles_in(region, consumed)


def consume(consumed: set, ids: Iterable) -> set:
    """Add ``ids`` to the trajectory's consumed set, refusing duplicates."""
    ids = [tuple(i) for i in ids]
    seen = set()
    for i in ids:
        if i in consumed or i in seen:
            raise DoubleConsume(f"obstacle {i} consumed twice")
        seen.add(i)
    consumed.update(seen)
    return consumed
