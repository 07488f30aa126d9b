"""Exact Monte Carlo simulation of the limiting jump process.

A path sits at (Y, V), waits an exponential time of rate ``U * lambda(V)``
and then absorbs a volume ``v`` hitting from direction ``n(theta, phi)``:

    Y' = Y + v / (V + v) * SIGMA * (V**(1/3) + v**(1/3)) * n,   V' = V + v

with ``theta`` of density ``sin(2 theta)`` on [0, pi/2], ``phi`` uniform and
``v`` drawn from ``G`` tilted by ``(V**(1/3) + v**(1/3))**2``.

Randomness is counter based: path ``i`` of an ensemble with base seed ``s``
consumes the SplitMix64 stream keyed by ``derive_key_py(s, i)``, so results do
not depend on how paths are split over threads.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import integrate

from ._hash import GOLDEN, MASK64, derive_key_py, mix64, uniform
from .errors import DivergentMoment, JumpBudgetExceeded
from .measure import EmpiricalMeasure
from .volume_dist import VolumeDistribution, quantile

SIGMA = (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
PI_SIGMA2 = math.pi * SIGMA ** 2

DEFAULT_MAX_JUMPS = 10 ** 7

_OK, _BUDGET = 0, 1
_GOLDEN_U = np.uint64(GOLDEN)


@dataclass(frozen=True)
class JumpParams:
    U: float = 1.0
    dist: VolumeDistribution = field(default_factory=lambda: VolumeDistribution.dirac(1.0))
    V0: float = 1.0
    Y0: tuple = (0.0, 0.0, 0.0)
    T: float = 1.0
    seed: int = 0
    max_jumps: int = DEFAULT_MAX_JUMPS

    def __post_init__(self):
        if not (self.U > 0 and self.V0 >= 0 and self.T >= 0):
            raise ValueError("need U > 0, V0 >= 0, T >= 0")
        if not math.isfinite(self.dist.v_max):
            raise ValueError("the jump sampler needs a bounded volume law")
        self.dist.moment(2.0 / 3.0)  # raises DivergentMoment if needed
        object.__setattr__(self, "Y0", tuple(float(c) for c in self.Y0))


@dataclass
class JumpPath:
    t: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    Y: np.ndarray  # (n, 3), position after each jump
    V: np.ndarray  # volume after each jump
    Y_final: np.ndarray
    V_final: float

    @property
    def n_jumps(self) -> int:
        return len(self.t)

    def to_jsonl(self) -> str:
        lines = []
        for k in range(self.n_jumps):
            lines.append(json.dumps({"t": float(self.t[k]), "v": float(self.v[k]),
                                     "theta": float(self.theta[k]), "phi": float(self.phi[k]),
                                     "Y": self.Y[k].tolist(), "V": float(self.V[k])}))
        return "".join(s + "\n" for s in lines)


# -- intensity ------------------------------------------------------------------

def lambda_of_V(V: float, dist: VolumeDistribution, quad_tol: float = 1e-10) -> float:
    """lambda(V) = pi * SIGMA**2 * int G(v) (V**(1/3) + v**(1/3))**2 dv, by quadrature.

    Point masses are summed exactly; the continuous part is integrated in
    the variable w = v**(1/3), which removes the cusp at v = 0.
    """
    if V < 0:
        raise ValueError("V must be >= 0")
    dist.moment(2.0 / 3.0)
    c = V ** (1.0 / 3.0)
    total = 0.0
    for loc, p in dist.atoms:
        total += p * (c + loc ** (1.0 / 3.0)) ** 2
    if dist.kind != "dirac":
        pts = np.cbrt(np.unique(np.clip(dist.breakpoints, dist.v_min, dist.v_max)))
        for w0, w1 in zip(pts[:-1], pts[1:]):
            val, _ = integrate.quad(lambda w: dist.pdf(w ** 3) * 3 * w * w * (c + w) ** 2,
                                    w0, w1, epsabs=0.0, epsrel=quad_tol, limit=200)
            total += val
    return PI_SIGMA2 * total


def lambda_closed(V, dist: VolumeDistribution):
    """Same as :func:`lambda_of_V` through the moments M_{1/3}, M_{2/3}."""
    c = np.cbrt(V)
    return PI_SIGMA2 * (c * c + 2.0 * c * dist.moment(1 / 3) + dist.moment(2 / 3))


# -- compiled path kernel ---------------------------------------------------------

@njit(cache=True, inline="always")
def _path_key(seed, i):
    h = mix64(seed + _GOLDEN_U)
    return mix64(h + _GOLDEN_U + np.uint64(i))


@njit(cache=True, nogil=True)
def _tilted_v(key, ctr, V13, vmax13, kind, params, grid, cdf):
    if kind == 0:
        return params[0], ctr
    env = (V13 + vmax13) ** 2
    while True:
        v = quantile(kind, params, grid, cdf, uniform(key, ctr))
        acc = uniform(key, ctr + 1)
        ctr += 2
        if acc * env <= (V13 + np.cbrt(v)) ** 2:
            return v, ctr


@njit(cache=True, nogil=True)
def _run_path(key, Y0, V0, T, U, m13, m23, vmax13, kind, params, grid, cdf, max_jumps,
              rec_t, rec_v, rec_th, rec_ph, rec_Y, rec_V):
    """One path; returns (n_jumps, status, Y, V).  Records the first len(rec_t) jumps."""
    y0, y1, y2 = Y0[0], Y0[1], Y0[2]
    V = V0
    t = 0.0
    n = 0
    ctr = 0
    cap = rec_t.shape[0]
    while True:
        V13 = np.cbrt(V)
        rate = U * (V13 * V13 + 2.0 * V13 * m13 + m23)
        t += -np.log1p(-uniform(key, ctr)) / rate
        ctr += 1
        if t > T:
            return n, 0, y0, y1, y2, V
        if n >= max_jumps:
            return n, 1, y0, y1, y2, V
        th = np.arcsin(np.sqrt(uniform(key, ctr)))
        ph = 2.0 * np.pi * uniform(key, ctr + 1)
        ctr += 2
        v, ctr = _tilted_v(key, ctr, V13, vmax13, kind, params, grid, cdf)
        s = v / (V + v) * SIGMA * (V13 + np.cbrt(v))
        st = np.sin(th)
        y0 += s * np.cos(th)
        y1 += s * st * np.cos(ph)
        y2 += s * st * np.sin(ph)
        V += v
        if n < cap:
            rec_t[n] = t
            rec_v[n] = v
            rec_th[n] = th
            rec_ph[n] = ph
            rec_Y[n, 0] = y0
            rec_Y[n, 1] = y1
            rec_Y[n, 2] = y2
            rec_V[n] = V
        n += 1


@njit(cache=True, nogil=True)
def _run_block(seed, start, stop, Y0, V0, T, U, m13, m23, vmax13, kind, params, grid, cdf,
               max_jumps, out_n, out_status, out_Y, out_V):
    e = np.zeros(0)
    e2 = np.zeros((0, 3))
    for i in range(start, stop):
        n, status, y0, y1, y2, V = _run_path(_path_key(seed, i), Y0, V0, T, U, m13, m23, vmax13,
                                             kind, params, grid, cdf, max_jumps,
                                             e, e, e, e, e2, e)
        out_n[i] = n
        out_status[i] = status
        out_Y[i, 0] = y0
        out_Y[i, 1] = y1
        out_Y[i, 2] = y2
        out_V[i] = V


def _kernel_args(p: JumpParams):
    d = p.dist
    # the kernel takes U * pi * SIGMA**2 and evaluates lambda(V) through the moments
    return (np.asarray(p.Y0, dtype=float), float(p.V0), float(p.T), float(p.U) * PI_SIGMA2,
            d.moment(1 / 3), d.moment(2 / 3), d.v_max ** (1 / 3), *d.kernel_args(),
            int(p.max_jumps))


# -- single path ----------------------------------------------------------------

def sample_jump(V: float, dist: VolumeDistribution, key: int, counter: int = 0):
    """Draw (v, theta, phi) for a jump from volume V; returns them and the next counter."""
    ukey = np.uint64(key & MASK64)
    th = float(np.arcsin(np.sqrt(uniform(ukey, counter))))
    ph = float(2.0 * np.pi * uniform(ukey, counter + 1))
    v, ctr = _tilted_v(ukey, counter + 2, np.cbrt(V), dist.v_max ** (1 / 3), *dist.kernel_args())
    return float(v), th, ph, int(ctr)


def direction(theta, phi) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta) * math.cos(phi),
                     math.sin(theta) * math.sin(phi)])


def apply_jump(Y, V: float, v: float, theta: float, phi: float):
    Y = np.asarray(Y, dtype=float)
    if v == 0:
        return Y.copy(), V
    s = v / (V + v) * SIGMA * (V ** (1 / 3) + v ** (1 / 3))
    return Y + s * direction(theta, phi), V + v


def simulate(params: JumpParams, path_index: int = 0) -> JumpPath:
    """Path ``path_index`` of the ensemble with base seed ``params.seed``, fully recorded."""
    key = np.uint64(derive_key_py(params.seed, path_index))
    args = _kernel_args(params)
    cap = 256
    while True:
        cap = min(cap, params.max_jumps + 1)
        rec = [np.empty(cap) for _ in range(4)] + [np.empty((cap, 3)), np.empty(cap)]
        n, status, y0, y1, y2, V = _run_path(key, *args, *rec)
        if status == _BUDGET:
            raise JumpBudgetExceeded(f"more than {params.max_jumps} jumps before T={params.T}")
        if n <= cap:
            break
        cap = 2 * n
    t, v, th, ph, Y, Vs = (r[:n].copy() for r in rec)
    return JumpPath(t, v, th, ph, Y, Vs, np.array([y0, y1, y2]), float(V))


# -- ensembles ----------------------------------------------------------------

@dataclass
class KineticEnsemble:
    params: JumpParams
    n_jumps: np.ndarray
    status: np.ndarray
    Y: np.ndarray
    V: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == _OK

    @property
    def failure_fraction(self) -> float:
        return 1.0 - float(self.ok.mean())

    @property
    def measure(self) -> EmpiricalMeasure:
        ok = self.ok
        return EmpiricalMeasure(np.column_stack([self.Y[ok], self.V[ok]]), dim="YV")

    def expect(self, g):
        """Mean and standard error of ``g(samples)`` with rows (Y1, Y2, Y3, V)."""
        return self.measure.expect(g)

    def write_csv(self, path):
        seeds = [derive_key_py(self.params.seed, i) for i in range(len(self.V))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "n_jumps", "V", "Y1", "Y2", "Y3"])
            for s, n, V, Y in zip(seeds, self.n_jumps, self.V, self.Y):
                w.writerow([s, int(n), f"{V:.17g}"] + [f"{c:.17g}" for c in Y])


def ensemble(params: JumpParams, n_paths: int, threads: int = 1) -> KineticEnsemble:
    """Terminal states of paths 0..n_paths-1; identical for any ``threads``."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    out_n = np.zeros(n_paths, dtype=np.int64)
    out_s = np.zeros(n_paths, dtype=np.int64)
    out_Y = np.zeros((n_paths, 3))
    out_V = np.zeros(n_paths)
    args = _kernel_args(params)
    seed = np.uint64(params.seed & MASK64)

    def block(bounds):
        _run_block(seed, bounds[0], bounds[1], *args, out_n, out_s, out_Y, out_V)

    step = max(1, -(-n_paths // max(threads, 1)))
    blocks = [(a, min(n_paths, a + step)) for a in range(0, n_paths, step)]
    if threads <= 1:
        for b in blocks:
            block(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(block, blocks))
    return KineticEnsemble(params, out_n, out_s, out_Y, out_V)


__all__ = ["JumpParams", "JumpPath", "KineticEnsemble", "lambda_of_V", "lambda_closed",
           "sample_jump", "apply_jump", "simulate", "ensemble", "DivergentMoment"]
