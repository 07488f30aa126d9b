"""Deterministic solvers for the volume marginal F(V, t).

The marginal obeys the linear gain-loss equation

    dF/dt(V) = lam * [ int G(v) k(V - v, v) F(V - v) dv - kbar(V) F(V) ]

with ``k(V, v) = (V**(1/3) + v**(1/3))**2``, ``kbar(V) = int G(v) k(V, v) dv`` and
``lam = U * pi * SIGMA**2``.

Discretization.  The grid state is a vector of node masses ``m_i = w_i F_i``
(``w_i`` trapezoid weights).  Mass leaving node ``j`` with obstacle volume ``v``
lands at ``V_j + v`` and is split between the two enclosing nodes by linear
interpolation, so the scheme conserves mass and the first moment exactly; mass
pushed past the last node is kept in an overflow slot.  Time stepping is
classical RK4, and the backward (test-function) equation uses the transposed
operator, so the discrete duality pairing is preserved to rounding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse

from .errors import GridOverflow, MassDrift
from .volume_dist import VolumeDistribution

SIGMA = (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
PI_SIGMA2 = math.pi * SIGMA ** 2

MASS_TOL = 1e-8
OVERFLOW_TOL = 1e-6
CHAIN_TAIL_TOL = 1e-12
DEFAULT_COURANT = 0.25
_TINY = 1e-300
_DROP_BUDGET = 1e-13

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def rate_constant(U: float) -> float:
    """lam = U * pi * (3 / 4 pi)**(2/3)."""
    return U * PI_SIGMA2


def kernel(V, v):
    return (np.cbrt(V) + np.cbrt(v)) ** 2


def kbar(V, dist: VolumeDistribution):
    c = np.cbrt(V)
    return c * c + 2.0 * c * dist.moment(1 / 3) + dist.moment(2 / 3)


# -- grids ----------------------------------------------------------------------

@dataclass
class MarginalGrid:
    """Volume nodes with density values F and the overflow mass beyond the last node."""

    nodes: np.ndarray
    F: np.ndarray
    t: float = 0.0
    overflow: float = 0.0

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        if self.nodes.ndim != 1 or self.nodes.size < 2 or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly increasing with at least two entries")
        if self.F.shape != self.nodes.shape:
            raise ValueError("F must match nodes")

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.nodes)

    @property
    def masses(self) -> np.ndarray:
        return self.weights * self.F

    @property
    def mass(self) -> float:
        return float(np.sum(self.masses))

    def moment(self, p: float = 1.0) -> float:
        return float(np.sum(self.masses * self.nodes ** p))

    @property
    def mean(self) -> float:
        return self.moment(1.0) / self.mass

    @classmethod
    def from_masses(cls, nodes, m, t=0.0, overflow=0.0) -> "MarginalGrid":
        nodes = np.asarray(nodes, dtype=float)
        return cls(nodes, np.asarray(m, dtype=float) / trapezoid_weights(nodes), t, overflow)

    @classmethod
    def point_mass(cls, V0: float, nodes) -> "MarginalGrid":
        """F(., 0) = delta at V0, which must be a node."""
        nodes = np.asarray(nodes, dtype=float)
        idx = np.flatnonzero(np.isclose(nodes, V0, rtol=0, atol=1e-12 * max(1.0, V0)))
        if idx.size != 1:
            raise ValueError("V0 must be a grid node")
        m = np.zeros_like(nodes)
        m[idx[0]] = 1.0
        return cls.from_masses(nodes, m)

    def to_csv(self, path, mode="w"):
        with open(path, mode, newline="") as fh:
            w = csv.writer(fh)
            if mode == "w":
                w.writerow(["t", "V", "F"])
            for V, F in zip(self.nodes, self.F):
                w.writerow([f"{self.t:.17g}", f"{V:.17g}", f"{F:.17g}"])


def trapezoid_weights(nodes) -> np.ndarray:
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def uniform_nodes(V0: float, h: float, V_end: float) -> np.ndarray:
    n = int(math.ceil((V_end - V0) / h - 1e-9))
    return V0 + h * np.arange(max(n, 1) + 1)


def geometric_nodes(V0: float, h0: float, ratio: float, V_end: float) -> np.ndarray:
    """Spacing h0 * ratio**i starting at V0, up to the first node >= V_end."""
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    out = [V0]
    h = h0
    while out[-1] < V_end:
        out.append(out[-1] + h)
        h *= ratio
    return np.array(out)


def default_nodes(V0: float, dist: VolumeDistribution, V_end: float, spacing="auto",
                  h=None, ratio=1.02) -> np.ndarray:
    """Uniform commensurate grid for a Dirac law, otherwise geometric."""
    if spacing == "auto":
        spacing = "uniform" if dist.kind == "dirac" else "geometric"
    if spacing == "uniform":
        return uniform_nodes(V0, h or (dist.params[0] if dist.kind == "dirac" else 0.05), V_end)
    return geometric_nodes(V0, h or 0.02, ratio, V_end)


# -- operator -------------------------------------------------------------------

def _locate(nodes, x):
    """Element index and local coordinate of points x (clamped; overflow flagged)."""
    i = np.searchsorted(nodes, x, side="right") - 1
    i = np.clip(i, 0, len(nodes) - 2)
    frac = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
    snap_hi = frac > 1.0 - 1e-12
    i = np.where(snap_hi & (i + 1 < len(nodes) - 1), i + 1, i)
    frac = np.where(snap_hi, np.where(i + 1 < len(nodes) - 1, 0.0, 1.0), frac)
    frac = np.where(np.abs(frac) < 1e-12, 0.0, frac)
    return i, frac


def _segment_quadrature(a, b, cut_zero):
    """Gauss-Legendre points and weights on [a, b]; w = v**(1/3) substitution if a == 0."""
    if cut_zero:
        wa, wb = 0.0, b ** (1.0 / 3.0)
        w = 0.5 * (wb - wa) * (_GL_X + 1.0) + wa
        return w ** 3, 0.5 * (wb - wa) * _GL_W * 3.0 * w * w
    x = 0.5 * (b - a) * (_GL_X + 1.0) + a
    return x, 0.5 * (b - a) * _GL_W


def transfer_matrix(nodes, dist: VolumeDistribution):
    """Sparse K with K[i, j] = int G(v) k(V_j, v) hat_i(V_j + v) dv, plus overflow[j].

    Column sums of K plus overflow equal kbar(V_j) up to quadrature error.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    rows, cols, vals = [], [], []
    overflow = np.zeros(n)
    atoms = dist.atoms
    continuous = dist.kind != "dirac"
    cont_mass = 1.0 - sum(p for _, p in atoms)
    bps = np.unique(np.clip(dist.breakpoints, dist.v_min, dist.v_max))
    for j in range(n):
        Vj = nodes[j]
        pts_x, pts_w = [], []
        for loc, p in atoms:
            pts_x.append(np.array([loc]))
            pts_w.append(np.array([p * kernel(Vj, loc)]))
        if continuous and cont_mass > 0:
            lo, hi = dist.v_min, dist.v_max
            diffs = nodes - Vj
            cuts = np.concatenate([bps, diffs[(diffs > lo) & (diffs < hi)], [lo, hi]])
            cuts = np.unique(cuts)
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b - a <= 1e-14 * max(1.0, b):
                    continue
                x, w = _segment_quadrature(a, b, a == 0.0)
                pts_x.append(x)
                pts_w.append(w * dist.pdf(x) * kernel(Vj, x))
        x = np.concatenate(pts_x)
        w = np.concatenate(pts_w)
        target = Vj + x
        past = target > nodes[-1] * (1.0 + 1e-14)
        overflow[j] = float(np.sum(w[past]))
        i, frac = _locate(nodes, target[~past])
        ww = w[~past]
        rows += [i, i + 1]
        cols += [np.full(i.size, j), np.full(i.size, j)]
        vals += [ww * (1.0 - frac), ww * frac]
    K = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    K.sum_duplicates()
    return K, overflow


class MarginalOperator:
    """The generator A acting on node masses, with an overflow slot appended."""

    def __init__(self, nodes, dist: VolumeDistribution, U: float = 1.0):
        self.nodes = np.asarray(nodes, dtype=float)
        self.dist = dist
        self.U = U
        self.lam = rate_constant(U)
        self.K, self.out = transfer_matrix(self.nodes, dist)
        self.loss = np.asarray(self.K.sum(axis=0)).ravel() + self.out
        self.KT = self.K.T.tocsr()

    def forward(self, m: np.ndarray) -> tuple:
        """(dm/dt, d overflow/dt)."""
        return self.lam * (self.K @ m - self.loss * m), self.lam * float(self.out @ m)

    def backward(self, psi: np.ndarray) -> np.ndarray:
        """Transposed action; psi is taken to vanish on the overflow slot."""
        return self.lam * (self.KT @ psi - self.loss * psi)

    def max_rate(self) -> float:
        return self.lam * float(self.loss.max())

    def stable_dt(self, courant: float) -> float:
        return courant / self.max_rate()


def rhs(grid: MarginalGrid, dist: VolumeDistribution, U: float = 1.0, op=None) -> np.ndarray:
    """dF/dt at the nodes (gain minus loss)."""
    op = op or MarginalOperator(grid.nodes, dist, U)
    dm, _ = op.forward(grid.masses)
    return dm / grid.weights


def _rk4_steps(T: float, dt_max: float):
    n = max(1, int(math.ceil(T / dt_max - 1e-12)))
    return n, T / n


def solve(grid0: MarginalGrid, dist: VolumeDistribution, T: float, U: float = 1.0,
          courant: float = DEFAULT_COURANT, mass_tol: float = MASS_TOL,
          overflow_tol: float = OVERFLOW_TOL, checkpoints=(), op=None):
    """Integrate the marginal equation from grid0 over [0, T] with RK4.

    ``courant`` bounds dt * lam * max kbar.  With ``checkpoints`` the grids
    at every checkpoint inside (0, T) and at T are returned as well.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    op = op or MarginalOperator(grid0.nodes, dist, U)
    m = grid0.masses.copy()
    o = grid0.overflow
    total0 = m.sum() + o
    times = sorted(set([float(c) for c in checkpoints if 0 < c < T] + [T]))
    saved = []
    t = 0.0
    for t_stop in times:
        n, dt = _rk4_steps(t_stop - t, op.stable_dt(courant)) if t_stop > t else (0, 0.0)
        for _ in range(n):
            k1, o1 = op.forward(m)
            k2, o2 = op.forward(m + 0.5 * dt * k1)
            k3, o3 = op.forward(m + 0.5 * dt * k2)
            k4, o4 = op.forward(m + dt * k3)
            m = m + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            o = o + dt / 6.0 * (o1 + 2 * o2 + 2 * o3 + o4)
        t = t_stop
        if abs(m.sum() + o - total0) > mass_tol:
            raise MassDrift(f"mass drifted by {m.sum() + o - total0:.3e} at t={t}")
        if o > overflow_tol:
            raise GridOverflow(f"mass {o:.3e} beyond V_N={grid0.nodes[-1]} at t={t}")
        saved.append(MarginalGrid.from_masses(grid0.nodes, m, t + grid0.t, o))
    final = saved[-1] if T > 0 else MarginalGrid(grid0.nodes, grid0.F.copy(), grid0.t,
                                                 grid0.overflow)
    if checkpoints:
        return final, saved
    return final


def solve_backward(psi0, nodes, dist: VolumeDistribution, T: float, U: float = 1.0,
                   courant: float = DEFAULT_COURANT, op=None) -> np.ndarray:
    """Test function Psi(., T) from Psi(., 0) = psi0 under the transposed scheme."""
    op = op or MarginalOperator(nodes, dist, U)
    psi = np.asarray(psi0, dtype=float).copy()
    if T <= 0:
        return psi
    n, dt = _rk4_steps(T, op.stable_dt(courant))
    for _ in range(n):
        k1 = op.backward(psi)
        k2 = op.backward(psi + 0.5 * dt * k1)
        k3 = op.backward(psi + 0.5 * dt * k2)
        k4 = op.backward(psi + dt * k3)
        psi = psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


# -- Dirac chain ------------------------------------------------------------------

@dataclass
class DiracChain:
    V0: float
    v0: float
    p: np.ndarray
    t: float
    overflow: float = 0.0
    dropped: float = 0.0
    steps: int = 0

    @property
    def volumes(self) -> np.ndarray:
        return self.V0 + self.v0 * np.arange(len(self.p))

    @property
    def mass(self) -> float:
        return float(np.sum(self.p))

    @property
    def mean(self) -> float:
        return float(np.dot(self.volumes, self.p) / self.mass)

    @property
    def var(self) -> float:
        d = self.volumes - self.mean
        return float(np.dot(d * d, self.p) / self.mass)

    @property
    def N_max(self) -> int:
        return len(self.p) - 1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "V", "F"])
            for V, p in zip(self.volumes, self.p):
                w.writerow([f"{self.t:.17g}", f"{V:.17g}", f"{p:.17g}"])


def chain_rates(V0, v0, U, N) -> np.ndarray:
    V = V0 + v0 * np.arange(N + 1)
    return rate_constant(U) * kernel(V, v0)


@njit(cache=True, inline="always")
def _chain_stage(a, p, v, w, c, lo, top):
    """w = p + c * A v on [lo, top] for the birth generator A; returns a_top v_top."""
    prev = 0.0
    for n in range(lo, top + 1):
        out = a[n] * v[n]
        w[n] = p[n] + c * (prev - out)
        prev = out
    return prev


@njit(cache=True)
def _chain_forward(a, p, T, courant, tiny, drop_budget):
    """Windowed RK4 for dp_n/dt = a_{n-1} p_{n-1} - a_n p_n; mass leaving N is overflow.

    For a linear autonomous system one classical RK4 step equals the
    degree-4 Taylor polynomial of exp(dt A), evaluated here in Horner form
    (four sweeps per step).  Only the window of nonnegligible mass plus four
    nodes of look-ahead (the reach of one step) is updated.  Front entries
    below ``tiny`` are cut, and left-edge entries are cut while their running
    total stays below ``drop_budget``; the total removed is returned as
    ``dropped``.
    """
    N = a.shape[0] - 1
    nz = np.flatnonzero(p)
    lo = nz[0]
    hi = nz[-1]
    t = 0.0
    over = 0.0
    dropped = 0.0
    steps = 0
    v1 = np.zeros(N + 1)
    v2 = np.zeros(N + 1)
    while t < T:
        top = min(N, hi + 4)
        dt = min(courant / a[top], T - t)
        if T - t - dt <= 1e-14 * T:
            dt = T - t
        _chain_stage(a, p, p, v1, dt / 4.0, lo, top)
        _chain_stage(a, p, v1, v2, dt / 3.0, lo, top)
        _chain_stage(a, p, v2, v1, dt / 2.0, lo, top)
        last = _chain_stage(a, p, v1, v2, dt, lo, top)
        if top == N:
            over += dt * last
        for n in range(lo, top + 1):
            p[n] = v2[n]
        t += dt
        steps += 1
        hi = top
        while hi > lo and abs(p[hi]) < tiny:
            dropped += p[hi]
            p[hi] = 0.0
            hi -= 1
        # mass only moves up, so a negligible left edge stays negligible
        while lo < hi and dropped + abs(p[lo]) < drop_budget:
            dropped += p[lo]
            p[lo] = 0.0
            lo += 1
    return over, dropped, steps


@njit(cache=True)
def _chain_backward(a, psi, T, n_steps):
    """RK4 (Horner form) for dpsi_n/dt = a_n (psi_{n+1} - psi_n), psi_{N+1} = 0."""
    N = a.shape[0] - 1
    dt = T / n_steps
    v = psi.copy()
    w = np.zeros(N + 1)
    for _ in range(n_steps):
        src = psi
        for c in (dt / 4.0, dt / 3.0, dt / 2.0, dt):
            for n in range(N):
                w[n] = psi[n] + c * a[n] * (src[n + 1] - src[n])
            w[N] = psi[N] - c * a[N] * src[N]
            v, w = w, v
            src = v
        psi[:] = v
    return psi


@njit(cache=True)
def _chain_forward_uniform(a, p, T, n_steps):
    """Full-width RK4 with equal steps; the exact adjoint of _chain_backward."""
    N = a.shape[0] - 1
    dt = T / n_steps
    v1 = np.zeros(N + 1)
    v2 = np.zeros(N + 1)
    for _ in range(n_steps):
        _chain_stage(a, p, p, v1, dt / 4.0, 0, N)
        _chain_stage(a, p, v1, v2, dt / 3.0, 0, N)
        _chain_stage(a, p, v2, v1, dt / 2.0, 0, N)
        _chain_stage(a, p, v1, v2, dt, 0, N)
        p[:] = v2
    return p


def _estimate_chain_length(V0, v0, U, T):
    Vbar = mean_growth_ode(V0, U, _dirac(v0), [T])[1][-1]
    spread = 10.0 * math.sqrt(max(Vbar, 1.0) * max(v0, 1.0)) + 64
    return int((Vbar - V0) / v0 + spread * (1 + (Vbar - V0) / v0) ** (1 / 6)) + 64


def _dirac(v0):
    return VolumeDistribution.dirac(v0)


def dirac_chain(V0: float, v0: float, U: float, T: float, N_max: int | None = None,
                courant: float = DEFAULT_COURANT, tail_tol: float = CHAIN_TAIL_TOL) -> DiracChain:
    """Pure-birth chain on V0 + n v0 for G = delta(v - v0).

    With ``N_max=None`` the chain length starts from a mean-field estimate and
    is doubled until the mass at and beyond the last node is below
    ``tail_tol``; an explicit ``N_max`` that fails this raises GridOverflow.
    """
    if not (v0 > 0 and V0 >= 0 and U > 0 and T >= 0):
        raise ValueError("need v0 > 0, V0 >= 0, U > 0, T >= 0")
    auto = N_max is None
    N = _estimate_chain_length(V0, v0, U, T) if auto else int(N_max)
    while True:
        a = chain_rates(V0, v0, U, N)
        p = np.zeros(N + 1)
        p[0] = 1.0
        over, dropped, steps = (0.0, 0.0, 0) if T == 0 else _chain_forward(a, p, T, courant,
                                                                           _TINY, _DROP_BUDGET)
        tail = over + p[-1]
        if tail < tail_tol:
            return DiracChain(V0, v0, p, T, over, dropped, steps)
        if not auto:
            raise GridOverflow(f"chain tail mass {tail:.3e} >= {tail_tol} with N_max={N}")
        N *= 2


# -- mean field and asymptotics ----------------------------------------------------

def mean_growth_ode(V0: float, U: float, dist: VolumeDistribution, times, h: float = 1e-3):
    """RK4 for dVbar/dt = lam (M1 Vbar^{2/3} + 2 M_{4/3} Vbar^{1/3} + M_{5/3}).

    Steps are dt = h * (1 + t), so long horizons stay cheap.  Returns
    ``(times, Vbar, leading)`` with ``leading = (V0^{1/3} + lam M1 t / 3)**3``.
    """
    lam = rate_constant(U)
    M1, M43, M53 = dist.moment(1.0), dist.moment(4 / 3), dist.moment(5 / 3)

    def f(V):
        c = np.cbrt(max(V, 0.0))
        return lam * (M1 * c * c + 2.0 * M43 * c + M53)

    times = np.asarray(sorted(times), dtype=float)
    out = np.empty(len(times))
    t, V = 0.0, float(V0)
    for i, t_stop in enumerate(times):
        while t < t_stop:
            dt = min(h * (1.0 + t), t_stop - t)
            k1 = f(V)
            k2 = f(V + 0.5 * dt * k1)
            k3 = f(V + 0.5 * dt * k2)
            k4 = f(V + dt * k3)
            V += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
        out[i] = V
    leading = (V0 ** (1 / 3) + lam * M1 * times / 3.0) ** 3
    return times, out, leading


def a_ode(U: float, dist: VolumeDistribution) -> float:
    """Growth constant (lam M1 / 3)**3 of the leading-order mean-field law."""
    return (rate_constant(U) * dist.moment(1.0) / 3.0) ** 3


def a_literal(U: float, dist: VolumeDistribution) -> float:
    """The alternative constant lam / 27 * M1**3."""
    return rate_constant(U) / 27.0 * dist.moment(1.0) ** 3


@dataclass
class ScalingRow:
    T: float
    meanW: float
    varW: float
    a_ODE: float
    a_paper_literal: float

    @property
    def rel_gap(self) -> float:
        return abs(self.meanW - self.a_ODE) / self.a_ODE


def asymptotic_scaling_check(dist: VolumeDistribution, U: float, T_list, V0: float = 0.0,
                             courant: float = DEFAULT_COURANT, grid_kwargs=None) -> list:
    """Mean and variance of W = V(T) / T**3 along T_list.

    Dirac laws use :func:`dirac_chain`; other laws use :func:`solve` on a
    geometric grid.
    """
    T_list = [float(T) for T in T_list]
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be increasing")
    aO, aL = a_ode(U, dist), a_literal(U, dist)
    rows = []
    for T in T_list:
        if dist.kind == "dirac":
            ch = dirac_chain(V0, dist.params[0], U, T, courant=courant)
            V, p = ch.volumes, ch.p / ch.mass
        else:
            Vbar = mean_growth_ode(V0, U, dist, [T])[1][-1]
            kw = dict(grid_kwargs or {})
            nodes = default_nodes(V0, dist, V0 + 4.0 * (Vbar - V0) + 20 * dist.v_max, **kw)
            g = solve(MarginalGrid.point_mass(V0, nodes), dist, T, U, courant=courant)
            V, p = g.nodes, g.masses / g.mass
        W = V / T ** 3
        mean = float(np.dot(W, p))
        var = float(np.dot((W - mean) ** 2, p))
        rows.append(ScalingRow(T, mean, var, aO, aL))
    return rows


def write_scaling_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "meanW", "varW", "a_ODE", "a_paper_literal"])
        for r in rows:
            w.writerow([f"{x:.17g}" for x in (r.T, r.meanW, r.varW, r.a_ODE, r.a_paper_literal)])


# -- duality ---------------------------------------------------------------------

@dataclass
class DualityResult:
    lhs: float
    rhs: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def duality_check(psi0, dist: VolumeDistribution, U: float, T: float, V0: float = 1.0,
                  nodes=None, method: str = "grid", courant: float = DEFAULT_COURANT,
                  N_max: int | None = None) -> DualityResult:
    """Compare <Psi(T), F(0)> with <Psi0, F(T)>.

    ``psi0`` is a callable of V or an array of node values.  ``method`` is
    ``"grid"`` (general law, sparse operator) or ``"chain"`` (Dirac law).
    Psi is taken to vanish beyond the last node.
    """
    if method == "chain":
        if dist.kind != "dirac":
            raise ValueError("the chain method needs a Dirac law")
        v0 = dist.params[0]
        N = N_max or dirac_chain(V0, v0, U, T, courant=courant).N_max
        a = chain_rates(V0, v0, U, N)
        Vn = V0 + v0 * np.arange(N + 1)
        psi = np.asarray(psi0(Vn) if callable(psi0) else psi0, dtype=float).copy()
        n_steps = max(1, int(math.ceil(T * a[-1] / courant)))
        p0 = np.zeros(N + 1)
        p0[0] = 1.0
        pT = _chain_forward_uniform(a, p0.copy(), T, n_steps)
        psiT = _chain_backward(a, psi.copy(), T, n_steps)
        return DualityResult(float(psiT @ p0), float(psi @ pT))
    if nodes is None:
        Vbar = mean_growth_ode(V0, U, dist, [T])[1][-1]
        nodes = default_nodes(V0, dist, V0 + 4.0 * (Vbar - V0) + 20 * dist.v_max)
    nodes = np.asarray(nodes, dtype=float)
    op = MarginalOperator(nodes, dist, U)
    g0 = MarginalGrid.point_mass(V0, nodes)
    psi = np.asarray(psi0(nodes) if callable(psi0) else psi0, dtype=float)
    gT = solve(g0, dist, T, U, courant=courant, op=op)
    psiT = solve_backward(psi, nodes, dist, T, U, courant=courant, op=op)
    return DualityResult(float(psiT @ g0.masses), float(psi @ gT.masses))
