"""Verification harness: convergence to the kinetic limit, pathwise bounds,
the Poisson tail lemma, flight statistics and the finite-time blow-up scene."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .ctp_sim import SIGMA, EventLog, SimParams, run_ensemble, run_trajectory
from .errors import ConstructionMismatch, InconclusiveNoise, SimulationAborted
from .kinetic_proc import JumpParams, ensemble as kinetic_ensemble
from .measure import EmpiricalMeasure
from .obstacle_field import ScriptedField
from .volume_dist import VolumeDistribution

#: constant in |Y_k - Y_0| <= C (V_k^{1/3} - V_0^{1/3}) that the per-merge
#: geometry actually supports (the largest single-merge ratio is about 4.2 SIGMA)
DISPLACEMENT_CONSTANT = 6.0 * SIGMA
#: the smaller constant 9 / (2 pi), kept for comparison runs
DISPLACEMENT_CONSTANT_LITERAL = 9.0 / (2.0 * math.pi)


# -- distances ----------------------------------------------------------------------

def wasserstein1_V(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W1 between the V-marginals (area between the two CDFs)."""
    return float(stats.wasserstein_distance(a.V, b.V, a.weights, b.weights))


def _bootstrap_w1_sigma(x, y, n_boot, rng) -> float:
    vals = np.empty(n_boot)
    for k in range(n_boot):
        xb = x[rng.integers(0, len(x), len(x))]
        yb = y[rng.integers(0, len(y), len(y))]
        vals[k] = stats.wasserstein_distance(xb, yb)
    return float(vals.std(ddof=1))


# -- convergence ------------------------------------------------------------------

OBSERVABLES = {
    "V": lambda s: s[:, 3],
    "V2": lambda s: s[:, 3] ** 2,
    "Y1": lambda s: s[:, 0],
    "Y_sq": lambda s: np.einsum("ij,ij->i", s[:, :3], s[:, :3]),
}


@dataclass
class ConvergenceRow:
    phi: float
    n_traj: int
    w1: float
    w1_sigma: float
    gaps: dict
    gap_sigmas: dict
    binary_fraction: float
    cascade_fraction: float
    mean_flights: float
    failure_fraction: float


@dataclass
class ConvergenceReport:
    rows: list
    kinetic_paths: int
    params: dict = field(default_factory=dict)

    @property
    def w1(self) -> np.ndarray:
        return np.array([r.w1 for r in self.rows])

    @property
    def w1_sigma(self) -> np.ndarray:
        return np.array([r.w1_sigma for r in self.rows])

    def separation(self, i: int, j: int) -> float:
        """(W1_i - W1_j) in units of the combined standard deviation."""
        s = math.hypot(self.rows[i].w1_sigma, self.rows[j].w1_sigma)
        return (self.rows[i].w1 - self.rows[j].w1) / s

    @property
    def monotone_w1(self) -> bool:
        return bool(np.all(np.diff(self.w1) < 0))

    @property
    def w1_decrease_resolved(self) -> bool:
        """Largest-phi W1 exceeds smallest-phi W1 by more than 2 combined sigma."""
        return self.separation(0, len(self.rows) - 1) > 2.0

    @property
    def w1_decreases(self) -> bool:
        return self.monotone_w1 and self.w1_decrease_resolved

    @property
    def binary_monotone(self) -> bool:
        b = [r.binary_fraction for r in self.rows]
        return all(y > x for x, y in zip(b, b[1:]))

    @property
    def slope(self) -> float:
        """Least-squares slope of log W1 against log phi (reported, not asserted)."""
        phi = np.array([r.phi for r in self.rows])
        return float(np.polyfit(np.log(phi), np.log(self.w1), 1)[0])

    def write_csv(self, path, header: str = ""):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["phi", "n_traj", "W1", "W1_sigma"]
                       + [f"gap_{k}" for k in OBSERVABLES] + [f"gap_{k}_sigma" for k in OBSERVABLES]
                       + ["binary_fraction", "cascade_fraction", "mean_flights",
                          "failure_fraction"])
            for r in self.rows:
                w.writerow([_g(r.phi), r.n_traj, _g(r.w1), _g(r.w1_sigma)]
                           + [_g(r.gaps[k]) for k in OBSERVABLES]
                           + [_g(r.gap_sigmas[k]) for k in OBSERVABLES]
                           + [_g(r.binary_fraction), _g(r.cascade_fraction),
                              _g(r.mean_flights), _g(r.failure_fraction)])


def _g(x) -> str:
    return f"{x:.17g}"


def convergence_study(phi_list, U: float = 1.0, T: float = 1.0, V0: float = 1.0,
                      dist: VolumeDistribution | None = None, n_traj: int = 20000,
                      kinetic_paths: int = 200000, base_seed: int = 0, threads: int = 1,
                      n_boot: int = 200, v_budget: float = 64.0, check: bool = True,
                      ensembles: dict | None = None) -> ConvergenceReport:
    """Particle ensembles over ``phi_list`` against one kinetic reference.

    With ``check`` the study raises :class:`InconclusiveNoise` when no pair of
    W1 values is separated by more than two combined standard deviations.
    ``ensembles`` may map phi to a precomputed particle ensemble.
    """
    phi_list = [float(p) for p in phi_list]
    if any(b >= a for a, b in zip(phi_list, phi_list[1:])):
        raise ValueError("phi_list must be decreasing")
    dist = dist or VolumeDistribution.dirac(1.0)
    kin = kinetic_ensemble(JumpParams(U=U, dist=dist, V0=V0, T=T, seed=base_seed + 1),
                           kinetic_paths, threads=threads)
    km = kin.measure
    rng = np.random.default_rng(base_seed)
    rows = []
    for phi in phi_list:
        ens = (ensembles or {}).get(phi)
        if ens is None:
            p = SimParams(phi=phi, U=U, T=T, V0=V0, dist=dist, v_budget=v_budget)
            ens = run_ensemble(p, n_traj, base_seed=base_seed, threads=threads)
        pm = ens.measure
        gaps, sig = {}, {}
        for name, g in OBSERVABLES.items():
            m1, s1 = pm.expect(g)
            m2, s2 = km.expect(g)
            gaps[name] = abs(m1 - m2)
            sig[name] = math.hypot(s1, s2)
        rows.append(ConvergenceRow(
            phi, len(ens.records), wasserstein1_V(pm, km),
            _bootstrap_w1_sigma(pm.V, km.V, n_boot, rng), gaps, sig,
            ens.binary_fraction, ens.cascade_fraction, ens.mean_flights, ens.failure_fraction))
    report = ConvergenceReport(rows, kinetic_paths,
                               dict(U=U, T=T, V0=V0, n_traj=n_traj, base_seed=base_seed))
    if check and len(rows) > 1:
        n = len(rows)
        if all(abs(report.separation(i, j)) <= 2.0 for i in range(n) for j in range(i + 1, n)):
            raise InconclusiveNoise("W1 error bars overlap for every pair of phi values")
    return report


# -- displacement bound ----------------------------------------------------------------

@dataclass
class AuditResult:
    violations: int
    logs_checked: int
    merges_checked: int
    max_ratio: float  # max |Y_k - Y_0| / (C (V_k^{1/3} - V_0^{1/3}))
    constant: float


def displacement_audit(logs, constant: float = DISPLACEMENT_CONSTANT,
                       rtol: float = 1e-12) -> AuditResult:
    """Check |Y_k - Y_0| <= constant * (V_k^{1/3} - V_0^{1/3}) on binary-only logs.

    A log qualifies when every coalescence absorbs exactly one obstacle in
    one step; other logs are skipped.
    """
    violations = checked = merges = 0
    worst = 0.0
    for log in logs:
        if log is None or not log.binary_only:
            continue
        checked += 1
        Y0 = np.asarray(log.Y0, dtype=float)
        c0 = log.V0 ** (1.0 / 3.0)
        for ev in log.coalescences:
            merges += 1
            disp = float(np.linalg.norm(np.asarray(ev.Y_after) - Y0))
            bound = constant * (ev.V_after ** (1.0 / 3.0) - c0)
            if bound > 0:
                worst = max(worst, disp / bound)
            if disp > bound * (1.0 + rtol) + rtol:
                violations += 1
    return AuditResult(violations, checked, merges, worst, constant)


# -- Poisson tail ----------------------------------------------------------------------

@dataclass
class TailRow:
    xi_star: float
    N: int
    zeta: float
    psi: float
    psi_gamma: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.psi / self.bound


def poisson_tail(N: int, zeta: float) -> float:
    """P(Poisson(zeta) >= N) by upward summation from the n = N term."""
    if N <= 0:
        return 1.0
    if zeta == 0:
        return 0.0
    term = math.exp(N * math.log(zeta) - zeta - math.lgamma(N + 1))
    total = 0.0
    n = N
    while True:
        total += term
        n += 1
        term *= zeta / n
        if term <= 1e-17 * total and n > zeta:
            return total


def tail_bound(N: int, xi_star: float) -> float:
    a = abs(math.log(xi_star)) / 2.0
    return math.e / (math.e - 1.0) * math.exp(-a * N)


def poisson_tail_check(xi_star_list, N_list) -> list:
    """Psi_N(xi* N) next to the bound (e/(e-1)) exp(-|log xi*| N / 2) on the grid."""
    rows = []
    for xi in xi_star_list:
        if not 0 < xi < math.exp(-2):
            raise ValueError("xi_star must lie in (0, e^-2)")
        for N in N_list:
            zeta = xi * N
            psi = poisson_tail(int(N), zeta)
            psi_g = float(special.gammainc(N, zeta)) if zeta > 0 else 0.0
            rows.append(TailRow(xi, int(N), zeta, psi, psi_g, tail_bound(int(N), xi)))
    return rows


def write_tail_csv(rows, path, header: str = ""):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["xi_star", "N", "zeta", "psi", "psi_gamma", "bound", "ratio"])
        for r in rows:
            w.writerow([_g(r.xi_star), r.N, _g(r.zeta), _g(r.psi), _g(r.psi_gamma), _g(r.bound),
                        _g(r.ratio)])


# -- blow-up scene ---------------------------------------------------------------------

BLOWUP_PHI = 1.0 / 8.0  # phi**(1/3) = 1/2 exactly


def blowup_positions(lengths) -> np.ndarray:
    """Obstacle abscissae x_1..x_n of the chain in unit-volume length units."""
    x = [0.0]
    for k, l in enumerate(lengths):
        step = (-SIGMA * (1.0 + k ** (1.0 / 3.0)) * k / (k + 1) + SIGMA * (k + 1) ** (1.0 / 3.0)
                + l + SIGMA)
        x.append(x[-1] + step)
    return np.array(x[1:])


@dataclass
class BlowupResult:
    times: np.ndarray  # absorption time of obstacle j = 1..n
    volumes: np.ndarray  # volume right after absorbing obstacle j
    expected_times: np.ndarray
    escape_time: float  # first time V >= V_target (inf if never)
    total_length: float  # sum of the scripted free flights
    V_final: float
    log: EventLog
    status: str

    @property
    def max_time_error(self) -> float:
        n = min(len(self.times), len(self.expected_times))
        if n == 0:
            return 0.0
        return float(np.max(np.abs(self.times[:n] - self.expected_times[:n])
                            / self.expected_times[:n]))


def blowup_demo(n: int = 10000, V_target: float = 1e4, lengths=None, margin: float = 0.5,
                perturb: int | None = None, check: bool = True, max_cascade: int = 10 ** 6,
                rtol: float = 1e-9) -> BlowupResult:
    """Run the tagged particle through the scripted obstacle chain.

    The particle starts at the origin with unit volume and unit speed (in
    unit-volume lengths); obstacle j sits on the axis so that it is touched
    after a free flight of ``lengths[j-1]`` (default 2**-j).  The scene is
    realized at phi = 1/8 with U = phi, i.e. physical speed 1/2 and physical
    lengths halved, so all rescaled quantities equal the unit-volume ones.

    ``perturb=j`` shifts obstacle j sideways by more than its contact radius
    (a negative control: the chain must break there).  With ``check`` the
    absorption times must match the partial sums of ``lengths`` to ``rtol``,
    otherwise :class:`ConstructionMismatch` is raised.
    """
    lengths = np.asarray(lengths if lengths is not None else 0.5 ** np.arange(1, n + 1),
                         dtype=float)
    x = blowup_positions(lengths)
    scale = BLOWUP_PHI ** (1.0 / 3.0)
    pos = np.zeros((len(x), 3))
    pos[:, 0] = scale * x
    if perturb is not None:
        j = perturb - 1
        pos[j, 1] = scale * 2.0 * SIGMA * ((j + 1) ** (1.0 / 3.0) + 1.0) + scale
    scene = ScriptedField(pos, np.ones(len(x)))
    total = float(math.fsum(lengths))
    params = SimParams(phi=BLOWUP_PHI, U=BLOWUP_PHI, T=total + margin, V0=1.0,
                       dist=VolumeDistribution.dirac(1.0), max_cascade=max_cascade)
    status = "ok"
    try:
        state, log = run_trajectory(params, scene)
    except SimulationAborted as exc:
        state, log, status = exc.state, exc.log, type(exc).__name__
    times, vols = [], []
    for ev in log.coalescences:
        V = ev.V_before
        for step in ev.steps:
            for _ in step:
                V += 1.0
                times.append(ev.t)
                vols.append(V)
    times, vols = np.array(times), np.array(vols)
    expected = np.cumsum(lengths)
    hit = np.flatnonzero(vols >= V_target)
    escape = float(times[hit[0]]) if hit.size else math.inf
    res = BlowupResult(times, vols, expected, escape, total, float(state.V), log, status)
    if check and perturb is None:
        k = np.arange(1, len(vols) + 1)
        if len(vols) != len(x) or np.any(vols != k + 1):
            raise ConstructionMismatch(f"volumes deviate from V_j = j + 1 "
                                       f"({len(vols)} absorptions of {len(x)})")
        if res.max_time_error > rtol:
            raise ConstructionMismatch(
                f"collision times deviate by {res.max_time_error:.3e} relative")
    return res


# -- flights -------------------------------------------------------------------------

@dataclass
class FlightStats:
    total_length: float  # sum of rescaled flight lengths
    cumulative: np.ndarray
    small_fraction: float
    n_flights: int


def flight_stats(log: EventLog, delta: float = 0.01) -> FlightStats:
    """Total flight length and the fraction of flights with l <= delta / (R**2 + 1).

    Lengths are in rescaled units and R = SIGMA * V**(1/3) is the radius at
    the start of each flight.
    """
    fl = log.flights
    lengths = np.array([f.rescaled_length for f in fl])
    radii = SIGMA * np.cbrt(np.array([f.exit_volume for f in fl]))
    small = lengths <= delta / (radii ** 2 + 1.0)
    return FlightStats(float(lengths.sum()), np.cumsum(lengths),
                       float(small.mean()) if len(fl) else 0.0, len(fl))


def ensemble_flight_summary(logs, delta: float = 0.01) -> dict:
    """Mean small-flight fraction and share of logs where small flights are half or more."""
    st = [flight_stats(lg, delta) for lg in logs if lg is not None]
    frac = np.array([s.small_fraction for s in st])
    return {"n_logs": len(st), "mean_small_fraction": float(frac.mean()),
            "half_small_share": float(np.mean(frac >= 0.5)),
            "mean_total_length": float(np.mean([s.total_length for s in st]))}


__all__ = ["wasserstein1_V", "convergence_study", "ConvergenceReport", "displacement_audit",
           "poisson_tail_check", "poisson_tail", "tail_bound", "blowup_demo", "blowup_positions",
           "flight_stats", "ensemble_flight_summary", "DISPLACEMENT_CONSTANT",
           "DISPLACEMENT_CONSTANT_LITERAL"]
