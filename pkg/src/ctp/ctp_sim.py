"""Event-driven simulation of a coalescing tagged particle among static obstacles.

Coordinates.  Obstacles live in the physical (lab) frame.  The tagged
particle's physical center is ``X(t) = U_phys * t * e1 + phi**(1/3) * Y``
with ``U_phys = U * phi**(-2/3)``; ``Y`` (rescaled) only changes at merges.
Volumes are rescaled by ``phi``; a particle of rescaled volume V has
physical radius ``phi**(1/3) * SIGMA * V**(1/3)``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ._hash import derive_key_py
from .errors import BudgetExceeded, CascadeOverflow, SimulationAborted
from .measure import EmpiricalMeasure
from .obstacle_field import (ConsumedSet, FieldParams, ObstacleBatch, PoissonField, consume,
                             consumed_mask, default_cell_side)
from .volume_dist import VolumeDistribution

SIGMA = (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
E1 = np.array([1.0, 0.0, 0.0])

MERGE_RULES = ("center_of_mass", "paper_literal")


@dataclass(frozen=True)
class SimParams:
    phi: float
    U: float = 1.0
    T: float = 1.0
    V0: float = 1.0
    Y0: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    dist: VolumeDistribution = field(default_factory=lambda: VolumeDistribution.dirac(1.0))
    eps_geom: float = 1e-12
    max_cascade: int = 10 ** 6
    v_ceiling: float = math.inf
    v_budget: float = 64.0
    cell_side: float | None = None
    merge_rule: str = "center_of_mass"

    def __post_init__(self):
        if not 0 < self.phi < 1:
            raise ValueError("phi must lie in (0, 1)")
        if not (self.U > 0 and self.T >= 0 and self.V0 >= 0):
            raise ValueError("need U > 0, T >= 0, V0 >= 0")
        if not self.eps_geom > 0:
            raise ValueError("eps_geom must be > 0")
        if self.merge_rule not in MERGE_RULES:
            raise ValueError(f"merge_rule must be one of {MERGE_RULES}")
        object.__setattr__(self, "Y0", tuple(float(c) for c in self.Y0))

    @property
    def speed(self) -> float:
        """Physical speed U * phi**(-2/3)."""
        return self.U * self.phi ** (-2.0 / 3.0)

    @property
    def scale(self) -> float:
        """Physical length of one rescaled unit, phi**(1/3)."""
        return self.phi ** (1.0 / 3.0)

    def field_params(self) -> FieldParams:
        side = self.cell_side or default_cell_side(self.phi, self.v_budget, self.dist.v_max)
        return FieldParams(self.seed, side, self.dist)


@dataclass
class TaggedState:
    Y: np.ndarray
    V: float
    t: float

    def copy(self) -> "TaggedState":
        return TaggedState(self.Y.copy(), self.V, self.t)


@dataclass
class Flight:
    t: float
    duration: float
    length: float  # physical
    exit_volume: float
    rescaled_length: float  # length / phi**(1/3), in particle-size units


@dataclass
class Coalescence:
    t: float
    steps: list  # one list of (obstacle_id, v, contact_vector) per cascade step
    Y_before: np.ndarray
    V_before: float
    Y_after: np.ndarray
    V_after: float

    @property
    def ids(self):
        return [ob[0] for step in self.steps for ob in step]

    @property
    def n_absorbed(self) -> int:
        return sum(len(step) for step in self.steps)

    @property
    def is_binary(self) -> bool:
        return len(self.steps) == 1 and len(self.steps[0]) == 1


@dataclass
class EventLog:
    Y0: np.ndarray
    V0: float
    events: list = field(default_factory=list)

    @property
    def flights(self):
        return [e for e in self.events if isinstance(e, Flight)]

    @property
    def coalescences(self):
        return [e for e in self.events if isinstance(e, Coalescence)]

    @property
    def elapsed(self) -> float:
        return math.fsum(f.duration for f in self.flights)

    @property
    def n_absorbed(self) -> int:
        return sum(c.n_absorbed for c in self.coalescences)

    @property
    def n_cascade_steps(self) -> int:
        """Cascade steps beyond the first of every coalescence event."""
        return sum(len(c.steps) - 1 for c in self.coalescences)

    @property
    def binary_only(self) -> bool:
        return all(c.is_binary for c in self.coalescences)

    def absorbed_volume(self) -> float:
        return math.fsum(ob[1] for c in self.coalescences for step in c.steps for ob in step)

    def to_records(self):
        for e in self.events:
            if isinstance(e, Flight):
                yield {"type": "flight", "t": e.t, "l": e.length, "ids": [], "dV": 0.0,
                       "dY": [0.0, 0.0, 0.0]}
            else:
                yield {"type": "coalescence", "t": e.t, "l": 0.0,
                       "ids": [list(i) for i in e.ids], "dV": e.V_after - e.V_before,
                       "dY": (e.Y_after - e.Y_before).tolist(),
                       "steps": [len(s) for s in e.steps]}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())


# -- geometry -----------------------------------------------------------------

def _center(state: TaggedState, params: SimParams, t=None) -> np.ndarray:
    t = state.t if t is None else t
    return params.speed * t * E1 + params.scale * state.Y


def _contact(params: SimParams, V, v):
    return params.scale * SIGMA * (V ** (1.0 / 3.0) + np.cbrt(v))


def _chunk_length(field_, rho_max):
    side = getattr(getattr(field_, "params", None), "cell_side", None)
    if side is None:
        return math.inf
    return max(8.0 * side, 4.0 * rho_max)


def next_collision(state: TaggedState, params: SimParams, field_, consumed=frozenset()):
    """First obstacle contact in (state.t, T], or None.

    Returns ``(t_hit, batch)`` where ``batch`` holds every obstacle whose
    contact time agrees with the first one within ``eps_geom`` times the
    remaining flight length.
    """
    remaining = params.speed * (params.T - state.t)
    if remaining <= 0:
        return None
    P = _center(state, params)
    rho_max = float(_contact(params, state.V, field_.v_max))
    chunk = _chunk_length(field_, rho_max)
    tol = params.eps_geom * remaining
    best = math.inf
    found = []
    s0 = 0.0
    while s0 < remaining:
        s1 = min(remaining, s0 + chunk)
        batch = field_.query(P + s0 * E1, P + s1 * E1, rho_max)
        if len(batch.v):
            d = batch.x - P
            rho = _contact(params, state.V, batch.v)
            a = d[:, 0]
            c = np.einsum("ij,ij->i", d, d) - rho * rho
            disc = a * a - c
            ok = (a > 0) & (c > 0) & (disc > params.eps_geom * rho * rho)
            if np.any(ok):
                s = np.full(len(a), math.inf)
                s[ok] = c[ok] / (a[ok] + np.sqrt(disc[ok]))
                ok &= s <= remaining
                if np.any(ok):
                    # consumed obstacles are filtered after the geometric test,
                    # which is what keeps long absorption chains cheap
                    hits = ObstacleBatch(batch.ids[ok], batch.x[ok], batch.v[ok])
                    live = _alive(hits, consumed)
                    if np.any(live):
                        sk = s[ok][live]
                        found.append((sk, ObstacleBatch(hits.ids[live], hits.x[live],
                                                        hits.v[live])))
                        best = min(best, float(sk.min()))
        if best <= s1 - rho_max:
            break
        s0 = s1
    if not found:
        return None
    ids, xs, vs, seen = [], [], [], set()
    for s, b in found:
        for k in np.flatnonzero(s <= best + tol):
            key = tuple(b.ids[k].tolist())
            if key not in seen:
                seen.add(key)
                ids.append(b.ids[k])
                xs.append(b.x[k])
                vs.append(b.v[k])
    batch = ObstacleBatch(np.array(ids, dtype=np.int64), np.array(xs), np.array(vs))
    return state.t + best / params.speed, batch


def overlapping(state: TaggedState, params: SimParams, field_, consumed=frozenset()) -> ObstacleBatch:
    """Unconsumed obstacles touching or overlapping the particle at ``state.t``.

    Contact within a relative tolerance ``eps_geom`` counts as overlap.
    """
    P = _center(state, params)
    rho_max = float(_contact(params, state.V, field_.v_max))
    batch = field_.query(P, P, rho_max * (1.0 + params.eps_geom))
    if not len(batch.v):
        return batch
    d = batch.x - P
    dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    rho = _contact(params, state.V, batch.v)
    keep = dist < rho * (1.0 + params.eps_geom)
    batch = ObstacleBatch(batch.ids[keep], batch.x[keep], batch.v[keep])
    return batch.without(consumed)


def _alive(batch: ObstacleBatch, consumed) -> np.ndarray:
    if not consumed:
        return np.ones(len(batch.v), dtype=bool)
    return ~consumed_mask(consumed, batch.ids)


def merge_cluster(state: TaggedState, initial: ObstacleBatch, t_star: float, params: SimParams,
                  field_, consumed: set | None = None):
    """Absorb ``initial`` at ``t_star`` and resolve the resulting cascade.

    Returns the new state and the :class:`Coalescence` event.  ``consumed``
    is updated in place.
    """
    if consumed is None:
        consumed = ConsumedSet()
    st = TaggedState(state.Y.copy(), state.V, t_star)
    event = Coalescence(t_star, [], state.Y.copy(), state.V, state.Y.copy(), state.V)
    current = initial
    while len(current.v):
        if len(event.steps) >= params.max_cascade:
            event.Y_after, event.V_after = st.Y.copy(), st.V
            raise CascadeOverflow(f"more than {params.max_cascade} cascade steps at t={t_star}",
                                  state=st, log=event)
        consume(consumed, current.ids.tolist())
        P = _center(st, params)
        y = (current.x - params.speed * t_star * E1) / params.scale
        contact = (current.x - P) / params.scale
        event.steps.append([(tuple(i), float(v), c)
                            for i, v, c in zip(current.ids.tolist(), current.v, contact)])
        dv = float(np.sum(current.v))
        weighted = st.V * st.Y + current.v @ y
        if params.merge_rule == "center_of_mass":
            st.Y = weighted / (st.V + dv)
        else:
            st.Y = weighted / st.V
        st.V = st.V + dv
        event.Y_after, event.V_after = st.Y.copy(), st.V
        if st.V > params.v_ceiling:
            raise BudgetExceeded(f"volume {st.V} exceeds ceiling {params.v_ceiling} at t={t_star}",
                                 state=st, log=event)
        current = overlapping(st, params, field_, consumed)
    return st, event


def make_field(params: SimParams) -> PoissonField:
    fp = params.field_params()
    return _field_template(fp.cell_side, fp.dist).reseeded(fp.seed)


@lru_cache(maxsize=32)
def _field_template(cell_side, dist):
    return PoissonField(FieldParams(0, cell_side, dist))


def run_trajectory(params: SimParams, field_=None):
    """Simulate one trajectory up to ``params.T``.

    Returns ``(final_state, log)``.  Raises :class:`CascadeOverflow` or
    :class:`BudgetExceeded` (carrying the partial log) on runaway growth.
    """
    if field_ is None:
        field_ = make_field(params)
    state = TaggedState(np.array(params.Y0, dtype=float), float(params.V0), 0.0)
    log = EventLog(state.Y.copy(), state.V)
    consumed = ConsumedSet()

    def merge(initial, t):
        nonlocal state
        try:
            state, ev = merge_cluster(state, initial, t, params, field_, consumed)
        except SimulationAborted as exc:
            log.events.append(exc.log)
            exc.log = log
            raise
        log.events.append(ev)

    initial = overlapping(state, params, field_, consumed)
    if len(initial.v):
        merge(initial, 0.0)
    while state.t < params.T:
        hit = next_collision(state, params, field_, consumed)
        t_end = params.T if hit is None else hit[0]
        dur = t_end - state.t
        length = params.speed * dur
        log.events.append(Flight(state.t, dur, length, state.V, length / params.scale))
        state.t = t_end
        if hit is None:
            break
        merge(hit[1], t_end)
    return state, log


# -- ensembles ------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    seed: int
    n_collisions: int
    n_cascade_steps: int
    V: float
    Y: np.ndarray
    wall_time_ms: float
    status: str
    binary_only: bool
    n_flights: int


@dataclass
class EnsembleResult:
    params: SimParams
    records: list
    logs: list | None

    @property
    def ok(self):
        return [r for r in self.records if r.status == "ok"]

    @property
    def failure_fraction(self) -> float:
        return 1.0 - len(self.ok) / len(self.records)

    @property
    def measure(self) -> EmpiricalMeasure:
        rows = [list(r.Y) + [r.V] for r in self.ok]
        return EmpiricalMeasure(np.array(rows).reshape(-1, 4), dim="YV")

    @property
    def binary_fraction(self) -> float:
        ok = self.ok
        return sum(r.binary_only for r in ok) / len(ok)

    @property
    def cascade_fraction(self) -> float:
        ok = self.ok
        return sum(r.n_cascade_steps > 0 for r in ok) / len(ok)

    def collision_counts(self) -> np.ndarray:
        return np.array([r.n_collisions for r in self.ok], dtype=float)

    @property
    def mean_flights(self) -> float:
        return float(np.mean([r.n_flights for r in self.ok]))

    def summary_rows(self):
        for r in self.records:
            yield [r.seed, r.n_collisions, r.n_cascade_steps, r.V, *r.Y, r.wall_time_ms, r.status]

    def write_csv(self, path, header: str = ""):
        """Per-trajectory summary; ``wall_time_ms`` is 0 unless timing was requested."""
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for r in self.records:
                w.writerow([r.seed, r.n_collisions, r.n_cascade_steps, f"{r.V:.17g}"]
                           + [f"{c:.17g}" for c in r.Y] + [f"{r.wall_time_ms:.17g}", r.status])

    def write_events(self, path):
        """All event logs as JSON lines, each record tagged with its trajectory seed."""
        if self.logs is None:
            raise ValueError("ensemble was run without keep_logs")
        with open(path, "w") as fh:
            for r, log in zip(self.records, self.logs):
                for rec in log.to_records():
                    rec["seed"] = r.seed
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")


SUMMARY_COLUMNS = ["seed", "n_collisions", "n_cascade_steps", "V_final", "Y1", "Y2", "Y3",
                   "wall_time_ms", "status"]


def trajectory_seed(base_seed: int, index: int) -> int:
    return derive_key_py(base_seed, index)


def _run_one(params: SimParams, timing: bool, keep_log: bool):
    t0 = time.perf_counter() if timing else 0.0
    status = "ok"
    try:
        state, log = run_trajectory(params)
    except SimulationAborted as exc:
        state, log = exc.state, exc.log
        status = type(exc).__name__
    wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
    rec = TrajectoryRecord(params.seed, log.n_absorbed, log.n_cascade_steps, state.V,
                           state.Y.copy(), wall, status, log.binary_only, len(log.flights))
    return rec, (log if keep_log else None)


def run_ensemble(params: SimParams, n_traj: int, base_seed: int = 0, threads: int = 1,
                 keep_logs: bool = False, timing: bool = False) -> EnsembleResult:
    """Independent trajectories with seeds derived from ``base_seed``.

    Failures (cascade overflow, budget exceeded) are recorded per trajectory
    and excluded from the empirical measure.  Output is identical for any
    ``threads``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    plist = [replace(params, seed=trajectory_seed(base_seed, i)) for i in range(n_traj)]
    if threads <= 1:
        out = [_run_one(p, timing, keep_logs) for p in plist]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(lambda p: _run_one(p, timing, keep_logs), plist, chunksize=64))
    records = [o[0] for o in out]
    logs = [o[1] for o in out] if keep_logs else None
    return EnsembleResult(params, records, logs)
