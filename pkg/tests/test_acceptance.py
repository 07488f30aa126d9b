"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance".
"""

import math
import os

import numpy as np
import pytest

from ctp.analysis import DISPLACEMENT_CONSTANT, DISPLACEMENT_CONSTANT_LITERAL, blowup_demo, \
    convergence_study, displacement_audit, poisson_tail_check
from ctp.cli import main
from ctp.ctp_sim import SimParams, run_ensemble
from ctp.kinetic_proc import JumpParams, ensemble
from ctp.marginal_solver import MarginalGrid, a_literal, a_ode, asymptotic_scaling_check, \
    default_nodes, dirac_chain, duality_check, mean_growth_ode, solve
from ctp.volume_dist import VolumeDistribution

pytestmark = pytest.mark.acceptance

DIRAC = VolumeDistribution.dirac(1.0)
THREADS = os.cpu_count() or 1
RESULTS = []


def report(label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_c1_kinetic_matches_dirac_chain():
    n = 100000
    ens = ensemble(JumpParams(U=1.0, dist=DIRAC, V0=1.0, T=1.0, seed=2024), n, threads=THREADS)
    ch = dirac_chain(1.0, 1.0, 1.0, 1.0)
    mean, se = ens.expect(lambda s: s[:, 3])
    mean_ok = abs(mean - ch.mean) < 4 * se
    # V takes the values 1, 2, 3, ...: one bin per value
    counts = np.bincount(np.rint(ens.V[ens.ok] - 1.0).astype(int), minlength=len(ch.p))
    m = counts.sum()
    p = np.zeros(len(counts))
    p[:len(ch.p)] = ch.p[:len(counts)]
    occupied = np.flatnonzero(counts)
    sig = np.sqrt(p[occupied] * (1 - p[occupied]) / m)
    z = np.abs(counts[occupied] / m - p[occupied]) / np.where(sig > 0, sig, np.inf)
    hist_ok = bool(np.all(z < 4)) and np.all(p[occupied] > 0)
    ok = report("C1 kinetic vs Dirac chain",
                mean_ok and hist_ok,
                f"E[V] MC={mean:.5f}+-{se:.5f} chain={ch.mean:.5f} "
                f"|z|={abs(mean - ch.mean) / se:.2f}; {len(occupied)} bins, max |z|={z.max():.2f}")
    assert ok


def test_c2_particle_converges_to_kinetic():
    rep = convergence_study([3e-2, 1e-2, 3e-3, 1e-3], U=1.0, T=1.0, V0=1.0, dist=DIRAC,
                            n_traj=20000, kinetic_paths=200000, base_seed=2024,
                            threads=THREADS, check=False)
    n = len(rep.rows)
    seps = ", ".join(f"{rep.separation(i, i + 1):.1f}" for i in range(n - 1))
    bf = [r.binary_fraction for r in rep.rows]
    ok = rep.w1_decreases and rep.binary_monotone
    report("C2 particle -> kinetic",
           ok,
           "W1=" + ", ".join(f"{w:.4f}+-{s:.4f}" for w, s in zip(rep.w1, rep.w1_sigma))
           + f"; consecutive separations [sigma]: {seps}; "
           + "binary fraction=" + ", ".join(f"{b:.4f}" for b in bf)
           + f"; log-log slope {rep.slope:.2f}")
    assert ok


def test_c3_cubic_growth_law():
    rows = asymptotic_scaling_check(DIRAC, 1.0, [10.0, 30.0, 100.0], V0=0.0)
    last = rows[-1]
    mean_ok = last.rel_gap < 0.1
    var = [r.varW for r in rows]
    var_ok = all(b < a for a, b in zip(var, var[1:]))
    ok = report("C3 t^3 growth",
                mean_ok and var_ok,
                f"E[V(100)]/100^3={last.meanW:.5f} a_ODE={a_ode(1.0, DIRAC):.5f} "
                f"rel gap={last.rel_gap:.3f} (need <0.1: {'ok' if mean_ok else 'FAILS'}); "
                f"Var W=" + ", ".join(f"{v:.3e}" for v in var)
                + f" monotone: {'ok' if var_ok else 'FAILS'}; "
                f"literal constant lambda/27={a_literal(1.0, DIRAC):.5f}")
    assert ok


def test_c4_poisson_tail_bound():
    rows = poisson_tail_check([math.exp(-2.1), math.exp(-3.0), math.exp(-5.0)],
                              [1, 5, 10, 50, 200])
    bad = [r for r in rows if not r.psi <= r.bound]
    ok = report("C4 Poisson tail bound", not bad,
                f"{len(rows)} pairs, {len(bad)} violations, "
                f"max Psi/bound={max(r.ratio for r in rows):.3e}")
    assert ok


@pytest.fixture(scope="module")
def audit_logs():
    p = SimParams(phi=1e-3, U=1.0, T=1.0, V0=1.0, dist=DIRAC)
    return run_ensemble(p, 10000, base_seed=2024, threads=THREADS, keep_logs=True).logs


def test_c5_displacement_bound(audit_logs):
    lit = displacement_audit(audit_logs, DISPLACEMENT_CONSTANT_LITERAL)
    ref = displacement_audit(audit_logs, DISPLACEMENT_CONSTANT)
    ok = report("C5 displacement bound, C=9/(2 pi)",
                lit.violations == 0,
                f"{lit.logs_checked} binary-only logs, {lit.merges_checked} merges, "
                f"{lit.violations} violations (max ratio {lit.max_ratio:.3f}); "
                f"with C=6 sigma: {ref.violations} violations (max ratio {ref.max_ratio:.3f})")
    assert ok


def test_c6_blowup_scene():
    res = blowup_demo(n=10000, V_target=1e4)
    k = np.arange(1, len(res.volumes) + 1)
    vol_ok = len(res.volumes) == 10000 and bool(np.all(res.volumes == k + 1))
    time_ok = res.max_time_error <= 1e-9
    esc_ok = res.escape_time < 1.0
    ok = report("C6 blow-up", vol_ok and time_ok and esc_ok,
                f"V_j=j+1 for {len(res.volumes)} absorptions: {vol_ok}; "
                f"max rel time error {res.max_time_error:.2e}; "
                f"V>=1e4 at t={res.escape_time!r}")
    assert ok


def test_c7_conservation_and_duality():
    drift = {}
    for name, d in (("dirac", DIRAC), ("uniform", VolumeDistribution.uniform(0.0, 2.0))):
        Vbar = mean_growth_ode(1.0, 1.0, d, [10.0])[1][-1]
        nodes = default_nodes(1.0, d, 4 * Vbar + 40)
        g = solve(MarginalGrid.point_mass(1.0, nodes), d, 10.0)
        drift[name] = abs(g.mass + g.overflow - 1.0)
    psi = lambda V: np.cos(0.01 * V) / (1.0 + 1e-3 * V)
    g_grid = duality_check(psi, VolumeDistribution.uniform(0.0, 2.0), 1.0, 10.0, V0=1.0).gap
    g_chain = duality_check(psi, DIRAC, 1.0, 10.0, V0=1.0, method="chain").gap
    ok = max(drift.values()) < 1e-8 and g_grid < 1e-6 and g_chain < 1e-8
    report("C7 conservation and duality", ok,
           "mass drift " + ", ".join(f"{k}={v:.1e}" for k, v in drift.items())
           + f"; duality gap grid={g_grid:.1e} chain={g_chain:.1e}")
    assert ok


C8_CONFIG = """seed = 31
n_traj = 400
[sim]
phi = 0.01
keep_logs = true
[dist]
kind = uniform
a = 0
b = 2
[kinetic]
n_paths = 20000
[marginal]
V_end = 80
[lemmas]
audit_n_traj = 300
[blowup]
n = 300
V_target = 200
[convergence]
phi_list = 3e-2, 1e-3
kinetic_paths = 20000
n_boot = 50
[asymptotics]
T_list = 3, 6
"""


def test_c8_determinism(tmp_path):
    cfg = tmp_path / "c8.cfg"
    cfg.write_text(C8_CONFIG)
    experiments = ["particle", "kinetic", "marginal", "convergence", "asymptotics", "lemmas",
                   "blowup"]
    diffs, compared, codes = [], 0, {}
    for e in experiments:
        runs = []
        for tag, threads in (("a", 1), ("b", 1), ("c", 8)):
            out = tmp_path / f"{e}_{tag}"
            codes[(e, tag)] = main([e, "--config", str(cfg), "--out", str(out),
                                    "--threads", str(threads)])
            runs.append(out)
        # config.txt and manifest.json record the thread count and run time
        names = sorted(p.name for p in runs[0].iterdir()
                       if p.name not in ("config.txt", "manifest.json"))
        for name in names:
            ref = (runs[0] / name).read_bytes()
            for other in runs[1:]:
                compared += 1
                if (other / name).read_bytes() != ref:
                    diffs.append(f"{e}/{name}")
    failed = sorted({e for (e, _), c in codes.items() if c != 0})
    ok = not diffs and not failed
    report("C8 determinism (1 vs 8 threads, reruns)", ok,
           f"{compared} file comparisons over {len(experiments)} experiments, "
           f"differences: {diffs or 'none'}; nonzero exits: {failed or 'none'}")
    assert ok
