"""Command line front end: ``ctp <experiment> --config FILE [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, SCHEMA, ExperimentConfig, build_distribution, defaults, \
    format_value, parse_config, schema_text
from .errors import CTPError, HardAssertionFailure

log = logging.getLogger("ctp")

MANIFEST = "manifest.json"


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _g(x) -> str:
    return f"{x:.17g}"


def _header(cfg: ExperimentConfig, section: str) -> str:
    secs = ["", "sim", section] if section != "blowup" else ["", section]
    if section != "blowup":
        secs.append("dist")
    parts = []
    for sec in dict.fromkeys(secs):
        for k, spec in SCHEMA[sec].items():
            if not sec and k in ("threads", "output_dir"):
                continue  # must not change the bytes of an output
            name = f"{sec}.{k}" if sec else k
            parts.append(f"{name}={format_value(spec.type, cfg.values[sec][k]).replace(' ', '')}")
    return f"build={build_id()} " + " ".join(parts)


def _sim_params(cfg: ExperimentConfig, **over):
    from .ctp_sim import SimParams

    s = cfg.values["sim"]
    side = None if s["cell_side"] == "auto" else float(s["cell_side"])
    kw = dict(phi=s["phi"], U=s["U"], T=s["T"], V0=s["V0"], Y0=tuple(s["Y0"]),
              seed=cfg["seed"], dist=build_distribution(cfg), eps_geom=s["eps_geom"],
              max_cascade=s["max_cascade"], v_ceiling=s["v_ceiling"], v_budget=s["v_budget"],
              cell_side=side, merge_rule=s["merge_rule"])
    kw.update(over)
    return SimParams(**kw)


# -- experiments --------------------------------------------------------------

def _run_particle(cfg, out: Path, outputs: list, info: dict):
    from .analysis import displacement_audit
    from .ctp_sim import run_ensemble

    p = _sim_params(cfg)
    s = cfg.values["sim"]
    ens = run_ensemble(p, cfg["n_traj"], base_seed=cfg["seed"], threads=cfg["threads"],
                       keep_logs=True, timing=s["timing"])
    ens.write_csv(out / "summary.csv", _header(cfg, "sim"))
    outputs.append("summary.csv")
    if s["keep_logs"]:
        ens.write_events(out / "events.jsonl")
        outputs.append("events.jsonl")
    audit = displacement_audit(ens.logs, cfg["lemmas.audit_constant"])
    info.update(failure_fraction=ens.failure_fraction, binary_fraction=ens.binary_fraction,
                audit_violations=audit.violations, audit_max_ratio=audit.max_ratio)
    if audit.violations:
        raise HardAssertionFailure(f"{audit.violations} displacement bound violations")


def _run_kinetic(cfg, out, outputs, info):
    from .kinetic_proc import JumpParams, ensemble

    s, k = cfg.values["sim"], cfg.values["kinetic"]
    p = JumpParams(U=s["U"], dist=build_distribution(cfg), V0=s["V0"], Y0=tuple(s["Y0"]),
                   T=s["T"], seed=cfg["seed"], max_jumps=k["max_jumps"])
    ens = ensemble(p, k["n_paths"], threads=cfg["threads"])
    ens.write_csv(out / "kinetic_samples.csv")
    outputs.append("kinetic_samples.csv")
    mean, se = ens.expect(lambda r: r[:, 3])
    info.update(mean_V=mean, mean_V_se=se, failure_fraction=ens.failure_fraction)


def _run_marginal(cfg, out, outputs, info):
    from . import marginal_solver as ms

    s, m = cfg.values["sim"], cfg.values["marginal"]
    dist = build_distribution(cfg)
    V0, T, U = s["V0"], s["T"], s["U"]
    V_end = m["V_end"] or V0 + 4.0 * (ms.mean_growth_ode(V0, U, dist, [T])[1][-1] - V0) \
        + 20.0 * dist.v_max
    nodes = ms.default_nodes(V0, dist, V_end, m["spacing"], m["h"] or None, m["ratio"])
    g = ms.solve(ms.MarginalGrid.point_mass(V0, nodes), dist, T, U, courant=m["courant"],
                 mass_tol=m["mass_tol"])
    g.to_csv(out / "marginal.csv")
    outputs.append("marginal.csv")
    info.update(mass=g.mass, overflow=g.overflow, mean_V=g.mean, nodes=len(nodes))
    if dist.kind == "dirac":
        ch = ms.dirac_chain(V0, dist.params[0], U, T, courant=m["courant"])
        ch.to_csv(out / "chain.csv")
        outputs.append("chain.csv")
        info.update(chain_mean_V=ch.mean, chain_mass=ch.mass)


def _run_convergence(cfg, out, outputs, info):
    from .analysis import convergence_study

    s, c = cfg.values["sim"], cfg.values["convergence"]
    rep = convergence_study(c["phi_list"], U=s["U"], T=s["T"], V0=s["V0"],
                            dist=build_distribution(cfg), n_traj=cfg["n_traj"],
                            kinetic_paths=c["kinetic_paths"], base_seed=cfg["seed"],
                            threads=cfg["threads"], n_boot=c["n_boot"], v_budget=s["v_budget"],
                            check=False)
    rep.write_csv(out / "convergence.csv", _header(cfg, "convergence"))
    outputs.append("convergence.csv")
    info.update(w1=rep.w1.tolist(), w1_decreases=rep.w1_decreases,
                binary_monotone=rep.binary_monotone, slope=rep.slope)
    n = len(rep.rows)
    if n > 1 and all(abs(rep.separation(i, j)) <= 2.0 for i in range(n)
                     for j in range(i + 1, n)):
        from .errors import InconclusiveNoise
        raise InconclusiveNoise("W1 error bars overlap for every pair of phi values")


def _run_asymptotics(cfg, out, outputs, info):
    from . import marginal_solver as ms

    s, a = cfg.values["sim"], cfg.values["asymptotics"]
    rows = ms.asymptotic_scaling_check(build_distribution(cfg), s["U"], a["T_list"],
                                       V0=a["V0"], courant=cfg["marginal.courant"])
    ms.write_scaling_csv(rows, out / "asymptotics.csv")
    outputs.append("asymptotics.csv")
    info.update(meanW=[r.meanW for r in rows], a_ODE=rows[0].a_ODE,
                a_paper_literal=rows[0].a_paper_literal)


def _run_lemmas(cfg, out, outputs, info):
    from .analysis import displacement_audit, poisson_tail_check, write_tail_csv
    from .ctp_sim import run_ensemble

    lm = cfg.values["lemmas"]
    rows = poisson_tail_check(lm["xi_star_list"], lm["N_list"])
    write_tail_csv(rows, out / "poisson_tail.csv", _header(cfg, "lemmas"))
    outputs.append("poisson_tail.csv")
    p = _sim_params(cfg, phi=lm["audit_phi"])
    ens = run_ensemble(p, lm["audit_n_traj"], base_seed=cfg["seed"], threads=cfg["threads"],
                       keep_logs=True)
    audit = displacement_audit(ens.logs, lm["audit_constant"])
    with open(out / "displacement_audit.csv", "w", newline="") as fh:
        fh.write(f"# {_header(cfg, 'lemmas')}\n")
        w = csv.writer(fh)
        w.writerow(["constant", "logs_checked", "merges_checked", "violations", "max_ratio"])
        w.writerow([_g(audit.constant), audit.logs_checked, audit.merges_checked,
                    audit.violations, _g(audit.max_ratio)])
    outputs.append("displacement_audit.csv")
    bad = sum(r.ratio > 1.0 for r in rows)
    info.update(tail_violations=bad, max_tail_ratio=max(r.ratio for r in rows),
                audit_violations=audit.violations)
    if bad or audit.violations:
        raise HardAssertionFailure(f"{bad} tail-bound and {audit.violations} displacement "
                                   f"violations")


def _run_blowup(cfg, out, outputs, info):
    from .analysis import blowup_demo

    b = cfg.values["blowup"]
    res = blowup_demo(n=b["n"], V_target=b["V_target"], margin=b["margin"])
    with open(out / "blowup.csv", "w", newline="") as fh:
        fh.write(f"# {_header(cfg, 'blowup')}\n")
        w = csv.writer(fh)
        w.writerow(["j", "tau_expected", "t", "V"])
        for j, (te, t, V) in enumerate(zip(res.expected_times, res.times, res.volumes), 1):
            w.writerow([j, _g(te), _g(t), _g(V)])
    with open(out / "blowup_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["V_target", "escape_time", "total_flight_length", "V_final",
                    "max_rel_time_error"])
        w.writerow([_g(b["V_target"]), _g(res.escape_time), _g(res.total_length),
                    _g(res.V_final), _g(res.max_time_error)])
    outputs += ["blowup.csv", "blowup_summary.csv"]
    info.update(escape_time=res.escape_time, V_final=res.V_final)
    if not res.escape_time < res.total_length:
        raise HardAssertionFailure(f"V_target not reached before t={res.total_length}")


RUNNERS = {
    "particle": _run_particle,
    "kinetic": _run_kinetic,
    "marginal": _run_marginal,
    "convergence": _run_convergence,
    "asymptotics": _run_asymptotics,
    "lemmas": _run_lemmas,
    "blowup": _run_blowup,
}


def run(cfg: ExperimentConfig) -> int:
    """Run the configured experiment, write outputs and a manifest; return the exit code."""
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump())
    outputs, info = ["config.txt"], {}
    t0 = time.perf_counter()
    code, error = 0, None
    try:
        RUNNERS[cfg.experiment](cfg, out, outputs, info)
    except CTPError as exc:
        code = exc.exit_code
        error = {"type": type(exc).__name__, "code": code, "message": str(exc)}
        log.error("%s: %s", type(exc).__name__, exc)
    manifest = {
        "experiment": cfg.experiment,
        "config": json.loads(cfg.to_json()),
        "warnings": cfg.warnings,
        "outputs": outputs,
        "results": _jsonable(info),
        "exit_code": code,
        "error": error,
        "runtime_s": time.perf_counter() - t0,
        "build": build_id(),
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": _version("scipy"), "numba": _version("numba")},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def _version(mod: str) -> str:
    try:
        return __import__(mod).__version__
    except ImportError:
        return "missing"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ctp", description="Coalescing tagged particle experiments")
    ap.add_argument("--print-config-schema", action="store_true",
                    help="print the documented configuration keys and exit")
    ap.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--seed", type=int, help="override the base seed")
    ap.add_argument("--out", type=Path, help="override the output directory")
    ap.add_argument("--threads", type=int, help="override the worker thread count")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_config_schema:
        print(schema_text())
        return 0
    if args.experiment is None:
        ap.error("an experiment is required")
    try:
        if args.config is not None:
            text = args.config.read_text(encoding="utf-8")
            cfg = parse_config(text, warn_missing_seed=args.seed is None)
            explicit = any(line.split("#")[0].split("=")[0].strip() == "experiment"
                           for line in text.splitlines())
            if explicit and cfg.experiment != args.experiment:
                print(f"error: config selects experiment {cfg.experiment!r}, "
                      f"command line {args.experiment!r}", file=sys.stderr)
                return 2
        else:
            cfg = defaults()
            if args.seed is None:
                log.warning("no seed given; using seed = 0")
                cfg.warnings.append("no seed given; using seed = 0")
        cfg.set("experiment", args.experiment)
        if args.seed is not None:
            cfg.set("seed", args.seed)
        if args.out is not None:
            cfg.set("output_dir", str(args.out))
        if args.threads is not None:
            cfg.set("threads", args.threads)
    except CTPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
