"""Flat ``key = value`` experiment configuration.

Format: UTF-8 text, one ``key = value`` per line, ``#`` starts a comment,
``[section]`` headers group keys.  Lists are comma separated.  Every key is
declared in :data:`SCHEMA`; unknown keys, bad values and syntax problems are
all collected and reported together.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

EXPERIMENTS = ("particle", "kinetic", "marginal", "convergence", "asymptotics", "lemmas",
               "blowup")
DIST_KINDS = ("dirac", "uniform", "pareto", "tabulated")


@dataclass(frozen=True)
class Key:
    type: str  # float, int, str, bool, floats, ints
    default: Any
    doc: str
    check: Callable[[Any], str | None] | None = None
    choices: tuple = ()


def _positive(x):
    return None if x > 0 else "must be > 0"


def _nonneg(x):
    return None if x >= 0 else "must be >= 0"


def _unit_open(x):
    return None if 0 < x < 1 else "out of (0,1)"


def _at_least_one(x):
    return None if x >= 1 else "must be >= 1"


def _nonneg_list(xs):
    return None if all(x >= 0 for x in xs) else "entries must be >= 0"


def _phi_list(xs):
    if not xs:
        return "must not be empty"
    if any(not 0 < x < 1 for x in xs):
        return "entries out of (0,1)"
    if any(b >= a for a, b in zip(xs, xs[1:])):
        return "must be decreasing"
    return None


def _increasing_positive(xs):
    if not xs or any(x <= 0 for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
        return "must be a nonempty increasing list of positive values"
    return None


def _xi_list(xs):
    if not xs or any(not 0 < x < math.exp(-2) for x in xs):
        return "entries must lie in (0, e^-2)"
    return None


def _vec3(xs):
    return None if len(xs) == 3 else "must have three components"


def _auto_or_positive(x):
    return None if x == "auto" or _is_float(x) and float(x) > 0 else "must be 'auto' or > 0"


def _is_float(s) -> bool:
    try:
        float(s)
        return True
    except (TypeError, ValueError):
        return False


SCHEMA: dict[str, dict[str, Key]] = {
    "": {
        "experiment": Key("str", "particle", "experiment to run", choices=EXPERIMENTS),
        "seed": Key("int", 0, "base seed (64-bit)", _nonneg),
        "output_dir": Key("str", "ctp_out", "directory for outputs"),
        "threads": Key("int", 1, "worker threads", _at_least_one),
        "n_traj": Key("int", 1000, "particle trajectories per ensemble", _at_least_one),
    },
    "sim": {
        "phi": Key("float", 1e-3, "volume fraction", _unit_open),
        "U": Key("float", 1.0, "rescaled speed", _positive),
        "T": Key("float", 1.0, "time horizon", _positive),
        "V0": Key("float", 1.0, "initial rescaled volume", _nonneg),
        "Y0": Key("floats", [0.0, 0.0, 0.0], "initial rescaled position", _vec3),
        "eps_geom": Key("float", 1e-12, "geometric tolerance", _positive),
        "max_cascade": Key("int", 10 ** 6, "cascade step limit", _at_least_one),
        "v_ceiling": Key("float", math.inf, "volume ceiling (BudgetExceeded above)", _positive),
        "v_budget": Key("float", 64.0, "volume estimate used for the cell size", _positive),
        "cell_side": Key("str", "auto", "field cell side or 'auto'", _auto_or_positive),
        "merge_rule": Key("str", "center_of_mass", "merge center formula",
                          choices=("center_of_mass", "paper_literal")),
        "keep_logs": Key("bool", False, "write full event logs"),
        "timing": Key("bool", False, "record wall time per trajectory"),
    },
    "dist": {
        "kind": Key("str", "dirac", "obstacle volume law", choices=DIST_KINDS),
        "v0": Key("float", 1.0, "dirac location", _positive),
        "a": Key("float", 0.0, "uniform lower end", _nonneg),
        "b": Key("float", 2.0, "uniform upper end", _positive),
        "exponent": Key("float", 3.0, "pareto tail exponent", _positive),
        "v_min": Key("float", 1.0, "pareto lower cutoff", _positive),
        "v_max": Key("float", math.inf, "pareto upper cutoff (inf: 1-1e-12 quantile)",
                     _positive),
        "grid": Key("floats", [0.0, 1.0], "tabulated nodes", _nonneg_list),
        "cdf": Key("floats", [0.0, 1.0], "tabulated cdf values", _nonneg_list),
    },
    "kinetic": {
        "n_paths": Key("int", 100000, "kinetic Monte Carlo paths", _at_least_one),
        "max_jumps": Key("int", 10 ** 7, "jump cap per path", _at_least_one),
    },
    "marginal": {
        "courant": Key("float", 0.25, "dt * lam * max kbar", lambda x: None if 0 < x <= 0.5
                       else "out of (0, 0.5]"),
        "spacing": Key("str", "auto", "grid spacing", choices=("auto", "uniform", "geometric")),
        "h": Key("float", 0.0, "first grid spacing (0: default)", _nonneg),
        "ratio": Key("float", 1.02, "geometric growth factor", _at_least_one),
        "V_end": Key("float", 0.0, "last grid node (0: automatic)", _nonneg),
        "mass_tol": Key("float", 1e-8, "mass conservation tolerance", _positive),
    },
    "convergence": {
        "phi_list": Key("floats", [3e-2, 1e-2, 3e-3, 1e-3], "volume fractions", _phi_list),
        "kinetic_paths": Key("int", 200000, "kinetic reference paths", _at_least_one),
        "n_boot": Key("int", 200, "bootstrap resamples for W1 errors", _at_least_one),
    },
    "asymptotics": {
        "T_list": Key("floats", [10.0, 30.0, 100.0], "horizons", _increasing_positive),
        "V0": Key("float", 0.0, "initial volume", _nonneg),
    },
    "lemmas": {
        "xi_star_list": Key("floats", [math.exp(-2.1), math.exp(-3.0), math.exp(-5.0)],
                            "tail lemma xi*", _xi_list),
        "N_list": Key("ints", [1, 5, 10, 50, 200], "tail lemma N", lambda xs: None if xs and all(
            x >= 1 for x in xs) else "entries must be >= 1"),
        "audit_n_traj": Key("int", 1000, "trajectories for the displacement audit",
                            _at_least_one),
        "audit_phi": Key("float", 1e-3, "volume fraction for the audit", _unit_open),
        "audit_constant": Key("float", 6.0 * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0),
                              "constant C in |Y_k - Y_0| <= C (V_k^1/3 - V_0^1/3)", _positive),
    },
    "blowup": {
        "n": Key("int", 10000, "obstacles in the chain", _at_least_one),
        "V_target": Key("float", 1e4, "volume to reach", _positive),
        "margin": Key("float", 0.5, "extra time after the summed flights", _positive),
    },
}


def format_value(kind: str, v) -> str:
    if kind == "float":
        return _fmt_float(v)
    if kind == "floats":
        return ", ".join(_fmt_float(x) for x in v)
    if kind == "ints":
        return ", ".join(str(int(x)) for x in v)
    if kind == "bool":
        return "true" if v else "false"
    return str(v)


def _fmt_float(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _convert(kind: str, text: str):
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(text, 0)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "floats":
        return [float(t) for t in text.split(",") if t.strip()]
    if kind == "ints":
        return [int(t, 0) for t in text.split(",") if t.strip()]
    return text


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)  # section -> key -> value
    warnings: list = field(default_factory=list)

    def __getitem__(self, dotted: str):
        sec, _, key = dotted.rpartition(".")
        return self.values[sec][key]

    def set(self, dotted: str, value):
        sec, _, key = dotted.rpartition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ValidationError(dotted, "unknown key")
        spec = SCHEMA[sec][key]
        err = _check(spec, value)
        if err:
            raise ValidationError(key, err)
        self.values[sec][key] = value

    @property
    def experiment(self) -> str:
        return self.values[""]["experiment"]

    def dump(self) -> str:
        """Canonical text with every key; parsing it reproduces the same text."""
        lines = []
        for sec, keys in SCHEMA.items():
            if sec:
                lines.append("")
                lines.append(f"[{sec}]")
            for k, spec in keys.items():
                lines.append(f"{k} = {format_value(spec.type, self.values[sec][k])}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        data = {(sec or "general"): {k: clean(v) for k, v in keys.items()}
                for sec, keys in self.values.items()}
        return json.dumps(data, indent=2, sort_keys=True)


def _check(spec: Key, value) -> str | None:
    if spec.choices and value not in spec.choices:
        return f"must be one of {', '.join(spec.choices)}"
    if spec.check is not None:
        return spec.check(value)
    return None


def defaults() -> ExperimentConfig:
    vals = {sec: {k: (list(s.default) if isinstance(s.default, list) else s.default)
                  for k, s in keys.items()} for sec, keys in SCHEMA.items()}
    return ExperimentConfig(vals)


def parse_config(text: str, warn_missing_seed: bool = True) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    cfg = defaults()
    errors = []
    seen = set()
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(ParseError(lineno, f"malformed section header {line!r}"))
                continue
            section = line[1:-1].strip()
            if section not in SCHEMA or section == "":
                errors.append(ParseError(lineno, f"unknown section [{section}]"))
            continue
        if "=" not in line:
            errors.append(ParseError(lineno, f"expected 'key = value', got {line!r}"))
            continue
        key, _, value = (s.strip() for s in line.partition("="))
        name = f"{section}.{key}" if section else key
        if section not in SCHEMA:
            continue  # already reported with the header
        if key not in SCHEMA[section]:
            errors.append(ValidationError(name, "unknown key"))
            continue
        if (section, key) in seen:
            errors.append(ParseError(lineno, f"duplicate key {name}"))
            continue
        seen.add((section, key))
        spec = SCHEMA[section][key]
        try:
            v = _convert(spec.type, value)
        except ValueError as exc:
            errors.append(ValidationError(name, f"cannot read {value!r} as {spec.type}: {exc}"))
            continue
        err = _check(spec, v)
        if err:
            errors.append(ValidationError(key, err))
            continue
        cfg.values[section][key] = v
    if warn_missing_seed and ("", "seed") not in seen:
        msg = "no seed given; using seed = 0"
        log.warning(msg)
        cfg.warnings.append(msg)
    errors += _cross_checks(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _cross_checks(cfg: ExperimentConfig) -> list:
    out = []
    d = cfg.values["dist"]
    if d["kind"] == "uniform" and not d["a"] < d["b"]:
        out.append(ValidationError("dist.b", "uniform law needs a < b"))
    if d["kind"] == "pareto" and not d["v_max"] > d["v_min"]:
        out.append(ValidationError("dist.v_max", "must exceed v_min"))
    if d["kind"] == "tabulated":
        g, c = d["grid"], d["cdf"]
        if len(g) != len(c) or len(g) < 2:
            out.append(ValidationError("dist.cdf", "grid and cdf need equal length >= 2"))
        elif any(b <= a for a, b in zip(g, g[1:])) or any(b < a for a, b in zip(c, c[1:])) \
                or abs(c[-1] - 1.0) > 1e-12:
            out.append(ValidationError("dist.cdf", "need increasing grid and a cdf ending at 1"))
    return out


def schema_text() -> str:
    """Documented key list, one line per key."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec or 'general'}]" if sec else "# top level")
        for k, s in keys.items():
            extra = f" one of {{{', '.join(s.choices)}}}" if s.choices else ""
            lines.append(f"{k} ({s.type}, default {format_value(s.type, s.default)}){extra}: "
                         f"{s.doc}")
        lines.append("")
    return "\n".join(lines)


def build_distribution(cfg: ExperimentConfig):
    from .volume_dist import VolumeDistribution

    d = cfg.values["dist"]
    if d["kind"] == "dirac":
        return VolumeDistribution.dirac(d["v0"])
    if d["kind"] == "uniform":
        return VolumeDistribution.uniform(d["a"], d["b"])
    if d["kind"] == "pareto":
        return VolumeDistribution.pareto(d["exponent"], d["v_min"], d["v_max"])
    return VolumeDistribution.tabulated(d["grid"], d["cdf"])
