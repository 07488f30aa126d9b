import json
import math

import pytest
from hypothesis import given, strategies as st

from ctp.config import SCHEMA, build_distribution, defaults, parse_config, schema_text
from ctp.errors import ConfigError, ParseError, ValidationError


def test_defaults_dump_round_trip():
    text = defaults().dump()
    cfg = parse_config(text)
    assert cfg.dump() == text
    assert cfg.values == defaults().values


@given(phi=st.floats(1e-6, 0.9), T=st.floats(0.01, 100), seed=st.integers(0, 2 ** 63),
       threads=st.integers(1, 64), lst=st.lists(st.floats(1e-3, 50), min_size=1, max_size=5))
def test_round_trip_random_values(phi, T, seed, threads, lst):
    T_list = sorted(set(lst))
    text = (f"seed = {seed}\nthreads = {threads}\n[sim]\nphi = {phi!r}\nT = {T!r}\n"
            f"[asymptotics]\nT_list = {', '.join(repr(t) for t in T_list)}\n")
    cfg = parse_config(text)
    assert cfg["sim.phi"] == phi and cfg["sim.T"] == T and cfg["seed"] == seed
    assert cfg["asymptotics.T_list"] == T_list
    again = parse_config(cfg.dump())
    assert again.dump() == cfg.dump()


def test_comments_sections_and_types():
    cfg = parse_config("""
        # experiment choice
        experiment = marginal   # trailing comment
        seed = 0x10
        [sim]
        Y0 = 1, 2, 3
        keep_logs = yes
        v_ceiling = inf
        [dist]
        kind = uniform
        a = 0
        b = 2
    """)
    assert cfg.experiment == "marginal"
    assert cfg["seed"] == 16
    assert cfg["sim.Y0"] == [1.0, 2.0, 3.0]
    assert cfg["sim.keep_logs"] is True
    assert math.isinf(cfg["sim.v_ceiling"])
    assert build_distribution(cfg).moment(1.0) == pytest.approx(1.0)


def test_all_errors_are_collected():
    text = "phi = 3\n[sim]\nphi = 2\nfoo = 1\n[bad]\nx\nT = abc\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    errs = exc.value.errors
    kinds = [type(e) for e in errs]
    assert kinds.count(ParseError) >= 2
    assert kinds.count(ValidationError) >= 2
    assert exc.value.exit_code == 2
    assert any(isinstance(e, ParseError) and e.line == 5 for e in errs)


def test_cross_checks():
    with pytest.raises(ConfigError):
        parse_config("seed = 1\n[dist]\nkind = uniform\na = 3\nb = 2\n")
    with pytest.raises(ConfigError):
        parse_config("seed = 1\n[dist]\nkind = tabulated\ngrid = 0, 1\ncdf = 0, 0.5\n")
    with pytest.raises(ConfigError):
        parse_config("seed = 1\n[convergence]\nphi_list = 1e-3, 1e-2\n")
    with pytest.raises(ConfigError):
        parse_config("seed = 1\n[lemmas]\nxi_star_list = 0.5\n")


def test_missing_seed_warns(caplog):
    cfg = parse_config("[sim]\nphi = 0.01\n")
    assert cfg["seed"] == 0
    assert cfg.warnings == ["no seed given; using seed = 0"]
    assert "no seed" in caplog.text
    assert parse_config("seed = 5\n").warnings == []
    assert parse_config("", warn_missing_seed=False).warnings == []


def test_set_validates():
    cfg = defaults()
    cfg.set("sim.phi", 0.2)
    assert cfg["sim.phi"] == 0.2
    with pytest.raises(ValidationError):
        cfg.set("sim.phi", 2.0)
    with pytest.raises(ValidationError):
        cfg.set("sim.nope", 1)


def test_json_and_schema():
    data = json.loads(defaults().to_json())
    assert data["sim"]["v_ceiling"] == "inf"
    assert data["general"]["experiment"] == "particle"
    text = schema_text()
    for sec, keys in SCHEMA.items():
        for k in keys:
            assert f"\n{k} (" in "\n" + text
