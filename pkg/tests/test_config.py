import json

import pytest

from app.config import (
    Ar1Params,
    EntryModelConfig,
    RunConfig,
    load_run_config,
    parse_run_config,
    with_overrides,
)
from app.errors import InvalidConfigError


def test_defaults():
    cfg = parse_run_config({})
    assert cfg == RunConfig()
    assert cfg.model.state_count == 64
    assert not cfg.model.nonstationary
    assert cfg.estimation.estimators == ("FD", "FD2", "HM")


def test_every_invalid_key_is_reported():
    data = {
        "model": {"K_z": 0, "beta": 1.5, "foo": 1},
        "solver": {"rho": 0},
        "estimation": {"estimators": ["XX"], "N": 0},
        "bar": 1,
    }
    with pytest.raises(InvalidConfigError) as info:
        parse_run_config(data)
    keys = [item.split(":")[0] for item in info.value.keys]
    for expected in (
        "bar",
        "model.foo",
        "model.K_z",
        "model.beta",
        "solver.rho",
        "estimation.estimators",
        "estimation.N",
    ):
        assert expected in keys


def test_type_errors_are_reported_before_range_checks():
    with pytest.raises(InvalidConfigError) as info:
        parse_run_config({"model": {"K_z": "2"}, "bench": {"optimal_norms": "yes"}})
    joined = " ".join(info.value.keys)
    assert "model.K_z" in joined
    assert "bench.optimal_norms" in joined


def test_shock_forms():
    one = parse_run_config({"model": {"z": {"gamma1": 0.5, "sigma": 2.0}}})
    assert one.model.z == (Ar1Params(0.0, 0.5, 2.0),) * 4

    listed = parse_run_config({"model": {"z": [{"gamma1": 0.1 * k} for k in range(4)]}})
    assert [p.gamma1 for p in listed.model.z] == pytest.approx([0.0, 0.1, 0.2, 0.3])

    with pytest.raises(InvalidConfigError) as info:
        parse_run_config({"model": {"z": [{"gamma1": 1.2}], "omega": {"sigma": 0}}})
    joined = " ".join(info.value.keys)
    assert "model.z:" in joined
    assert "model.z[0].gamma1" in joined
    assert "model.omega.sigma" in joined


def test_lists_become_tuples():
    cfg = parse_run_config({
        "model": {"intercepts": [-0.8, 0.8, 0.0, -0.3]},
        "bench": {"states": [64, [2, 5]]},
    })
    assert cfg.model.intercepts == (-0.8, 0.8, 0.0, -0.3)
    assert cfg.model.nonstationary and cfg.model.horizon == 4
    assert cfg.bench.states == (64, (2, 5))
    hash(cfg)


def test_entry_model_problems():
    cfg = EntryModelConfig(theta=(1.0,), intercepts=())
    problems = cfg.problems()
    assert any(p.startswith("model.theta") for p in problems)
    assert any(p.startswith("model.intercepts") for p in problems)


def test_load_run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"solver": {"rho": 2, "method": "optimal"}}), encoding="utf-8")
    cfg = load_run_config(path)
    assert cfg.solver.rho == 2
    json.dumps(cfg.to_dict())

    with pytest.raises(InvalidConfigError):
        load_run_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(InvalidConfigError):
        load_run_config(broken)
    with pytest.raises(InvalidConfigError):
        parse_run_config([1, 2])


def test_overrides():
    cfg = RunConfig()
    assert with_overrides(cfg) is cfg
    changed = with_overrides(cfg, output="somewhere", seed=11)
    assert changed.output == "somewhere"
    assert changed.estimation.seed == 11
    assert cfg.estimation.seed == 0
