from __future__ import annotations

import json

import pytest

from robust_codesign.config import DEFAULTS, ConfigError, RunConfig, derive_seed, digest
from robust_codesign.empc import SizingParams


def test_defaults_are_valid():
    cfg = RunConfig.from_dict({})
    assert cfg.seed == 0
    assert cfg.fixed_pc().key == (1, 1, 24)
    assert cfg.reference().key == (1, 3, 24)
    assert cfg.economics().c_B == pytest.approx(35.7997, abs=1e-4)
    assert cfg.p_samples() == [SizingParams(0, 0), SizingParams(0, 53), SizingParams(60, 0),
                               SizingParams(60, 53), SizingParams(30, 26)]
    assert DEFAULTS["controller"]["n_f_range"] == [1, 24]


@pytest.mark.parametrize("raw, fragment", [
    ({"seed": -1}, "seed"),
    ({"bogus": 1}, "Additional properties"),
    ({"controller": {"reference": [1, 2]}}, "controller/reference"),
    ({"controller": {"reference": [2, 3, 24]}}, "exceeds"),
    ({"controller": {"n_f_range": [5, 2]}}, "n_f_range"),
    ({"sizing": {"battery": [0, 70, 1]}}, "SoC_max"),
    ({"sizing": {"pv": [0, 60, 1]}}, "floor area"),
    ({"codesign": {"risk": "cvar"}}, "codesign/risk"),
    ({"model": {"assets": {"eta_ch": 2.0}}}, "efficiencies"),
    ({"data": {"csv": None, "synth": None}}, "csv or synth"),
    ({"data": {"synth": {"span_hours": 0}}}, "zero-length"),
])
def test_config_errors(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        RunConfig.from_dict(raw)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="valid JSON"):
        RunConfig.load(bad)


def test_overrides_and_paths(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"out": "runs/a", "subsampling": {"k_max": 5}}))
    cfg = RunConfig.load(f)
    assert cfg.out_dir() == tmp_path / "runs/a"
    over = cfg.with_overrides(subsampling={"n_c": 3}, seed=4)
    assert over.raw["subsampling"]["k_max"] == 5 and over.raw["subsampling"]["n_c"] == 3
    assert over.seed == 4 and cfg.seed == 0
    with pytest.raises(ConfigError):
        cfg.with_overrides(controller={"fixed": [4, 4, 24]})


def test_seed_derivation():
    assert derive_seed(7, "cluster") == derive_seed(7, "cluster")
    assert derive_seed(7, "cluster") != derive_seed(8, "cluster")
    assert derive_seed(7, "cluster") != derive_seed(7, "data")
    assert 0 <= derive_seed(123, "x") < 2**32
    assert digest({"a": 1, "b": 2}) == digest({"b": 2, "a": 1})
