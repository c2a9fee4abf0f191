import math
from pathlib import Path

import pytest

from grw_errors import ConfigError
from solver_settings import (SolverSettings, config_from_mapping, format_extended, load_run_config,
                             parse_extended)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("text, value", [
    ("inf", math.inf), ("+inf", math.inf), (" Infinity ", math.inf), ("-inf", -math.inf),
    ("1e-3", 1e-3), (2, 2.0),
])
def test_parse_extended(text, value):
    assert parse_extended(text) == value


def test_parse_extended_rejects_text():
    with pytest.raises(ConfigError):
        parse_extended("wide")
    assert format_extended(-math.inf) == "-inf"
    assert format_extended(3) == 3


class TestSolverSettings:
    def test_defaults(self, settings):
        assert settings.n_max == 8
        assert settings.window_M == 10.0
        assert settings.to_dict()["L_max"] is None

    def test_from_mapping(self):
        s = SolverSettings.from_mapping({"tol_quad": "1e-8", "window_eps": 0.05},
                                        {"n_max": 3.0, "K_max": "inf"})
        assert s.tol_quad == 1e-8
        assert s.n_max == 3 and isinstance(s.n_max, int)
        assert s.K_max == math.inf
        assert s.to_dict()["K_max"] == "inf"

    @pytest.mark.parametrize("solver, limits", [
        ({"tol_quad": -1.0}, None),
        ({"window_eps": 0.0}, None),
        ({"precision": 1e-3}, None),
        (None, {"n_max": 2.5}),
        (None, {"k_max": 4}),
        (None, {"workers": 0}),
        (None, {"n_max": True}),
        ([1, 2], None),
    ])
    def test_invalid(self, solver, limits):
        with pytest.raises(ConfigError):
            SolverSettings.from_mapping(solver, limits)

    def test_overrides_leave_the_original(self, settings):
        changed = settings.with_overrides(L_max=5.0)
        assert changed.L_max == 5.0
        assert settings.L_max is None


class TestRunConfig:
    def test_minimal(self):
        config = config_from_mapping({"spacetime": {"family": "cosh", "interval": ["-inf", "inf"]}})
        assert config.fiber == {"family": "line"}
        assert config.output == {"format": "json", "path": "."}
        assert config.to_dict()["spacetime"]["interval"] == ["-inf", "inf"]

    @pytest.mark.parametrize("data", [
        [],
        {"spacetime": {"params": {}}},
        {"spacetime": {"family": "cosh"}, "fiber": {"dim": 2}},
        {"spacetime": {"family": "cosh"}, "output": {"format": "pdf"}},
        {"spacetime": {"family": "cosh"}, "extras": {}},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            config_from_mapping(data)

    def test_load_shipped_config(self):
        config = load_run_config(str(CONFIG_DIR / "de_sitter.yaml"))
        assert config.spacetime["family"] == "cosh"
        assert config.settings.q_max == 5
        assert config.base_dir == CONFIG_DIR

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / "missing.yaml"))
        broken = tmp_path / "broken.yaml"
        broken.write_text("spacetime: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(str(broken))
