import json

import pytest

from tdbem.assembly import PointSourceDirac
from tdbem.config import ConfigError, StudyConfig


def test_defaults_are_valid():
    cfg = StudyConfig()
    assert cfg.problem().operator == "single_layer"
    assert len(cfg.config_hash()) == 16


def test_hash_depends_on_content():
    assert StudyConfig().config_hash() == StudyConfig().config_hash()
    assert StudyConfig(dt=0.01).config_hash() != StudyConfig().config_hash()


@pytest.mark.parametrize(
    "bad",
    [
        {"beta": 0.5},
        {"screen": "triangle"},
        {"operator": "hypersingular"},  # default rhs is Dirichlet data
        {"dt": -1.0},
        {"levels": 0},
        {"quadrature": {"order": 9, "bogus": 1}},
        {"screen": "horn"},
        {"unknown_key": 1},
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        StudyConfig.from_dict(bad)


def test_load_with_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"operator": "hypersingular", "rhs": "RingdownG", "dt": 0.01, "T": 4.0}))
    cfg = StudyConfig.load(path, {"levels": 3, "beta": None})
    assert cfg.levels == 3 and cfg.beta == 2.0 and cfg.operator == "hypersingular"
    with pytest.raises(ConfigError):
        StudyConfig.load(tmp_path / "missing.json")


def test_horn_config():
    cfg = StudyConfig(
        screen="horn", operator="horn_adjoint_dl", rhs="PointSourceDirac",
        rhs_params={"y_src": [0.1, 0.0, 0.0]}, horn={"resolution": 8},
    )
    assert cfg.rhs_id() == PointSourceDirac((0.1, 0.0, 0.0))
    assert cfg.horn_setup().resolution == 8
