import json

import pytest

from movingmic.config import canonical_estimator, load_config, parse_config
from movingmic.errors import ConfigError


def field_of(data):
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    return exc.value.field


def test_defaults_are_valid():
    cfg = parse_config({})
    assert cfg.scene.L == 500 and cfg.trajectory.N == 8000
    assert cfg.estimators == ("krr_m",)
    assert cfg.hash() == parse_config(None).hash()


def test_estimator_aliases():
    assert canonical_estimator("KRR-MD") == "krr_md"
    assert canonical_estimator("nn") == "nearest_neighbour"
    cfg = parse_config({"estimators": "rff-m"})
    assert cfg.estimators == ("rff_m",)
    assert field_of({"estimators": ["krr_x"]}) == "estimators"
    assert field_of({"estimators": []}) == "estimators"


@pytest.mark.parametrize("data, path", [
    ({"scene": {"rt60": "long"}}, "scene.rt60"),
    ({"scene": {"L": 2.5}}, "scene.L"),
    ({"scene": {"colour": 1}}, "scene.colour"),
    ({"scene": {"dimensions": [1, 2]}}, "scene.dimensions"),
    ({"scene": {"rt60": -0.1}}, "scene.rt60"),
    ({"scene": {"highpass": 600}}, "scene.highpass"),
    ({"scene": {"source": [9, 0, 0]}}, "scene.source"),
    ({"scene": {"source": [0, 0, 0]}}, "scene.source"),
    ({"region": {"size": [9, 1, 0.25]}}, "region"),
    ({"trajectory": {"N": 0}}, "trajectory.N"),
    ({"trajectory": {"speed": 0}}, "trajectory.speed"),
    ({"regularization": {"lambda0": -1}}, "regularization.lambda0"),
    ({"regularization": {"lambda0": 0}, "estimators": ["rff_m"]}, "regularization.lambda0"),
    ({"rff": {"D": 0}}, "rff.D"),
    ({"rff": {"D": [4, 4]}}, "rff.D"),
    ({"rff": {"shared": "yes"}}, "rff.shared"),
    ({"kernel": {"beta": -1}}, "kernel.beta"),
    ({"solver": {"kind": "qr"}}, "solver.kind"),
    ({"sweep": {"axis": "colour", "values": [1]}}, "sweep.axis"),
    ({"sweep": {"axis": "D", "values": []}}, "sweep.values"),
    ({"stationary_mics": 0, "estimators": ["krr_s"]}, "stationary_mics"),
    ({"workers": 0}, "workers"),
    ({"colour": 1}, "colour"),
])
def test_invalid_fields_are_named(data, path):
    assert field_of(data) == path


def test_lambda_zero_allowed_for_kernel_methods():
    cfg = parse_config({"regularization": {"lambda0": 0}, "estimators": ["krr_m", "nn"]})
    assert cfg.regularization.lambda0 == 0


def test_per_bin_D_and_seed_count():
    cfg = parse_config({"scene": {"L": 8}, "rff": {"D": [1, 2, 3, 4, 5]}, "seeds": 3})
    assert cfg.rff.D == (1, 2, 3, 4, 5)
    assert cfg.seeds == (0, 1, 2)


def test_free_field_scene():
    cfg = parse_config({"scene": {"kind": "free_field", "sources": [[2, 0, 0]]}})
    assert cfg.scene.sources == ((2, 0, 0),)
    assert field_of({"scene": {"kind": "free_field"}}) == "scene.sources"
    assert field_of({"scene": {"kind": "free_field",
                               "sources": [[0.1, 0, 0]]}}) == "scene.source"


def test_hash_tracks_content():
    a = parse_config({"snr_db": 30})
    assert a.hash() == parse_config({"snr_db": 30.0}).hash()
    assert a.hash() != parse_config({"snr_db": 20}).hash()


def test_load_yaml_and_json(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("scene:\n  L: 64\ntrajectory:\n  N: 500\nestimators: [krr_m, nn]\n")
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"scene": {"L": 64}, "trajectory": {"N": 500},
                             "estimators": ["krr_m", "nn"]}))
    assert load_config(y).hash() == load_config(j).hash()
    bad = tmp_path / "bad.yaml"
    bad.write_text("scene: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
