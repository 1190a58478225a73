import json
import shutil

import numpy as np
import pytest

from movingmic import experiment, io, moving
from movingmic.config import parse_config
from movingmic.errors import ConfigError

SMALL = {"scene": {"L": 32, "rt60": 0.2}, "trajectory": {"N": 1200, "speed": 2.0},
         "grid_spacing": 0.25, "stationary_mics": 3}


@pytest.fixture(scope="module")
def dataset():
    return experiment.build_dataset(parse_config(SMALL))


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_round_trip_is_exact(dataset, tmp_path):
    io.write_dataset(dataset, tmp_path / "a")
    back = io.read_dataset(tmp_path / "a")
    m, b = dataset.measurement, back.measurement
    np.testing.assert_array_equal(b.positions, m.positions)
    np.testing.assert_array_equal(b.pressure, m.pressure)
    np.testing.assert_array_equal(b.signal, m.signal)
    np.testing.assert_array_equal(back.grid.truth, dataset.grid.truth)
    np.testing.assert_array_equal(back.grid.points, dataset.grid.points)
    np.testing.assert_array_equal(back.mic_rirs, dataset.mic_rirs)
    io.write_dataset(back, tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_simulation_is_deterministic(dataset, tmp_path):
    again = experiment.build_dataset(parse_config(SMALL))
    io.write_dataset(dataset, tmp_path / "a")
    io.write_dataset(again, tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    other = experiment.build_dataset(parse_config(SMALL), seed=1)
    assert not np.array_equal(other.measurement.pressure, dataset.measurement.pressure)


def test_provenance_line(dataset, tmp_path):
    io.write_dataset(dataset, tmp_path)
    for p in tmp_path.rglob("*.csv"):
        first = p.read_text().splitlines()[0]
        assert first.startswith("# config_hash=") and "seed=0" in first
    assert json.loads((tmp_path / "meta.json").read_text())["units"]["position"] == "m"


def test_table_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(ConfigError, match="line 3"):
        io.read_table(p)
    p.write_text("a,b\n1,x\n")
    with pytest.raises(ConfigError, match="non-numeric"):
        io.read_table(p)
    p.write_text("# only a comment\n")
    with pytest.raises(ConfigError):
        io.read_table(p)
    with pytest.raises(ConfigError, match="missing"):
        io.read_table(tmp_path / "none.csv")


def copy(dataset, tmp_path):
    d = tmp_path / "ds"
    io.write_dataset(dataset, d)
    return d


def test_length_mismatch_is_rejected(dataset, tmp_path):
    d = copy(dataset, tmp_path)
    lines = (d / "recording.csv").read_text().splitlines()
    (d / "recording.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ConfigError, match="recording"):
        io.read_dataset(d)


def test_missing_file_and_directory(dataset, tmp_path):
    with pytest.raises(ConfigError):
        io.read_dataset(tmp_path / "nowhere")
    d = copy(dataset, tmp_path)
    (d / "source.csv").unlink()
    with pytest.raises(ConfigError, match="source.csv"):
        io.read_dataset(d)


def test_truth_taps_must_match(dataset, tmp_path):
    d = copy(dataset, tmp_path)
    meta = json.loads((d / "meta.json").read_text())
    meta["L"] = 16
    (d / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ConfigError):
        io.read_dataset(d)


def write_without_preroll(dataset, d, periodic):
    m = dataset.measurement
    io.write_table(d / "source.csv", ["n", "phi"],
                   np.column_stack((np.arange(m.N), m.signal[m.L - 1:])), int_columns=1)
    meta = json.loads((d / "meta.json").read_text())
    meta["periodic"] = periodic
    (d / "meta.json").write_text(json.dumps(meta))


def test_missing_preroll_needs_periodic_flag(dataset, tmp_path):
    d = copy(dataset, tmp_path)
    write_without_preroll(dataset, d, False)
    with pytest.raises(ConfigError, match="pre-roll"):
        io.read_dataset(d)
    write_without_preroll(dataset, d, True)
    back = io.read_dataset(d).measurement
    L = dataset.L
    # the simulated source is periodic with period L, so the pre-roll is recovered exactly
    np.testing.assert_array_equal(back.signal, dataset.measurement.signal)
    assert back.signal.shape == (dataset.N + L - 1,)


def test_extra_trajectory_columns_are_ignored(dataset, tmp_path):
    d = copy(dataset, tmp_path)
    m = dataset.measurement
    rng = np.random.default_rng(0)
    io.write_table(d / "trajectory.csv", ["n", "qw", "x", "y", "z", "speed"],
                   np.column_stack((np.arange(m.N), rng.uniform(size=m.N), m.positions,
                                    rng.uniform(size=m.N))), int_columns=1)
    back = io.read_dataset(d)
    np.testing.assert_array_equal(back.measurement.positions, m.positions)


def test_imported_data_without_truth(dataset, tmp_path):
    d = copy(dataset, tmp_path)
    shutil.rmtree(d / "truth")
    shutil.rmtree(d / "stationary")
    back = io.read_dataset(d)
    assert back.grid is None and back.mic_positions is None
    assert isinstance(back.measurement, moving.MovingMeasurement)
    np.testing.assert_array_equal(back.measurement.pressure, dataset.measurement.pressure)
