"""Reading and writing datasets and result tables.

A dataset is one directory::

    meta.json              fs, L, N, c, units, seed, config hash, source, region
    trajectory.csv         n,x,y,z
    recording.csv          n,p
    source.csv             n,phi  (n starts at -(L - 1): the pre-roll)
    truth/points.csv       e,x,y,z
    truth/rirs.csv         e,h0,...,h{L-1}
    stationary/positions.csv, stationary/rirs.csv   (optional)

Tables are comma separated with one ``#`` provenance line and one header
line. Numbers are written with 17 significant digits so a write/read round
trip is exact. Every file is written to a temporary name and then renamed.
"""
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from movingmic.errors import ConfigError
from movingmic.evaluation import EvaluationGrid
from movingmic.moving import MovingMeasurement

__all__ = [
    "Dataset",
    "write_table",
    "read_table",
    "write_dataset",
    "read_dataset",
    "atomic_write_text",
]

FLOAT_FORMAT = "%.17g"


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance(prov):
    if not prov:
        return ""
    return "# " + " ".join(f"{k}={v}" for k, v in prov.items()) + "\n"


def format_table(columns, data, provenance=None, int_columns=0):
    """Text of a table; the first ``int_columns`` columns are written as integers."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    lines = [_provenance(provenance) + ",".join(columns)]
    fmt = ["%d"] * int_columns + [FLOAT_FORMAT] * (data.shape[1] - int_columns)
    for row in data:
        lines.append(",".join(f % v for f, v in zip(fmt, row)))
    return "\n".join(lines) + "\n"


def write_table(path, columns, data, provenance=None, int_columns=0):
    atomic_write_text(path, format_table(columns, data, provenance, int_columns))


def read_table(path):
    """Read a table written by :func:`write_table`.

    Returns
    -------
    columns : list of str
    data : ndarray of shape (rows, columns)
    provenance : dict
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("file is missing", str(path))
    prov, header, rows = {}, None, []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    if "=" in item:
                        k, v = item.split("=", 1)
                        prov[k] = v
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise ConfigError(f"non-numeric value on line {lineno}", str(path)) from None
            if len(rows[-1]) != len(header):
                raise ConfigError(f"line {lineno} has {len(rows[-1])} values but the header "
                                  f"has {len(header)} columns", str(path))
    if header is None:
        raise ConfigError("file has no header line", str(path))
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, data, prov


@dataclass(frozen=True, eq=False)
class Dataset:
    """Moving-microphone data plus optional ground truth and stationary microphones."""
    measurement: MovingMeasurement
    grid: EvaluationGrid = None
    mic_positions: np.ndarray = None
    mic_rirs: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def L(self):
        return self.measurement.L

    @property
    def fs(self):
        return self.measurement.fs

    @property
    def N(self):
        return self.measurement.N

    def subset(self, N):
        return Dataset(self.measurement.subset(N), self.grid, self.mic_positions,
                       self.mic_rirs, {**self.meta, "N": N})


def _prov(meta):
    return {"config_hash": meta.get("config_hash", "none"), "seed": meta.get("seed", "none")}


def write_dataset(ds, directory):
    """Write ``ds`` in the dataset layout. Returns the list of written paths."""
    d = Path(directory)
    m = ds.measurement
    meta = {**ds.meta, "fs": m.fs, "L": m.L, "N": m.N,
            "units": {"position": "m", "time": "s", "fs": "Hz"}}
    prov = _prov(meta)
    n = np.arange(m.N)
    written = []

    def put(name, cols, data, ints=1):
        write_table(d / name, cols, data, prov, ints)
        written.append(d / name)

    atomic_write_text(d / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(d / "meta.json")
    put("trajectory.csv", ["n", "x", "y", "z"], np.column_stack((n, m.positions)))
    put("recording.csv", ["n", "p"], np.column_stack((n, m.pressure)))
    put("source.csv", ["n", "phi"], np.column_stack((np.arange(-(m.L - 1), m.N), m.signal)))
    if ds.grid is not None:
        e = np.arange(ds.grid.E)
        put("truth/points.csv", ["e", "x", "y", "z"], np.column_stack((e, ds.grid.points)))
        put("truth/rirs.csv", ["e"] + [f"h{j}" for j in range(ds.grid.L)],
            np.column_stack((e, ds.grid.truth)))
    if ds.mic_positions is not None:
        k = np.arange(ds.mic_positions.shape[0])
        put("stationary/positions.csv", ["m", "x", "y", "z"],
            np.column_stack((k, ds.mic_positions)))
        put("stationary/rirs.csv", ["m"] + [f"h{j}" for j in range(ds.mic_rirs.shape[1])],
            np.column_stack((k, ds.mic_rirs)))
    return written


def _indexed(path, first, ncols=None):
    cols, data, _ = read_table(path)
    if cols[0] != first:
        raise ConfigError(f"first column must be {first!r}, found {cols[0]!r}", str(path))
    if ncols is not None and len(cols) < ncols:
        raise ConfigError(f"expected at least {ncols} columns", str(path))
    return cols, data


def _positions(path, first):
    cols, data = _indexed(path, first)
    try:
        idx = [cols.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise ConfigError("columns x, y and z are required", str(path)) from None
    # any further columns (orientation, ...) are ignored
    return data[:, 0], data[:, idx]


def read_dataset(directory):
    """Load and validate a dataset directory.

    A source table without pre-roll (first n = 0) is accepted only when
    ``meta.json`` sets ``"periodic": true``; the pre-roll is then taken from
    the periodic extension with period ``meta["period"]`` (default L).
    """
    d = Path(directory)
    if not d.is_dir():
        raise ConfigError("dataset directory does not exist", str(d))
    try:
        meta = json.loads((d / "meta.json").read_text())
    except FileNotFoundError:
        raise ConfigError("file is missing", str(d / "meta.json")) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", str(d / "meta.json")) from None
    for key in ("fs", "L"):
        if key not in meta:
            raise ConfigError("required key is missing", f"meta.json:{key}")
    L, fs = int(meta["L"]), float(meta["fs"])

    n, pos = _positions(d / "trajectory.csv", "n")
    _, rec = _indexed(d / "recording.csv", "n", 2)
    N = pos.shape[0]
    if rec.shape[0] != N:
        raise ConfigError(f"trajectory has {N} samples but recording has {rec.shape[0]}",
                          str(d / "recording.csv"))
    if not np.array_equal(n, np.arange(N)) or not np.array_equal(rec[:, 0], np.arange(N)):
        raise ConfigError("sample indices must run 0, 1, ..., N - 1", str(d / "trajectory.csv"))
    if "N" in meta and int(meta["N"]) != N:
        raise ConfigError(f"meta declares N={meta['N']} but trajectory has {N} samples",
                          "meta.json:N")
    _, src = _indexed(d / "source.csv", "n", 2)
    sn, phi = src[:, 0], src[:, 1]
    if sn.size and sn[0] == -(L - 1):
        if not np.array_equal(sn, np.arange(-(L - 1), -(L - 1) + sn.size)):
            raise ConfigError("source indices must be consecutive", str(d / "source.csv"))
        if sn.size < N + L - 1:
            raise ConfigError(f"source has {sn.size} samples, {N + L - 1} needed",
                              str(d / "source.csv"))
        signal = phi[:N + L - 1]
        meas = MovingMeasurement(pos, signal, L, fs, rec[:, 1], dict(meta))
    elif sn.size and sn[0] == 0 and L > 1:
        if not meta.get("periodic", False):
            raise ConfigError(f"source has no pre-roll: the first {L - 1} rows must have "
                              "negative n, or set \"periodic\": true in meta.json",
                              str(d / "source.csv"))
        period = int(meta.get("period", L))
        meas = MovingMeasurement.from_signal(pos, phi, L, fs, rec[:, 1], period=period,
                                             metadata=dict(meta))
    elif sn.size and sn[0] == 0:
        meas = MovingMeasurement(pos, phi[:N], L, fs, rec[:, 1], dict(meta))
    else:
        raise ConfigError(f"source must start at n = {-(L - 1)}", str(d / "source.csv"))

    grid = None
    if (d / "truth").is_dir():
        _, pts = _positions(d / "truth/points.csv", "e")
        _, tr = _indexed(d / "truth/rirs.csv", "e")
        if tr.shape[0] != pts.shape[0]:
            raise ConfigError("truth points and RIRs disagree in count", str(d / "truth"))
        if tr.shape[1] - 1 != L:
            raise ConfigError(f"truth RIRs have {tr.shape[1] - 1} taps, L = {L}",
                              str(d / "truth/rirs.csv"))
        grid = EvaluationGrid(pts, tr[:, 1:], meta.get("grid_spacing"))
    mics = mic_rirs = None
    if (d / "stationary").is_dir():
        _, mics = _positions(d / "stationary/positions.csv", "m")
        _, mr = _indexed(d / "stationary/rirs.csv", "m")
        if mr.shape[0] != mics.shape[0] or mr.shape[1] - 1 != L:
            raise ConfigError("stationary RIRs must have one row of L taps per microphone",
                              str(d / "stationary/rirs.csv"))
        mic_rirs = mr[:, 1:]
    return Dataset(meas, grid, mics, mic_rirs, meta)
