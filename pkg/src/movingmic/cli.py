"""Command-line interface.

Commands: simulate, estimate, sweep, import, report. Exit status is 0 on
success, 2 for configuration or input errors and 3 for numerical failures.
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from movingmic import evaluation, experiment, io, spectral
from movingmic.config import ExperimentConfig, load_config
from movingmic.errors import ConfigError, NumericalError

log = logging.getLogger("movingmic")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_rows(path, header, rows, provenance):
    text = io._provenance(provenance) + ",".join(header) + "\n"
    text += "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)
    io.atomic_write_text(path, text)


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes.update(seed=args.seed, seeds=(args.seed,))
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "solver", None) is not None or getattr(args, "tol", None) is not None:
        changes["solver"] = dataclasses.replace(
            cfg.solver, kind=args.solver or cfg.solver.kind,
            tol=cfg.solver.tol if args.tol is None else args.tol)
    return cfg.replace(**changes) if changes else cfg


def _provenance(cfg, ds=None):
    seed = cfg.seed if ds is None else ds.meta.get("seed", cfg.seed)
    return {"config_hash": cfg.hash(), "seed": seed}


def cmd_simulate(args):
    cfg = _config(args)
    out = Path(args.out or cfg.dataset)
    ds = experiment.build_dataset(cfg)
    for p in io.write_dataset(ds, out):
        log.info("wrote %s", p)
    print(f"dataset written to {out}: N={ds.N} L={ds.L} fs={ds.fs:g} "
          f"E={ds.grid.E} M={0 if ds.mic_positions is None else ds.mic_positions.shape[0]}")
    return EXIT_OK


def _load_dataset(args, cfg):
    path = Path(getattr(args, "dataset", None) or cfg.dataset)
    return io.read_dataset(path)


def _write_model(path, info, prov):
    model = info.pop("model", None)
    if model is None:
        return
    write_rows(path, ["index", "coefficient"], enumerate(model.coefficients), prov)


def cmd_estimate(args):
    cfg = _config(args)
    ds = _load_dataset(args, cfg)
    out = Path(args.out or cfg.output)
    runner = experiment.Runner(ds, cfg)
    prov = _provenance(cfg, ds)
    freqs = spectral.freqs_hz(ds.L, ds.fs)
    rows = []
    for name in cfg.estimators:
        cell, est = runner.evaluate(name, keep_model=True, seed=cfg.seeds[0])
        _write_model(out / name / "model.csv", cell, prov)
        per_bin = evaluation.nmse_per_frequency(est, ds.grid)
        write_rows(out / name / "nmse_per_frequency.csv", ["frequency_hz", "nmse_db"],
                   zip(freqs, per_bin), prov)
        io.write_table(out / name / "reconstruction.csv",
                       ["e"] + [f"h{j}" for j in range(ds.L)],
                       np.column_stack((np.arange(ds.grid.E), est)), prov, 1)
        rows.append([name, cell["nmse_db"], cell["nmse_broadband_db"], cell["seconds"],
                     cell.get("lambda"), cell.get("beta"), cell.get("D"), cell.get("residual")])
        print(f"{name:18s} NMSE {cell['nmse_db']:8.2f} dB  ({cell['seconds']:.2f} s)")
    write_rows(out / "summary.csv", ["estimator", "nmse_db", "nmse_broadband_db", "seconds",
                                     "lambda", "beta", "D", "residual"], rows, prov)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    if not cfg.estimators:
        raise ConfigError("at least one estimator is required", "estimators")
    out = Path(args.out or cfg.output)
    dataset = None
    if cfg.sweep is None:
        raise ConfigError("the configuration has no sweep section", "sweep")
    if cfg.sweep.axis not in ("rt60", "snr_db") and Path(cfg.dataset).is_dir():
        dataset = io.read_dataset(cfg.dataset)
    res = experiment.run_sweep(cfg, cell_dir=out / "cells", dataset=dataset)
    prov = _provenance(cfg)
    axis = res.axis
    for v in res.values:
        rows = [[c["estimator"], c["seed"], c["nmse_db"], c["nmse_broadband_db"], c["seconds"],
                 c.get("status", "ok")] for c in res.cells if c["value"] == v]
        write_rows(out / f"{axis}={_fmt(v)}.csv",
                   ["estimator", "seed", "nmse_db", "nmse_broadband_db", "seconds", "status"],
                   rows, prov)
    write_rows(out / "sweep.csv", ["estimator", axis, "nmse_db", "seconds"],
               list(res.rows()), {**prov, "seeds": len(res.seeds)})
    for name, v, nm, sec in res.rows():
        print(f"{name:18s} {axis}={_fmt(v):>10s}  NMSE {nm:8.2f} dB  ({sec:.2f} s)")
    return EXIT_OK


def cmd_import(args):
    ds = io.read_dataset(args.dataset)
    print(f"{args.dataset}: N={ds.N} L={ds.L} fs={ds.fs:g} "
          f"truth={'none' if ds.grid is None else ds.grid.E} "
          f"stationary={'none' if ds.mic_positions is None else ds.mic_positions.shape[0]}")
    if args.out:
        io.write_dataset(ds, args.out)
        print(f"normalised copy written to {args.out}")
    return EXIT_OK


def _print_table(path):
    cols, rows = None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        cells = line.split(",")
        if cols is None:
            cols = cells
        else:
            rows.append(cells)

    def short(x):
        try:
            return f"{float(x):.4g}"
        except ValueError:
            return x
    table = [cols] + [[short(x) for x in r] for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
    print(f"== {path}")
    for r in table:
        print("  ".join(x.rjust(w) for x, w in zip(r, widths)))


def cmd_report(args):
    cfg = _config(args)
    out = Path(args.out or cfg.output)
    tables = [p for p in (out / "summary.csv", out / "sweep.csv") if p.is_file()]
    if not tables:
        raise ConfigError("no summary.csv or sweep.csv found; run estimate or sweep first",
                          str(out))
    for p in tables:
        _print_table(p)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="movingmic",
        description="RIR field estimation from a moving microphone.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, workers=False, solver=False):
        p.add_argument("--config", help="YAML or JSON experiment configuration")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="override the seed")
        if workers:
            p.add_argument("--workers", type=int, help="parallel worker processes")
        if solver:
            p.add_argument("--solver", choices=("direct", "iterative"))
            p.add_argument("--tol", type=float, help="iterative solver tolerance")

    p = sub.add_parser("simulate", help="simulate a dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("estimate", help="fit estimators and evaluate them on the truth grid")
    common(p, solver=True)
    p.add_argument("--dataset", help="dataset directory (default from the configuration)")
    p.set_defaults(func=cmd_estimate)
    p = sub.add_parser("sweep", help="run a parameter sweep")
    common(p, workers=True, solver=True)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("import", help="validate an external dataset directory")
    p.add_argument("dataset")
    p.add_argument("--out", help="write a normalised copy here")
    p.set_defaults(func=cmd_import)
    p = sub.add_parser("report", help="print result tables")
    common(p, seed=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        res = "" if exc.residual is None else f" (relative residual {exc.residual:.3e})"
        print(f"numerical failure: {exc}{res}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
