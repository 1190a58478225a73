"""Dataset generation, estimator dispatch and parameter sweeps."""
import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from movingmic import evaluation, moving, rff, sim, stationary
from movingmic.config import DIRECTIONAL, MOVING, RFF
from movingmic.errors import ConfigError, NumericalError
from movingmic.io import Dataset, atomic_write_text
from movingmic.kernels import KernelSpec

__all__ = [
    "build_scene",
    "build_dataset",
    "Runner",
    "run_sweep",
]

log = logging.getLogger(__name__)


def build_scene(cfg):
    s = cfg.scene
    if s.kind == "room":
        room = sim.RoomSpec(s.dimensions, s.source, reflection=s.reflection, rt60=s.rt60,
                            rt60_method=s.rt60_method, max_order=s.max_order,
                            min_gain=s.min_gain)
    else:
        room = sim.FreeField(np.asarray(s.sources, dtype=float))
    return sim.Scene(room, s.fs, s.L, s.highpass, s.c)


def build_dataset(cfg, seed=None):
    """Simulate the moving recording, stationary microphones and ground truth.

    The recording noise and the stationary-microphone noise use independent
    streams derived from ``seed`` (``cfg.seed`` by default).
    """
    seed = cfg.seed if seed is None else seed
    scene = build_scene(cfg)
    s, t = cfg.scene, cfg.trajectory
    region = sim.Box(cfg.region.center, cfg.region.size)
    traj = sim.lissajous_trajectory(region, t.N, t.speed, s.fs, t.ratios, t.phase, t.start)
    signal = sim.source_signal(cfg.signal.kind, t.N, s.L, s.fs, cfg.signal.period, seed,
                               cfg.signal.f_lo, cfg.signal.f_hi)
    rec_seed, mic_seed = np.random.SeedSequence(seed).generate_state(2)
    meas = sim.synthesize_recording(scene, traj, signal, cfg.snr_db, int(rec_seed))
    mic_pos = mic_rirs = None
    if cfg.stationary_mics > 0 and t.N >= cfg.stationary_mics:
        mic_pos = sim.stationary_from_trajectory(traj, t.N // cfg.stationary_mics)
        _, mic_rirs = sim.simulate_stationary(scene, mic_pos, cfg.snr_db, int(mic_seed))
    pts = evaluation.grid_points(region, cfg.grid_spacing)
    grid = evaluation.EvaluationGrid(pts, sim.rirs(scene, pts), cfg.grid_spacing)
    meta = {
        "seed": seed,
        "config_hash": cfg.hash(),
        "c": s.c,
        "snr_db": cfg.snr_db,
        "source": list(scene.source),
        "region": {"center": list(cfg.region.center), "size": list(cfg.region.size)},
        "grid_spacing": cfg.grid_spacing,
        "periodic": False,
    }
    return Dataset(meas, grid, mic_pos, mic_rirs, meta)


def default_direction(ds, cfg):
    """Unit vector from the region centre toward the source."""
    if cfg.kernel.direction is not None:
        d = np.asarray(cfg.kernel.direction, dtype=float)
    else:
        if "source" not in ds.meta:
            raise ConfigError("directional estimators need kernel.direction or a source "
                              "position in the dataset metadata", "kernel.direction")
        centre = np.asarray(ds.meta.get("region", {}).get("center", cfg.region.center))
        d = np.asarray(ds.meta["source"], dtype=float) - centre
    n = np.linalg.norm(d)
    if n == 0:
        raise ConfigError("direction must be non-zero", "kernel.direction")
    return d / n


def regularization(name, lambda0, L, scaling):
    """lambda = L * lambda0 for the moving methods under the default scaling."""
    if scaling == "length" and name in MOVING:
        return L * lambda0
    return lambda0


class Runner:
    """Runs estimators on one dataset, caching kernel matrices and feature systems."""

    def __init__(self, ds, cfg):
        if ds.grid is None:
            raise ConfigError("dataset has no ground truth to evaluate on", "dataset")
        self.ds = ds
        self.cfg = cfg
        self._kernels = {}
        self._normal = {}
        self._beta = None

    def spec(self, name, beta=None):
        ds = self.ds
        c = float(ds.meta.get("c", self.cfg.scene.c))
        if name not in DIRECTIONAL:
            return KernelSpec.diffuse(ds.L, ds.fs, c)
        beta = self.beta() if beta is None else beta
        return KernelSpec.von_mises_fisher(ds.L, ds.fs, default_direction(ds, self.cfg), beta, c)

    def stationary_measurement(self):
        if self.ds.mic_positions is None:
            raise ConfigError("dataset has no stationary microphones", "stationary_mics")
        return stationary.StationaryMeasurement.from_rirs(self.ds.mic_positions,
                                                          self.ds.mic_rirs)

    def score(self, est):
        g = self.ds.grid
        band = self.cfg.band
        return evaluation.nmse_band(est, g, self.ds.fs, band) if band else evaluation.nmse(est, g)

    def beta(self):
        """Configured beta, or the KRR-SD grid-search optimum on the evaluation grid."""
        b = self.cfg.kernel.beta
        if b != "auto":
            return float(b)
        if self._beta is None:
            k = self.cfg.kernel
            grid = np.linspace(k.beta_min, k.beta_max, k.beta_count)
            meas = self.stationary_measurement()
            lam = regularization("krr_sd", self.cfg.regularization.lambda0, self.ds.L,
                                 self.cfg.regularization.scaling)
            scores = [self.score(stationary.estimate_rirs(
                meas, self.spec("krr_sd", b), lam, self.ds.grid.points)) for b in grid]
            self._beta = float(grid[int(np.argmin(scores))])
            log.info("selected beta = %.4g", self._beta)
        return self._beta

    def _kernel(self, meas, spec, key):
        if key not in self._kernels:
            # keep memory bounded: one matrix per spec
            if len(self._kernels) >= 2:
                self._kernels.pop(next(iter(self._kernels)))
            self._kernels[key] = moving.kernel_matrix(meas, spec)
        return self._kernels[key]

    def estimate(self, name, lambda0=None, D=None, seed=0, N=None, beta=None):
        """Estimated RIRs on the evaluation grid.

        Returns
        -------
        estimates : ndarray of shape (E, L)
        info : dict
            lambda, beta, D, solver residual and so on
        """
        cfg = self.cfg
        lambda0 = cfg.regularization.lambda0 if lambda0 is None else lambda0
        D = cfg.rff.D if D is None else D
        D = list(D) if isinstance(D, tuple) else D
        pts = self.ds.grid.points
        lam = regularization(name, lambda0, self.ds.L, cfg.regularization.scaling)
        info = {"lambda": lam}
        if name == "nearest_neighbour":
            if self.ds.mic_positions is None:
                raise ConfigError("dataset has no stationary microphones", "stationary_mics")
            return evaluation.nearest_neighbour(pts, self.ds.mic_positions,
                                                self.ds.mic_rirs), {}
        spec = self.spec(name, beta)
        if name in DIRECTIONAL:
            info["beta"] = float(spec.betas[0])
        if name in RFF:
            info["D"] = D
            info["seed"] = seed
        if name in MOVING:
            meas = self.ds.measurement if N is None else self.ds.measurement.subset(N)
            info["N"] = meas.N
            key = (meas.N, name in DIRECTIONAL, info.get("beta"))
            if name in ("krr_m", "krr_md"):
                sol = cfg.solver
                K = None
                if sol.kind == "direct" and meas.N <= moving.MAX_DENSE_N:
                    K = self._kernel(meas, spec, key)
                model = moving.fit(meas, spec, lam, sol.kind, sol.tol, sol.max_iter, K)
                info.update(residual=model.residual, iterations=model.iterations, model=model)
                return moving.reconstruct(model, pts), info
            dirs = rff.sample_directions(spec, D, seed, cfg.rff.shared)
            nkey = key + (str(D), seed, cfg.rff.shared)
            if nkey not in self._normal:
                self._normal.clear()
                self._normal[nkey] = rff.normal_equations(meas, spec, dirs)
            model = rff.fit_rff_moving(meas, spec, lam=lam, directions=dirs,
                                       normal=self._normal[nkey])
            info["model"] = model
            return rff.reconstruct_rff_moving(model, pts), info
        meas = self.stationary_measurement()
        if name in ("krr_s", "krr_sd"):
            return stationary.estimate_rirs(meas, spec, lam, pts), info
        dirs = rff.sample_directions(spec, D, seed, cfg.rff.shared)
        return rff.estimate_rirs_stationary(meas, spec, dirs, lam, pts), info

    def evaluate(self, name, keep_model=False, **params):
        """NMSE summary of one estimator run, and the estimates themselves.

        The fitted moving-microphone model is included under "model" only with
        ``keep_model``.
        """
        t0 = time.perf_counter()
        est, info = self.estimate(name, **params)
        seconds = time.perf_counter() - t0
        if not keep_model:
            info.pop("model", None)
        g = self.ds.grid
        return {
            "estimator": name,
            "nmse_db": self.score(est),
            "nmse_broadband_db": evaluation.nmse(est, g),
            "seconds": seconds,
            **info,
        }, est


# axes that change the simulated data rather than the estimator
_DATA_AXES = ("rt60", "snr_db")


def _config_for(cfg, axis, value):
    if axis == "rt60":
        return cfg.replace(scene=dataclasses.replace(cfg.scene, rt60=float(value),
                                                     reflection=None))
    if axis == "snr_db":
        return cfg.replace(snr_db=value)
    return cfg


def _cell_name(axis, value, name, seed):
    return f"{axis}={value!r}__{name}__seed{seed}.json"


def _uses_seed(name):
    return name in RFF


def _run_value(cfg, axis, value, estimators, seeds, cell_dir, dataset=None):
    """All cells for one axis value. Returns a list of cell dicts."""
    vcfg = _config_for(cfg, axis, value)
    runner = None
    cells = []
    for name in estimators:
        for seed in seeds:
            path = None if cell_dir is None else Path(cell_dir) / _cell_name(axis, value, name, seed)
            if path is not None and path.exists():
                cell = json.loads(path.read_text())
                if cell.get("config_hash") == cfg.hash():
                    cells.append(cell)
                    continue
            if not _uses_seed(name) and seed != seeds[0]:
                # deterministic given the data: reuse the first seed's cell
                first = next(c for c in cells if c["estimator"] == name)
                cell = {**first, "seed": seed}
            else:
                if runner is None:
                    ds = dataset if axis not in _DATA_AXES and dataset is not None else \
                        build_dataset(vcfg)
                    runner = Runner(ds, vcfg)
                params = {"seed": seed}
                if axis == "lambda0":
                    params["lambda0"] = value
                elif axis == "D":
                    params["D"] = value
                elif axis == "N":
                    params["N"] = int(value)
                elif axis == "beta":
                    params["beta"] = value
                try:
                    cell, _ = runner.evaluate(name, **params)
                    cell["status"] = "ok"
                except (NumericalError, np.linalg.LinAlgError, ValueError) as exc:
                    log.warning("%s at %s=%r failed: %s", name, axis, value, exc)
                    cell = {"estimator": name, "nmse_db": float("nan"),
                            "nmse_broadband_db": float("nan"), "seconds": float("nan"),
                            "status": f"failed: {exc}"}
                    if isinstance(exc, NumericalError) and exc.residual is not None:
                        cell["residual"] = exc.residual
                cell["seed"] = seed
            cell.update(axis=axis, value=value, config_hash=cfg.hash())
            if path is not None:
                atomic_write_text(path, json.dumps(cell, sort_keys=True) + "\n")
            cells.append(cell)
    return cells


def run_sweep(cfg, axis=None, values=None, cell_dir=None, workers=None, dataset=None):
    """Run every configured estimator over one parameter axis.

    Parameters
    ----------
    cfg : ExperimentConfig
    axis : str, optional
        one of lambda0, D, N, rt60, beta, snr_db; defaults to ``cfg.sweep``
    values : sequence, optional
    cell_dir : path, optional
        directory of per-cell JSON files; existing cells with the same
        configuration hash are reused, so an interrupted sweep resumes
    workers : int, optional
        processes running different axis values in parallel
    dataset : Dataset, optional
        data to use for axes that do not change the simulation

    Returns
    -------
    SweepResult
    """
    if axis is None:
        if cfg.sweep is None:
            raise ConfigError("no sweep axis configured", "sweep")
        axis, values = cfg.sweep.axis, cfg.sweep.values if values is None else values
    values = list(values)
    if not values:
        raise ConfigError("at least one value is required", "sweep.values")
    estimators = list(cfg.estimators)
    if not estimators:
        raise ConfigError("at least one estimator is required", "estimators")
    seeds = list(cfg.seeds)
    workers = cfg.workers if workers is None else workers
    if axis not in _DATA_AXES and dataset is None:
        dataset = build_dataset(cfg)
    args = [(cfg, axis, v, estimators, seeds, cell_dir, dataset) for v in values]
    if workers > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_value = list(pool.map(_run_value, *zip(*args)))
    else:
        per_value = [_run_value(*a) for a in args]
    nmse_db = {name: [] for name in estimators}
    seconds = {name: [] for name in estimators}
    cells = []
    for v_cells in per_value:
        cells += v_cells
        for name in estimators:
            mine = [c for c in v_cells if c["estimator"] == name]
            nmse_db[name].append(float(np.nanmean([c["nmse_db"] for c in mine]))
                                 if any(np.isfinite(c["nmse_db"]) for c in mine) else float("nan"))
            secs = [c["seconds"] for c in mine if np.isfinite(c["seconds"])]
            seconds[name].append(float(np.mean(secs)) if secs else float("nan"))
    return evaluation.SweepResult(axis, values, estimators, nmse_db, seconds, seeds, cells)
