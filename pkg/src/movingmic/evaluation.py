"""Error measures, the nearest-neighbour baseline and reverberation time."""
from dataclasses import dataclass, field

import numpy as np

from movingmic import spectral

__all__ = [
    "NMSE_FLOOR_DB",
    "EvaluationGrid",
    "grid_points",
    "nmse",
    "nmse_per_frequency",
    "nmse_band",
    "nearest_neighbour",
    "schroeder_rt60",
    "SweepResult",
]

NMSE_FLOOR_DB = -300.0
ZERO_BIN_RTOL = 1e-26


def _db(num, den):
    if num == 0:
        return NMSE_FLOOR_DB
    return max(10 * np.log10(num / den), NMSE_FLOOR_DB)


def grid_points(box, spacing):
    """Cell-centred grid of points covering ``box`` at the given spacing.

    A 1 x 1 x 0.25 m box at 0.05 m spacing gives 20 x 20 x 5 = 2000 points.
    """
    axes = []
    for lo, size in zip(box.lower, box.size):
        n = max(int(round(size / spacing)), 1)
        axes.append(lo + (np.arange(n) + 0.5) * size / n)
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    """Evaluation points with their true RIRs.

    Parameters
    ----------
    points : ndarray of shape (E, 3)
    truth : ndarray of shape (E, L)
    spacing : float, optional
    """
    points: np.ndarray
    truth: np.ndarray
    spacing: float = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        truth = np.atleast_2d(np.asarray(self.truth, dtype=float))
        if pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("points must have shape (E, 3) with E >= 1")
        if truth.shape[0] != pts.shape[0]:
            raise ValueError("one true RIR per evaluation point is required")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "truth", truth)

    @property
    def E(self):
        return self.points.shape[0]

    @property
    def L(self):
        return self.truth.shape[1]


def _check(estimates, grid):
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if est.shape != grid.truth.shape:
        raise ValueError(f"estimates of shape {est.shape} do not match truth {grid.truth.shape}")
    return est


def nmse(estimates, grid):
    """Broadband NMSE in dB over all evaluation points."""
    est = _check(estimates, grid)
    den = np.sum(grid.truth ** 2)
    if den == 0:
        raise ValueError("true RIRs have zero energy")
    return _db(np.sum((est - grid.truth) ** 2), den)


def _bin_errors(estimates, grid):
    est = _check(estimates, grid)
    U = spectral.dft_forward(est)
    T = spectral.dft_forward(grid.truth)
    return np.sum(np.abs(U - T) ** 2, axis=0), np.sum(np.abs(T) ** 2, axis=0)


def nmse_per_frequency(estimates, grid):
    """NMSE in dB per frequency bin; NaN where the truth has no energy.

    A bin counts as empty when its energy is at rounding level relative to
    the total.
    """
    num, den = _bin_errors(estimates, grid)
    empty = den <= ZERO_BIN_RTOL * np.sum(den)
    return np.array([np.nan if e else _db(n, d) for n, d, e in zip(num, den, empty)])


def nmse_band(estimates, grid, fs, band=None):
    """NMSE in dB over the bins whose frequency lies in ``band`` (Hz).

    Numerators and denominators are weighted by the DFT weights, so the full
    band reproduces the broadband NMSE.
    """
    num, den = _bin_errors(estimates, grid)
    c = spectral.dft_weights(grid.L)
    f = spectral.freqs_hz(grid.L, fs)
    mask = np.ones_like(f, dtype=bool) if band is None else (f >= band[0]) & (f <= band[1])
    d = np.sum(c[mask] * den[mask])
    if d == 0:
        raise ValueError("true RIRs have zero energy in the band")
    return _db(np.sum(c[mask] * num[mask]), d)


def nearest_neighbour(points, mic_positions, mic_rirs):
    """RIR of the closest microphone at every point; ties go to the lowest index."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mics = np.atleast_2d(np.asarray(mic_positions, dtype=float))
    mic_rirs = np.atleast_2d(np.asarray(mic_rirs, dtype=float))
    if mics.shape[0] < 1:
        raise ValueError("at least one microphone is required")
    d2 = np.sum((points[:, None, :] - mics[None, :, :]) ** 2, axis=-1)
    # argmin returns the first minimum
    return mic_rirs[np.argmin(d2, axis=1)].copy()


def schroeder_rt60(rir, fs, start_db=-5.0, stop_db=-25.0):
    """Reverberation time from the Schroeder energy decay curve (T20).

    A line is fitted to the decay curve between ``start_db`` and ``stop_db``
    and extrapolated to -60 dB. Returns None if the curve never reaches
    ``stop_db`` or the range holds fewer than two samples.
    """
    h = np.asarray(rir, dtype=float)
    edc = np.cumsum((h * h)[::-1])[::-1]
    if edc[0] <= 0:
        return None
    with np.errstate(divide="ignore"):
        edc_db = 10 * np.log10(edc / edc[0])
    below_start = np.nonzero(edc_db <= start_db)[0]
    below_stop = np.nonzero(edc_db <= stop_db)[0]
    if below_start.size == 0 or below_stop.size == 0:
        return None
    i0, i1 = below_start[0], below_stop[0]
    if i1 - i0 < 2 or not np.all(np.isfinite(edc_db[i0:i1 + 1])):
        return None
    t = np.arange(i0, i1 + 1) / fs
    slope = np.polyfit(t, edc_db[i0:i1 + 1], 1)[0]
    if slope >= 0:
        return None
    return -60.0 / slope


@dataclass
class SweepResult:
    """Mean NMSE and wall time per axis value and estimator.

    ``nmse_db[name][i]`` and ``seconds[name][i]`` belong to ``values[i]``;
    ``cells`` keeps every individual run.
    """
    axis: str
    values: list
    estimators: list
    nmse_db: dict
    seconds: dict
    seeds: list
    cells: list = field(default_factory=list)

    def rows(self):
        for name in self.estimators:
            for i, v in enumerate(self.values):
                yield name, v, self.nmse_db[name][i], self.seconds[name][i]
