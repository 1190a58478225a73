"""Single-frequency kernel ridge regression with stationary microphones."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as splin

from movingmic import kernels, spectral

__all__ = [
    "StationaryMeasurement",
    "StationaryKrrModel",
    "fit_stationary",
    "reconstruct_stationary",
    "estimate_rirs",
]


@dataclass(frozen=True, eq=False)
class StationaryMeasurement:
    """Complex pressures at M fixed microphones.

    Parameters
    ----------
    positions : ndarray of shape (M, 3)
    pressures : ndarray of shape (M, L // 2 + 1)
        half spectra of the measured RIRs, or of shape (M,) for a single bin
    """
    positions: np.ndarray
    pressures: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        p = np.asarray(self.pressures, dtype=complex)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must have shape (M, 3) with M >= 1")
        if p.shape[0] != pos.shape[0]:
            raise ValueError("one pressure row per microphone is required")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(p))):
            raise ValueError("positions and pressures must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "pressures", p)

    @classmethod
    def from_rirs(cls, positions, rirs):
        return cls(positions, spectral.dft_forward(rirs))

    @property
    def M(self):
        return self.positions.shape[0]

    def at_bin(self, l):
        return self.pressures if self.pressures.ndim == 1 else self.pressures[:, l]


@dataclass(frozen=True, eq=False)
class StationaryKrrModel:
    coefficients: np.ndarray
    measurement: StationaryMeasurement
    spec: kernels.KernelSpec
    l: int
    lam: float


def gram(spec, l, pos, pos2=None):
    """Kernel matrix kappa_l(pos[i], pos2[j])."""
    pos2 = pos if pos2 is None else pos2
    return kernels.kappa(spec, l, pos[:, None, :], pos2[None, :, :])


def hermitian_solve(A, b):
    """Solve with a Hermitian positive definite A, falling back to LU."""
    try:
        return splin.cho_solve(splin.cho_factor(A, lower=True), b)
    except splin.LinAlgError:
        return splin.solve(A, b)


def fit_stationary(meas, spec, l, lam):
    """Fit a_w = (K_w + lam I)^{-1} p_w at frequency bin l."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    spec.check_bin(l)
    K = gram(spec, l, meas.positions)
    a = hermitian_solve(K + lam * np.eye(meas.M), meas.at_bin(l))
    return StationaryKrrModel(a, meas, spec, l, lam)


def reconstruct_stationary(model, r):
    """Estimated complex pressure at one point (3,) or several points (E, 3)."""
    r = np.asarray(r, dtype=float)
    k = gram(model.spec, model.l, r.reshape(-1, 3), model.measurement.positions)
    u = k @ model.coefficients
    return u[0] if r.ndim == 1 else u


def estimate_rirs(meas, spec, lam, points):
    """Broadband estimate: one fit per bin, then the inverse DFT.

    Returns an array of shape (E, L).
    """
    points = np.atleast_2d(points)
    U = np.empty((points.shape[0], spec.num_freqs), dtype=complex)
    for l in range(spec.num_freqs):
        U[:, l] = reconstruct_stationary(fit_stationary(meas, spec, l, lam), points)
    U[:, 0] = U[:, 0].real
    if spec.nyquist:
        U[:, -1] = U[:, -1].real
    return spectral.dft_inverse(U, spec.L)
