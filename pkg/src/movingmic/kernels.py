"""Single-frequency sound field kernels and the diagonal multi-frequency kernel.

Every function here accepts positions with a trailing axis of length 3 and
broadcasts over the leading axes, so a full Gram block can be computed with
``kappa(spec, l, r[:, None], r2[None, :])``.
"""
from dataclasses import dataclass, field

import numpy as np

from movingmic import spectral

__all__ = [
    "KernelSpec",
    "spherical_j0",
    "kappa_diffuse",
    "kappa_vmf",
    "kappa",
    "plane_wave_entry",
    "gamma_diag",
]

SPEED_OF_SOUND = 343.0
_SERIES_RADIUS = 1e-4


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Sampling setup and per-frequency directional weighting.

    The weighting at bin l is ``gamma_l(d) = exp(beta_l * eta_l . d)`` over
    plane-wave arrival directions d, so ``eta_l`` points towards where the
    favoured waves come from (for a single dominant source: from the region
    of interest towards the source). ``beta_l = 0`` is the diffuse kernel.

    Parameters
    ----------
    L : int
        RIR length in samples
    fs : float
        sampling rate in Hz
    c : float
        speed of sound in m/s
    directions : ndarray of shape (L // 2 + 1, 3), optional
        unit vectors eta_l, one per bin
    betas : ndarray of shape (L // 2 + 1,), optional
        non-negative strengths beta_l; zero at Nyquist for even L
    """
    L: int
    fs: float
    c: float = SPEED_OF_SOUND
    directions: np.ndarray = field(default=None, repr=False)
    betas: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L}")
        if not self.fs > 0 or not self.c > 0:
            raise ValueError("fs and c must be positive")
        nf = spectral.num_freqs(self.L)
        betas = np.zeros(nf) if self.betas is None else np.array(self.betas, dtype=float)
        if self.directions is None:
            directions = np.tile([0.0, 0.0, 1.0], (nf, 1))
        else:
            directions = np.array(self.directions, dtype=float)
        if betas.shape != (nf,) or directions.shape != (nf, 3):
            raise ValueError(f"weighting tables must have {nf} rows")
        if np.any(betas < 0) or not np.all(np.isfinite(betas)):
            raise ValueError("beta must be finite and non-negative")
        if np.any(np.abs(np.linalg.norm(directions, axis=-1) - 1) > 1e-12):
            raise ValueError("weighting directions must be unit vectors")
        if spectral.has_nyquist(self.L) and betas[-1] != 0:
            raise ValueError("beta must be zero at the Nyquist bin")
        betas.setflags(write=False)
        directions.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "directions", directions)

    @classmethod
    def diffuse(cls, L, fs, c=SPEED_OF_SOUND):
        return cls(L, fs, c)

    @classmethod
    def von_mises_fisher(cls, L, fs, direction, beta, c=SPEED_OF_SOUND):
        """Directional weighting with the same (eta, beta) at every bin.

        ``direction`` and ``beta`` may also be per-bin tables. When a scalar
        beta is broadcast, the Nyquist bin of an even L is set to zero.
        """
        nf = spectral.num_freqs(L)
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction, axis=-1, keepdims=True)
        directions = np.broadcast_to(direction, (nf, 3)).copy()
        if np.ndim(beta) == 0:
            betas = np.full(nf, float(beta))
            if spectral.has_nyquist(L):
                betas[-1] = 0.0
        else:
            betas = np.asarray(beta, dtype=float)
        return cls(L, fs, c, directions, betas)

    @property
    def num_freqs(self):
        return spectral.num_freqs(self.L)

    @property
    def nyquist(self):
        return spectral.has_nyquist(self.L)

    @property
    def wavenumbers(self):
        """omega_l / c for every bin."""
        return 2 * np.pi * self.fs * np.arange(self.num_freqs) / (self.L * self.c)

    @property
    def weights(self):
        return spectral.dft_weights(self.L)

    @property
    def is_directional(self):
        return bool(np.any(self.betas > 0))

    def is_nyquist(self, l):
        return self.nyquist and l == self.num_freqs - 1

    def check_bin(self, l):
        if not 0 <= l < self.num_freqs:
            raise IndexError(f"bin {l} out of range for L={self.L}")

    def kernel_at_origin(self):
        """kappa_l(r, r) for every bin, i.e. sinh(beta_l) / beta_l."""
        return np.real(spherical_j0(1j * self.betas))


def spherical_j0(z):
    """Zeroth order spherical Bessel function sin(z) / z, also for complex z.

    A Taylor expansion is used for ``|z| < 1e-4``.
    """
    z = np.asarray(z)
    small = np.abs(z) < _SERIES_RADIUS
    safe = np.where(small, 1.0, z)
    z2 = z * z
    return np.where(small, 1 - z2 / 6 + z2 * z2 / 120, np.sin(safe) / safe)


def _distance(r, r2):
    return np.linalg.norm(np.asarray(r, dtype=float) - np.asarray(r2, dtype=float), axis=-1)


def kappa_diffuse(spec, l, r, r2):
    """Diffuse kernel j0(k_l ||r - r2||).

    At the Nyquist bin of an even L this is the symmetrised form
    ``(j0(k ||r - r2||) + j0(k ||r + r2||)) / 2``.
    """
    spec.check_bin(l)
    k = spec.wavenumbers[l]
    val = spherical_j0(k * _distance(r, r2))
    if spec.is_nyquist(l):
        r_sum = np.asarray(r, dtype=float) + np.asarray(r2, dtype=float)
        val = 0.5 * (val + spherical_j0(k * np.linalg.norm(r_sum, axis=-1)))
    return val + 0j


def kappa_vmf(spec, l, r, r2):
    """Von Mises-Fisher weighted kernel j0(sqrt(xi^T xi)).

    ``xi = k_l (r - r2) + i beta_l eta_l``; the principal square root is used,
    which is harmless because j0 is even. Reduces to the diffuse kernel when
    beta_l is zero.
    """
    spec.check_bin(l)
    beta = spec.betas[l]
    if spec.is_nyquist(l):
        if beta != 0:
            raise ValueError("closed form kernel is not available at Nyquist for beta > 0")
        return kappa_diffuse(spec, l, r, r2)
    xi = (spec.wavenumbers[l] * (np.asarray(r, dtype=float) - np.asarray(r2, dtype=float))
          + 1j * beta * spec.directions[l])
    return spherical_j0(np.sqrt(np.sum(xi * xi, axis=-1)))


def kappa(spec, l, r, r2):
    """Kernel entry (Gamma_r(r, r2))_ll, dispatching on the weighting at l."""
    if spec.betas[l] == 0:
        return kappa_diffuse(spec, l, r, r2)
    return kappa_vmf(spec, l, r, r2)


def plane_wave_entry(spec, l, r, d_hat):
    """Diagonal entry of the plane-wave basis E(r, d) at bin l.

    ``exp(-i k_l r . d)`` for ordinary bins, ``cos(k_l r . d)`` at Nyquist.
    """
    spec.check_bin(l)
    d_hat = np.asarray(d_hat, dtype=float)
    if np.any(np.abs(np.linalg.norm(d_hat, axis=-1) - 1) > 1e-9):
        raise ValueError("plane wave direction must be a unit vector")
    phase = spec.wavenumbers[l] * np.sum(np.asarray(r, dtype=float) * d_hat, axis=-1)
    if spec.is_nyquist(l):
        return np.cos(phase) + 0j
    return np.exp(-1j * phase)


def gamma_diag(spec, r, r2):
    """Diagonal of the frequency-domain kernel Gamma_r(r, r2).

    Returns an array of shape (..., L // 2 + 1).
    """
    return np.stack([kappa(spec, l, r, r2) for l in range(spec.num_freqs)], axis=-1)
