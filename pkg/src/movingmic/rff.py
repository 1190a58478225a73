"""Random Fourier feature approximations of the sound field kernels.

Drawing plane-wave directions from the probability measure of the weighting
(uniform on the sphere for the diffuse kernel, von Mises-Fisher for the
exponential directional weighting) turns the kernel into an average over a
finite plane-wave basis. The dual N x N problem of the moving-microphone
estimator then becomes a primal problem with one real unknown per
(direction, frequency, real/imaginary part) slot, i.e. L * D unknowns.

The features are scaled by sqrt(kappa_l(r, r)) so that their Gram matrix is
an unbiased estimate of the unnormalised directional kernel, not of the
kernel divided by sinh(beta) / beta.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as splin

from movingmic import kernels, spectral
from movingmic.stationary import hermitian_solve

__all__ = [
    "uniform_sphere",
    "von_mises_fisher",
    "DirectionSample",
    "sample_directions",
    "kernel_estimate",
    "RffStationaryModel",
    "fit_rff_stationary",
    "reconstruct_rff_stationary",
    "FeatureLayout",
    "build_feature_matrix",
    "RffMovingModel",
    "normal_equations",
    "fit_rff_moving",
    "reconstruct_rff_moving",
]


def uniform_sphere(n, rng):
    """n directions uniformly distributed on the unit sphere."""
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _frame(mean):
    """Orthonormal (u, v, mean) with mean as third axis."""
    mean = np.asarray(mean, dtype=float)
    mean = mean / np.linalg.norm(mean)
    helper = np.array([1.0, 0.0, 0.0]) if abs(mean[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(mean, helper)
    u /= np.linalg.norm(u)
    v = np.cross(mean, u)
    return np.stack((u, v, mean))


def von_mises_fisher(n, mean, concentration, rng):
    """n samples from the von Mises-Fisher distribution on the unit sphere.

    The cosine w to the mean direction is drawn by inverting its CDF,
    ``w = 1 + log(x + (1 - x) exp(-2 kappa)) / kappa``, which stays finite for
    large concentrations. Zero concentration gives the uniform distribution.
    """
    if concentration < 0:
        raise ValueError("concentration must be non-negative")
    x = rng.uniform(size=n)
    if concentration == 0:
        w = 2 * x - 1
    else:
        w = 1 + np.log(x + (1 - x) * np.exp(-2 * concentration)) / concentration
    w = np.clip(w, -1.0, 1.0)
    azimuth = rng.uniform(0, 2 * np.pi, size=n)
    s = np.sqrt(1 - w * w)
    local = np.stack((s * np.cos(azimuth), s * np.sin(azimuth), w), axis=1)
    d = local @ _frame(mean)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class DirectionSample:
    """Sampled plane-wave directions, one table per frequency bin.

    With ``shared=True`` bins with the same weighting point to the same table,
    and a bin with D_l directions uses the first D_l rows of it.
    """
    tables: tuple
    seed: int
    shared: bool

    def __len__(self):
        return len(self.tables)

    def D(self, l):
        return self.tables[l].shape[0]

    def replace_bin(self, l, table):
        tables = list(self.tables)
        tables[l] = np.asarray(table, dtype=float)
        return DirectionSample(tuple(tables), self.seed, self.shared)


def sample_directions(spec, D=16, seed=0, shared=True):
    """Draw directions for every bin of ``spec``.

    Parameters
    ----------
    spec : KernelSpec
    D : int or sequence of int
        directions per bin, either one value or one per bin
    seed : int
    shared : bool
        reuse one table for all bins with identical weighting; otherwise
        every bin gets an independent draw

    Returns
    -------
    DirectionSample
    """
    nf = spec.num_freqs
    counts = np.broadcast_to(np.asarray(D, dtype=int), (nf,))
    if np.any(counts < 1):
        raise ValueError("at least one direction per bin is required")
    keys = [(float(spec.betas[l]), tuple(spec.directions[l]) if spec.betas[l] > 0 else None)
            for l in range(nf)]
    if shared:
        groups = list(dict.fromkeys(keys))
    else:
        groups = list(range(nf))
    streams = np.random.SeedSequence(seed).spawn(len(groups))
    draws = {}
    for g, stream in zip(groups, streams):
        members = [l for l in range(nf) if (keys[l] if shared else l) == g]
        n = int(max(counts[l] for l in members))
        beta, eta = keys[members[0]]
        rng = np.random.default_rng(stream)
        draws[g] = uniform_sphere(n, rng) if beta == 0 else von_mises_fisher(n, eta, beta, rng)
    tables = tuple(draws[keys[l] if shared else l][:counts[l]] for l in range(nf))
    return DirectionSample(tables, seed, shared)


def _feature_scale(spec, l, D):
    return np.sqrt(spec.kernel_at_origin()[l] / D)


def kernel_estimate(dirs, spec, l, r, r2):
    """Monte-Carlo estimate of kappa_l(r, r2) from the sampled directions.

    ``kappa_l(r, r) / D * sum_d E_l(r, xi_d) E_l(-r2, xi_d)``; for the diffuse
    kernel at ordinary bins this is ``mean_d exp(-i k (r - r2) . xi_d)``.
    """
    xi = dirs.tables[l]
    r = np.asarray(r, dtype=float)[..., None, :]
    r2 = np.asarray(r2, dtype=float)[..., None, :]
    if spec.nyquist and l == spec.num_freqs - 1:
        # cosine entries are not translation invariant
        e = kernels.plane_wave_entry(spec, l, r, xi) * kernels.plane_wave_entry(spec, l, -r2, xi)
    else:
        e = kernels.plane_wave_entry(spec, l, r - r2, xi)
    return spec.kernel_at_origin()[l] * np.mean(e, axis=-1)


def _basis(spec, l, points, xi):
    """E_l(points, xi) for all pairs, shape (P, D)."""
    return kernels.plane_wave_entry(spec, l, points[:, None, :], xi[None, :, :])


@dataclass(frozen=True, eq=False)
class RffStationaryModel:
    coefficients: np.ndarray
    directions: np.ndarray
    spec: kernels.KernelSpec
    l: int
    lam: float


def fit_rff_stationary(meas, spec, l, D, lam, seed=0, directions=None):
    """Ridge regression onto D random plane waves at bin l.

    ``b = (Z^H Z + lam I)^{-1} Z^H p`` with ``Z[m, d] = E_l(r_m, xi_d) / sqrt(D)``,
    solved as ``Z^H (Z Z^H + lam I)^{-1} p`` when D exceeds M.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    spec.check_bin(l)
    if directions is None:
        directions = sample_directions(spec, D, seed).tables[l]
    xi = np.asarray(directions, dtype=float)
    Z = _feature_scale(spec, l, xi.shape[0]) * _basis(spec, l, meas.positions, xi)
    ZH = Z.conj().T
    p = meas.at_bin(l)
    if xi.shape[0] > meas.M:
        # same solution through the M x M dual system
        b = ZH @ hermitian_solve(Z @ ZH + lam * np.eye(meas.M), p)
    else:
        b = hermitian_solve(ZH @ Z + lam * np.eye(xi.shape[0]), ZH @ p)
    return RffStationaryModel(b, xi, spec, l, lam)


def reconstruct_rff_stationary(model, r):
    r = np.asarray(r, dtype=float)
    z = _feature_scale(model.spec, model.l, model.directions.shape[0]) * _basis(
        model.spec, model.l, r.reshape(-1, 3), model.directions)
    u = z @ model.coefficients
    return u[0] if r.ndim == 1 else u


def estimate_rirs_stationary(meas, spec, dirs, lam, points):
    """Broadband RFF estimate from stationary microphones, shape (E, L)."""
    points = np.atleast_2d(points)
    U = np.empty((points.shape[0], spec.num_freqs), dtype=complex)
    for l in range(spec.num_freqs):
        model = fit_rff_stationary(meas, spec, l, None, lam, directions=dirs.tables[l])
        U[:, l] = reconstruct_rff_stationary(model, points)
    U[:, 0] = U[:, 0].real
    if spec.nyquist:
        U[:, -1] = U[:, -1].real
    return spectral.dft_inverse(U, spec.L)


@dataclass(frozen=True)
class FeatureLayout:
    """Column map of the real feature matrix.

    Columns are grouped by direction index d; within a group they follow the
    real/imaginary separation order (real parts of all bins, then imaginary
    parts of the bins that are not DC or Nyquist). A bin only appears in the
    groups d < D_l. For a constant D the group of direction d is exactly the
    separated image of one length-L half spectrum.
    """
    bins: np.ndarray
    dir_index: np.ndarray
    imag: np.ndarray

    @classmethod
    def build(cls, dirs, L):
        nf = spectral.num_freqs(L)
        nyq = spectral.has_nyquist(L)
        bins, didx, imag = [], [], []
        for d in range(max(dirs.D(l) for l in range(nf))):
            active = [l for l in range(nf) if dirs.D(l) > d]
            complex_bins = [l for l in active if l != 0 and not (nyq and l == nf - 1)]
            bins += active + complex_bins
            didx += [d] * (len(active) + len(complex_bins))
            imag += [False] * len(active) + [True] * len(complex_bins)
        return cls(np.array(bins), np.array(didx), np.array(imag))

    @property
    def size(self):
        return self.bins.shape[0]


def build_feature_matrix(meas, spec, dirs):
    """Real feature matrix V with V V^T approximating the kernel matrix.

    Column block d of row n is the separated image of
    ``E(-r_n, xi_d) phi_f(n) / sqrt(D)``.

    Returns
    -------
    V : ndarray of shape (N, L * D)
    layout : FeatureLayout
    """
    if spec.L != meas.L:
        raise ValueError("kernel spec and measurement disagree on L")
    layout = FeatureLayout.build(dirs, spec.L)
    sqrt_c = np.sqrt(spec.weights)
    phi = meas.history_spectra
    V = np.empty((meas.N, layout.size))
    for l in range(spec.num_freqs):
        xi = dirs.tables[l]
        f = (_feature_scale(spec, l, xi.shape[0]) * sqrt_c[l]
             * _basis(spec, l, -meas.positions, xi) * phi[:, l, None])
        cols = layout.bins == l
        re = cols & ~layout.imag
        V[:, re] = f.real[:, layout.dir_index[re]]
        im = cols & layout.imag
        if np.any(im):
            V[:, im] = f.imag[:, layout.dir_index[im]]
    return V, layout


@dataclass(frozen=True, eq=False)
class RffMovingModel:
    coefficients: np.ndarray
    directions: DirectionSample
    layout: FeatureLayout
    spec: kernels.KernelSpec
    lam: float

    def plane_wave_coefficients(self):
        """Complex coefficient of every (bin, direction) plane wave.

        Returns a list with one array of shape (D_l,) per bin.
        """
        sqrt_c = np.sqrt(self.spec.weights)
        out = [np.zeros(self.directions.D(l), dtype=complex) for l in range(self.spec.num_freqs)]
        b = self.coefficients
        for j in range(self.layout.size):
            l, d = self.layout.bins[j], self.layout.dir_index[j]
            out[l][d] += (1j if self.layout.imag[j] else 1.0) * b[j] / sqrt_c[l]
        return out


def normal_equations(meas, spec, dirs):
    """V^T V and V^T p for the primal ridge problem."""
    V, layout = build_feature_matrix(meas, spec, dirs)
    G = splin.blas.dsyrk(1.0, V, trans=1, lower=0)
    return G, V.T @ meas.pressure, layout


def fit_rff_moving(meas, spec, D=16, lam=1.0, seed=0, shared=True, directions=None,
                   normal=None):
    """Solve ``min_b ||p - V b||^2 + lam ||b||^2``; the system size is L * D.

    Parameters
    ----------
    meas : MovingMeasurement
    spec : KernelSpec
    D : int or sequence of int
        directions per bin, ignored when ``directions`` is given
    lam : float
    seed : int
    shared : bool
        see :func:`sample_directions`
    directions : DirectionSample, optional
    normal : tuple, optional
        output of :func:`normal_equations` for the same directions, to reuse
        across regularisation values

    Returns
    -------
    RffMovingModel
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if meas.pressure is None:
        raise ValueError("measurement has no recorded pressure")
    if directions is None:
        directions = sample_directions(spec, D, seed, shared)
    G, q, layout = normal_equations(meas, spec, directions) if normal is None else normal
    A = G + lam * np.eye(G.shape[0])
    b = splin.cho_solve(splin.cho_factor(A, lower=False, check_finite=False), q,
                        check_finite=False)
    return RffMovingModel(b, directions, layout, spec, lam)


def reconstruct_rff_moving_spectra(model, points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    spec = model.spec
    coeffs = model.plane_wave_coefficients()
    U = np.empty((points.shape[0], spec.num_freqs), dtype=complex)
    for l in range(spec.num_freqs):
        xi = model.directions.tables[l]
        U[:, l] = _feature_scale(spec, l, xi.shape[0]) * (_basis(spec, l, points, xi) @ coeffs[l])
    U[:, 0] = U[:, 0].real
    if spec.nyquist:
        U[:, -1] = U[:, -1].real
    return U


def reconstruct_rff_moving(model, r):
    """Estimated RIR at one point (3,) or several points (E, 3)."""
    r = np.asarray(r, dtype=float)
    h = spectral.dft_inverse(reconstruct_rff_moving_spectra(model, r.reshape(-1, 3)),
                             model.spec.L)
    return h[0] if r.ndim == 1 else h
