"""Kernel ridge regression of an RIR field from a single moving microphone.

Sample n of the recording is modelled as ``p(n) = <h(r_n), phi(n)> + s(n)``,
where ``h(r_n)`` is the length-L RIR at the microphone position and
``phi(n) = (phi(n), ..., phi(n - L + 1))`` the recent source history. The
estimate is ``h(r) = sum_n Gamma(r, r_n) phi(n) a_n`` with
``a = (K + lambda I)^{-1} p``.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as splin
import scipy.sparse.linalg as spla

from movingmic import _kernelsum, spectral
from movingmic.errors import ConvergenceError, NumericalError, SingularSystemError

__all__ = [
    "MovingMeasurement",
    "KrrModel",
    "measure",
    "kernel_matrix",
    "fit",
    "reconstruct",
    "reconstruct_spectra",
]

log = logging.getLogger(__name__)

MAX_DENSE_N = 20000


@dataclass(frozen=True, eq=False)
class MovingMeasurement:
    """Trajectory, recording and source signal of one moving microphone.

    Parameters
    ----------
    positions : ndarray of shape (N, 3)
        microphone position at each sample, in metres
    signal : ndarray of shape (N + L - 1,)
        source signal from sample ``-(L - 1)`` to ``N - 1``; the first
        ``L - 1`` values are the pre-roll
    L : int
        RIR length
    fs : float
        sampling rate in Hz
    pressure : ndarray of shape (N,), optional
        recorded signal; absent for a measurement that is yet to be simulated
    metadata : dict
        free-form provenance (seed, SNR, ...)
    """
    positions: np.ndarray
    signal: np.ndarray
    L: int
    fs: float
    pressure: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        sig = np.asarray(self.signal, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must have shape (N, 3) with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        N = pos.shape[0]
        if sig.shape != (N + self.L - 1,):
            raise ValueError(
                f"source signal must hold N + L - 1 = {N + self.L - 1} samples "
                f"(including L - 1 pre-roll samples), got {sig.shape[0]}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "signal", sig)
        if self.pressure is not None:
            p = np.asarray(self.pressure, dtype=float)
            if p.shape != (N,):
                raise ValueError(f"pressure must have shape ({N},), got {p.shape}")
            object.__setattr__(self, "pressure", p)

    @classmethod
    def from_signal(cls, positions, signal, L, fs, pressure=None, period=None, metadata=None):
        """Build a measurement, optionally wrapping a periodic source.

        Without ``period`` the signal must already contain the pre-roll. With
        ``period = P`` the signal holds ``phi(0), ..., phi(N - 1)`` and the
        pre-roll is read from the periodic extension ``phi(-j) = phi(P - j)``.
        """
        signal = np.asarray(signal, dtype=float)
        if period is not None:
            N = len(positions)
            if signal.shape[0] < max(N, period):
                raise ValueError("periodic source must cover the whole recording")
            pre = signal[np.arange(-(L - 1), 0) % period]
            signal = np.concatenate((pre, signal[:N]))
        return cls(positions, signal, L, fs, pressure, dict(metadata or {}))

    @property
    def N(self):
        return self.positions.shape[0]

    def with_pressure(self, pressure, **metadata):
        return MovingMeasurement(self.positions, self.signal, self.L, self.fs,
                                 pressure, {**self.metadata, **metadata})

    def subset(self, N):
        """The first N samples of the measurement."""
        p = None if self.pressure is None else self.pressure[:N]
        return MovingMeasurement(self.positions[:N], self.signal[:N + self.L - 1],
                                 self.L, self.fs, p, dict(self.metadata))

    @cached_property
    def history(self):
        """Source history buffers, row n = (phi(n), ..., phi(n - L + 1))."""
        win = np.lib.stride_tricks.sliding_window_view(self.signal, self.L)
        return np.ascontiguousarray(win[:self.N, ::-1])

    @cached_property
    def history_spectra(self):
        """Real DFT of every history buffer, shape (N, L // 2 + 1)."""
        return np.ascontiguousarray(spectral.dft_forward(self.history))


@dataclass(frozen=True, eq=False)
class KrrModel:
    coefficients: np.ndarray
    measurement: MovingMeasurement
    spec: object
    lam: float
    residual: float = 0.0
    iterations: int = 0


def measure(rir_field, meas):
    """Noise-free recording ``<h(r_n), phi(n)>`` for every sample n.

    Parameters
    ----------
    rir_field : callable or ndarray of shape (N, L)
        either the RIRs at the trajectory points, or a function mapping an
        (N, 3) array of positions to such an array
    meas : MovingMeasurement
    """
    rirs = rir_field(meas.positions) if callable(rir_field) else rir_field
    rirs = np.asarray(rirs, dtype=float)
    if rirs.shape != (meas.N, meas.L):
        raise ValueError(f"expected RIRs of shape {(meas.N, meas.L)}, got {rirs.shape}")
    return np.einsum("nl,nl->n", rirs, meas.history)


def kernel_args(spec):
    """Arguments describing the kernel for the compiled loops."""
    k1 = spec.wavenumbers[1] if spec.num_freqs > 1 else 0.0
    return (k1, spec.betas, np.ascontiguousarray(spec.directions), spec.nyquist)


def _check_spec(meas, spec):
    if spec.L != meas.L:
        raise ValueError(f"kernel spec has L={spec.L} but measurement has L={meas.L}")


def kernel_matrix(meas, spec):
    """N x N kernel matrix, assembled one frequency sum per entry."""
    _check_spec(meas, spec)
    k1, betas, etas, nyq = kernel_args(spec)
    phi = meas.history_spectra
    return _kernelsum.kernel_matrix(meas.positions, np.ascontiguousarray(phi.real),
                                    np.ascontiguousarray(phi.imag), k1, spec.weights,
                                    betas, etas, nyq)


def kernel_operator(meas, spec):
    """Matrix-free K as a scipy LinearOperator."""
    _check_spec(meas, spec)
    k1, betas, etas, nyq = kernel_args(spec)
    pr = np.ascontiguousarray(meas.history_spectra.real)
    pi = np.ascontiguousarray(meas.history_spectra.imag)
    c = spec.weights

    def matvec(x):
        return _kernelsum.kernel_matvec(meas.positions, pr, pi, k1, c, betas, etas, nyq,
                                        np.ascontiguousarray(np.ravel(x), dtype=float))
    return spla.LinearOperator((meas.N, meas.N), matvec=matvec, rmatvec=matvec, dtype=float)


def _solve_direct(K, p, lam):
    A = K + lam * np.eye(K.shape[0])
    try:
        factor = splin.cho_factor(A, lower=True, check_finite=False)
    except splin.LinAlgError:
        if lam == 0:
            raise SingularSystemError(
                "kernel matrix is singular with lambda = 0; use a positive lambda") from None
        log.warning("Cholesky factorisation failed, falling back to LU")
        a = splin.solve(A, p, assume_a="sym")
    else:
        a = splin.cho_solve(factor, p, check_finite=False)
    return a, A


def _relative_residual(A_apply, a, p):
    pn = np.linalg.norm(p)
    return np.linalg.norm(A_apply(a) - p) / (pn if pn > 0 else 1.0)


def solve_system(K, p, lam, tol=1e-8):
    """Solve (K + lam I) a = p directly, with one refinement step if needed."""
    p = np.asarray(p, dtype=float)
    a, A = _solve_direct(K, p, lam)
    res = _relative_residual(A.dot, a, p)
    if res > tol and np.all(np.isfinite(a)):
        a = a + _solve_direct(K, p - A @ a, lam)[0]
        res = _relative_residual(A.dot, a, p)
    if not np.all(np.isfinite(a)) or (lam == 0 and res > tol):
        raise SingularSystemError(
            f"direct solve failed, relative residual {res:.3e}", residual=res)
    return a, res


def fit(meas, spec, lam, solver="direct", tol=1e-8, max_iter=None, kernel=None,
        max_dense=MAX_DENSE_N):
    """Fit the dual coefficients a = (K + lam I)^{-1} p.

    Parameters
    ----------
    meas : MovingMeasurement
        must carry a recording
    spec : KernelSpec
    lam : float
        regularisation strength, stored unscaled
    solver : {"direct", "iterative"}
        "direct" factorises the assembled K; "iterative" runs conjugate
        gradients on matrix-free products
    tol : float
        relative residual target for the iterative solver
    max_iter : int, optional
        defaults to 10 N
    kernel : ndarray, optional
        precomputed kernel matrix for the same measurement and spec
    max_dense : int
        above this N the kernel matrix is never materialised

    Returns
    -------
    KrrModel
    """
    if meas.pressure is None:
        raise ValueError("measurement has no recorded pressure")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    p = meas.pressure
    if solver == "direct" and meas.N > max_dense and kernel is None:
        log.info("N=%d exceeds the dense limit %d, switching to the iterative solver",
                 meas.N, max_dense)
        solver = "iterative"
    if solver == "direct":
        K = kernel_matrix(meas, spec) if kernel is None else kernel
        a, res = solve_system(K, p, lam)
        return KrrModel(a, meas, spec, lam, res)
    if solver != "iterative":
        raise ValueError(f"unknown solver {solver!r}")

    op = kernel_operator(meas, spec)
    A = spla.LinearOperator(op.shape, matvec=lambda x: op.matvec(x) + lam * np.ravel(x),
                            dtype=float)
    max_iter = 10 * meas.N if max_iter is None else max_iter
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    a, info = spla.cg(A, p, rtol=tol, atol=0.0, maxiter=max_iter, callback=count)
    res = _relative_residual(A.matvec, a, p)
    if info != 0 or res > tol:
        raise ConvergenceError(
            f"conjugate gradients stopped after {iters} iterations with relative "
            f"residual {res:.3e} (tol {tol:.1e})", residual=res)
    return KrrModel(a, meas, spec, lam, res, iters)


def reconstruct_spectra(meas, spec, coefficients, points):
    """Frequency-domain field estimate for one or more coefficient vectors.

    Parameters
    ----------
    coefficients : ndarray of shape (N,) or (N, S)
    points : ndarray of shape (E, 3)

    Returns
    -------
    ndarray of shape (E, L // 2 + 1) or (S, E, L // 2 + 1)
    """
    _check_spec(meas, spec)
    k1, betas, etas, nyq = kernel_args(spec)
    a = np.asarray(coefficients, dtype=float)
    single = a.ndim == 1
    a = a.reshape(meas.N, -1)
    weighted = meas.history_spectra[:, :, None] * a[:, None, :]
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    Ur, Ui = _kernelsum.field_spectra(points, meas.positions,
                                      np.ascontiguousarray(weighted.real),
                                      np.ascontiguousarray(weighted.imag),
                                      k1, betas, etas, nyq)
    U = np.moveaxis(Ur + 1j * Ui, -1, 0)
    # DC and Nyquist are real in exact arithmetic
    U[..., 0] = U[..., 0].real
    if nyq:
        U[..., -1] = U[..., -1].real
    return U[0] if single else U


def reconstruct(model, r):
    """Estimated RIR at a point (3,) or at several points (E, 3)."""
    r = np.asarray(r, dtype=float)
    U = reconstruct_spectra(model.measurement, model.spec, model.coefficients, r.reshape(-1, 3))
    h = spectral.dft_inverse(U, model.spec.L)
    return h[0] if r.ndim == 1 else h
