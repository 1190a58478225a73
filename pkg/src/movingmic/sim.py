"""Ground-truth RIR fields, trajectories, source signals and recordings.

Rooms are axis-aligned cuboids centred on the origin unless an explicit
lower corner is given. RIRs are synthesised with the image-source method,
each image contributing a fractionally delayed impulse of amplitude
``gain / (4 pi distance)``, and are then high-pass filtered forward-backward.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.signal as sps
from numba import njit

from movingmic.moving import MovingMeasurement, measure
from movingmic.stationary import StationaryMeasurement

__all__ = [
    "Box",
    "RoomSpec",
    "FreeField",
    "Scene",
    "Trajectory",
    "rir_at",
    "rirs",
    "lissajous_trajectory",
    "periodic_sweep",
    "source_signal",
    "synthesize_recording",
    "stationary_from_trajectory",
    "simulate_stationary",
    "reflection_from_rt60",
]

log = logging.getLogger(__name__)

SINC_HALF_WIDTH = 40  # 81 taps


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its centre and edge lengths."""
    center: tuple
    size: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("box centre and size need three components")
        if min(s) < 0:
            raise ValueError("box size must be non-negative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)

    @property
    def lower(self):
        return np.asarray(self.center) - 0.5 * np.asarray(self.size)

    @property
    def upper(self):
        return np.asarray(self.center) + 0.5 * np.asarray(self.size)

    def contains(self, points, tol=1e-9):
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.lower - tol) & (p <= self.upper + tol), axis=-1)

    def inside(self, other, tol=1e-9):
        """True when this box lies within ``other``."""
        return bool(np.all(self.lower >= other.lower - tol) and np.all(self.upper <= other.upper + tol))


def reflection_from_rt60(dimensions, rt60, method="sabine"):
    """Uniform pressure reflection coefficient for a target reverberation time.

    Sabine: ``alpha = 0.161 V / (S RT60)``; Eyring:
    ``alpha = 1 - exp(-0.161 V / (S RT60))``. The reflection coefficient is
    ``sqrt(1 - alpha)``.
    """
    if not rt60 > 0:
        raise ValueError("RT60 must be positive")
    lx, ly, lz = dimensions
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    x = 0.161 * volume / (surface * rt60)
    if method == "sabine":
        alpha = x
        if alpha > 1:
            raise ValueError(
                f"RT60 = {rt60} s is below the Sabine limit of {x * rt60:.3f} s for this "
                "room; use method='eyring' or explicit reflection coefficients")
    elif method == "eyring":
        alpha = 1 - np.exp(-x)
    else:
        raise ValueError(f"unknown RT60 method {method!r}")
    return float(np.sqrt(1 - alpha))


@dataclass(frozen=True)
class RoomSpec:
    """Cuboid room with a point source.

    Parameters
    ----------
    dimensions : 3-tuple
        edge lengths in metres
    source : 3-tuple
        source position in metres
    reflection : float or 6-tuple, optional
        pressure reflection coefficients of the walls at
        (x_lo, x_hi, y_lo, y_hi, z_lo, z_hi)
    rt60 : float, optional
        target reverberation time; used when ``reflection`` is absent
    rt60_method : {"sabine", "eyring"}
    max_order : int, optional
        highest reflection order; unlimited by default
    min_gain : float
        images whose accumulated reflection gain falls below this are dropped
    lower : 3-tuple, optional
        lower corner; the room is centred on the origin by default
    """
    dimensions: tuple
    source: tuple
    reflection: object = None
    rt60: float = None
    rt60_method: str = "sabine"
    max_order: int = None
    min_gain: float = 1e-4
    lower: tuple = None

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError("room dimensions must be three positive lengths")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "source", tuple(float(v) for v in self.source))
        lower = tuple(-0.5 * d for d in dims) if self.lower is None else tuple(
            float(v) for v in self.lower)
        object.__setattr__(self, "lower", lower)
        if self.reflection is None and self.rt60 is None:
            raise ValueError("either reflection coefficients or a target RT60 is required")
        if not self.box.contains(self.source):
            raise ValueError("source must be inside the room")
        refl = self.reflections
        if np.any(refl < 0) or np.any(refl > 1):
            raise ValueError("reflection coefficients must lie in [0, 1]")

    @property
    def box(self):
        lower = np.asarray(self.lower)
        return Box(tuple(lower + 0.5 * np.asarray(self.dimensions)), self.dimensions)

    @property
    def reflections(self):
        if self.reflection is None:
            r = reflection_from_rt60(self.dimensions, self.rt60, self.rt60_method)
        else:
            r = self.reflection
        return np.broadcast_to(np.asarray(r, dtype=float), (6,)).copy()

    def image_sources(self, max_distance):
        """Image positions and gains that can arrive within ``max_distance``.

        Returns
        -------
        positions : ndarray of shape (I, 3)
        gains : ndarray of shape (I,)
        """
        refl = self.reflections
        lower = np.asarray(self.lower)
        src = np.asarray(self.source) - lower
        centre = 0.5 * np.asarray(self.dimensions)
        half_diag = np.linalg.norm(centre)
        axes = []
        for k in range(3):
            size = self.dimensions[k]
            nmax = int(np.ceil((max_distance + half_diag) / (2 * size))) + 1
            n = np.arange(-nmax, nmax + 1)
            off, gain, order = [], [], []
            for q in (0, 1):
                pos = 2 * n * size + (1 - 2 * q) * src[k]
                lo = np.abs(n - q)  # reflections off the wall at 0
                hi = np.abs(n)  # reflections off the wall at size
                with np.errstate(divide="ignore"):
                    g = refl[2 * k] ** lo * refl[2 * k + 1] ** hi
                off.append(pos)
                gain.append(g)
                order.append(lo + hi)
            axes.append((np.concatenate(off), np.concatenate(gain), np.concatenate(order)))
        (x, gx, ox), (y, gy, oy), (z, gz, oz) = axes
        pos = np.stack(np.meshgrid(x, y, z, indexing="ij"), axis=-1).reshape(-1, 3)
        gain = (gx[:, None, None] * gy[None, :, None] * gz[None, None, :]).ravel()
        order = (ox[:, None, None] + oy[None, :, None] + oz[None, None, :]).ravel()
        keep = (np.linalg.norm(pos - centre, axis=1) - half_diag <= max_distance) & (
            gain >= self.min_gain)
        if self.max_order is not None:
            keep &= order <= self.max_order
        # the direct path is always kept
        keep |= order == 0
        return pos[keep] + lower, gain[keep]


@dataclass(frozen=True)
class FreeField:
    """Free-field scene built from explicit point sources.

    Parameters
    ----------
    sources : ndarray of shape (I, 3)
    gains : ndarray of shape (I,), optional
    """
    sources: np.ndarray
    gains: np.ndarray = None

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sources, dtype=float))
        if s.shape[1] != 3:
            raise ValueError("sources must have shape (I, 3)")
        g = np.ones(s.shape[0]) if self.gains is None else np.asarray(self.gains, dtype=float)
        if g.shape != (s.shape[0],):
            raise ValueError("one gain per source is required")
        object.__setattr__(self, "sources", s)
        object.__setattr__(self, "gains", g)

    @property
    def source(self):
        return tuple(self.sources[0])

    def image_sources(self, max_distance):
        return self.sources, self.gains


@njit(cache=True)
def _synthesize(points, images, gains, fs, c, L, half):
    E = points.shape[0]
    out = np.zeros((E, L))
    width = half + 1.0
    for e in range(E):
        for i in range(images.shape[0]):
            dx = points[e, 0] - images[i, 0]
            dy = points[e, 1] - images[i, 1]
            dz = points[e, 2] - images[i, 2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            tau = dist * fs / c
            n0 = int(np.ceil(tau - half))
            n1 = int(np.floor(tau + half))
            if n1 < 0 or n0 >= L:
                continue
            amp = gains[i] / (4.0 * np.pi * max(dist, 1e-9))
            # sin(pi (n - tau)) alternates sign with n
            s0 = np.sin(np.pi * (n0 - tau))
            # Hann window cos(pi t / width) advanced by rotation
            t0 = n0 - tau
            wc = np.cos(np.pi * t0 / width)
            ws = np.sin(np.pi * t0 / width)
            rc = np.cos(np.pi / width)
            rs = np.sin(np.pi / width)
            sgn = 1.0
            for n in range(n0, n1 + 1):
                t = n - tau
                if 0 <= n < L:
                    if abs(t) < 1e-12:
                        sinc = 1.0
                    else:
                        sinc = sgn * s0 / (np.pi * t)
                    out[e, n] += amp * 0.5 * (1.0 + wc) * sinc
                tmp = wc * rc - ws * rs
                ws = ws * rc + wc * rs
                wc = tmp
                sgn = -sgn
    return out


@dataclass(frozen=True)
class Scene:
    """Room (or free field) plus the sampling settings of the RIRs.

    Parameters
    ----------
    room : RoomSpec or FreeField
    fs : float
    L : int
    highpass : float or None
        cutoff of the zero-phase Butterworth high-pass, in Hz
    c : float
    """
    room: object
    fs: float
    L: int
    highpass: float = 20.0
    c: float = 343.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if self.highpass is not None and not 0 < self.highpass < self.fs / 2:
            raise ValueError("high-pass cutoff must lie strictly between 0 and fs / 2")

    @property
    def source(self):
        return np.asarray(self.room.source)

    def images(self):
        if "images" not in self._cache:
            max_dist = (self.L + SINC_HALF_WIDTH) * self.c / self.fs
            pos, gains = self.room.image_sources(max_dist)
            self._cache["images"] = (np.ascontiguousarray(pos), np.ascontiguousarray(gains))
        return self._cache["images"]


def _highpass(h, scene):
    if scene.highpass is None:
        return h
    sos = sps.butter(4, scene.highpass, btype="highpass", fs=scene.fs, output="sos")
    padlen = min(3 * (2 * sos.shape[0] + 1), scene.L - 1)
    return sps.sosfiltfilt(sos, h, axis=-1, padlen=padlen)


def rirs(scene, points):
    """RIRs at several points, shape (E, L)."""
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    if isinstance(scene.room, RoomSpec):
        outside = ~scene.room.box.contains(points)
        if np.any(outside):
            raise ValueError(f"{outside.sum()} evaluation point(s) lie outside the room")
    pos, gains = scene.images()
    h = _synthesize(points, pos, gains, float(scene.fs), float(scene.c), int(scene.L),
                    SINC_HALF_WIDTH)
    return _highpass(h, scene)


def rir_at(scene, r):
    """RIR at a single point, shape (L,)."""
    return rirs(scene, np.asarray(r, dtype=float).reshape(1, 3))[0]


@dataclass(frozen=True, eq=False)
class Trajectory:
    positions: np.ndarray
    fs: float
    speed: float

    @property
    def N(self):
        return self.positions.shape[0]


def lissajous_trajectory(box, N, speed, fs, ratios=(3, 4, 5), phase=np.pi / 2, start=0.0):
    """Constant-speed Lissajous curve filling ``box``.

    The curve is ``(sin(a t + phase), sin(b t), sin(c t))`` scaled to the box
    and reparameterised by arc length, so consecutive samples are
    ``speed / fs`` apart along the curve.

    Parameters
    ----------
    box : Box
    N : int
    speed : float
        metres per second
    fs : float
    ratios : 3-tuple of int
    phase : float
    start : float
        arc length in metres at sample 0
    """
    a, b, c = ratios
    half = 0.5 * np.asarray(box.size)
    centre = np.asarray(box.center)

    def curve(t):
        return centre + half * np.stack(
            (np.sin(a * t + phase), np.sin(b * t), np.sin(c * t)), axis=-1)

    # one full period of the curve, finely sampled
    t = np.linspace(0.0, 2 * np.pi, 200001)
    pts = curve(t)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate(([0.0], np.cumsum(seg)))
    total = arc[-1]
    length = speed * (N - 1) / fs
    if length < total / max(ratios):
        warnings.warn(f"trajectory of {length:.3g} m covers less than one lobe of the "
                      f"Lissajous curve ({total / max(ratios):.3g} m)", stacklevel=2)
    s = (start + np.arange(N) * speed / fs) % total
    ts = np.interp(s, arc, t)
    return Trajectory(curve(ts), float(fs), float(speed))


def periodic_sweep(period, fs, f_lo=None, f_hi=None):
    """One period of a logarithmic sine sweep, normalised to unit RMS."""
    f_lo = fs / period if f_lo is None else f_lo
    f_hi = fs / 2 if f_hi is None else f_hi
    if not 0 < f_lo < f_hi <= fs / 2:
        raise ValueError("sweep band must satisfy 0 < f_lo < f_hi <= fs / 2")
    T = period / fs
    t = np.arange(period) / fs
    k = np.log(f_hi / f_lo)
    x = np.sin(2 * np.pi * f_lo * T / k * (np.exp(t / T * k) - 1))
    return x / np.sqrt(np.mean(x * x))


def source_signal(kind, N, L, fs, period=None, seed=0, f_lo=None, f_hi=None):
    """Source samples from ``-(L - 1)`` to ``N - 1``, length N + L - 1.

    ``kind`` is "sweep" (periodic log sweep, period L by default) or "noise"
    (white Gaussian noise, unit variance).
    """
    if kind == "sweep":
        period = L if period is None else period
        one = periodic_sweep(period, fs, f_lo, f_hi)
        return one[np.arange(-(L - 1), N) % period]
    if kind == "noise":
        return np.random.default_rng(seed).standard_normal(N + L - 1)
    raise ValueError(f"unknown source signal {kind!r}")


def _noise(clean, snr_db, rng):
    if snr_db is None or np.isinf(snr_db):
        return np.zeros_like(clean)
    power = np.mean(clean * clean) / 10 ** (snr_db / 10)
    return rng.standard_normal(clean.shape) * np.sqrt(power)


def synthesize_recording(scene, traj, signal, snr_db=None, seed=0, truth=None):
    """Noisy moving-microphone recording of ``signal`` along ``traj``.

    Parameters
    ----------
    scene : Scene
    traj : Trajectory or ndarray of shape (N, 3)
    signal : ndarray of shape (N + L - 1,)
        source signal including the pre-roll
    snr_db : float or None
        None or inf gives a noiseless recording
    seed : int
    truth : ndarray of shape (N, L), optional
        precomputed RIRs at the trajectory points

    Returns
    -------
    MovingMeasurement
    """
    positions = traj.positions if isinstance(traj, Trajectory) else np.asarray(traj, float)
    N, L = positions.shape[0], scene.L
    signal = np.asarray(signal, dtype=float)
    if signal.shape[0] != N + L - 1:
        raise ValueError(f"source signal needs {N + L - 1} samples including {L - 1} "
                         f"pre-roll samples, got {signal.shape[0]}")
    meas = MovingMeasurement(positions, signal, L, scene.fs)
    h = rirs(scene, positions) if truth is None else truth
    clean = measure(h, meas)
    noise = _noise(clean, snr_db, np.random.default_rng(seed))
    return meas.with_pressure(clean + noise, snr_db=snr_db, seed=seed)


def stationary_from_trajectory(traj, segment):
    """One position per full ``segment``-sample block, at its middle sample."""
    positions = traj.positions if isinstance(traj, Trajectory) else np.asarray(traj, float)
    M = positions.shape[0] // segment
    if M == 0:
        raise ValueError("trajectory is shorter than one segment")
    return positions[np.arange(M) * segment + segment // 2]


def simulate_stationary(scene, positions, snr_db=None, seed=0):
    """RIRs at fixed microphones with white noise at the given SNR.

    Returns
    -------
    StationaryMeasurement
        half spectra of the noisy RIRs
    rirs : ndarray of shape (M, L)
        the noisy RIRs themselves
    """
    h = rirs(scene, positions)
    rng = np.random.default_rng(seed)
    noisy = h + np.stack([_noise(row, snr_db, rng) for row in h])
    return StationaryMeasurement.from_rirs(positions, noisy), noisy
