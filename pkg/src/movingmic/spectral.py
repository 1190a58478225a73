"""Real DFT between length-L sequences and their half spectra.

The forward transform uses a positive exponent,

    (F x)_l = sum_n exp(+2 pi i n l / L) x_n,        0 <= l < L//2 + 1

which is the acoustics time convention and the conjugate of what
``numpy.fft.rfft`` computes. All functions act on the last axis, so batches of
sequences (e.g. one source-history buffer per time sample) can be passed as
2-D arrays.

The half spectrum is paired with the weighted inner product
``<u, v> = Re[v^H C u]`` with ``C = diag(c_l)``, which makes the transform
unitary. :func:`separate` maps a half spectrum isometrically onto R^L.
"""
import numpy as np

__all__ = [
    "num_freqs",
    "dft_weights",
    "dft_forward",
    "dft_inverse",
    "inner_product_freq",
    "separate",
    "separate_inverse",
    "check_freq_sequence",
    "freqs_hz",
]


def num_freqs(L):
    """Number of non-redundant bins, ``L // 2 + 1``."""
    if L < 1:
        raise ValueError(f"sequence length must be >= 1, got {L}")
    return L // 2 + 1


def has_nyquist(L):
    return L % 2 == 0 and L > 1


def dft_weights(L):
    """Weights c_l making the real DFT unitary.

    ``1/L`` at DC and (for even L) at Nyquist, ``2/L`` elsewhere.
    """
    c = np.full(num_freqs(L), 2.0 / L)
    c[0] = 1.0 / L
    if has_nyquist(L):
        c[-1] = 1.0 / L
    return c


def freqs_hz(L, fs):
    """Frequency in Hz of every bin."""
    return np.arange(num_freqs(L)) * fs / L


def dft_forward(x):
    """Forward real DFT along the last axis.

    Parameters
    ----------
    x : array_like of shape (..., L)
        real time-domain sequences

    Returns
    -------
    ndarray of shape (..., L // 2 + 1), complex
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("cannot transform an empty sequence")
    # numpy uses exp(-2 pi i n l / L); conjugate to get the positive exponent
    return np.conj(np.fft.rfft(x, axis=-1))


def check_freq_sequence(v, L, atol=1e-9):
    """Raise if DC (and Nyquist for even L) are not real to within ``atol``.

    The tolerance is relative to the largest magnitude in ``v``.
    """
    v = np.asarray(v)
    if v.shape[-1] != num_freqs(L):
        raise ValueError(
            f"half spectrum has {v.shape[-1]} bins, expected {num_freqs(L)} for L={L}")
    if not np.all(np.isfinite(v)):
        raise ValueError("half spectrum contains non-finite values")
    scale = max(float(np.max(np.abs(v), initial=0.0)), 1.0)
    if np.any(np.abs(np.imag(v[..., 0])) > atol * scale):
        raise ValueError("DC bin must be real")
    if has_nyquist(L) and np.any(np.abs(np.imag(v[..., -1])) > atol * scale):
        raise ValueError("Nyquist bin must be real for even L")


def dft_inverse(v, L):
    """Inverse real DFT along the last axis.

    Parameters
    ----------
    v : array_like of shape (..., L // 2 + 1)
        half spectra; DC and Nyquist bins must be real
    L : int
        length of the time-domain sequence

    Returns
    -------
    ndarray of shape (..., L)
    """
    v = np.asarray(v, dtype=complex)
    check_freq_sequence(v, L)
    # irfft computes (1/L) sum over the full spectrum with exp(+2 pi i n l / L),
    # so feeding conj(v) gives Re[sum_l c_l exp(-2 pi i n l / L) v_l]
    return np.fft.irfft(np.conj(v), n=L, axis=-1)


def inner_product_freq(u, v, L):
    """Weighted inner product ``Re[v^H C u]`` over the last axis."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"length mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    c = dft_weights(L)
    if u.shape[-1] != c.shape[0]:
        raise ValueError(f"half spectra have {u.shape[-1]} bins, expected {c.shape[0]}")
    return np.real(np.sum(c * np.conj(v) * u, axis=-1))


def _imag_bins(L):
    """Bins whose imaginary part is a free coordinate."""
    stop = num_freqs(L) - 1 if has_nyquist(L) else num_freqs(L)
    return np.arange(1, stop)


def separate(v, L):
    """Map a half spectrum onto R^L, isometrically.

    The output holds ``sqrt(c_l) Re v_l`` for every bin, followed by
    ``sqrt(c_l) Im v_l`` for every bin that is not DC or Nyquist.
    """
    v = np.asarray(v, dtype=complex)
    check_freq_sequence(v, L)
    sqrt_c = np.sqrt(dft_weights(L))
    im = _imag_bins(L)
    return np.concatenate(
        (sqrt_c * v.real, sqrt_c[im] * v[..., im].imag), axis=-1)


def separate_inverse(x, L):
    """Inverse of :func:`separate`."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != L:
        raise ValueError(f"expected last axis of length {L}, got {x.shape[-1]}")
    nf = num_freqs(L)
    sqrt_c = np.sqrt(dft_weights(L))
    im = _imag_bins(L)
    v = x[..., :nf] / sqrt_c + 0j
    v[..., im] += 1j * x[..., nf:] / sqrt_c[im]
    return v
