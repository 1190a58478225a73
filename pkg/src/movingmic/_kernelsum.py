"""Compiled loops over (position, position, frequency) triples.

These evaluate the same kernel as :mod:`movingmic.kernels` without allocating
one N x N array per frequency bin. The wavenumbers are ``k_l = l * k1``, so
for the diffuse kernel sin(l theta) is advanced by a complex rotation instead
of calling sin once per bin.
"""
import numpy as np
from numba import njit

_SERIES_RADIUS = 1e-4
# below this theta = k1 * distance the rotation loses relative accuracy in
# sin(l theta) / (l theta); evaluate directly instead
_ROTATION_MIN_THETA = 1e-2


@njit(cache=True)
def _j0_real(z):
    if abs(z) < _SERIES_RADIUS:
        z2 = z * z
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return np.sin(z) / z


@njit(cache=True)
def _j0_sqrt(x, y):
    """j0(sqrt(x + iy)) as (real, imag), principal square root."""
    if x * x + y * y < 1e-16:
        # 1 - q/6 + q^2/120
        qr2 = x * x - y * y
        qi2 = 2.0 * x * y
        return 1.0 - x / 6.0 + qr2 / 120.0, -y / 6.0 + qi2 / 120.0
    r = np.hypot(x, y)
    if x >= 0.0:
        u = np.sqrt(0.5 * (r + x))
        v = y / (2.0 * u)
    else:
        v = np.sqrt(0.5 * (r - x))
        if y < 0.0:
            v = -v
        u = y / (2.0 * v)
    e = np.exp(v)
    ch = 0.5 * (e + 1.0 / e)
    sh = 0.5 * (e - 1.0 / e)
    sr = np.sin(u) * ch
    si = np.cos(u) * sh
    den = u * u + v * v
    return (sr * u + si * v) / den, (si * u - sr * v) / den


@njit(cache=True)
def _fill_kappa(kre, kim, k1, betas, etas, nyq, ra, rb):
    """kappa_l(ra, rb) for every bin, written into kre / kim."""
    nf = kre.shape[0]
    dx = ra[0] - rb[0]
    dy = ra[1] - rb[1]
    dz = ra[2] - rb[2]
    dist2 = dx * dx + dy * dy + dz * dz
    theta = k1 * np.sqrt(dist2)
    kre[0] = 1.0
    kim[0] = 0.0
    if theta > _ROTATION_MIN_THETA:
        cr = np.cos(theta)
        ci = np.sin(theta)
        zr = 1.0
        zi = 0.0
        inv_theta = 1.0 / theta
        for l in range(1, nf):
            t = zr * cr - zi * ci
            zi = zr * ci + zi * cr
            zr = t
            kre[l] = zi * inv_theta / l
            kim[l] = 0.0
    else:
        for l in range(1, nf):
            kre[l] = _j0_real(l * theta)
            kim[l] = 0.0
    for l in range(nf):
        beta = betas[l]
        if beta != 0.0:
            kl = l * k1
            proj = dx * etas[l, 0] + dy * etas[l, 1] + dz * etas[l, 2]
            kre[l], kim[l] = _j0_sqrt(kl * kl * dist2 - beta * beta, 2.0 * kl * beta * proj)
    if nyq:
        sx = ra[0] + rb[0]
        sy = ra[1] + rb[1]
        sz = ra[2] + rb[2]
        kn = (nf - 1) * k1
        kre[nf - 1] = 0.5 * (_j0_real(kn * np.sqrt(dist2))
                             + _j0_real(kn * np.sqrt(sx * sx + sy * sy + sz * sz)))
        kim[nf - 1] = 0.0


@njit(cache=True)
def _pair_sum(kre, kim, c, pr, pi, n, m):
    acc = 0.0
    for l in range(kre.shape[0]):
        xr = pr[n, l] * pr[m, l] + pi[n, l] * pi[m, l]
        xi = pr[n, l] * pi[m, l] - pi[n, l] * pr[m, l]
        acc += c[l] * (kre[l] * xr - kim[l] * xi)
    return acc


@njit(cache=True)
def kernel_matrix(pos, pr, pi, k1, c, betas, etas, nyq):
    """K[n, m] = sum_l c_l Re[kappa_l(r_n, r_m) conj(phi[n, l]) phi[m, l]].

    ``pr`` and ``pi`` are the real and imaginary parts of the history spectra.
    """
    N = pos.shape[0]
    nf = c.shape[0]
    kre = np.empty(nf)
    kim = np.empty(nf)
    K = np.empty((N, N))
    for n in range(N):
        for m in range(n, N):
            _fill_kappa(kre, kim, k1, betas, etas, nyq, pos[n], pos[m])
            acc = _pair_sum(kre, kim, c, pr, pi, n, m)
            K[n, m] = acc
            K[m, n] = acc
    return K


@njit(cache=True)
def kernel_matvec(pos, pr, pi, k1, c, betas, etas, nyq, x):
    """K @ x without storing K."""
    N = pos.shape[0]
    nf = c.shape[0]
    kre = np.empty(nf)
    kim = np.empty(nf)
    y = np.zeros(N)
    for n in range(N):
        for m in range(n, N):
            _fill_kappa(kre, kim, k1, betas, etas, nyq, pos[n], pos[m])
            acc = _pair_sum(kre, kim, c, pr, pi, n, m)
            y[n] += acc * x[m]
            if m != n:
                y[m] += acc * x[n]
    return y


@njit(cache=True)
def field_spectra(points, pos, wr, wi, k1, betas, etas, nyq):
    """U[e, l, s] = sum_n kappa_l(points[e], pos[n]) w[n, l, s].

    ``wr`` and ``wi`` are the real and imaginary parts of w.
    """
    E = points.shape[0]
    N = pos.shape[0]
    nf = wr.shape[1]
    S = wr.shape[2]
    kre = np.empty(nf)
    kim = np.empty(nf)
    Ur = np.zeros((E, nf, S))
    Ui = np.zeros((E, nf, S))
    for e in range(E):
        for n in range(N):
            _fill_kappa(kre, kim, k1, betas, etas, nyq, points[e], pos[n])
            for l in range(nf):
                a = kre[l]
                b = kim[l]
                for s in range(S):
                    Ur[e, l, s] += a * wr[n, l, s] - b * wi[n, l, s]
                    Ui[e, l, s] += a * wi[n, l, s] + b * wr[n, l, s]
    return Ur, Ui
