import numpy as np
import pytest
import scipy.integrate as spi
import scipy.stats as sps

from movingmic import kernels, moving, rff, spectral, stationary
from movingmic.kernels import KernelSpec

FS = 1000.0


def random_measurement(N, L, seed=0):
    rng = np.random.default_rng(seed)
    return moving.MovingMeasurement(rng.uniform(-0.5, 0.5, (N, 3)),
                                    rng.standard_normal(N + L - 1), L, FS,
                                    rng.standard_normal(N))


def vmf_mean_cosine_quadrature(beta):
    """E[w] for the density proportional to exp(beta w) on [-1, 1]."""
    num = spi.quad(lambda w: w * np.exp(beta * w), -1, 1)[0]
    return num / spi.quad(lambda w: np.exp(beta * w), -1, 1)[0]


# sampling

def test_directions_are_unit_and_seeded():
    spec = KernelSpec.von_mises_fisher(16, FS, [1, 2, 2], 3.0)
    a = rff.sample_directions(spec, 50, seed=7)
    b = rff.sample_directions(spec, 50, seed=7)
    c = rff.sample_directions(spec, 50, seed=8)
    for l in range(spec.num_freqs):
        assert np.max(np.abs(np.linalg.norm(a.tables[l], axis=1) - 1)) < 1e-12
        np.testing.assert_array_equal(a.tables[l], b.tables[l])
    assert not np.array_equal(a.tables[1], c.tables[1])
    with pytest.raises(ValueError):
        rff.sample_directions(spec, 0)


def test_shared_and_independent_tables():
    spec = KernelSpec.von_mises_fisher(16, FS, [0, 0, 1], 1.0)
    shared = rff.sample_directions(spec, 8, seed=0)
    np.testing.assert_array_equal(shared.tables[1], shared.tables[5])
    # the Nyquist bin is diffuse, so it draws from its own uniform table
    assert not np.array_equal(shared.tables[1], shared.tables[8])
    own = rff.sample_directions(spec, 8, seed=0, shared=False)
    assert not np.array_equal(own.tables[1], own.tables[5])


def test_uniform_mean_is_small():
    d = rff.uniform_sphere(10_000, np.random.default_rng(0))
    assert np.linalg.norm(d.mean(axis=0)) <= 4 / np.sqrt(10_000)


def test_zero_concentration_is_uniform():
    rng = np.random.default_rng(1)
    eta = np.array([0.6, 0.0, 0.8])
    w = rff.von_mises_fisher(100_000, eta, 0.0, rng) @ eta
    assert sps.kstest(w, "uniform", args=(-1, 2)).pvalue > 0.01
    u = rff.uniform_sphere(100_000, rng) @ eta
    assert sps.ks_2samp(w, u).pvalue > 0.01


@pytest.mark.parametrize("beta", [0.5, 2.0, 5.0])
def test_vmf_mean_resultant(beta):
    closed = 1 / np.tanh(beta) - 1 / beta
    assert abs(closed - vmf_mean_cosine_quadrature(beta)) < 1e-10
    eta = np.array([1.0, -2.0, 2.0]) / 3
    w = rff.von_mises_fisher(100_000, eta, beta, np.random.default_rng(2)) @ eta
    assert abs(w.mean() - closed) <= 3 * w.std() / np.sqrt(w.size)


def test_vmf_large_concentration_is_finite():
    d = rff.von_mises_fisher(1000, [0, 0, 1], 1e4, np.random.default_rng(3))
    assert np.all(np.isfinite(d)) and np.min(d[:, 2]) > 0.99


# kernel estimate

def test_estimate_at_equal_points():
    spec = KernelSpec.von_mises_fisher(16, FS, [0, 1, 0], 2.0)
    dirs = rff.sample_directions(spec, 5, seed=0)
    r = np.array([0.3, 0.1, -0.2])
    diffuse = KernelSpec.diffuse(16, FS)
    ddirs = rff.sample_directions(diffuse, 5, seed=0)
    for l in range(1, 8):
        assert rff.kernel_estimate(ddirs, diffuse, l, r, r) == 1
        assert abs(rff.kernel_estimate(dirs, spec, l, r, r) - np.sinh(2) / 2) < 1e-14


def test_estimate_close_to_j0():
    spec = KernelSpec.diffuse(64, FS)
    dirs = rff.sample_directions(spec, 100_000, seed=4)
    r2 = np.zeros(3)
    u = np.array([0.48, 0.6, 0.64])
    for l in (3, 10, 20):
        k = spec.wavenumbers[l]
        for dist in np.linspace(0, 10 / k, 6):
            est = rff.kernel_estimate(dirs, spec, l, dist * u, r2)
            assert abs(est - kernels.spherical_j0(k * dist)) <= 0.02


def test_estimate_is_unbiased():
    spec = KernelSpec.von_mises_fisher(16, FS, [0.6, 0.8, 0.0], 1.5)
    l = 4
    r, r2 = np.array([0.2, -0.1, 0.3]), np.array([-0.25, 0.2, 0.0])
    est = np.array([rff.kernel_estimate(rff.sample_directions(spec, 1, seed=s), spec, l, r, r2)
                    for s in range(200)])
    truth = kernels.kappa(spec, l, r, r2)
    for part in (np.real, np.imag):
        x = part(est)
        assert abs(x.mean() - part(truth)) <= 3 * x.std() / np.sqrt(200)


def test_estimate_error_rate():
    spec = KernelSpec.diffuse(32, FS)
    l = 10
    r, r2 = np.array([0.4, 0.0, 0.1]), np.array([-0.2, 0.3, 0.0])
    truth = kernels.kappa(spec, l, r, r2)
    Ds = np.array([100, 1000, 10_000, 100_000])
    err = [np.mean([abs(rff.kernel_estimate(rff.sample_directions(spec, D, seed=s), spec, l,
                                            r, r2) - truth) for s in range(10)]) for D in Ds]
    slope = np.polyfit(np.log(Ds), np.log(err), 1)[0]
    assert abs(slope + 0.5) <= 0.15


# stationary RFF

def test_stationary_scalar_ridge():
    spec = KernelSpec.diffuse(16, FS)
    r = np.array([[0.1, -0.3, 0.2]])
    xi = np.array([[0.0, 0.6, 0.8]])
    meas = stationary.StationaryMeasurement(r, [1.5 + 0.5j])
    model = rff.fit_rff_stationary(meas, spec, 3, 1, 0.2, directions=xi)
    z = kernels.plane_wave_entry(spec, 3, r[0], xi[0])
    assert abs(model.coefficients[0] - np.conj(z) * (1.5 + 0.5j) / (abs(z) ** 2 + 0.2)) < 1e-14


def test_stationary_converges_to_krr():
    rng = np.random.default_rng(5)
    spec = KernelSpec.diffuse(64, FS)
    pos = rng.uniform(-0.5, 0.5, (6, 3))
    meas = stationary.StationaryMeasurement(pos, rng.standard_normal(6) + 1j * rng.standard_normal(6))
    pts = rng.uniform(-0.5, 0.5, (20, 3))
    l, lam = 8, 1e-2
    krr = stationary.reconstruct_stationary(stationary.fit_stationary(meas, spec, l, lam), pts)
    errs = []
    for D in (10, 100, 1000, 10_000):
        e = [np.linalg.norm(rff.reconstruct_rff_stationary(
            rff.fit_rff_stationary(meas, spec, l, D, lam, seed=s), pts) - krr) for s in range(5)]
        errs.append(np.mean(e))
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 0.05 * np.linalg.norm(krr)


def test_stationary_optimality_probe():
    rng = np.random.default_rng(6)
    spec = KernelSpec.von_mises_fisher(16, FS, [0, 0, 1], 1.0)
    pos = rng.uniform(-0.5, 0.5, (8, 3))
    p = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    meas = stationary.StationaryMeasurement(pos, p)
    l, lam = 5, 0.1
    model = rff.fit_rff_stationary(meas, spec, l, 12, lam, seed=1)
    Z = np.stack([rff.reconstruct_rff_stationary(
        rff.RffStationaryModel(np.eye(12)[j], model.directions, spec, l, lam), pos)
        for j in range(12)], axis=1)

    def objective(b):
        r = p - Z @ b
        return np.real(np.vdot(r, r)) + lam * np.real(np.vdot(b, b))
    base = objective(model.coefficients)
    for _ in range(100):
        delta = 1e-3 * (rng.standard_normal(12) + 1j * rng.standard_normal(12))
        assert objective(model.coefficients + delta) >= base


# moving RFF

@pytest.mark.parametrize("beta", [0.0, 1.5])
def test_feature_gram_matches_direct_formula(beta):
    meas = random_measurement(20, 16, seed=7)
    spec = KernelSpec.von_mises_fisher(16, FS, [0.0, 0.6, 0.8], beta)
    dirs = rff.sample_directions(spec, 8, seed=2)
    V, layout = rff.build_feature_matrix(meas, spec, dirs)
    assert V.shape == (20, 16 * 8) and layout.size == 128
    c = spec.weights
    phi = meas.history_spectra
    direct = np.zeros((20, 20))
    for l in range(spec.num_freqs):
        kh = rff.kernel_estimate(dirs, spec, l, meas.positions[:, None, :],
                                 meas.positions[None, :, :])
        direct += c[l] * np.real(kh * np.conj(phi[:, None, l]) * phi[None, :, l])
    assert np.max(np.abs(V @ V.T - direct)) < 1e-10


def test_feature_gram_approaches_kernel():
    meas = random_measurement(10, 8, seed=8)
    spec = KernelSpec.diffuse(8, FS)
    V, _ = rff.build_feature_matrix(meas, spec, rff.sample_directions(spec, 10_000, seed=3))
    K = moving.kernel_matrix(meas, spec)
    assert np.max(np.abs(V @ V.T - K)) < 0.05 * np.max(np.abs(K))


def test_zero_source_gives_zero_features():
    meas = moving.MovingMeasurement(np.ones((5, 3)), np.zeros(5 + 7), 8, FS, np.zeros(5))
    spec = KernelSpec.diffuse(8, FS)
    V, _ = rff.build_feature_matrix(meas, spec, rff.sample_directions(spec, 4))
    assert not np.any(V)


def test_normal_equations_match_feature_matrix():
    meas = random_measurement(40, 12, seed=9)
    spec = KernelSpec.diffuse(12, FS)
    dirs = rff.sample_directions(spec, 5, seed=1)
    V, _ = rff.build_feature_matrix(meas, spec, dirs)
    G, q, _ = rff.normal_equations(meas, spec, dirs)
    np.testing.assert_allclose(np.triu(G), np.triu(V.T @ V), atol=1e-12)
    np.testing.assert_allclose(q, V.T @ meas.pressure, atol=1e-12)


def test_moving_fit_predictions_and_optimality():
    meas = random_measurement(150, 12, seed=10)
    spec = KernelSpec.von_mises_fisher(12, FS, [1, 0, 0], 2.0)
    lam = 0.5
    model = rff.fit_rff_moving(meas, spec, D=6, lam=lam, seed=4)
    assert model.coefficients.shape == (12 * 6,)
    V, _ = rff.build_feature_matrix(meas, spec, model.directions)
    p = meas.pressure
    b = model.coefficients
    # the reconstruction is the plane-wave field behind V b
    h = rff.reconstruct_rff_moving(model, meas.positions)
    np.testing.assert_allclose(np.einsum("nl,nl->n", h, meas.history), V @ b, atol=1e-10)

    def objective(x):
        r = p - V @ x
        return r @ r + lam * x @ x
    base = objective(b)
    rng = np.random.default_rng(11)
    for _ in range(100):
        assert objective(b + 1e-4 * rng.standard_normal(b.shape)) >= base


def test_large_lambda_limit():
    meas = random_measurement(60, 8, seed=12)
    spec = KernelSpec.diffuse(8, FS)
    dirs = rff.sample_directions(spec, 4, seed=0)
    V, _ = rff.build_feature_matrix(meas, spec, dirs)
    lam = 1e6 * np.linalg.norm(V.T @ V, 2)
    b = rff.fit_rff_moving(meas, spec, lam=lam, directions=dirs).coefficients
    ref = V.T @ meas.pressure / lam
    assert np.linalg.norm(b - ref) / np.linalg.norm(ref) <= 1e-3
    with pytest.raises(ValueError):
        rff.fit_rff_moving(meas, spec, lam=0.0, directions=dirs)


def test_zero_coefficients_give_zero_rir():
    spec = KernelSpec.diffuse(8, FS)
    dirs = rff.sample_directions(spec, 3)
    model = rff.RffMovingModel(np.zeros(24), dirs, rff.FeatureLayout.build(dirs, 8), spec, 1.0)
    assert not np.any(rff.reconstruct_rff_moving(model, np.ones(3)))


def test_plane_wave_coefficients_round_trip():
    spec = KernelSpec.diffuse(10, FS)
    dirs = rff.sample_directions(spec, 3)
    layout = rff.FeatureLayout.build(dirs, 10)
    b = np.random.default_rng(13).standard_normal(layout.size)
    model = rff.RffMovingModel(b, dirs, layout, spec, 1.0)
    coeffs = np.stack(model.plane_wave_coefficients(), axis=1)
    for d in range(3):
        block = b[layout.dir_index == d]
        np.testing.assert_allclose(spectral.separate(coeffs[d], 10), b[layout.dir_index == d],
                                   atol=1e-12)


def test_single_plane_wave_recovery():
    L, N, D = 16, 600, 8
    spec = KernelSpec.diffuse(L, FS)
    rng = np.random.default_rng(14)
    d0 = np.array([0.36, -0.48, 0.8])
    dirs = rff.sample_directions(spec, D, seed=5)
    for l in range(spec.num_freqs):
        table = dirs.tables[l].copy()
        table[0] = d0
        dirs = dirs.replace_bin(l, table)
    amp = rng.standard_normal(spec.num_freqs) + 1j * rng.standard_normal(spec.num_freqs)

    def field(points):
        U = np.stack([amp[l] * kernels.plane_wave_entry(spec, l, points, d0)
                      for l in range(spec.num_freqs)], axis=-1)
        U[:, 0] = U[:, 0].real
        U[:, -1] = U[:, -1].real
        return spectral.dft_inverse(U, L)
    meas = moving.MovingMeasurement(rng.uniform(-0.5, 0.5, (N, 3)),
                                    rng.standard_normal(N + L - 1), L, FS)
    meas = meas.with_pressure(moving.measure(field, meas))
    model = rff.fit_rff_moving(meas, spec, lam=1e-6, directions=dirs)
    pts = rng.uniform(-0.5, 0.5, (100, 3))
    truth = field(pts)
    err = np.sum((rff.reconstruct_rff_moving(model, pts) - truth) ** 2) / np.sum(truth ** 2)
    assert 10 * np.log10(err) <= -25


def test_frequency_decoupling():
    L = 12
    spec = KernelSpec.von_mises_fisher(L, FS, [0, 1, 0], 1.0)
    dirs = rff.sample_directions(spec, 5, seed=0, shared=False)
    layout = rff.FeatureLayout.build(dirs, L)
    b = np.random.default_rng(15).standard_normal(layout.size)
    pts = np.random.default_rng(16).uniform(-0.5, 0.5, (7, 3))
    U = rff.reconstruct_rff_moving_spectra(rff.RffMovingModel(b, dirs, layout, spec, 1.0), pts)
    l = 3
    other = dirs.replace_bin(l, rff.uniform_sphere(5, np.random.default_rng(17)))
    U2 = rff.reconstruct_rff_moving_spectra(rff.RffMovingModel(b, other, layout, spec, 1.0), pts)
    keep = np.arange(spec.num_freqs) != l
    np.testing.assert_array_equal(U[:, keep], U2[:, keep])
    assert np.max(np.abs(U[:, l] - U2[:, l])) > 1e-3


def test_seeded_models_are_identical():
    meas = random_measurement(80, 8, seed=18)
    spec = KernelSpec.von_mises_fisher(8, FS, [0, 0, 1], 2.0)
    a = rff.fit_rff_moving(meas, spec, D=4, lam=0.1, seed=9)
    b = rff.fit_rff_moving(meas, spec, D=4, lam=0.1, seed=9)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)


def test_per_bin_D():
    meas = random_measurement(80, 8, seed=19)
    spec = KernelSpec.diffuse(8, FS)
    uniform = rff.fit_rff_moving(meas, spec, D=6, lam=0.1, seed=3)
    per_bin = rff.fit_rff_moving(meas, spec, D=[6] * 5, lam=0.1, seed=3)
    np.testing.assert_array_equal(uniform.coefficients, per_bin.coefficients)
    varying = rff.fit_rff_moving(meas, spec, D=[2, 3, 4, 5, 6], lam=0.1, seed=3)
    assert varying.coefficients.shape == (2 + 2 * (3 + 4 + 5) + 6,)
    assert [varying.directions.D(l) for l in range(5)] == [2, 3, 4, 5, 6]
    h = rff.reconstruct_rff_moving(varying, meas.positions[:3])
    assert h.shape == (3, 8) and np.all(np.isfinite(h))


def test_stationary_primal_and_dual_forms_agree():
    rng = np.random.default_rng(20)
    spec = KernelSpec.diffuse(16, FS)
    xi = rff.uniform_sphere(10, rng)
    for M in (4, 30):
        meas = stationary.StationaryMeasurement(rng.uniform(-0.5, 0.5, (M, 3)),
                                                rng.standard_normal(M) + 0j)
        b = rff.fit_rff_stationary(meas, spec, 4, None, 0.05, directions=xi).coefficients
        Z = np.sqrt(1 / 10) * kernels.plane_wave_entry(spec, 4, meas.positions[:, None], xi[None])
        ref = np.linalg.solve(Z.conj().T @ Z + 0.05 * np.eye(10), Z.conj().T @ meas.at_bin(4))
        np.testing.assert_allclose(b, ref, atol=1e-10)
