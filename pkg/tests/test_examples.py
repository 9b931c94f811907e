"""Worked input/output examples for each public operation."""

import math

import numpy as np
import pytest

from magchain.chain import (
    ChainParams,
    ChainState,
    currents,
    harmonic_flow,
    init_state,
    rotation_flow,
    run,
    site_energies,
    step_interval,
    total_energy,
)
from magchain.circle import (
    DensityGrid,
    MapModel,
    Observable,
    autocorrelation,
    birkhoff_variance,
    center_observable,
    decay_fit,
    green_kubo_gamma,
    inverse_branches,
    invariant_density,
    periodic_orbit_certificate,
    transfer_apply,
)
from magchain.experiments import covariance_leg, gamma_report
from magchain.heat import (
    TorusMeasure,
    TrigFunction,
    convergence_rate_psi,
    heat_evolve,
    measure_distance,
    weak_test,
    xi_extract,
)
from magchain.spectral import (
    dft,
    diffusion_closed_form,
    effective_derivative_sum,
    green_function,
    heat_kernel_integral,
)
from magchain.stochastic import (
    CovMatrix,
    GeneratorParams,
    energy_profile_from_cov,
    generator_drift,
    gibbs_covariance,
    phi_tilde,
    sde_trajectory,
)

DOUBLING = MapModel(2)
PERTURBED = MapModel(2, ((0.05, 1),))
COS = Observable(cos=(1.0,))
D1 = (3 - math.sqrt(5)) / 2


# ---------------------------------------------------------------- circle maps
def test_map_values():
    assert DOUBLING(0.7) == pytest.approx(0.4)
    assert PERTURBED(0.25) == pytest.approx(0.55)
    # the lift is continuous across the wrap point
    x = np.linspace(0, 1, 10001)
    assert np.max(np.abs(np.diff(PERTURBED.lift(x)))) < 1e-3


@pytest.mark.parametrize("theta,expected", [(0.0, [0.0, 0.5]), (0.5, [0.25, 0.75])])
def test_doubling_preimages(theta, expected):
    y, _ = inverse_branches(DOUBLING, theta)
    assert np.allclose(y, expected)


def test_perturbed_preimages_of_point_one():
    y, _ = inverse_branches(PERTURBED, 0.1)
    assert y.size == 2
    assert np.allclose(PERTURBED(y), 0.1, atol=1e-12)


def test_transfer_examples():
    one = DensityGrid(np.ones(256))
    assert np.allclose(transfer_apply(DOUBLING, one).values, 1.0)
    out = transfer_apply(PERTURBED, one)
    assert np.ptp(out.values) > 1e-3
    assert out.integral() == pytest.approx(1.0, abs=1e-14)
    assert np.all(invariant_density(MapModel(3), 128).values == 1.0)


def test_centering_examples():
    rho = DensityGrid(np.ones(128))
    assert center_observable(COS, rho).const == pytest.approx(0.0)
    assert center_observable(Observable(const=1.0), rho).is_zero
    shifted = center_observable(Observable(const=0.2, cos=(1.0,)), rho)
    assert shifted.const == pytest.approx(0.0, abs=1e-15) and shifted.cos == (1.0,)


def test_correlation_and_gamma_examples():
    rho = invariant_density(DOUBLING, 256)
    b = center_observable(COS, rho)
    assert autocorrelation(DOUBLING, b, rho, 0) == pytest.approx(0.5)
    assert autocorrelation(DOUBLING, b, rho, 1) == pytest.approx(0.0, abs=1e-15)
    assert green_kubo_gamma(DOUBLING, b, rho, K=20)[0] == pytest.approx(0.5)
    zero = Observable(centered=True)
    assert green_kubo_gamma(DOUBLING, zero, rho)[0] == 0.0
    assert birkhoff_variance(DOUBLING, b, rho, 1) == pytest.approx(0.5)
    assert birkhoff_variance(DOUBLING, b, rho, 64) == pytest.approx(0.5, abs=1e-8)
    assert periodic_orbit_certificate(DOUBLING, Observable(), 6) is None


def test_birkhoff_rate_constant_on_perturbed_map():
    rho = invariant_density(PERTURBED)
    b = center_observable(COS, rho)
    gk, _ = green_kubo_gamma(PERTURBED, b, rho)
    c = [n * abs(birkhoff_variance(PERTURBED, b, rho, n) - gk) for n in (128, 256, 512)]
    # n |B(n) - gamma| settles to the constant -2 sum k C(k)
    assert c[2] == pytest.approx(c[1], rel=1e-6)


def test_decay_fallback_for_linear_maps():
    rho = invariant_density(MapModel(3), 128)
    assert decay_fit(MapModel(3), Observable(cos=(1.0,), centered=True), rho).nu == pytest.approx(1 / 3)


def test_gamma_report_zero_observable():
    rep = gamma_report(DOUBLING, Observable(), grid_size=128, n_birkhoff=16)
    assert rep["gamma_spectral"] == 0.0 and rep["certificate"] is None


# ---------------------------------------------------------------- chain
def test_zero_profile_gives_zero_state():
    s = init_state(ChainParams(8), 0.0, 0)
    assert total_energy(s, 1.0) == 0.0


def test_uniform_profile_kinetic_energy():
    s = init_state(ChainParams(32), 1.0, 5)
    assert np.allclose(np.sum(s.p**2, axis=-1), 2.0)
    assert np.allclose(site_energies(s.q, s.p, 1.0), 1.0)


def test_init_ensemble_mean_within_three_sigma():
    # per-site energies are deterministic for q = 0, so check the p-component moments instead
    params = ChainParams(64)
    T0 = TrigFunction(1.0, (1.0,))
    n = 2000
    px2 = np.array([init_state(params, T0, 1, i).p[:, 0] ** 2 for i in range(n)])
    target = T0(np.arange(64) / 64)  # E[p_x,0^2] = T0 for a uniform angle
    se = px2.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(px2.mean(axis=0) - target) <= 3.5 * se + 1e-12)


def test_single_oscillator_period():
    w = 1.7
    s = ChainState(np.array([[0.3, -0.2]]), np.array([[0.1, 0.4]]), np.zeros(1))
    out = harmonic_flow(s, ChainParams(1, w), 2 * math.pi / w)
    assert np.allclose(out.q, s.q, atol=1e-12) and np.allclose(out.p, s.p, atol=1e-12)
    assert harmonic_flow(s, ChainParams(1, w), 0.0).q is not s.q


def test_harmonic_flow_energy_n8():
    rng = np.random.default_rng(0)
    s = ChainState(rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), np.zeros(8))
    out = harmonic_flow(s, ChainParams(8), 0.3)
    assert total_energy(out, 1.0) == pytest.approx(total_energy(s, 1.0), rel=1e-12)


def test_rotation_is_isometry_and_zero_field_is_identity():
    rng = np.random.default_rng(1)
    s = ChainState(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), rng.random(5))
    out = rotation_flow(s, ChainParams(5, eps=0.01), COS, 0.37)
    assert np.allclose(np.linalg.norm(out.p, axis=-1), np.linalg.norm(s.p, axis=-1))
    same = rotation_flow(s, ChainParams(5), Observable(), 0.37)
    assert np.array_equal(same.p, s.p)


def test_zero_field_step_is_harmonic_flow():
    params = ChainParams(6, 1.0, 0.05, 4)
    s = init_state(params, 1.0, 2, fmap=PERTURBED)
    s.q = np.random.default_rng(2).normal(size=(6, 2))
    a = step_interval(s, params, PERTURBED, Observable())
    b = harmonic_flow(s, params, 0.05)
    assert np.allclose(a.q, b.q, atol=1e-13) and np.allclose(a.p, b.p, atol=1e-13)


def test_richardson_order_two():
    params_ref = ChainParams(4, 1.0, 1e-2, 64)
    s0 = init_state(params_ref, 1.0, 3, fmap=PERTURBED)
    s0.q = np.random.default_rng(3).normal(size=(4, 2))
    b = Observable(cos=(1.0,), sin=(0.3,), centered=True)

    def evolve(M):
        p = ChainParams(4, 1.0, 1e-2, M)
        s = s0
        for _ in range(5):
            s = step_interval(s, p, PERTURBED, b)
        return np.concatenate([s.q.ravel(), s.p.ravel()])

    ref = evolve(64)
    errs = [np.abs(evolve(M) - ref).max() for M in (1, 2, 4, 8)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.15)


def test_single_trajectory_zero_field_conserves_total():
    params = ChainParams(8, 1.0, 1e-2)
    res = run(params, DOUBLING, Observable(centered=True), 1.0, [0.0, 0.05, 0.1], 1, 0)
    assert np.allclose(res.mean.sum(axis=1), 8.0, rtol=1e-12)


def test_uniform_mean_profile_flat_without_noise():
    # translation invariance keeps the averaged uniform profile flat
    prof = covariance_leg(8, 1.0, 0.0, TrigFunction(1.0), [0.0, 0.05, 0.1])
    assert np.allclose(prof, 1.0, rtol=1e-10)


def test_run_same_seed_identical():
    params = ChainParams(6, 1.0, 1e-2)
    a = run(params, DOUBLING, Observable(cos=(1.0,), centered=True), 1.0, [0.1], 5, 3)
    b = run(params, DOUBLING, Observable(cos=(1.0,), centered=True), 1.0, [0.1], 5, 3)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.stderr, b.stderr)


def test_energy_and_current_examples():
    q = np.zeros((3, 2))
    p = np.tile([1.0, 0.0], (3, 1))
    assert np.allclose(site_energies(q, p, 1.0), 0.5)
    assert np.all(currents(np.random.default_rng(0).normal(size=(3, 2)), np.zeros((3, 2))) == 0)


# ---------------------------------------------------------------- stochastic reference
def test_zero_and_identity_covariances():
    p = GeneratorParams(2, 1.0, 1.0)
    assert generator_drift(CovMatrix.zeros(2), p).max_abs() == 0.0
    d = generator_drift(CovMatrix(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2)), p)
    assert np.allclose(d.q, 0) and np.allclose(d.qp, np.eye(2)) and np.allclose(d.p, 0)
    assert gibbs_covariance(p, 0.0).max_abs() == 0.0
    assert np.all(energy_profile_from_cov(CovMatrix.zeros(4), 1.0) == 0)


def test_phi_tilde_diagonal_zero():
    assert phi_tilde(2.0, 2.0, 0.3) == 0.0
    a, b = 1.4, 3.9
    assert phi_tilde(a, b, 0.5) == pytest.approx(-phi_tilde(b, a, 0.5))


def test_sde_without_noise_is_harmonic_flow():
    rng = np.random.default_rng(4)
    q0, p0 = rng.normal(size=(2, 6, 2))
    out = sde_trajectory(GeneratorParams(6, 1.0, 0.0), q0, p0, 1.0, 0.1, seed=0)
    ref = harmonic_flow(ChainState(q0, p0, np.zeros(6)), ChainParams(6), 1.0)
    assert np.allclose(out["q"], ref.q, atol=1e-12) and np.allclose(out["p"], ref.p, atol=1e-12)


# ---------------------------------------------------------------- spectral tools
def test_green_function_examples():
    assert green_function(1.0, 0) == pytest.approx(1 / math.sqrt(5), abs=1e-12)
    x = np.arange(0, 8)
    G = green_function(0.6, x)
    assert np.allclose(G, green_function(0.6, -x))
    assert np.allclose(G[1:] / G[:-1], G[1] / G[0])


def test_diffusion_examples():
    w = np.linspace(1, 100, 200)
    D = np.array([diffusion_closed_form(v) for v in w])
    assert np.all(np.diff(D) < 0) and np.all((D > 0) & (D < 1))
    assert D[-1] * w[-1] ** 2 == pytest.approx(1.0, rel=1e-3)
    with pytest.raises(ValueError):
        diffusion_closed_form(0.0)


def test_effective_derivative_k0_vanishes():
    assert abs(effective_derivative_sum(64, 0, 1.0, 1.0)) < 1e-13


def test_heat_kernel_integral_examples():
    assert heat_kernel_integral(1.0) == pytest.approx(math.pi * D1, rel=1e-12)
    t = 2 * np.pi * np.arange(4096) / 4096
    f = np.sin(t) ** 2 / (3 - 2 * np.cos(t))
    assert f[1:2048].sum() == pytest.approx(f[2049:].sum(), rel=1e-12)
    assert heat_kernel_integral(200.0) * 200.0**2 / math.pi == pytest.approx(1.0, rel=1e-3)


def test_dft_constant_vector():
    v = dft(np.ones(16))
    assert v[0] == pytest.approx(4.0) and np.allclose(v[1:], 0)


def test_fourier_decay_of_c2_function():
    # |sin(pi u)|^3 is C^2 with a C^3 kink, so its coefficients fall like |j|^-4
    N = 1024
    u = np.arange(N) / N
    vh = np.abs(dft(np.abs(np.sin(np.pi * u)) ** 3))
    j = np.arange(8, N // 8)
    slope = np.polyfit(np.log(j), np.log(vh[j]), 1)[0]
    assert slope == pytest.approx(-4.0, abs=0.1)


# ---------------------------------------------------------------- heat reference
def test_heat_examples():
    m = TorusMeasure.from_trig(TrigFunction(1.0, (1.0,)), 3)
    out = heat_evolve(m, 1.0, D1, 1.0)
    assert out.mass == m.mass
    assert out.coefficient(1).real == pytest.approx(0.5 * math.exp(-4 * math.pi**2 * (3 - math.sqrt(5)) / 4))
    assert np.array_equal(heat_evolve(m, 0.0, D1, 1.0).fourier, m.fourier)
    series = lambda tau: heat_evolve(m, tau, D1, 1.0)  # noqa: E731
    assert weak_test(series, TrigFunction(1.0), 0.3, D1, 1.0) == 0.0
    assert weak_test(series, TrigFunction(0.0, (1.0,)), 0.3, D1, 1.0) <= 1e-8


def test_xi_examples():
    xi = xi_extract(np.full(12, 3.0), 5)
    assert xi.coefficient(0) == pytest.approx(3.0) and np.allclose(xi.fourier[xi.kmax + 1 :], 0)
    N = 40
    e = 1 + np.cos(2 * np.pi * np.arange(N) / N)
    xi = xi_extract(e, 10)
    assert xi.coefficient(1) == pytest.approx(0.5) and xi.coefficient(0) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    e = rng.random(N)
    phi = TrigFunction(0.3, tuple(rng.normal(size=3)), tuple(rng.normal(size=3)))
    assert xi_extract(e, 19).pair(phi) == pytest.approx(np.mean(phi(np.arange(N) / N) * e), abs=1e-10)


def test_distance_examples():
    m = TorusMeasure.from_trig(TrigFunction(1.0, (0.4,)), 4)
    assert measure_distance(m, m) == 0.0
    delta = 0.3
    pert = TorusMeasure(m.fourier + delta * (np.arange(-4, 5) == 1) + delta * (np.arange(-4, 5) == -1))
    assert measure_distance(m, pert) == pytest.approx(delta)


def test_psi_examples():
    N = 32
    T0 = TrigFunction(2.0, (1.0,))
    m = TorusMeasure.from_trig(T0, 10)
    u = np.arange(N) / N
    assert convergence_rate_psi(T0(u), m, 10)[1] == pytest.approx(0.0, abs=1e-14)
    delta = 0.1
    # add delta to the k=+-1 coefficients, i.e. 2 delta cos(2 pi u)
    _, psi = convergence_rate_psi(T0(u) + 2 * delta * np.cos(2 * np.pi * u), m, 10)
    assert psi == pytest.approx(2 * delta / 2.0)


def test_psi_decreases_with_n_for_sampled_profile():
    K = 24
    k = np.arange(-K, K + 1)
    m = TorusMeasure(2.0 ** (-np.abs(k)) + 0j)
    psis = []
    for N in (16, 32, 64):
        s = init_state(ChainParams(N), m, 0)
        psis.append(convergence_rate_psi(site_energies(s.q, s.p, 1.0), m, 7)[1])
    assert psis[0] > psis[1] > psis[2]
