import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magchain.spectral import (
    ModeData,
    dft,
    dft_direct,
    diffusion_all,
    diffusion_closed_form,
    effective_derivative_sum,
    green_function,
    green_function_quad,
    harmonic_flow_arrays,
    harmonic_increment_matrix,
    harmonic_propagator_matrix,
    heat_kernel_integral,
    idft,
    mode_eigenvalues,
    periodic_green_function,
)

omegas = st.floats(0.1, 20.0)


@given(st.integers(2, 64), st.integers(0, 10_000))
def test_dft_parseval_and_inverse(N, seed):
    v = np.random.default_rng(seed).normal(size=N)
    vh = dft(v)
    assert np.allclose(np.sum(np.abs(vh) ** 2), np.sum(v**2))
    assert np.allclose(idft(vh).real, v)
    assert np.allclose(vh, dft_direct(v))


@given(st.integers(3, 40), omegas)
def test_eigenvalue_prosthaphaeresis(N, w):
    j = np.arange(N)
    mu = mode_eigenvalues(N, w)
    assert np.allclose(mu, w**2 + 4 * np.sin(np.pi * j / N) ** 2)
    assert np.allclose(mu, w**2 + 2 - 2 * np.cos(2 * np.pi * j / N))


@pytest.mark.parametrize("N", [1, 2, 7, 8])
def test_mode_indices_cover_residues(N):
    m = ModeData(N, 1.0)
    assert sorted(m.indices % N) == list(range(N))
    assert m.indices.max() - m.indices.min() == N - 1
    assert np.allclose(m.mu, mode_eigenvalues(N, 1.0))


@given(omegas)
def test_green_function_solves_lattice_equation(w):
    x = np.arange(-30, 31)
    G = green_function(w, x)
    resid = (w**2 + 2) * G[1:-1] - G[:-2] - G[2:]
    expect = (x[1:-1] == 0).astype(float)
    assert np.allclose(resid, expect, atol=1e-12)


@pytest.mark.parametrize("w", [0.5, 1.0, 3.0])
def test_green_function_matches_quadrature(w):
    x = np.arange(0, 6)
    assert np.allclose(green_function(w, x), green_function_quad(w, x), atol=1e-12)


def test_periodic_green_function_inverts_operator():
    N, w = 17, 0.7
    G = periodic_green_function(N, w)
    K = (w**2 + 2) * np.eye(N) - np.roll(np.eye(N), 1, 0) - np.roll(np.eye(N), -1, 0)
    assert np.allclose(K @ G, np.eye(N), atol=1e-12)


@given(omegas)
@settings(max_examples=30)
def test_diffusion_three_ways_agree(w):
    vals = diffusion_all(w)
    assert vals["max_discrepancy"] <= 1e-10


def test_diffusion_golden_ratio_value():
    assert diffusion_closed_form(1.0) == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-14)


def test_diffusion_limits():
    assert diffusion_closed_form(1e-4) == pytest.approx(1.0, abs=1e-3)
    assert diffusion_closed_form(100.0) * 100.0**2 == pytest.approx(1.0, rel=1e-3)


@pytest.mark.parametrize("w", [0.3, 1.0, 4.0])
def test_heat_kernel_integral_equals_pi_d(w):
    assert heat_kernel_integral(w) == pytest.approx(math.pi * diffusion_closed_form(w), rel=1e-12)


def test_effective_derivative_error_scales_like_k2_over_n():
    D = diffusion_closed_form(1.0)
    for k in (1, 2, 3):
        errs = [abs(effective_derivative_sum(N, k, 1.0, 1.0) - 2j * np.pi * k * D) for N in (256, 512)]
        assert errs[1] == pytest.approx(errs[0] / 2, rel=0.02)
        # leading constant 2 pi^2 D k^2 / N
        assert errs[1] == pytest.approx(2 * np.pi**2 * D * k**2 / 512, rel=0.02)


@given(st.integers(2, 24), omegas, st.floats(1e-3, 2.0), st.integers(0, 1000))
@settings(max_examples=40)
def test_harmonic_flow_dense_and_fft_agree(N, w, delta, seed):
    rng = np.random.default_rng(seed)
    q, p = rng.normal(size=(2, N, 2))
    q1, p1 = harmonic_flow_arrays(q, p, w, delta)
    P = harmonic_propagator_matrix(N, w, delta)
    for c in range(2):
        z = np.concatenate([q[:, c], p[:, c]]) @ P
        assert np.allclose(z[:N], q1[:, c], atol=1e-11)
        assert np.allclose(z[N:], p1[:, c], atol=1e-11)
    dP = harmonic_increment_matrix(N, w, delta)
    assert np.allclose(dP + np.eye(2 * N), P, atol=1e-14)


def test_harmonic_flow_matches_ode_oracle():
    pytest.importorskip("scipy")
    from scipy.linalg import expm

    N, w, delta = 6, 0.9, 0.37
    K = (w**2 + 2) * np.eye(N) - np.roll(np.eye(N), 1, 0) - np.roll(np.eye(N), -1, 0)
    A = np.block([[np.zeros((N, N)), np.eye(N)], [-K, np.zeros((N, N))]])
    rng = np.random.default_rng(0)
    q, p = rng.normal(size=(2, N))
    z = expm(A * delta) @ np.concatenate([q, p])
    q1, p1 = harmonic_flow_arrays(q[:, None], p[:, None], w, delta)
    assert np.allclose(q1[:, 0], z[:N], atol=1e-12)
    assert np.allclose(p1[:, 0], z[N:], atol=1e-12)


def test_invalid_omega0_rejected():
    with pytest.raises(ValueError):
        diffusion_closed_form(0.0)
