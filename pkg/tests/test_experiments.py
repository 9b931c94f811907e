import numpy as np
import pytest

from magchain.circle import MapModel, Observable
from magchain.experiments import (
    covariance_leg,
    diffusion_report,
    equipartition_discrepancy,
    gamma_report,
    heat_leg,
    regime_scan,
)
from magchain.heat import TrigFunction, measure_distance, xi_extract
from magchain.stochastic import GeneratorParams, gibbs_covariance, kinetic_covariance

T0 = TrigFunction(1.0, (1.0,))


def test_gamma_report_perturbed_map_agrees():
    rep = gamma_report(MapModel(2, ((0.05, 1),)), Observable(cos=(1.0,)), grid_size=1024, n_birkhoff=256)
    assert rep["agree"]
    assert rep["gamma_generator"] == pytest.approx(rep["gamma_spectral"] / 2)
    assert rep["certificate"] is not None
    assert 0 < rep["nu"] < 1


def test_gamma_report_coboundary():
    f = MapModel(2)
    b = Observable.coboundary(Observable(cos=(1.0,), sin=(0.5,)), f)
    rep = gamma_report(f, b, grid_size=256, n_birkhoff=128)
    assert abs(rep["gamma_spectral"]) < 1e-12
    assert rep["certificate"] is None


def test_diffusion_report_passes():
    assert diffusion_report(0.5)["pass"]


def test_covariance_leg_conserves_total_energy():
    profiles = covariance_leg(16, 1.0, 1.0, T0, [0.0, 0.01, 0.02])
    totals = [p.sum() for p in profiles]
    assert np.allclose(totals, 16.0, rtol=1e-10)


def test_covariance_leg_tracks_heat_equation_at_moderate_n():
    N = 32
    t = [0.02]
    D = (3 - 5**0.5) / 2
    e = covariance_leg(N, 1.0, 1.0, T0, t, dt=0.05)[0]
    h = heat_leg(T0, t, D, 1.0, 15)[0]
    assert measure_distance(xi_extract(e, 15), h) < 0.05


def test_regime_scan_small_ring():
    rep = regime_scan(32, 1.0, 1.0, T0, 0.1, 0.5, dt=0.05)
    assert rep["regimes"]["diffusive"]["closest"] == "heat"
    assert rep["regimes"]["superdiffusive"]["closest"] == "uniform"
    with pytest.raises(ValueError):
        regime_scan(32, 1.0, 1.0, T0, 0.1, 1.5)


def test_equipartition_zero_at_gibbs_and_positive_otherwise():
    N = 16
    p = GeneratorParams(N, 1.0, 1.0)
    phi = TrigFunction(1.0)
    assert equipartition_discrepancy(N, 1.0, 1.0, gibbs_covariance(p, 1.0), 0.02, phi) <= 1e-12
    S0 = kinetic_covariance(T0(np.arange(N) / N))
    assert equipartition_discrepancy(N, 1.0, 1.0, S0, 0.02, phi) > 1e-6
    assert equipartition_discrepancy(N, 1.0, 1.0, S0, 0.0, phi) == 0.0
