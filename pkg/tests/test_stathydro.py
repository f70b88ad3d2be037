import math

import numpy as np
import pytest

from mflab import (
    ChannelGauge,
    Domain,
    MeanFieldModel,
    VorticityField,
    energy,
    in_orbit_closure,
    liouville_solve,
    monotone_fit,
    mrs_coarse_grain,
    selective_decay,
    sinh_poisson_solve,
)
from mflab.errors import (
    LevelCapError,
    ParameterRangeError,
    PreconditionError,
    UnsupportedDomainError,
)
from mflab.exclude import kolmogorov_shear
from mflab.minimize import (
    FitDirection,
    two_patch_fixture,
)
from mflab.stathydro import (
    liouville_explicit,
    liouville_match_energy,
    mrs_response,
    steady_state_residual,
)


def test_selective_decay_eigenvalue():
    omega0 = kolmogorov_shear(Domain.channel(8, 256))
    solution = selective_decay(omega0)
    h = 1.0 / 256
    assert solution.extras['lambda1'] == pytest.approx(4 / h ** 2 * math.sin(math.pi * h / 2) ** 2, rel=1e-10)
    assert solution.extras['lambda1'] == pytest.approx(math.pi ** 2, rel=1e-4)
    assert solution.residual < 1e-8
    assert solution.model == MeanFieldModel.SELECTIVE_DECAY


def test_selective_decay_keeps_the_energy():
    omega0 = kolmogorov_shear(Domain.channel(8, 64))
    solution = selective_decay(omega0)
    assert solution.omega_bar.domain.gauge == ChannelGauge.WALL
    assert energy(solution.omega_bar) == pytest.approx(energy(omega0), rel=1e-10)
    assert solution.extras['psi_norm2'] == pytest.approx(2 * energy(omega0) / solution.extras['lambda1'])
    # one x2 profile, no x1 dependence
    assert np.allclose(solution.omega_bar.values, solution.omega_bar.values[:, :1])
    with pytest.raises(UnsupportedDomainError):
        selective_decay(VorticityField.zeros(Domain.torus(8, 8)))


def test_liouville_matches_the_explicit_state():
    domain = Domain.disk(2048)
    omega0 = VorticityField.constant(domain, 1.0 / math.pi)
    solution = liouville_solve(omega0, 4 * math.pi)
    exact = liouville_explicit(domain, 4 * math.pi)
    assert solution.omega_bar.integral() == pytest.approx(1.0, rel=1e-12)
    assert np.max(np.abs(solution.omega_bar.values - exact.values)) <= 1e-5 * exact.sup()
    # positive beta spreads the vorticity towards the wall
    assert solution.omega_bar.values[-1, 0] > solution.omega_bar.values[0, 0]
    assert 'model = liouville' in solution.report()


def test_liouville_energy_match():
    domain = Domain.disk(256)
    omega0 = VorticityField.constant(domain, 1.0 / math.pi)
    target = energy(liouville_explicit(domain, 2.0))
    solution = liouville_match_energy(omega0, target)
    assert solution.beta == pytest.approx(2.0, rel=1e-3)
    assert solution.energy == pytest.approx(target, rel=1e-9)


def test_liouville_preconditions():
    omega0 = VorticityField.constant(Domain.disk(16), 1.0 / math.pi)
    with pytest.raises(ParameterRangeError):
        liouville_solve(omega0, -8 * math.pi)
    with pytest.raises(PreconditionError):
        liouville_solve(VorticityField.zeros(Domain.disk(16)), 1.0)
    with pytest.raises(UnsupportedDomainError):
        liouville_solve(VorticityField.zeros(Domain.torus(8, 8)), 1.0)
    with pytest.raises(ParameterRangeError):
        liouville_explicit(Domain.disk(16), -9 * math.pi)


def _sine_deviation(field):
    x1, _ = field.domain.centers()
    mode = np.sin(x1)
    coefficient = np.sum(field.values * mode) / np.sum(mode ** 2)
    return np.linalg.norm(field.values - coefficient * mode) / np.linalg.norm(field.values)


def test_sinh_poisson():
    domain = Domain.torus(32, 32)
    omega0 = VorticityField.from_function(domain, lambda x1, x2: np.sin(x1))
    assert np.all(sinh_poisson_solve(omega0, 0.0).omega_bar.values == 0.0)

    strong = sinh_poisson_solve(omega0, -0.2)
    weak = sinh_poisson_solve(omega0, -0.1)
    for solution in (strong, weak):
        values = solution.omega_bar.values
        assert np.allclose(values, -values[:, ::-1], atol=1e-10)
        assert solution.omega_bar.positive_mass() == pytest.approx(omega0.positive_mass(), rel=1e-10)
        assert solution.residual <= 1e-12
    assert _sine_deviation(strong.omega_bar) / _sine_deviation(weak.omega_bar) == pytest.approx(4.0, rel=0.05)
    with pytest.raises(UnsupportedDomainError):
        sinh_poisson_solve(VorticityField.zeros(Domain.channel(8, 8)), -1.0)


def _inner_core(nr=64):
    domain = Domain.disk(nr)
    values = np.zeros(domain.shape)
    values[:nr // 2] = 1.0
    return VorticityField.with_bound(domain, values)


def test_mrs_two_level_disk():
    omega0 = _inner_core()
    distribution = mrs_coarse_grain(omega0, 5.0)
    assert distribution.normalization_error() <= 1e-12
    assert distribution.marginal_error() <= 1e-10
    assert np.all(distribution.variance() >= -1e-12)
    assert mrs_response(distribution).max_gap <= 1e-6
    assert in_orbit_closure(distribution.omega_bar, omega0).member
    assert monotone_fit(distribution.omega_bar, distribution.psi_bar).direction == FitDirection.DECREASING
    # the core is smeared but stays concentrated at the centre
    values = distribution.omega_bar.values[:, 0]
    assert 0.0 < values[-1] < values[0] < 1.0
    solution = distribution.as_solution()
    assert solution.model == MeanFieldModel.MRS
    assert solution.extras['marginal_error'] <= 1e-10


def test_mrs_without_interaction_mixes_completely():
    omega0 = two_patch_fixture(Domain.torus(16, 16))
    distribution = mrs_coarse_grain(omega0, 0.0)
    assert np.allclose(distribution.omega_bar.values, 0.0, atol=1e-12)
    assert np.allclose(distribution.rho, 0.5)


def test_mrs_level_cap():
    crowded = VorticityField.with_bound(Domain.torus(16, 16), np.random.default_rng(0).standard_normal((16, 16)))
    with pytest.raises(LevelCapError):
        mrs_coarse_grain(crowded, 1.0)


def test_steady_state_residual():
    domain = Domain.torus(16, 16)
    assert steady_state_residual(VorticityField.from_function(domain, lambda x1, x2: np.cos(x1))) < 1e-12
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(domain.shape)
    assert steady_state_residual(VorticityField.with_bound(domain, noise - noise.mean())) > 1e-2
    assert steady_state_residual(VorticityField.constant(Domain.disk(8), 1.0)) == 0.0
    shear = kolmogorov_shear(Domain.channel(16, 32))
    assert steady_state_residual(shear) < 1e-12
