import itertools

import numpy as np
import pytest
import scipy.optimize

from mflab import (
    Domain,
    MinimizeOptions,
    NegEntropyBoltzmann,
    Quadratic,
    Tabulated,
    VorticityField,
    casimir,
    in_orbit_closure,
    minimize_casimir,
    momentum,
    monotone_fit,
    solve_stream,
)
from mflab.errors import (
    DegenerateFitError,
    FunctionDomainError,
    LevelCapError,
    ResolutionError,
)
from mflab.minimize import (
    FitDirection,
    centered_energy,
    clamp_residual,
    flat_shear_fixture,
    kkt_report,
    linear_oracle,
    minimality_probe,
    minimize_fixed,
    plateau_levels,
    project_permutohedron,
    two_patch_fixture,
)
from mflab.rearrange import equimeasurable


def _three_levels():
    domain = Domain.channel(8, 8)
    values = np.zeros(domain.shape)
    values[:2] = 3.0
    values[2:5] = 1.0
    return VorticityField.with_bound(domain, values)


def _three_level_patches():
    domain = Domain.channel(4, 8)
    values = np.random.default_rng(2).integers(0, 3, domain.shape).astype(float)
    return VorticityField.with_bound(domain, values)


def _random_channel():
    domain = Domain.channel(4, 4)
    return VorticityField.with_bound(domain, np.random.default_rng(5).uniform(-1.0, 1.0, domain.shape))


def _subset_oracle(omega0, beta):
    """ Minimiser of I_f + beta E for quadratic f by SLSQP, with the closure written as one
    inequality per subset of cells; returns the minimiser and the objective
    """
    domain = omega0.domain
    n = domain.size
    area = domain.cell_area
    unit = np.eye(n)
    green = np.column_stack([solve_stream(VorticityField(domain, unit[i].reshape(domain.shape))).psi.reshape(-1)
                             for i in range(n)])
    green = 0.5 * (green + green.T)

    def objective(v):
        return area * (0.5 * np.dot(v, v) - 0.5 * beta * np.dot(v, green @ v))

    def gradient(v):
        return area * (v - beta * green @ v)

    levels = -np.sort(-omega0.flat)
    subsets = np.array([np.isin(np.arange(n), subset).astype(float)
                        for size in range(1, n) for subset in itertools.combinations(range(n), size)])
    bounds = np.array([levels[:int(row.sum())].sum() for row in subsets])
    constraints = [
        {'type': 'eq', 'fun': lambda v: np.sum(v) - levels.sum(), 'jac': lambda v: np.ones(n)},
        {'type': 'ineq', 'fun': lambda v: bounds - subsets @ v, 'jac': lambda v: -subsets},
    ]
    found = scipy.optimize.minimize(objective, np.full(n, levels.mean()), jac=gradient, method='SLSQP',
                                    constraints=constraints, options={'ftol': 1e-14, 'maxiter': 1000})
    return found.x, objective


def _disk_levels():
    return VorticityField.with_bound(Domain.disk(8), np.array([2.0, 2.0, 2.0, 1.0, 1.0, 0.0, 0.0, 0.0]).reshape(8, 1))


def test_permutohedron_helpers():
    levels = np.array([3.0, 1.0, 0.0])
    assert np.array_equal(linear_oracle(np.array([0.5, -1.0, 2.0]), levels), [1.0, 3.0, 0.0])
    assert np.allclose(project_permutohedron(np.zeros(3), levels), 4.0 / 3.0)
    inside = np.array([2.0, 1.0, 1.0])
    assert np.allclose(project_permutohedron(inside, levels), inside)
    assert np.allclose(project_permutohedron(np.array([0.0, 5.0, 1.0]), levels), [0.0, 3.0, 1.0])


def test_fixed_multipliers_without_energy_give_the_mean():
    omega0 = _three_levels()
    result = minimize_fixed(omega0, Quadratic(), beta=0.0)
    assert np.allclose(result.omega_star.values, omega0.mean(), atol=1e-9)
    assert result.kkt is not None
    assert result.kkt.stationarity <= 1e-8
    assert result.kkt.min_lambda >= 0.0
    assert result.kkt.gamma == pytest.approx(-omega0.mean())
    assert in_orbit_closure(result.omega_star, omega0).member


def test_constant_datum_is_its_own_minimal_flow():
    omega0 = VorticityField.constant(Domain.channel(8, 8), 0.5)
    result = minimize_casimir(omega0, Quadratic())
    assert np.array_equal(result.omega_star.values, omega0.values)
    assert result.beta == 0.0


def test_integrand_must_be_strictly_convex():
    omega0 = _three_levels()
    with pytest.raises(FunctionDomainError):
        minimize_casimir(omega0, NegEntropyBoltzmann())
    with pytest.raises(FunctionDomainError):
        minimize_casimir(omega0, Tabulated([0.0, 1.0], [0.0, 1.0]))


def test_two_patch_minimal_flow():
    omega0 = two_patch_fixture(Domain.torus(32, 32))
    options = MinimizeOptions(restarts=1, max_iter=300)
    result = minimize_casimir(omega0, Quadratic(), options=options)
    energy0 = centered_energy(omega0)

    assert abs(result.residuals['energy_gap']) <= 1e-8 * energy0
    assert in_orbit_closure(result.omega_star, omega0).member
    assert result.residuals['isotonic'] <= 1e-4
    assert monotone_fit(result.omega_star, result.psi_star).direction == FitDirection.DECREASING
    _, residual = clamp_residual(result)
    assert residual <= 1e-6

    probe = minimality_probe(result, omega0, Quadratic(), np.random.default_rng(0), trials=20)
    assert probe.violations == 0


def test_flat_shear_is_already_minimal():
    omega0 = flat_shear_fixture(8, 12)
    result = minimize_casimir(omega0, Quadratic(), options=MinimizeOptions(restarts=2))
    assert equimeasurable(result.omega_star, omega0, tol=1e-8)
    assert abs(result.f_value - casimir(omega0, Quadratic())) <= 1e-8
    probe = minimality_probe(result, omega0, Quadratic(), np.random.default_rng(3), trials=20)
    assert probe.violations == 0


def test_monotone_fit_and_plateaus():
    domain = Domain.channel(8, 8)
    _, x2 = domain.centers()
    omega = VorticityField.with_bound(domain, np.where(x2 < 0.5, 1.0, -1.0))
    report = monotone_fit(omega, x2)
    assert report.direction == FitDirection.DECREASING
    assert report.isotonic_residual == pytest.approx(0.0, abs=1e-12)
    assert plateau_levels(omega) == [-1.0, 1.0]
    with pytest.raises(DegenerateFitError):
        monotone_fit(omega, np.ones(domain.size))


def test_kkt_caps_the_number_of_levels():
    omega0 = _three_levels()
    result = minimize_fixed(omega0, Quadratic(), beta=0.0)
    crowded = VorticityField.with_bound(
        Domain.torus(16, 16), np.random.default_rng(0).standard_normal((16, 16)))
    with pytest.raises(LevelCapError):
        kkt_report(result, crowded)


def test_flat_shear_needs_quarter_resolution():
    with pytest.raises(ResolutionError):
        flat_shear_fixture(8, 10)


def test_energy_shell_is_closed_exactly():
    options = MinimizeOptions(restarts=1, max_iter=200, energy_tol=0.0, beta_rtol=1e-7)
    for omega0 in (_three_level_patches(), _random_channel()):
        result = minimize_casimir(omega0, Quadratic(), options=options)
        assert abs(result.residuals['energy_gap']) <= 1e-10 * centered_energy(omega0)
        assert result.interpolated
        assert result.beta != 0.0
        assert in_orbit_closure(result.omega_star, omega0).member


def test_beta_search_stops_when_the_bracket_collapses():
    options = MinimizeOptions(restarts=0, max_iter=200, energy_tol=0.0, beta_rtol=0.0, max_bisections=100000)
    omega0 = _three_level_patches()
    result = minimize_casimir(omega0, Quadratic(), options=options)
    assert abs(result.residuals['energy_gap']) <= 1e-10 * centered_energy(omega0)
    assert result.interpolated


def test_momentum_shell_is_closed_exactly():
    options = MinimizeOptions(restarts=1, max_iter=200, energy_tol=0.0, max_momentum_steps=3)
    for omega0 in (_three_level_patches(), _random_channel()):
        result = minimize_casimir(omega0, Quadratic(), fix_momentum=True, options=options)
        scale = max(abs(momentum(omega0)), omega0.l1_norm())
        assert abs(result.residuals['energy_gap']) <= 1e-10 * centered_energy(omega0)
        assert abs(result.residuals['momentum_gap']) <= 1e-10 * scale
        assert result.interpolated
        assert in_orbit_closure(result.omega_star, omega0).member


def test_fixed_multipliers_match_a_subset_oracle():
    omega0 = _disk_levels()
    options = MinimizeOptions(gap_tol=1e-13, max_iter=5000)
    for beta in (3.0, -4.0):
        result = minimize_fixed(omega0, Quadratic(), beta=beta, options=options)
        expected, objective = _subset_oracle(omega0, beta)
        found = result.omega_star.flat
        assert objective(found) == pytest.approx(objective(expected), abs=1e-8)
        assert np.allclose(found, expected, atol=1e-3)
        assert in_orbit_closure(result.omega_star, omega0).member


def test_kkt_multipliers_with_an_energy_multiplier():
    omega0 = _disk_levels()
    beta = 3.0
    result = minimize_fixed(omega0, Quadratic(), beta=beta, options=MinimizeOptions(gap_tol=1e-13, max_iter=5000))
    report = result.kkt
    v = result.omega_star.flat - beta * result.psi_star.psi.reshape(-1)
    # the minimiser is interior, so v is constant and every level multiplier vanishes
    assert np.ptp(v) <= 1e-6
    assert report.stationarity <= 1e-6
    assert report.gamma == pytest.approx(-np.mean(v), abs=1e-6)
    assert report.min_lambda >= 0.0
    assert np.all(report.lambdas <= 1e-6)
    assert report.bracket_violation <= 1e-8
    assert not report.rank_deficient
