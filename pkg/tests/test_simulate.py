import numpy as np
import pytest

from mflab import (
    Domain,
    SimConfig,
    VorticityField,
    energy,
    omega_limit_probe,
    run,
    step,
)
from mflab.errors import (
    UnsupportedDomainError,
    WindowError,
)
from mflab.minimize import FitDirection
from mflab.simulate import (
    EulerModel,
    low_mode_indices,
    nonshear_energy_fraction,
    random_datum,
    vortex_pair,
)


def _datum(band=6):
    return random_datum(Domain.torus(32, 32), np.random.default_rng(0), band=band)


def test_energy_and_mean_are_conserved():
    omega = _datum()
    omega = omega.replace(omega.values + 0.3)
    config = SimConfig(omega.domain, dt=0.01, t_end=1.0, fejer_n=8, record_every=10)
    trajectory = run(config, omega)
    assert trajectory.times[-1] == pytest.approx(1.0)
    assert len(trajectory.snapshots) == 11
    assert trajectory.energy_drift() <= 1e-6
    assert trajectory.mean_drift() <= 1e-14
    assert trajectory.mean[0] == pytest.approx(0.3)
    assert trajectory.halvings == 0
    assert 0.0 < trajectory.enstrophy_drift() < 1.0


def test_energy_matches_the_field_energy():
    omega = _datum()
    model = EulerModel(omega.domain, fejer_n=8)
    assert model.energy(model.transform(omega.values)) == pytest.approx(energy(omega), rel=1e-12)


def test_parallel_flows_are_steady():
    domain = Domain.torus(32, 32)
    for func in (lambda x1, x2: np.cos(x1), lambda x1, x2: np.sin(x2) + 0.5 * np.cos(2 * x2)):
        omega = VorticityField.from_function(domain, func)
        advanced = step(omega, 0.1, fejer_n=8)
        assert np.allclose(advanced.values, omega.values, atol=1e-13)


def test_time_reversal():
    omega = _datum(band=4)
    forward = run(SimConfig(omega.domain, dt=0.01, t_end=0.5, fejer_n=8), omega)
    back = run(SimConfig(omega.domain, dt=-0.01, t_end=0.5, fejer_n=8), forward.snapshots[-1])
    assert back.times[-1] == pytest.approx(-0.5)
    assert np.max(np.abs(back.snapshots[-1].values - omega.values)) <= 1e-6


def test_cfl_halving():
    omega = vortex_pair(Domain.torus(32, 32), amplitude=3.0)
    trajectory = run(SimConfig(omega.domain, dt=1.0, t_end=1.0, fejer_n=8), omega)
    assert trajectory.halvings > 0
    assert np.all(np.isfinite(trajectory.energy))


def test_empty_run_and_configuration():
    omega = _datum()
    trajectory = run(SimConfig(omega.domain, t_end=0.0, fejer_n=8), omega)
    assert trajectory.times == [0.0]
    assert trajectory.enstrophy_drift() == 0.0
    assert np.array_equal(trajectory.snapshots[0].values, omega.values)
    assert len(trajectory.low_modes[0]) == len(low_mode_indices())
    with pytest.raises(UnsupportedDomainError):
        SimConfig(Domain.channel(8, 8))
    with pytest.raises(ValueError):
        SimConfig(omega.domain, dealias='spectral')
    with pytest.raises(ValueError):
        SimConfig(omega.domain, dt=0.0)


def test_dealias_choices_keep_the_mean():
    omega = _datum()
    for dealias in ('two-thirds', 'none'):
        advanced = step(omega, 0.05, dealias=dealias)
        assert advanced.mean() == pytest.approx(omega.mean(), abs=1e-14)


def test_limit_probe():
    domain = Domain.torus(32, 32)
    omega = VorticityField.from_function(domain, lambda x1, x2: np.cos(x1))
    trajectory = run(SimConfig(domain, dt=0.05, t_end=0.2, fejer_n=8, record_every=1), omega)
    candidate = omega_limit_probe(trajectory, 3, 4)
    assert candidate.membership.member
    assert candidate.fit.direction == FitDirection.DECREASING
    assert candidate.fit.relative_residual <= 1e-10
    assert candidate.enstrophy_drop > 0.0
    with pytest.raises(WindowError):
        omega_limit_probe(trajectory, 0, 4)
    with pytest.raises(WindowError):
        omega_limit_probe(trajectory, len(trajectory.snapshots) + 1, 4)


def test_nonshear_energy_fraction():
    domain = Domain.torus(16, 16)
    assert nonshear_energy_fraction(VorticityField.from_function(domain, lambda x1, x2: np.cos(x2))) == 0.0
    assert nonshear_energy_fraction(
        VorticityField.from_function(domain, lambda x1, x2: np.cos(x1))) == pytest.approx(1.0)
    with pytest.raises(UnsupportedDomainError):
        nonshear_energy_fraction(VorticityField.zeros(Domain.channel(8, 8)))
