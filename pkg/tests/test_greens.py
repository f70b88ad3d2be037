import dataclasses
import math

import numpy as np
import pytest

from mflab import (
    ChannelGauge,
    Domain,
    VorticityField,
    energy,
    momentum,
    solve_stream,
)
from mflab.errors import (
    DomainMismatchError,
    FunctionalUnsupportedError,
    TorusMeanError,
)
from mflab.greens import (
    angular_momentum,
    circulation,
    energy_bilinear,
    green_kernel,
    kinetic_energy,
    patch_energy_free_space,
    poisson_residual,
    wall_normal_velocity,
    wall_values,
)


def _random_field(domain, seed=0, zero_mean=False):
    values = np.random.default_rng(seed).uniform(-1.0, 1.0, domain.shape)
    if zero_mean:
        values -= values.mean()
    return VorticityField.with_bound(domain, values)


def test_zero_field_has_zero_stream():
    for domain in (Domain.channel(8, 8), Domain.torus(8, 8), Domain.disk(8)):
        solution = solve_stream(VorticityField.zeros(domain))
        assert np.all(solution.psi == 0.0)
        assert energy(VorticityField.zeros(domain)) == 0.0


def test_uniform_disk_energy():
    field = VorticityField.constant(Domain.disk(16), 1.0)
    assert energy(field) == pytest.approx(math.pi / 16, rel=1e-12)
    assert kinetic_energy(solve_stream(field)) == pytest.approx(math.pi / 16, rel=1e-12)
    assert patch_energy_free_space(1.0, 1.0, 1.0) == pytest.approx(math.pi / 16)


def test_energy_matches_kinetic_energy():
    domains = [
        Domain.channel(16, 12),
        Domain.channel(16, 12, gauge=ChannelGauge.WALL),
        Domain.torus(16, 12),
        Domain.disk(20),
    ]
    for seed, domain in enumerate(domains):
        field = _random_field(domain, seed, zero_mean=domain.kind.name == 'TORUS')
        solution = solve_stream(field)
        assert kinetic_energy(solution) == pytest.approx(energy(field), rel=1e-9)


def test_channel_energy_splits_into_dirichlet_and_gauge_parts():
    momentum_domain = Domain.channel(16, 16)
    wall_domain = Domain.channel(16, 16, gauge=ChannelGauge.WALL)
    values = _random_field(momentum_domain, 5).values
    field = VorticityField.with_bound(momentum_domain, values)
    wall = VorticityField.with_bound(wall_domain, values)
    m = momentum(field)
    assert energy(field) == pytest.approx(energy(wall) + m ** 2 / (2 * momentum_domain.lx), rel=1e-10)
    assert solve_stream(field).top_value == pytest.approx(m / momentum_domain.lx)
    assert solve_stream(wall).top_value == 0.0


def test_energy_bilinear_is_symmetric():
    for domain in (Domain.channel(12, 8), Domain.torus(12, 8)):
        zero_mean = domain.kind.name == 'TORUS'
        a = _random_field(domain, 1, zero_mean)
        b = _random_field(domain, 2, zero_mean)
        assert energy_bilinear(a, b) == pytest.approx(energy_bilinear(b, a), rel=1e-10)
        assert energy_bilinear(a, a) == pytest.approx(energy(a), rel=1e-12)
    with pytest.raises(DomainMismatchError):
        energy_bilinear(VorticityField.zeros(Domain.channel(8, 8)), VorticityField.zeros(Domain.channel(8, 4)))


def test_torus_needs_zero_mean():
    with pytest.raises(TorusMeanError):
        solve_stream(VorticityField.constant(Domain.torus(8, 8), 1.0))


def test_poisson_residual_is_small():
    for domain in (Domain.channel(16, 16), Domain.torus(16, 16), Domain.disk(16)):
        field = _random_field(domain, 7, zero_mean=domain.kind.name == 'TORUS')
        assert poisson_residual(field, solve_stream(field)) < 1e-10


def test_channel_momentum_of_constant_field():
    domain = Domain.channel(8, 8)
    assert momentum(VorticityField.constant(domain, 1.0)) == pytest.approx(-math.pi)
    with pytest.raises(FunctionalUnsupportedError):
        momentum(VorticityField.zeros(Domain.disk(8)))


def test_disk_angular_momentum_and_circulation():
    field = VorticityField.constant(Domain.disk(16), 1.0)
    assert angular_momentum(field) == pytest.approx(-math.pi / 4)
    assert circulation(field) == pytest.approx(math.pi)
    with pytest.raises(FunctionalUnsupportedError):
        circulation(field, 1)
    with pytest.raises(FunctionalUnsupportedError):
        circulation(VorticityField.zeros(Domain.torus(8, 8)))


def test_green_kernel():
    assert green_kernel(0.0, 0.25, 0.5) == pytest.approx(-0.25 * 0.5)
    expected = -math.sinh(0.3) * math.sinh(2.0 * 0.4) / (2.0 * math.sinh(2.0))
    assert green_kernel(2.0, 0.15, 0.6) == pytest.approx(expected)
    assert green_kernel(2.0, 0.6, 0.15) == pytest.approx(expected)
    far = green_kernel(1e4, 0.5, 0.5)
    assert np.isfinite(far)
    assert far == pytest.approx(-1.0 / 2e4, rel=1e-6)


def test_channel_walls_are_streamlines():
    for seed, gauge in enumerate((ChannelGauge.MOMENTUM, ChannelGauge.WALL)):
        domain = Domain.channel(16, 12, gauge=gauge)
        field = _random_field(domain, 20 + seed)
        solution = solve_stream(field)
        walls = wall_values(field, solution)
        assert walls.shape == (2, 16)
        assert np.max(np.abs(walls[0])) < 1e-12
        assert np.max(np.abs(walls[1] - solution.top_value)) < 1e-12
        assert np.max(np.abs(wall_normal_velocity(field, solution))) < 1e-10


def test_wall_velocity_sees_a_tilted_wall():
    domain = Domain.channel(16, 12)
    field = _random_field(domain, 3)
    solution = solve_stream(field)
    x1, _ = domain.centers()
    bent = dataclasses.replace(solution, psi=solution.psi + 1e-3 * np.cos(x1))
    assert np.max(np.abs(wall_normal_velocity(field, bent))) > 5e-4
    with pytest.raises(FunctionalUnsupportedError):
        wall_values(VorticityField.zeros(Domain.torus(8, 8)), solve_stream(VorticityField.zeros(Domain.torus(8, 8))))
