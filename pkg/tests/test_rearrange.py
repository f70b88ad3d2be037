import numpy as np
import pytest
import scipy.optimize

from mflab import (
    BistochasticMatrix,
    Domain,
    Entropy,
    Exp,
    PowerP,
    Quadratic,
    VorticityField,
    casimir,
    in_orbit_closure,
    profile,
)
from mflab.errors import (
    DomainMismatchError,
    FunctionDomainError,
)
from mflab.rearrange import (
    decreasing_rearrangement,
    equimeasurable,
    majorization_margins,
)


def _cells(values):
    values = np.asarray(values, dtype=float)
    return VorticityField.with_bound(Domain.disk(values.size), values.reshape(-1, 1))


def _six_cells(values):
    return _cells(np.asarray(values, dtype=float).reshape(6))


def _bistochastic_image_exists(omega, omega0):
    """ Feasibility of P omega0 = omega over n x n bistochastic P """
    n = omega0.size
    rows = []
    rhs = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1.0
        rows.append(row.reshape(-1))
        rhs.append(1.0)
        column = np.zeros((n, n))
        column[:, i] = 1.0
        rows.append(column.reshape(-1))
        rhs.append(1.0)
        image = np.zeros((n, n))
        image[i, :] = omega0
        rows.append(image.reshape(-1))
        rhs.append(omega[i])
    result = scipy.optimize.linprog(np.zeros(n * n), A_eq=np.array(rows), b_eq=np.array(rhs),
                                    bounds=(0, None), method='highs')
    return result.status == 0


def test_membership_agrees_with_bistochastic_images():
    rng = np.random.default_rng(11)
    data = ([1.0, 0.8, 0.3, 0.0, -0.2, -0.9], [1.0, 0.8, 0.5, 0.3, 0.0, -0.2, -0.6, -0.9])
    for values in data:
        omega0 = _cells(values)
        n = omega0.domain.size
        checked = members = 0
        for _ in range(500):
            strength = rng.random()
            mixed = (1.0 - strength) * omega0.flat + strength * BistochasticMatrix.random(n, rng).apply(omega0).flat
            noise = rng.normal(0.0, 0.1, n)
            candidate = _cells(mixed + noise - noise.mean())
            membership = in_orbit_closure(candidate, omega0)
            # every member has a zero margin at the top level, so only near-miss outsiders are ambiguous
            if -1e-5 < membership.worst_constraint[1] < -membership.tol:
                continue
            assert membership.member == _bistochastic_image_exists(candidate.flat, omega0.flat)
            checked += 1
            members += membership.member
        assert checked > 450
        assert 0 < members < checked


def test_membership_basic_cases():
    omega0 = _six_cells([1.0, 1.0, 0.0, 0.0, -1.0, -1.0])
    assert in_orbit_closure(omega0, omega0).member
    assert in_orbit_closure(_six_cells(np.zeros(6)), omega0).member
    assert in_orbit_closure(_six_cells([1.0, -1.0, 0.0, 0.0, 1.0, -1.0]), omega0).member
    stretched = in_orbit_closure(_six_cells([1.5, 0.5, 0.0, 0.0, -1.0, -1.0]), omega0)
    assert not stretched.member
    assert stretched.worst_constraint[1] < 0.0
    shifted = in_orbit_closure(_six_cells(np.full(6, 0.1)), omega0)
    assert not shifted.member
    assert shifted.mean_gap > 0.0
    with pytest.raises(DomainMismatchError):
        in_orbit_closure(VorticityField.zeros(Domain.disk(8)), omega0)


def test_mixing_lowers_convex_casimirs():
    rng = np.random.default_rng(2)
    domain = Domain.torus(8, 8)
    omega = VorticityField.with_bound(domain, rng.uniform(0.0, 1.0, domain.shape))
    mixed = BistochasticMatrix.random(domain.size, rng, terms=8).apply(omega)
    for f in (Quadratic(), PowerP(4.0), Entropy()):
        assert casimir(mixed, f) <= casimir(omega, f) + 1e-12
    assert in_orbit_closure(mixed, omega).member
    assert np.all(majorization_margins(mixed, omega) >= -1e-12)


def test_jensen_for_random_kernels():
    rng = np.random.default_rng(19)
    families = (Quadratic(), PowerP(3.0), Entropy(), Exp())
    for _ in range(1000):
        n = int(rng.integers(4, 13))
        omega = _cells(rng.uniform(0.0, 1.0, n))
        mixed = BistochasticMatrix.random(n, rng, terms=int(rng.integers(1, n + 1))).apply(omega)
        for f in families:
            before = casimir(omega, f)
            assert casimir(mixed, f) <= before + 1e-12 * max(1.0, abs(before))


def test_orbit_membership_is_transitive():
    rng = np.random.default_rng(17)
    domain = Domain.torus(4, 4)
    for _ in range(200):
        omega0 = VorticityField.with_bound(domain, rng.uniform(-1.0, 1.0, domain.shape))
        omega1 = BistochasticMatrix.random(domain.size, rng, terms=3).apply(omega0)
        omega2 = BistochasticMatrix.random(domain.size, rng, terms=3).apply(omega1)
        assert in_orbit_closure(omega1, omega0).member
        assert in_orbit_closure(omega2, omega1).member
        assert in_orbit_closure(omega2, omega0).member
        # going back needs an unmixed chain
        assert not in_orbit_closure(omega0, omega2).member or equimeasurable(omega0, omega2, tol=1e-9)


def test_casimir_checks_the_domain():
    field = _six_cells([-1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    with pytest.raises(FunctionDomainError):
        casimir(field, Entropy())
    assert casimir(field, Quadratic()) == pytest.approx(np.pi / 6)


def test_profile_and_rearrangement():
    field = _six_cells([0.5, 2.0, 0.5, -1.0, 2.0, 0.0])
    prof = profile(field)
    area = field.domain.cell_area
    assert np.array_equal(prof.levels, [2.0, 0.5, 0.0, -1.0])
    assert np.allclose(prof.level_areas, np.array([2, 2, 1, 1]) * area)
    assert prof.distribution(0.5) == pytest.approx(2 * area)
    assert prof.quantile(0.0) == 2.0
    assert prof.quantile(2.5 * area) == 0.5
    assert prof.positive_part(0.0) == pytest.approx(5.0 * area)

    rearranged = decreasing_rearrangement(field)
    assert np.array_equal(rearranged.flat, [2.0, 2.0, 0.5, 0.5, 0.0, -1.0])
    assert equimeasurable(rearranged, field)
    assert not equimeasurable(_six_cells(np.zeros(6)), field)
