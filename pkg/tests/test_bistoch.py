import numpy as np
import pytest

from mflab import (
    BistochasticMatrix,
    Domain,
    VorticityField,
    birkhoff,
    energy,
    fejer,
    in_orbit_closure,
)
from mflab.bistoch import (
    fejer_matrix,
    fejer_multiplier,
    format_cycles,
    random_mixing,
    read_matrix,
    square_cells,
    swap_energy_variation,
    swap_mix,
    write_matrix,
)
from mflab.minimize import flat_shear_fixture
from mflab.errors import (
    CutoffError,
    FieldFormatError,
    NotBistochasticError,
    OverlapError,
    ParameterRangeError,
    SizeMismatchError,
)


def test_birkhoff_reconstructs_random_kernels():
    rng = np.random.default_rng(4)
    for n in (3, 6, 10):
        kernel = BistochasticMatrix.random(n, rng, terms=2 * n)
        decomposition = birkhoff(kernel)
        assert np.max(np.abs(decomposition.reconstruct() - kernel.entries)) <= 1e-10
        assert len(decomposition) <= (n - 1) ** 2 + 1
        assert np.all(decomposition.weights > 0)
        assert decomposition.weights.sum() == pytest.approx(1.0)


def test_birkhoff_on_many_random_kernels():
    rng = np.random.default_rng(21)
    for _ in range(100):
        n = int(rng.integers(2, 17))
        kernel = BistochasticMatrix.random(n, rng, terms=int(rng.integers(1, 2 * n + 1)))
        decomposition = birkhoff(kernel)
        assert np.max(np.abs(decomposition.reconstruct() - kernel.entries)) <= 1e-10
        assert len(decomposition) <= (n - 1) ** 2 + 1


def test_birkhoff_of_dense_kernel():
    kernel = BistochasticMatrix.sinkhorn(np.random.default_rng(8).uniform(0.1, 1.0, (5, 5)))
    decomposition = birkhoff(kernel)
    assert np.max(np.abs(decomposition.reconstruct() - kernel.entries)) <= 1e-10
    assert decomposition.report().startswith(f"terms = {len(decomposition)}\n")


def test_birkhoff_of_a_permutation():
    kernel = BistochasticMatrix.from_permutation([2, 0, 1, 3])
    decomposition = birkhoff(kernel)
    assert len(decomposition) == 1
    assert np.array_equal(decomposition.permutations[0], [2, 0, 1, 3])
    assert format_cycles(decomposition.permutations[0]) == '(0 2 1)'
    assert format_cycles([0, 1]) == '()'


def test_kernel_validation():
    with pytest.raises(NotBistochasticError):
        BistochasticMatrix(np.array([[0.5, 0.5], [0.6, 0.4]]))
    with pytest.raises(NotBistochasticError):
        BistochasticMatrix.from_permutation([0, 0, 1])
    with pytest.raises(SizeMismatchError):
        BistochasticMatrix.identity(3).compose(BistochasticMatrix.identity(4))
    composed = BistochasticMatrix.complete_mixing(4).compose(BistochasticMatrix.from_permutation([1, 2, 3, 0]))
    assert np.allclose(composed.entries, 0.25)


def test_fejer_is_bistochastic_and_smoothing():
    domain = Domain.torus(16, 16)
    field = VorticityField.from_function(domain, lambda x1, x2: np.sign(np.sin(x1)) * np.cos(x2))
    smoothed = fejer(field, 4)
    assert smoothed.sup() <= field.sup() + 1e-12
    assert smoothed.integral() == pytest.approx(field.integral(), abs=1e-12)
    matrix = fejer_matrix(domain, 4)
    assert np.all(matrix.entries >= 0.0)
    assert np.allclose(matrix.apply(field).values, smoothed.values, atol=1e-12)
    assert energy(smoothed) <= energy(field)


def test_fejer_multiplier_limits():
    domain = Domain.torus(16, 16)
    multiplier = fejer_multiplier(domain, 4)
    assert multiplier[0, 0] == 1.0
    assert multiplier[0, 4] == 0.0
    assert multiplier[0, 2] == pytest.approx(0.5)
    with pytest.raises(CutoffError):
        fejer_multiplier(domain, 8)
    with pytest.raises(CutoffError):
        fejer_multiplier(domain, 0)


def test_swap_mix():
    domain = Domain.channel(8, 8)
    field = VorticityField.from_function(domain, lambda x1, x2: np.where(x2 < 0.5, 1.0, 0.0))
    q1 = square_cells(domain, 0, 0, 2)
    q2 = square_cells(domain, 6, 0, 2)
    mixed = swap_mix(q1, q2, 0.5, field)
    assert np.allclose(mixed.flat[q1], 0.5)
    assert np.allclose(mixed.flat[q2], 0.5)
    assert mixed.integral() == pytest.approx(field.integral())
    assert np.array_equal(swap_mix(q1, q2, 0.0, field).values, field.values)

    h = 1e-6
    slope = (energy(swap_mix(q1, q2, h, field)) - energy(field)) / h
    assert swap_energy_variation(field, q1, q2) == pytest.approx(slope, rel=1e-4)

    with pytest.raises(OverlapError):
        swap_mix(q1, q1, 0.5, field)
    with pytest.raises(ParameterRangeError):
        swap_mix(q1, q2, 1.5, field)
    with pytest.raises(SizeMismatchError):
        square_cells(domain, 7, 0, 2)


def test_random_mixing_stays_in_closure():
    domain = Domain.torus(8, 8)
    rng = np.random.default_rng(1)
    field = VorticityField.from_function(domain, lambda x1, x2: np.sin(x1) + 0.5 * np.cos(x2))
    mixed = random_mixing(field, rng, strength=0.7)
    assert in_orbit_closure(mixed, field).member


def test_matrix_file(tmp_path):
    kernel = BistochasticMatrix.random(5, np.random.default_rng(0))
    path = tmp_path / 'kernel.mfk'
    write_matrix(kernel, path)
    assert np.array_equal(read_matrix(path).entries, kernel.entries)
    bad = tmp_path / 'bad.mfk'
    bad.write_bytes(b"MFLABK0 5\n" + bytes(200))
    with pytest.raises(FieldFormatError):
        read_matrix(bad)


def test_square_swaps_on_the_flat_shear_lose_energy():
    field = flat_shear_fixture(16, 16)
    domain = field.domain
    rng = np.random.default_rng(13)
    for trial in range(100):
        size = int(rng.integers(1, 3))
        # rows 0..3 and 12..15 carry omega = 0, rows 4..11 omega = -1
        outer = int(rng.integers(0, 5 - size)) if rng.random() < 0.5 else int(rng.integers(12, 17 - size))
        inner = int(rng.integers(4, 13 - size))
        q0 = square_cells(domain, outer, int(rng.integers(0, 16)), size)
        q1 = square_cells(domain, inner, int(rng.integers(0, 16)), size)
        variation = swap_energy_variation(field, q0, q1)
        # psi is larger on the band than outside it, so every such swap lowers the energy
        assert variation < 0.0
        if trial < 5:
            h = 1e-6
            slope = (energy(swap_mix(q0, q1, h, field)) - energy(field)) / h
            assert variation == pytest.approx(slope, rel=1e-4)
