import math

import numpy as np
import pytest

from mflab import (
    ChannelGauge,
    Domain,
    DomainKind,
    VorticityField,
    read_field,
    write_field,
)
from mflab.errors import (
    DimensionMismatchError,
    FieldFormatError,
    NonFiniteError,
    ResolutionError,
    UnsupportedDomainError,
)
from mflab.field import (
    export_csv,
    from_spectral,
    to_spectral,
)


def test_domain_shapes_and_areas():
    channel = Domain.channel(16, 8)
    assert channel.shape == (8, 16)
    assert channel.total_area == pytest.approx(2 * math.pi)
    assert channel.cell_area == pytest.approx(2 * math.pi / 128)
    assert channel.token == 'channel'
    assert Domain.channel(16, 8, gauge=ChannelGauge.WALL).token == 'channel-wall'

    disk = Domain.disk(10, radius=2.0)
    assert disk.shape == (10, 1)
    assert disk.total_area == pytest.approx(4 * math.pi)
    assert disk.radial_edges()[-1] == pytest.approx(2.0)
    assert np.allclose(np.diff(disk.radial_edges() ** 2), 0.4)


def test_domain_rejects_bad_resolution():
    with pytest.raises(ResolutionError):
        Domain.torus(7, 8)
    with pytest.raises(ResolutionError):
        Domain.channel(2, 8)
    with pytest.raises(ResolutionError):
        Domain.disk(3)
    with pytest.raises(UnsupportedDomainError):
        Domain(DomainKind.TORUS, 8, 8, gauge=ChannelGauge.WALL)


def test_disk_centres_split_annuli_in_equal_area():
    disk = Domain.disk(8)
    edges = disk.radial_edges()
    _, r = disk.centers()
    inner = r[:, 0] ** 2 - edges[:-1] ** 2
    outer = edges[1:] ** 2 - r[:, 0] ** 2
    assert np.allclose(inner, outer)


def test_field_is_read_only_and_validated():
    domain = Domain.torus(8, 8)
    field = VorticityField.zeros(domain)
    with pytest.raises(ValueError):
        field.values[0, 0] = 1.0
    with pytest.raises(DimensionMismatchError):
        VorticityField(domain, np.zeros((8, 4)))
    values = np.zeros(domain.shape)
    values[1, 1] = np.nan
    with pytest.raises(NonFiniteError):
        VorticityField(domain, values)


def test_field_integrals():
    domain = Domain.channel(8, 4)
    values = np.zeros(domain.shape)
    values[0, :4] = 2.0
    values[3, :] = -1.0
    field = VorticityField.with_bound(domain, values)
    a = domain.cell_area
    assert field.bound == 2.0
    assert field.integral() == pytest.approx((8 - 8) * a)
    assert field.positive_mass() == pytest.approx(8 * a)
    assert field.negative_mass() == pytest.approx(8 * a)
    assert field.l1_norm() == pytest.approx(16 * a)
    assert field.l2_norm() == pytest.approx(math.sqrt(24 * a))


def test_from_function_samples_cell_centres():
    domain = Domain.torus(4, 4)
    field = VorticityField.from_function(domain, lambda x1, x2: x1 + 10 * x2)
    h = 2 * math.pi / 4
    assert field.values[0, 0] == pytest.approx(0.5 * h + 5 * h)
    assert field.values[2, 1] == pytest.approx(1.5 * h + 25 * h)


def test_spectral_parseval_and_inverse():
    rng = np.random.default_rng(3)
    for domain in (Domain.torus(8, 6), Domain.channel(8, 6)):
        field = VorticityField.with_bound(domain, rng.standard_normal(domain.shape))
        spectral = to_spectral(field)
        assert spectral.l2_norm() == pytest.approx(field.l2_norm())
        assert np.allclose(from_spectral(spectral).values, field.values, atol=1e-12)


def test_spectral_refuses_disk():
    with pytest.raises(UnsupportedDomainError):
        to_spectral(VorticityField.zeros(Domain.disk(8)))


def test_field_file_round_trip(tmp_path):
    domain = Domain.channel(8, 4, gauge=ChannelGauge.WALL)
    field = VorticityField.from_function(domain, lambda x1, x2: np.sin(x1) * x2)
    path = tmp_path / 'field.mfl'
    write_field(field, path)
    loaded = read_field(path)
    assert loaded.domain == domain
    assert np.array_equal(loaded.values, field.values)


def test_field_file_errors(tmp_path):
    bad_magic = tmp_path / 'magic.mfl'
    bad_magic.write_bytes(b"MFLAB0 torus 4 4 6.28 6.28\n" + bytes(128))
    with pytest.raises(FieldFormatError):
        read_field(bad_magic)

    unknown_kind = tmp_path / 'kind.mfl'
    unknown_kind.write_bytes(b"MFLAB1 sphere 4 4 6.28 6.28\n" + bytes(128))
    with pytest.raises(FieldFormatError):
        read_field(unknown_kind)

    short = tmp_path / 'short.mfl'
    short.write_bytes(b"MFLAB1 torus 4 4 6.28 6.28\n" + bytes(64))
    with pytest.raises(DimensionMismatchError):
        read_field(short)

    non_finite = tmp_path / 'nan.mfl'
    values = np.zeros(16)
    values[3] = np.inf
    non_finite.write_bytes(b"MFLAB1 torus 4 4 6.28 6.28\n" + values.astype('<f8').tobytes())
    with pytest.raises(NonFiniteError):
        read_field(non_finite)


def test_export_csv(tmp_path):
    field = VorticityField.constant(Domain.torus(4, 4), 0.5)
    path = tmp_path / 'field.csv'
    export_csv(field, path)
    lines = path.read_text().splitlines()
    assert lines[0] == 'x1,x2,value'
    assert len(lines) == 17
    assert lines[1].endswith(',0.5')
