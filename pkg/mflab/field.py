""" Domains, cell-averaged vorticity fields, Fourier transforms and field files.

Values are stored with shape (ny, nx): axis 0 runs along x2 (or the radius on
the disk), axis 1 along x1. Cell centres sit at (i + 1/2) * h.
"""
import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.fft

from mflab.errors import (
    DimensionMismatchError,
    FieldFormatError,
    NonFiniteError,
    ResolutionError,
    UnsupportedDomainError,
)

MAGIC = 'MFLAB1'


class DomainKind(enum.Enum):
    CHANNEL = enum.auto()
    TORUS = enum.auto()
    DISK = enum.auto()


class ChannelGauge(enum.Enum):
    # top-wall mean of psi fixed by the momentum, bottom wall at 0
    MOMENTUM = enum.auto()
    # psi = 0 on both walls
    WALL = enum.auto()


_KIND_TOKENS = {
    (DomainKind.CHANNEL, ChannelGauge.MOMENTUM): 'channel',
    (DomainKind.CHANNEL, ChannelGauge.WALL): 'channel-wall',
    (DomainKind.TORUS, ChannelGauge.MOMENTUM): 'torus',
    (DomainKind.DISK, ChannelGauge.MOMENTUM): 'disk',
}
_TOKEN_KINDS = {token: key for key, token in _KIND_TOKENS.items()}


@dataclass(frozen=True)
class Domain:
    kind: DomainKind
    nx: int
    ny: int
    lx: float = 2 * math.pi
    # torus height, disk radius; the channel height is always 1
    ly: float = 1.0
    gauge: ChannelGauge = ChannelGauge.MOMENTUM

    def __post_init__(self):
        if self.kind == DomainKind.DISK:
            if self.nx != 1 or self.ny < 4:
                raise ResolutionError(f"disk needs nx = 1 and at least 4 annuli, got ({self.nx}, {self.ny})")
        else:
            for name, count in (('nx', self.nx), ('ny', self.ny)):
                if count < 4 or count % 2:
                    raise ResolutionError(f"{name} must be even and >= 4, got {count}")
        if self.lx <= 0 or self.ly <= 0:
            raise ResolutionError("domain lengths must be positive")
        if self.kind == DomainKind.CHANNEL and self.ly != 1.0:
            raise ResolutionError("channel height is fixed to 1")
        if self.kind != DomainKind.CHANNEL and self.gauge != ChannelGauge.MOMENTUM:
            raise UnsupportedDomainError("gauge choice only applies to the channel")

    @classmethod
    def channel(cls, nx: int, ny: int, lx: float = 2 * math.pi,
                gauge: ChannelGauge = ChannelGauge.MOMENTUM) -> 'Domain':
        return cls(DomainKind.CHANNEL, nx, ny, lx, 1.0, gauge)

    @classmethod
    def torus(cls, nx: int, ny: int, lx: float = 2 * math.pi, ly: float = 2 * math.pi) -> 'Domain':
        return cls(DomainKind.TORUS, nx, ny, lx, ly)

    @classmethod
    def disk(cls, nr: int, radius: float = 1.0) -> 'Domain':
        return cls(DomainKind.DISK, 1, nr, 2 * math.pi, radius)

    @property
    def token(self) -> str:
        return _KIND_TOKENS[(self.kind, self.gauge)]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.ny, self.nx

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def total_area(self) -> float:
        if self.kind == DomainKind.DISK:
            return math.pi * self.ly ** 2
        return self.lx * self.ly

    @property
    def cell_area(self) -> float:
        """ All cells have the same area, annuli included """
        return self.total_area / self.size

    def areas(self) -> np.ndarray:
        return np.full(self.shape, self.cell_area)

    @property
    def is_spectral(self) -> bool:
        return self.kind in (DomainKind.CHANNEL, DomainKind.TORUS)

    def radial_edges(self) -> np.ndarray:
        if self.kind != DomainKind.DISK:
            raise UnsupportedDomainError("radial edges exist only on the disk")
        return self.ly * np.sqrt(np.arange(self.ny + 1) / self.ny)

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """ Returns (x1, x2) cell-centre arrays of shape (ny, nx).
        On the disk x1 is 0 and x2 is the radius splitting each annulus in equal areas.
        """
        if self.kind == DomainKind.DISK:
            edges = self.radial_edges()
            r = np.sqrt(0.5 * (edges[:-1] ** 2 + edges[1:] ** 2))
            return np.zeros(self.shape), r.reshape(self.shape)
        x1 = (np.arange(self.nx) + 0.5) * self.dx
        x2 = (np.arange(self.ny) + 0.5) * self.dy
        grid1, grid2 = np.meshgrid(x1, x2)
        return grid1, grid2

    def wavenumbers(self) -> Tuple[np.ndarray, np.ndarray]:
        """ Angular wavenumbers (k1, k2) matching scipy.fft.fft2 ordering """
        if self.kind != DomainKind.TORUS:
            raise UnsupportedDomainError("2D wavenumbers exist only on the torus")
        k1 = 2 * math.pi / self.lx * scipy.fft.fftfreq(self.nx, 1.0 / self.nx)
        k2 = 2 * math.pi / self.ly * scipy.fft.fftfreq(self.ny, 1.0 / self.ny)
        grid1, grid2 = np.meshgrid(k1, k2)
        return grid1, grid2

    def wave_indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """ Integer wave indices (m1, m2) in fft2 ordering """
        m1 = np.rint(scipy.fft.fftfreq(self.nx, 1.0 / self.nx)).astype(int)
        m2 = np.rint(scipy.fft.fftfreq(self.ny, 1.0 / self.ny)).astype(int)
        grid1, grid2 = np.meshgrid(m1, m2)
        return grid1, grid2


@dataclass(frozen=True)
class VorticityField:
    domain: Domain
    values: np.ndarray
    bound: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.domain.shape:
            raise DimensionMismatchError(f"values have shape {values.shape}, domain expects {self.domain.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("field contains non-finite values")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, domain: Domain) -> 'VorticityField':
        return cls(domain, np.zeros(domain.shape))

    @classmethod
    def constant(cls, domain: Domain, value: float) -> 'VorticityField':
        return cls(domain, np.full(domain.shape, float(value)), bound=max(1.0, abs(value)))

    @classmethod
    def from_function(cls, domain: Domain, func: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      bound: Optional[float] = None) -> 'VorticityField':
        """ Samples func(x1, x2) at cell centres """
        x1, x2 = domain.centers()
        values = np.broadcast_to(np.asarray(func(x1, x2), dtype=float), domain.shape)
        return cls.with_bound(domain, values, bound)

    @classmethod
    def with_bound(cls, domain: Domain, values: np.ndarray, bound: Optional[float] = None) -> 'VorticityField':
        values = np.asarray(values, dtype=float)
        if bound is None:
            bound = max(1.0, float(np.max(np.abs(values))) if values.size else 1.0)
        return cls(domain, values, bound)

    def replace(self, values: np.ndarray) -> 'VorticityField':
        return VorticityField(self.domain, np.asarray(values, dtype=float).reshape(self.domain.shape), self.bound)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.domain.cell_area)

    def mean(self) -> float:
        return self.integral() / self.domain.total_area

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def within_bound(self) -> bool:
        return self.sup() <= self.bound

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.values)) * self.domain.cell_area)

    def l2_norm(self) -> float:
        return math.sqrt(float(np.sum(self.values ** 2)) * self.domain.cell_area)

    def positive_mass(self) -> float:
        return float(np.sum(np.maximum(self.values, 0.0)) * self.domain.cell_area)

    def negative_mass(self) -> float:
        return float(np.sum(np.maximum(-self.values, 0.0)) * self.domain.cell_area)


@dataclass(frozen=True)
class SpectralField:
    """ Mean-normalised Fourier coefficients.
    Torus: full fft2 array over (k2, k1). Channel: fft along x1 per x2 row.
    """
    domain: Domain
    coefficients: np.ndarray = field(repr=False)

    def l2_norm(self) -> float:
        # Parseval with the mean normalisation
        power = float(np.sum(np.abs(self.coefficients) ** 2))
        if self.domain.kind == DomainKind.TORUS:
            return math.sqrt(power * self.domain.total_area)
        return math.sqrt(power * self.domain.lx * self.domain.dy)

    def to_field(self, bound: Optional[float] = None) -> VorticityField:
        return from_spectral(self, bound)


def to_spectral(field: VorticityField) -> SpectralField:
    domain = field.domain
    if domain.kind == DomainKind.TORUS:
        coefficients = scipy.fft.fft2(field.values) / domain.size
    elif domain.kind == DomainKind.CHANNEL:
        coefficients = scipy.fft.fft(field.values, axis=1) / domain.nx
    else:
        raise UnsupportedDomainError("Fourier transform needs a channel or torus domain")
    return SpectralField(domain, coefficients)


def from_spectral(spectral: SpectralField, bound: Optional[float] = None) -> VorticityField:
    domain = spectral.domain
    if domain.kind == DomainKind.TORUS:
        values = scipy.fft.ifft2(spectral.coefficients * domain.size).real
    else:
        values = scipy.fft.ifft(spectral.coefficients * domain.nx, axis=1).real
    return VorticityField.with_bound(domain, values, bound)


def write_field(field: VorticityField, path) -> None:
    domain = field.domain
    header = f"{MAGIC} {domain.token} {domain.nx} {domain.ny} {domain.lx!r} {domain.ly!r}\n"
    with open(path, 'wb') as handle:
        handle.write(header.encode('ascii'))
        handle.write(np.ascontiguousarray(field.values, dtype='<f8').tobytes())


def _parse_header(line: bytes) -> Domain:
    try:
        tokens = line.decode('ascii').split()
    except UnicodeDecodeError:
        raise FieldFormatError("header is not ASCII")
    if len(tokens) != 6 or tokens[0] != MAGIC:
        raise FieldFormatError(f"malformed header: expected '{MAGIC} <kind> <nx> <ny> <Lx> <Ly-or-R>'")
    if tokens[1] not in _TOKEN_KINDS:
        raise FieldFormatError(f"malformed header: unknown domain kind {tokens[1]!r}")
    try:
        nx, ny = int(tokens[2]), int(tokens[3])
        lx, ly = float(tokens[4]), float(tokens[5])
    except ValueError:
        raise FieldFormatError("malformed header: bad number")
    if nx <= 0 or ny <= 0:
        raise FieldFormatError(f"malformed header: resolution ({nx}, {ny}) must be positive")
    if not (math.isfinite(lx) and math.isfinite(ly)) or lx <= 0 or ly <= 0:
        raise FieldFormatError("malformed header: lengths must be positive and finite")
    kind, gauge = _TOKEN_KINDS[tokens[1]]
    return Domain(kind, nx, ny, lx, ly, gauge)


def read_field(path) -> VorticityField:
    with open(path, 'rb') as handle:
        domain = _parse_header(handle.readline())
        payload = handle.read()
    expected = domain.size * 8
    if len(payload) != expected:
        raise DimensionMismatchError(f"expected {expected} bytes of values, found {len(payload)}")
    values = np.frombuffer(payload, dtype='<f8').astype(float).reshape(domain.shape)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("field file contains non-finite values")
    return VorticityField.with_bound(domain, values)


def export_csv(field: VorticityField, path) -> None:
    x1, x2 = field.domain.centers()
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(['x1', 'x2', 'value'])
        for a, b, v in zip(x1.reshape(-1), x2.reshape(-1), field.flat):
            writer.writerow([repr(float(a)), repr(float(b)), repr(float(v))])
