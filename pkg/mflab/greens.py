""" Poisson solves (Biot-Savart) and the conserved functionals.

Channel: Fourier in x1, cell-centred second-order differences in x2 with
ghost-cell Dirichlet data. The k = 0 mode takes the top-wall value M / Lx in
the momentum gauge (psi = 0 on the bottom wall), 0 in the wall gauge.

Torus: spectral inversion, the field must have zero mean.

Disk: radial only, exact for piecewise-constant annular data.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.fft
import scipy.linalg

from mflab.errors import (
    DomainMismatchError,
    FunctionalUnsupportedError,
    TorusMeanError,
)
from mflab.field import (
    ChannelGauge,
    Domain,
    DomainKind,
    VorticityField,
)

logger = logging.getLogger(__name__)

TORUS_MEAN_TOL = 1e-10


@dataclass(frozen=True)
class StreamSolution:
    domain: Domain
    psi: np.ndarray = field(repr=False)
    # (u1, u2) per cell; on the disk (u_r, u_theta)
    u: Tuple[np.ndarray, np.ndarray] = field(repr=False)
    boundary_values: Dict[str, float]
    # momentum used to fix the top-wall value (None off the momentum-gauge channel)
    gauge: Optional[float] = None

    @property
    def top_value(self) -> float:
        return self.boundary_values.get('top', 0.0)

    def speed(self) -> np.ndarray:
        return np.hypot(self.u[0], self.u[1])


def _mode_weights(nx: int) -> np.ndarray:
    """ rfft multiplicities: interior modes stand for a conjugate pair """
    weights = np.full(nx // 2 + 1, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    return weights


def _channel_kappa(domain: Domain) -> np.ndarray:
    return 2 * math.pi / domain.lx * np.arange(domain.nx // 2 + 1)


@functools.lru_cache(maxsize=16)
def _channel_factors(domain: Domain) -> Tuple[np.ndarray, ...]:
    """ Banded Cholesky factors of -(D2 - k^2) for every x1 mode """
    h = domain.dy
    ny = domain.ny
    factors = []
    for kappa in _channel_kappa(domain):
        banded = np.zeros((2, ny))
        banded[0, 1:] = -1.0 / h ** 2
        banded[1, :] = 2.0 / h ** 2 + kappa ** 2
        banded[1, 0] += 1.0 / h ** 2
        banded[1, -1] += 1.0 / h ** 2
        factors.append(scipy.linalg.cholesky_banded(banded))
    return tuple(factors)


def _spectral_dx1(values: np.ndarray, domain: Domain) -> np.ndarray:
    coefficients = scipy.fft.rfft(values, axis=1)
    multiplier = 1j * _channel_kappa(domain)
    multiplier[-1] = 0.0
    return scipy.fft.irfft(coefficients * multiplier, n=domain.nx, axis=1)


def momentum(field: VorticityField) -> float:
    """ M = -integral of x2 * omega """
    if not field.domain.is_spectral:
        raise FunctionalUnsupportedError("linear momentum needs a channel or torus domain")
    _, x2 = field.domain.centers()
    return float(-np.sum(x2 * field.values) * field.domain.cell_area)


def channel_top_value(field: VorticityField) -> float:
    domain = field.domain
    if domain.gauge == ChannelGauge.WALL:
        return 0.0
    return momentum(field) / domain.lx


def _solve_channel(field: VorticityField) -> StreamSolution:
    domain = field.domain
    h = domain.dy
    top = channel_top_value(field)

    omega_hat = scipy.fft.rfft(field.values, axis=1) / domain.nx
    psi_hat = np.empty_like(omega_hat)
    for mode, factor in enumerate(_channel_factors(domain)):
        rhs = -omega_hat[:, mode]
        if mode == 0 and top != 0.0:
            rhs = rhs.copy()
            rhs[-1] += 2.0 * top / h ** 2
        psi_hat[:, mode] = scipy.linalg.cho_solve_banded((factor, False), rhs)

    psi = scipy.fft.irfft(psi_hat * domain.nx, n=domain.nx, axis=1)
    padded = np.vstack([-psi[:1], psi, 2.0 * top - psi[-1:]])
    u1 = -(padded[2:] - padded[:-2]) / (2.0 * h)
    u2 = _spectral_dx1(psi, domain)
    gauge = momentum(field) if domain.gauge == ChannelGauge.MOMENTUM else None
    return StreamSolution(domain, psi, (u1, u2), {'bottom': 0.0, 'top': top}, gauge)


def _check_torus_mean(field: VorticityField) -> None:
    scale = max(float(np.max(np.abs(field.values))), 1e-300)
    mean = float(np.mean(field.values))
    if abs(mean) > TORUS_MEAN_TOL * scale:
        raise TorusMeanError(f"torus Poisson problem needs zero mean, got mean {mean:.3e}")


def _solve_torus(field: VorticityField) -> StreamSolution:
    domain = field.domain
    _check_torus_mean(field)
    k1, k2 = domain.wavenumbers()
    ksq = k1 ** 2 + k2 ** 2
    ksq[0, 0] = 1.0
    omega_hat = scipy.fft.fft2(field.values)
    psi_hat = -omega_hat / ksq
    psi_hat[0, 0] = 0.0

    d1 = 1j * k1
    d2 = 1j * k2
    d1[:, domain.nx // 2] = 0.0
    d2[domain.ny // 2, :] = 0.0
    psi = scipy.fft.ifft2(psi_hat).real
    u1 = scipy.fft.ifft2(-d2 * psi_hat).real
    u2 = scipy.fft.ifft2(d1 * psi_hat).real
    return StreamSolution(domain, psi, (u1, u2), {})


def _disk_profile(field: VorticityField):
    """ Per annulus: inner/outer radii, vorticity and the flux constant C' = C - omega a^2 / 2 """
    edges = field.domain.radial_edges()
    inner, outer = edges[:-1], edges[1:]
    omega = field.values[:, 0]
    ring = omega * (outer ** 2 - inner ** 2) / 2.0
    enclosed = np.concatenate([[0.0], np.cumsum(ring)[:-1]])
    flux = enclosed - omega * inner ** 2 / 2.0
    return inner, outer, omega, flux


def _log_ratio(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore'):
        ratio = np.where(inner > 0, np.log(outer / np.where(inner > 0, inner, 1.0)), 0.0)
    return ratio


def _solve_disk(field: VorticityField) -> StreamSolution:
    inner, outer, omega, flux = _disk_profile(field)
    log_ratio = _log_ratio(outer, inner)
    span = outer ** 2 - inner ** 2

    # edge values from psi(R) = 0 inwards
    rise = flux * log_ratio + omega * span / 4.0
    psi_outer = -np.concatenate([np.cumsum(rise[::-1])[::-1][1:], [0.0]])
    log_term = np.where(inner > 0, inner ** 2 * log_ratio, 0.0)
    average = psi_outer - flux * (span / 2.0 - log_term) / span - omega * span / 8.0

    _, r_center = field.domain.centers()
    r = r_center[:, 0]
    u_theta = flux / r + omega * r / 2.0
    shape = field.domain.shape
    return StreamSolution(field.domain, average.reshape(shape),
                          (np.zeros(shape), u_theta.reshape(shape)), {'outer': 0.0})


def solve_stream(field: VorticityField) -> StreamSolution:
    kind = field.domain.kind
    if kind == DomainKind.CHANNEL:
        return _solve_channel(field)
    if kind == DomainKind.TORUS:
        return _solve_torus(field)
    return _solve_disk(field)


def energy_from(field: VorticityField, solution: StreamSolution) -> float:
    return float(-0.5 * np.sum(solution.psi * field.values) * field.domain.cell_area)


def energy(field: VorticityField) -> float:
    return energy_from(field, solve_stream(field))


def energy_bilinear(a: VorticityField, b: VorticityField) -> float:
    """ -1/2 sum psi[a] * b; symmetric in (a, b) """
    if a.domain != b.domain:
        raise DomainMismatchError("energy_bilinear needs fields on one domain")
    return energy_from(b, solve_stream(a))


def kinetic_energy(solution: StreamSolution) -> float:
    """ 1/2 |u|^2 evaluated independently of the vorticity form """
    domain = solution.domain
    if domain.kind == DomainKind.TORUS:
        k1, k2 = domain.wavenumbers()
        psi_hat = scipy.fft.fft2(solution.psi) / domain.size
        return float(0.5 * np.sum((k1 ** 2 + k2 ** 2) * np.abs(psi_hat) ** 2) * domain.total_area)

    if domain.kind == DomainKind.DISK:
        # exact per annulus, rebuilt from the cell averages through the flux constants
        inner, outer, omega, flux = _disk_profile(_disk_vorticity(solution))
        log_ratio = _log_ratio(outer, inner)
        per_ring = math.pi * (flux ** 2 * log_ratio + flux * omega * (outer ** 2 - inner ** 2) / 2.0
                              + omega ** 2 * (outer ** 4 - inner ** 4) / 16.0)
        return float(np.sum(per_ring))

    h = domain.dy
    psi_hat = scipy.fft.rfft(solution.psi, axis=1) / domain.nx
    wall = np.zeros(psi_hat.shape[1], dtype=complex)
    wall[0] = solution.top_value
    faces = np.sum(np.abs(np.diff(psi_hat, axis=0)) ** 2, axis=0) / h
    faces += 2.0 * np.abs(psi_hat[0]) ** 2 / h
    faces += 2.0 * np.abs(wall - psi_hat[-1]) ** 2 / h
    faces += _channel_kappa(domain) ** 2 * h * np.sum(np.abs(psi_hat) ** 2, axis=0)
    return float(0.5 * domain.lx * np.sum(_mode_weights(domain.nx) * faces))


def _disk_vorticity(solution: StreamSolution) -> VorticityField:
    """ Recovers annular vorticity from the azimuthal velocity at cell centres """
    domain = solution.domain
    _, r_center = domain.centers()
    r = r_center[:, 0]
    edges = domain.radial_edges()
    inner, outer = edges[:-1], edges[1:]
    u_theta = solution.u[1][:, 0]
    # r u = C_j + omega (r^2 - a^2) / 2 with C_j the enclosed circulation / 2 pi
    omega = np.empty(domain.ny)
    enclosed = 0.0
    for j in range(domain.ny):
        omega[j] = (r[j] * u_theta[j] - enclosed) / ((r[j] ** 2 - inner[j] ** 2) / 2.0)
        enclosed += omega[j] * (outer[j] ** 2 - inner[j] ** 2) / 2.0
    return VorticityField.with_bound(domain, omega.reshape(domain.shape))


def poisson_residual(field: VorticityField, solution: StreamSolution) -> float:
    """ Relative discrete L2 residual of Laplacian(psi) = omega """
    domain = field.domain
    scale = max(float(np.linalg.norm(field.values)), 1e-300)
    if domain.kind == DomainKind.TORUS:
        k1, k2 = domain.wavenumbers()
        laplacian = scipy.fft.ifft2(-(k1 ** 2 + k2 ** 2) * scipy.fft.fft2(solution.psi)).real
        return float(np.linalg.norm(laplacian - field.values)) / scale
    if domain.kind == DomainKind.CHANNEL:
        h = domain.dy
        padded = np.vstack([-solution.psi[:1], solution.psi, 2.0 * solution.top_value - solution.psi[-1:]])
        d22 = (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / h ** 2
        kappa = _channel_kappa(domain)
        d11 = scipy.fft.irfft(-kappa ** 2 * scipy.fft.rfft(solution.psi, axis=1), n=domain.nx, axis=1)
        return float(np.linalg.norm(d11 + d22 - field.values)) / scale
    recovered = _disk_vorticity(solution)
    return float(np.linalg.norm(recovered.values - field.values)) / scale


def wall_values(field: VorticityField, solution: StreamSolution) -> np.ndarray:
    """ psi on the bottom and top channel walls, one row each.

    The ghost rows are recovered from the discrete equation in the boundary
    cells, so the result depends only on omega and the computed psi.
    """
    domain = field.domain
    if domain.kind != DomainKind.CHANNEL:
        raise FunctionalUnsupportedError("wall values are defined on the channel only")
    h = domain.dy
    psi = solution.psi
    kappa = _channel_kappa(domain)
    d11 = scipy.fft.irfft(-kappa ** 2 * scipy.fft.rfft(psi, axis=1), n=domain.nx, axis=1)
    ghosts = h ** 2 * (field.values - d11) + 2.0 * psi
    bottom = ghosts[0] - psi[1]
    top = ghosts[-1] - psi[-2]
    return 0.5 * np.vstack([psi[0] + bottom, psi[-1] + top])


def wall_normal_velocity(field: VorticityField, solution: StreamSolution) -> np.ndarray:
    """ u2 = d psi / d x1 along both channel walls, zero when each wall is a streamline """
    return _spectral_dx1(wall_values(field, solution), field.domain)


def green_kernel(k: float, y, z) -> np.ndarray:
    """ Per-mode Dirichlet Green's function of (d^2/dx2^2 - k^2) on [0, 1].
    Written as exponential differences so large |k| cannot overflow.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    low = np.minimum(y, z)
    high = np.maximum(y, z)
    k = abs(float(k))
    if k == 0.0:
        return -low * (1.0 - high)
    a = k * low
    b = k * (1.0 - high)
    product = np.exp(a + b - k) * (-np.expm1(-2 * a)) * (-np.expm1(-2 * b)) / (2.0 * (-math.expm1(-2 * k)))
    return -product / k


def angular_momentum(field: VorticityField) -> float:
    """ A = -1/2 integral of (R^2 - r^2) omega """
    domain = field.domain
    if domain.kind != DomainKind.DISK:
        raise FunctionalUnsupportedError("angular momentum needs the disk domain")
    edges = domain.radial_edges()
    inner, outer = edges[:-1], edges[1:]
    weight = math.pi * domain.ly ** 2 * (outer ** 2 - inner ** 2) - math.pi * (outer ** 4 - inner ** 4) / 2.0
    return float(-0.5 * np.sum(field.values[:, 0] * weight))


def circulation(field: VorticityField, component: int = 0) -> float:
    """ Circulation around boundary component `component`.
    Channel: 0 is the bottom wall, 1 the top wall, both traversed along +x1.
    """
    domain = field.domain
    if domain.kind == DomainKind.TORUS:
        raise FunctionalUnsupportedError("the torus has no boundary")
    if domain.kind == DomainKind.DISK:
        if component != 0:
            raise FunctionalUnsupportedError(f"the disk has one boundary component, got index {component}")
        return field.integral()
    if component not in (0, 1):
        raise FunctionalUnsupportedError(f"the channel has two boundary components, got index {component}")

    h = domain.dy
    _, x2 = domain.centers()
    mean_row = np.mean(field.values, axis=1)
    z = x2[:, 0]
    top = channel_top_value(field)
    if component == 0:
        slope = top - np.sum((1.0 - z) * h * mean_row)
    else:
        slope = top + np.sum(z * h * mean_row)
    return float(-domain.lx * slope)


def patch_energy_free_space(a: float, b: float, m: float) -> float:
    """ Leading-order energy of an elliptical patch with semi-axes a, b and vorticity m """
    gamma = math.pi * a * b * m
    return -(gamma ** 2) / (4 * math.pi) * (math.log((a + b) / 2.0) - 0.25)
