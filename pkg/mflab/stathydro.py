""" Mean-field equilibrium predictors: selective decay, Liouville, sinh-Poisson and the
per-level Gibbs distribution of Miller, Robert and Sommeria (MRS).

Sign convention: psi solves Laplace(psi) = omega, so a positive vortex sits in a
psi minimum and nontrivial vortex states have omega decreasing in psi.
"""
import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.optimize
import scipy.special

from mflab.errors import (
    DivergenceError,
    LevelCapError,
    NonConvergenceError,
    NonFiniteError,
    ParameterRangeError,
    PreconditionError,
    SinkhornError,
    UnsupportedDomainError,
)
from mflab.field import (
    ChannelGauge,
    Domain,
    DomainKind,
    VorticityField,
)
from mflab.greens import (
    energy,
    solve_stream,
)

logger = logging.getLogger(__name__)

MAX_MRS_LEVELS = 64
SINKHORN_TOL = 1e-13
# beta * mass must stay this far above -8 pi
LIOUVILLE_GUARD = 0.1


class MeanFieldModel(enum.Enum):
    SELECTIVE_DECAY = enum.auto()
    LIOUVILLE = enum.auto()
    SINH_POISSON = enum.auto()
    MRS = enum.auto()


@dataclass(frozen=True)
class MeanFieldSolution:
    model: MeanFieldModel
    psi_bar: np.ndarray = field(repr=False)
    omega_bar: VorticityField = field(repr=False)
    beta: float
    # partition normalisation; per-cell Z(x) for MRS
    z_norm: object
    residual: float
    energy: float
    iterations: int = 0
    extras: Dict[str, float] = field(default_factory=dict)

    def report(self) -> str:
        z_norm = self.z_norm if np.isscalar(self.z_norm) else float(np.mean(self.z_norm))
        lines = [f"model = {self.model.name.lower()}",
                 f"beta = {self.beta!r}",
                 f"z_norm = {z_norm!r}",
                 f"residual = {self.residual!r}",
                 f"energy = {self.energy!r}",
                 f"iterations = {self.iterations}"]
        lines.extend(f"{key} = {value!r}" for key, value in self.extras.items())
        return "\n".join(lines) + "\n"


def _l2(values: np.ndarray, area: float) -> float:
    return math.sqrt(float(np.sum(np.square(values))) * area)


# selective decay

def _dirichlet_operator(n: int, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """ Diagonals of -d^2/dx2^2 on cell centres with psi = 0 on both walls """
    diagonal = np.full(n, 2.0 / h ** 2)
    diagonal[0] = diagonal[-1] = 3.0 / h ** 2
    return diagonal, np.full(n - 1, -1.0 / h ** 2)


def selective_decay(omega0: VorticityField) -> MeanFieldSolution:
    """ First Dirichlet eigenfunction of the Laplacian carrying the energy of omega0.
    E = lambda/2 ||psi||^2 for an eigenfunction, so ||psi||^2 = 2 E0 / lambda.
    The result lives on the wall-gauge copy of the channel.
    """
    domain = omega0.domain
    if domain.kind != DomainKind.CHANNEL:
        raise UnsupportedDomainError("selective decay is set up on the channel")
    wall = dataclasses.replace(domain, gauge=ChannelGauge.WALL)
    diagonal, off = _dirichlet_operator(domain.ny, domain.dy)
    try:
        eigenvalues, vectors = scipy.linalg.eigh_tridiagonal(diagonal, off, select='i', select_range=(0, 0))
    except scipy.linalg.LinAlgError as error:
        raise NonConvergenceError(f"tridiagonal eigensolver failed: {error}")
    lam = float(eigenvalues[0])
    profile = vectors[:, 0]
    applied = diagonal * profile
    applied[:-1] += off * profile[1:]
    applied[1:] += off * profile[:-1]
    rayleigh = float(np.linalg.norm(applied - lam * profile) / (lam * np.linalg.norm(profile)))

    e0 = energy(omega0)
    # omega = -lambda psi carries the sign of the datum's circulation
    if (np.sum(profile) > 0) == (omega0.integral() > 0):
        profile = -profile
    psi = np.repeat(profile[:, None], domain.nx, axis=1)
    norm2 = float(np.sum(psi ** 2)) * domain.cell_area
    psi = psi * (math.sqrt(2.0 * e0 / (lam * norm2)) if e0 > 0 else 0.0)
    omega_bar = VorticityField.with_bound(wall, -lam * psi)
    logger.info("selective decay: lambda1 = %.10g, E0 = %.6g", lam, e0)
    return MeanFieldSolution(MeanFieldModel.SELECTIVE_DECAY, psi, omega_bar, 0.0, math.nan, rayleigh, e0,
                             extras={'lambda1': lam, 'psi_norm2': float(np.sum(psi ** 2)) * domain.cell_area})


# Liouville on the disk

def _check_liouville(omega0: VorticityField, beta: float) -> float:
    if omega0.domain.kind != DomainKind.DISK:
        raise UnsupportedDomainError("the Liouville solver works on the radial disk")
    mass = omega0.integral()
    if abs(mass) <= 1e-14 * max(1.0, omega0.l1_norm()):
        raise PreconditionError("Liouville mean field needs a nonzero circulation")
    if beta * mass <= -8 * math.pi + LIOUVILLE_GUARD:
        raise ParameterRangeError(
            f"beta * circulation = {beta * mass:.6g} is at or below -8 pi + {LIOUVILLE_GUARD}")
    return mass


def _boltzmann(psi: np.ndarray, beta: float, mass: float, area: float) -> Tuple[np.ndarray, float]:
    """ mass * exp(beta psi) / integral of exp(beta psi), and log of the integral """
    exponent = beta * psi
    top = float(np.max(exponent))
    weights = np.exp(exponent - top)
    total = float(np.sum(weights)) * area
    return mass * weights / total, top + math.log(total)


def liouville_solve(omega0: VorticityField, beta: float, relaxation: float = 0.5,
                    tol: float = 1e-12, max_iter: int = 10000) -> MeanFieldSolution:
    """ Laplace(psi) = exp(beta psi) / Z with the circulation of omega0. Damped Picard
    iteration, with a Newton-Krylov fallback once Picard stalls or diverges.
    """
    mass = _check_liouville(omega0, beta)
    domain = omega0.domain
    area = domain.cell_area

    def update(omega: np.ndarray) -> np.ndarray:
        psi = solve_stream(VorticityField(domain, omega)).psi
        return _boltzmann(psi, beta, mass, area)[0]

    omega = np.full(domain.shape, mass / domain.total_area)
    residual, iterations = math.inf, 0
    for iterations in range(1, max_iter + 1):
        target = update(omega)
        previous, residual = residual, _l2(target - omega, area) / _l2(target, area)
        logger.debug("liouville picard %d: residual %.3e", iterations, residual)
        if residual <= tol:
            omega = target
            break
        if not math.isfinite(residual) or residual > 10 * previous:
            break
        omega = omega + relaxation * (target - omega)

    if residual > tol:
        logger.warning("Picard stalled at residual %.3e for beta = %g, switching to Newton-Krylov", residual, beta)
        try:
            omega = scipy.optimize.newton_krylov(lambda w: update(w) - w, omega,
                                                 f_tol=tol * _l2(omega, area), maxiter=200)
        except (scipy.optimize.NoConvergence, NonFiniteError, FloatingPointError):
            raise DivergenceError(f"Liouville iteration diverged at beta = {beta}", residual)
        target = update(omega)
        residual = _l2(target - omega, area) / _l2(target, area)
        omega = target

    solution = solve_stream(VorticityField(domain, omega))
    omega_bar = VorticityField.with_bound(domain, omega)
    log_integral = _boltzmann(solution.psi, beta, mass, area)[1]
    z_norm = math.exp(log_integral) / mass
    logger.info("liouville beta = %g converged in %d iterations, residual %.3e", beta, iterations, residual)
    return MeanFieldSolution(MeanFieldModel.LIOUVILLE, solution.psi, omega_bar, beta, z_norm, residual,
                             energy(omega_bar), iterations, {'log_z': log_integral - math.log(abs(mass))})


def liouville_match_energy(omega0: VorticityField, target: Optional[float] = None,
                           **kwargs) -> MeanFieldSolution:
    """ Finds beta whose Liouville state carries the target energy (default: that of omega0).
    Energy decreases in beta; the bracket grows by doubling upwards or towards -8 pi.
    """
    mass = _check_liouville(omega0, 0.0)
    if target is None:
        target = energy(omega0)
    scale = 1.0 / abs(mass)

    def gap(beta):
        return liouville_solve(omega0, beta, **kwargs).energy - target

    if gap(0.0) > 0:
        lo, step = 0.0, 1.0
        while gap(step * scale) > 0:
            lo, step = step * scale, 2 * step
            if step > 2.0 ** 40:
                raise ParameterRangeError(f"no beta reaches energy {target}")
        hi = step * scale
    else:
        hi, k = 0.0, 1
        while True:
            beta = -(8 * math.pi - LIOUVILLE_GUARD) * (1 - 2.0 ** -k) * scale
            if gap(beta) > 0:
                lo = beta
                break
            hi, k = beta, k + 1
            if k > 40:
                raise ParameterRangeError(f"energy {target} needs beta below -8 pi")
    beta = scipy.optimize.brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12)
    logger.info("liouville energy match: beta = %.10g", beta)
    return liouville_solve(omega0, beta, **kwargs)


def liouville_explicit(domain: Domain, beta: float, mass: float = 1.0) -> VorticityField:
    """ Exact cell averages of mass (1 - A) / (pi R^2) (1 - A r^2 / R^2)^-2, A = beta mass / (8 pi + beta mass) """
    if domain.kind != DomainKind.DISK:
        raise UnsupportedDomainError("the explicit Liouville state lives on the disk")
    if beta * mass <= -8 * math.pi:
        raise ParameterRangeError("the explicit state needs beta * mass > -8 pi")
    a_coef = beta * mass / (8 * math.pi + beta * mass)
    edges = domain.radial_edges() / domain.ly
    inner, outer = edges[:-1] ** 2, edges[1:] ** 2
    if a_coef == 0.0:
        averages = np.full(domain.ny, mass / domain.total_area)
    else:
        mass_in = (1 - a_coef) / a_coef * (1 / (1 - a_coef * outer) - 1 / (1 - a_coef * inner))
        averages = mass * mass_in / (math.pi * domain.ly ** 2 * (outer - inner))
    return VorticityField.with_bound(domain, averages.reshape(domain.shape))


# sinh-Poisson on the torus

def _scaled_sinh(x: np.ndarray) -> Tuple[np.ndarray, float]:
    """ sinh(x) * exp(-m) with m = max|x| """
    top = float(np.max(np.abs(x)))
    return 0.5 * (np.exp(x - top) - np.exp(-x - top)), top


def _sinh_shift(psi: np.ndarray, beta: float) -> float:
    """ c with sum sinh(beta (psi - c)) = 0 """
    lo, hi = float(np.min(psi)), float(np.max(psi))
    if hi - lo <= 1e-300:
        return lo

    def total(c):
        return float(np.sum(_scaled_sinh(beta * (psi - c))[0]))

    return scipy.optimize.brentq(total, lo, hi, xtol=1e-15 * max(1.0, hi - lo), rtol=1e-15)


def sinh_poisson_solve(omega0: VorticityField, beta: float, relaxation: float = 0.5,
                       tol: float = 1e-12, max_iter: int = 10000) -> MeanFieldSolution:
    """ Laplace(psi) = sinh(beta (psi - c)) / Z on the torus. The shift c keeps the mean zero
    and Z gives the solution the positive mass of omega0, since the usual normalisation by
    the circulation is empty on the torus.
    """
    domain = omega0.domain
    if domain.kind != DomainKind.TORUS:
        raise UnsupportedDomainError("the sinh-Poisson solver works on the torus")
    area = domain.cell_area
    positive = omega0.positive_mass()
    if beta == 0.0 or positive == 0.0:
        zero = VorticityField.zeros(domain)
        return MeanFieldSolution(MeanFieldModel.SINH_POISSON, np.zeros(domain.shape), zero, beta, 0.0, 0.0, 0.0)

    def update(psi: np.ndarray) -> Tuple[np.ndarray, float]:
        shift = _sinh_shift(psi, beta)
        scaled, top = _scaled_sinh(beta * (psi - shift))
        positive_part = float(np.sum(np.maximum(scaled, 0.0))) * area
        if not positive_part > 0.0:
            raise DivergenceError(f"sinh-Poisson iterate collapsed to zero at beta = {beta}", residual)
        omega = positive * scaled / positive_part
        omega -= np.mean(omega)
        return omega, math.log(positive_part / positive) + top

    omega = omega0.values - omega0.mean()
    residual = math.inf
    iterations, log_z = 0, 0.0
    for iterations in range(1, max_iter + 1):
        psi = solve_stream(VorticityField(domain, omega)).psi
        target, log_z = update(psi)
        residual = _l2(target - omega, area) / max(_l2(target, area), 1e-300)
        logger.debug("sinh-poisson %d: residual %.3e", iterations, residual)
        if not math.isfinite(residual) or residual > 1e8:
            raise DivergenceError(f"sinh-Poisson iteration diverged at beta = {beta}", residual)
        if residual <= tol:
            omega = target
            break
        omega = omega + relaxation * (target - omega)
    else:
        raise DivergenceError(f"sinh-Poisson iteration did not settle in {max_iter} steps", residual)

    omega_bar = VorticityField.with_bound(domain, omega)
    psi = solve_stream(omega_bar).psi
    logger.info("sinh-poisson beta = %g converged in %d iterations", beta, iterations)
    return MeanFieldSolution(MeanFieldModel.SINH_POISSON, psi, omega_bar, beta, math.exp(log_z), residual,
                             energy(omega_bar), iterations, {'log_z': log_z})


# MRS

@dataclass(frozen=True)
class MrsDistribution:
    levels: np.ndarray
    level_areas: np.ndarray
    # log g(sigma_i), fixed by the marginal constraint
    log_g: np.ndarray
    # rho[cell, level]
    rho: np.ndarray = field(repr=False)
    psi_bar: np.ndarray = field(repr=False)
    omega_bar: VorticityField = field(repr=False)
    beta: float = 0.0
    iterations: int = 0
    residual: float = 0.0

    @property
    def z(self) -> np.ndarray:
        logits = -self.beta * np.outer(self.psi_bar.reshape(-1), self.levels) + self.log_g
        return np.exp(scipy.special.logsumexp(logits, axis=1))

    def normalization_error(self) -> float:
        return float(np.max(np.abs(np.sum(self.rho, axis=1) - 1.0)))

    def marginal_error(self) -> float:
        marginal = np.sum(self.rho, axis=0) * self.omega_bar.domain.cell_area
        return float(np.max(np.abs(marginal - self.level_areas)))

    def variance(self) -> np.ndarray:
        second = self.rho @ self.levels ** 2
        return second - self.omega_bar.flat ** 2

    def coarse_function(self, psi: np.ndarray) -> np.ndarray:
        """ F(psi) = sum sigma g exp(-beta sigma psi) / sum g exp(-beta sigma psi) at fixed g """
        logits = -self.beta * np.outer(np.ravel(psi), self.levels) + self.log_g
        weights = np.exp(logits - scipy.special.logsumexp(logits, axis=1)[:, None])
        return weights @ self.levels

    def as_solution(self) -> MeanFieldSolution:
        return MeanFieldSolution(MeanFieldModel.MRS, self.psi_bar, self.omega_bar, self.beta, self.z,
                                 self.residual, energy(self.omega_bar), self.iterations,
                                 {'normalization_error': self.normalization_error(),
                                  'marginal_error': self.marginal_error()})


def _level_table(omega0: VorticityField) -> Tuple[np.ndarray, np.ndarray]:
    levels, counts = np.unique(omega0.flat, return_counts=True)
    if levels.size > MAX_MRS_LEVELS:
        raise LevelCapError(f"MRS coarse graining handles at most {MAX_MRS_LEVELS} levels, datum has {levels.size}")
    return levels, counts * omega0.domain.cell_area


def _sinkhorn_levels(psi: np.ndarray, levels: np.ndarray, level_areas: np.ndarray, cell_area: float,
                     beta: float, log_g: np.ndarray, tol: float = SINKHORN_TOL,
                     max_iter: int = 20000) -> Tuple[np.ndarray, np.ndarray]:
    """ Scales g so that rho = g exp(-beta sigma psi) / Z has the datum's level areas """
    logits = -beta * np.outer(psi, levels)
    total = float(np.sum(level_areas))
    log_areas = np.log(level_areas)
    error = math.inf
    for _ in range(max_iter):
        log_rho = logits + log_g
        log_rho -= scipy.special.logsumexp(log_rho, axis=1)[:, None]
        log_marginal = math.log(cell_area) + scipy.special.logsumexp(log_rho, axis=0)
        error = float(np.max(np.abs(np.exp(log_marginal) - level_areas))) / total
        if error <= tol:
            return log_g, np.exp(log_rho)
        log_g = log_g + log_areas - log_marginal
    raise SinkhornError(f"level scaling stalled at marginal error {error:.3e}")


def mrs_coarse_grain(omega0: VorticityField, beta: float, relaxation: float = 0.5,
                     tol: float = 1e-12, max_iter: int = 10000) -> MrsDistribution:
    """ Self-consistent MRS state: rho from psi_bar by Gibbs weights and level scaling,
    omega_bar the local mean of rho, psi_bar solved from omega_bar, damped until psi_bar settles.
    """
    domain = omega0.domain
    levels, level_areas = _level_table(omega0)
    area = domain.cell_area
    torus = domain.kind == DomainKind.TORUS

    psi = solve_stream(omega0).psi.reshape(-1)
    log_g = np.log(level_areas / domain.total_area)
    change, iterations = math.inf, 0
    for iterations in range(1, max_iter + 1):
        log_g, rho = _sinkhorn_levels(psi, levels, level_areas, area, beta, log_g)
        omega_bar = rho @ levels
        if torus:
            omega_bar = omega_bar - np.mean(omega_bar)
        psi_new = solve_stream(VorticityField(domain, omega_bar.reshape(domain.shape))).psi.reshape(-1)
        scale = max(float(np.linalg.norm(psi_new)), 1e-300)
        change = float(np.linalg.norm(psi_new - psi)) / scale
        logger.debug("mrs %d: psi change %.3e", iterations, change)
        if change <= tol or np.linalg.norm(psi_new) == 0.0:
            psi = psi_new
            break
        psi = psi + relaxation * (psi_new - psi)
    else:
        raise NonConvergenceError(f"MRS iteration did not settle in {max_iter} steps",
                                  {'psi_change': change, 'beta': beta})

    log_g, rho = _sinkhorn_levels(psi, levels, level_areas, area, beta, log_g)
    omega_bar = VorticityField.with_bound(domain, (rho @ levels).reshape(domain.shape))
    logger.info("mrs beta = %g settled in %d iterations over %d levels", beta, iterations, levels.size)
    return MrsDistribution(levels, level_areas, log_g, rho, psi.reshape(domain.shape), omega_bar,
                           beta, iterations, change)


@dataclass(frozen=True)
class MrsResponse:
    derivative: np.ndarray = field(repr=False)
    predicted: np.ndarray = field(repr=False)
    max_gap: float = 0.0


def mrs_response(distribution: MrsDistribution, step: float = 1e-5) -> MrsResponse:
    """ Central difference of F at fixed g against -beta times the local variance """
    psi = distribution.psi_bar.reshape(-1)
    h = step * max(1.0, float(np.max(np.abs(psi))))
    derivative = (distribution.coarse_function(psi + h) - distribution.coarse_function(psi - h)) / (2 * h)
    predicted = -distribution.beta * distribution.variance()
    return MrsResponse(derivative, predicted, float(np.max(np.abs(derivative - predicted))))


# steady states

def steady_state_residual(omega: VorticityField, psi: Optional[np.ndarray] = None) -> float:
    """ ||J(psi, omega)||_2 / (||grad psi||_2 ||grad omega||_inf), with spectral derivatives on
    the torus, spectral x1 and centred x2 differences on the channel. Radial fields are exact steady states.
    """
    domain = omega.domain
    if domain.kind == DomainKind.DISK:
        return 0.0
    if psi is None:
        psi = solve_stream(omega).psi
    if domain.kind == DomainKind.TORUS:
        k1, k2 = domain.wavenumbers()
        k1 = np.where(np.abs(domain.wave_indices()[0]) == domain.nx // 2, 0.0, k1)
        k2 = np.where(np.abs(domain.wave_indices()[1]) == domain.ny // 2, 0.0, k2)

        def d1(values):
            return scipy.fft.ifft2(1j * k1 * scipy.fft.fft2(values)).real

        def d2(values):
            return scipy.fft.ifft2(1j * k2 * scipy.fft.fft2(values)).real
    else:
        kx = 2 * math.pi / domain.lx * scipy.fft.fftfreq(domain.nx, 1.0 / domain.nx)
        kx[domain.nx // 2] = 0.0

        def d1(values):
            return scipy.fft.ifft(1j * kx * scipy.fft.fft(values, axis=1), axis=1).real

        def d2(values):
            return np.gradient(values, domain.dy, axis=0)

    jacobian = d1(psi) * d2(omega.values) - d2(psi) * d1(omega.values)
    area = domain.cell_area
    gradient_psi = math.sqrt(_l2(d1(psi), area) ** 2 + _l2(d2(psi), area) ** 2)
    gradient_omega = float(np.max(np.hypot(d1(omega.values), d2(omega.values))))
    scale = gradient_psi * gradient_omega
    if scale == 0.0:
        return 0.0
    return _l2(jacobian, area) / scale
