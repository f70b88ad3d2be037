""" Pseudo-spectral 2D Euler on the torus with a Fejer-truncated nonlinearity.

The truncated model advects with the filtered velocity and filters the advection term,

    d omega / dt = -F[ grad_perp(F psi) . grad omega ],

so the zero mode never moves and, for cutoffs N <= n/4, E is conserved by the
semi-discrete system.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.fft

from mflab.bistoch import (
    fejer,
    fejer_multiplier,
)
from mflab.errors import (
    DegenerateFitError,
    UnsupportedDomainError,
    WindowError,
)
from mflab.field import (
    Domain,
    DomainKind,
    VorticityField,
)
from mflab.greens import solve_stream
from mflab.minimize import (
    MonotoneFitReport,
    monotone_fit,
)
from mflab.rearrange import (
    ClosureMembership,
    in_orbit_closure,
)

logger = logging.getLogger(__name__)

DEALIAS_CHOICES = ('fejer', 'two-thirds', 'none')
CFL_LIMIT = 0.5
LOW_MODE_RADIUS = 4


@dataclass(frozen=True)
class SimConfig:
    domain: Domain
    dt: float = 0.01
    t_end: float = 10.0
    fejer_n: int = 32
    record_every: int = 10
    seed: int = 0
    dealias: str = 'fejer'

    def __post_init__(self):
        if self.domain.kind != DomainKind.TORUS:
            raise UnsupportedDomainError("the simulator runs on the torus only")
        if self.dealias not in DEALIAS_CHOICES:
            raise ValueError(f"dealias must be one of {DEALIAS_CHOICES}, got {self.dealias!r}")
        if self.dt == 0 or self.t_end < 0 or self.record_every < 1:
            raise ValueError("need dt != 0, t_end >= 0 and record_every >= 1")


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    snapshots: List[VorticityField] = field(default_factory=list, repr=False)
    energy: List[float] = field(default_factory=list)
    mean: List[float] = field(default_factory=list)
    enstrophy: List[float] = field(default_factory=list)
    quartic: List[float] = field(default_factory=list)
    low_modes: List[np.ndarray] = field(default_factory=list, repr=False)
    halvings: int = 0

    def energy_drift(self) -> float:
        if not self.energy or self.energy[0] == 0:
            return 0.0
        return max(abs(e - self.energy[0]) for e in self.energy) / abs(self.energy[0])

    def mean_drift(self) -> float:
        return max((abs(m - self.mean[0]) for m in self.mean), default=0.0)

    def enstrophy_drift(self) -> float:
        """ Largest relative change of the enstrophy, which the filtered model does not conserve """
        if not self.enstrophy or self.enstrophy[0] == 0:
            return 0.0
        return max(abs(z - self.enstrophy[0]) for z in self.enstrophy) / self.enstrophy[0]


def low_mode_indices(radius: int = LOW_MODE_RADIUS) -> List[Tuple[int, int]]:
    """ Wave indices (m1, m2) with m1^2 + m2^2 <= radius^2, one of each +-pair """
    modes = []
    for m2 in range(0, radius + 1):
        for m1 in range(-radius, radius + 1):
            if m1 * m1 + m2 * m2 <= radius * radius and (m2 > 0 or m1 > 0):
                modes.append((m1, m2))
    return modes


class EulerModel:
    """ Spectral right-hand side and RK4 stepping for one torus and filter choice """

    def __init__(self, domain: Domain, dealias: str = 'fejer', fejer_n: int = 32):
        if domain.kind != DomainKind.TORUS:
            raise UnsupportedDomainError("the simulator runs on the torus only")
        self.domain = domain
        m1, m2 = domain.wave_indices()
        k1, k2 = domain.wavenumbers()
        nyquist = (np.abs(m1) == domain.nx // 2) | (np.abs(m2) == domain.ny // 2)
        if dealias == 'fejer':
            self.filter = fejer_multiplier(domain, fejer_n)
        elif dealias == 'two-thirds':
            self.filter = ((np.abs(m1) < domain.nx / 3) & (np.abs(m2) < domain.ny / 3)).astype(float)
        elif dealias == 'none':
            self.filter = np.where(nyquist, 0.0, 1.0)
        else:
            raise ValueError(f"dealias must be one of {DEALIAS_CHOICES}, got {dealias!r}")
        self.filter[0, 0] = 0.0
        self.d1 = np.where(nyquist, 0.0, 1j * k1)
        self.d2 = np.where(nyquist, 0.0, 1j * k2)
        ksq = k1 ** 2 + k2 ** 2
        ksq[0, 0] = 1.0
        self.inverse_laplacian = -1.0 / ksq
        self.inverse_laplacian[0, 0] = 0.0
        self.h = min(domain.dx, domain.dy)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return scipy.fft.fft2(values)

    def back(self, hat: np.ndarray) -> np.ndarray:
        return scipy.fft.ifft2(hat).real

    def velocity(self, hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """ u = grad_perp(F psi) = (-d2, d1) F psi """
        psi_hat = self.filter * self.inverse_laplacian * hat
        return self.back(-self.d2 * psi_hat), self.back(self.d1 * psi_hat)

    def rhs(self, hat: np.ndarray) -> np.ndarray:
        u1, u2 = self.velocity(hat)
        advection = u1 * self.back(self.d1 * hat) + u2 * self.back(self.d2 * hat)
        return -self.filter * self.transform(advection)

    def max_speed(self, hat: np.ndarray) -> float:
        u1, u2 = self.velocity(hat)
        return float(np.max(np.hypot(u1, u2)))

    def rk4(self, hat: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.rhs(hat)
        k2 = self.rhs(hat + 0.5 * dt * k1)
        k3 = self.rhs(hat + 0.5 * dt * k2)
        k4 = self.rhs(hat + dt * k3)
        return hat + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def advance(self, hat: np.ndarray, dt: float) -> Tuple[np.ndarray, int]:
        """ One step of size dt, split into 2^h RK4 substeps until the CFL number is <= 0.5 """
        halvings = 0
        substep = dt
        while abs(substep) * self.max_speed(hat) / self.h > CFL_LIMIT:
            substep /= 2
            halvings += 1
            if halvings > 30:
                raise ValueError("CFL halving did not terminate, the velocity is not finite")
        if halvings:
            logger.warning("CFL: dt = %g halved %d times", dt, halvings)
        for _ in range(2 ** halvings):
            hat = self.rk4(hat, substep)
        return hat, halvings

    def energy(self, hat: np.ndarray) -> float:
        """ E = 1/2 sum |k|^-2 |omega_k|^2, the zero mode excluded """
        weights = -self.inverse_laplacian
        return 0.5 * float(np.sum(weights * np.abs(hat) ** 2)) * self.domain.total_area / self.domain.size ** 2


def step(omega: VorticityField, dt: float, fejer_n: int = 32, dealias: str = 'fejer') -> VorticityField:
    model = EulerModel(omega.domain, dealias, fejer_n)
    hat, _ = model.advance(model.transform(omega.values), dt)
    return omega.replace(model.back(hat))


def _record(trajectory: Trajectory, model: EulerModel, hat: np.ndarray, time: float, template: VorticityField):
    values = model.back(hat)
    domain = model.domain
    area = domain.cell_area
    trajectory.times.append(time)
    trajectory.snapshots.append(template.replace(values))
    trajectory.energy.append(model.energy(hat))
    trajectory.mean.append(float(hat[0, 0].real) / domain.size)
    trajectory.enstrophy.append(float(np.sum(values ** 2)) * area)
    trajectory.quartic.append(float(np.sum(values ** 4)) * area)
    rows = [m2 % domain.ny for _, m2 in low_mode_indices()]
    cols = [m1 % domain.nx for m1, _ in low_mode_indices()]
    trajectory.low_modes.append(np.abs(hat[rows, cols]) / domain.size)


def run(config: SimConfig, initial: VorticityField) -> Trajectory:
    if initial.domain != config.domain:
        raise UnsupportedDomainError("initial field and configuration use different domains")
    model = EulerModel(config.domain, config.dealias, config.fejer_n)
    hat = model.transform(initial.values)
    trajectory = Trajectory()
    _record(trajectory, model, hat, 0.0, initial)

    steps = int(math.ceil(config.t_end / abs(config.dt) - 1e-9))
    time = 0.0
    for index in range(1, steps + 1):
        dt = math.copysign(min(abs(config.dt), config.t_end - abs(time)), config.dt)
        hat, halvings = model.advance(hat, dt)
        trajectory.halvings += halvings
        time += dt
        if index % config.record_every == 0 or index == steps:
            _record(trajectory, model, hat, time, initial)
            logger.debug("t = %.4f: E = %.12g", time, trajectory.energy[-1])
    logger.info("simulated %d steps to t = %g, energy drift %.3e, %d CFL halvings",
                steps, time, trajectory.energy_drift(), trajectory.halvings)
    return trajectory


def nonshear_energy_fraction(omega: VorticityField) -> float:
    """ Share of the energy carried by modes with m1 != 0 """
    domain = omega.domain
    if domain.kind != DomainKind.TORUS:
        raise UnsupportedDomainError("the mode split is computed on the torus")
    model = EulerModel(domain, 'none')
    hat = model.transform(omega.values)
    weights = -model.inverse_laplacian * np.abs(hat) ** 2
    total = float(np.sum(weights))
    if total == 0.0:
        return 0.0
    m1, _ = domain.wave_indices()
    return float(np.sum(weights[m1 != 0])) / total


@dataclass(frozen=True)
class LimitCandidate:
    field: VorticityField
    membership: ClosureMembership
    fit: Optional[MonotoneFitReport]
    enstrophy_drop: float


def omega_limit_probe(trajectory: Trajectory, window: int, cutoff: int) -> LimitCandidate:
    """ Average of the Fejer-coarse-grained last `window` snapshots, checked against the
    orbit closure of the first snapshot and for a monotone psi-omega relation.
    """
    if not 1 <= window <= len(trajectory.snapshots):
        raise WindowError(f"window of {window} snapshots, trajectory holds {len(trajectory.snapshots)}")
    datum = trajectory.snapshots[0]
    coarse = [fejer(snapshot, cutoff).values for snapshot in trajectory.snapshots[-window:]]
    candidate = datum.replace(np.mean(coarse, axis=0))
    membership = in_orbit_closure(candidate, datum)

    psi = solve_stream(candidate.replace(candidate.values - candidate.mean())).psi
    try:
        fit = monotone_fit(candidate, psi)
    except DegenerateFitError:
        fit = None
    drop = datum.l2_norm() ** 2 - candidate.l2_norm() ** 2
    return LimitCandidate(candidate, membership, fit, drop)


def random_datum(domain: Domain, rng: np.random.Generator, amplitude: float = 1.0, band: int = 6) -> VorticityField:
    """ Mean-zero field with random Fourier content in 0 < |m| <= band, scaled to sup = amplitude """
    m1, m2 = domain.wave_indices()
    mask = (m1 ** 2 + m2 ** 2 <= band ** 2) & ((m1 != 0) | (m2 != 0))
    hat = (rng.standard_normal(domain.shape) + 1j * rng.standard_normal(domain.shape)) * mask
    values = scipy.fft.ifft2(hat).real
    values -= np.mean(values)
    values *= amplitude / max(float(np.max(np.abs(values))), 1e-300)
    return VorticityField.with_bound(domain, values)


def vortex_pair(domain: Domain, amplitude: float = 1.0, width: float = 0.4) -> VorticityField:
    """ Two opposite Gaussian vortices side by side, mean removed """
    def bump(x1, x2, c1, c2):
        d1 = (x1 - c1 + domain.lx / 2) % domain.lx - domain.lx / 2
        d2 = (x2 - c2 + domain.ly / 2) % domain.ly - domain.ly / 2
        return np.exp(-(d1 ** 2 + d2 ** 2) / (2 * width ** 2))

    x1, x2 = domain.centers()
    values = amplitude * (bump(x1, x2, domain.lx / 4, domain.ly / 2) - bump(x1, x2, 3 * domain.lx / 4, domain.ly / 2))
    return VorticityField.with_bound(domain, values - np.mean(values))
