""" Peaked vortex data on the channel and certificates that no shear flow shares
their energy, momentum and rearrangement class.

A box vortex of strength delta / eps^2 on a square of side 2 eps carries energy of
order delta^2 |log eps|, while every shear in the orbit closure is bounded by a
constant built from the positive and negative masses (see docs/shear_bound.md).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.ndimage

from mflab.errors import (
    PreconditionError,
    UnresolvedScaleError,
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
    momentum,
    solve_stream,
)

logger = logging.getLogger(__name__)

# modes summed per numpy block in the spectral energy
CHUNK = 1 << 20
BREAKDOWN_MODES = 4096


@dataclass(frozen=True)
class PeakedDatum:
    base: VorticityField
    delta: float
    eps: float
    xi: VorticityField
    center: Tuple[float, float]

    @property
    def perturbation(self) -> np.ndarray:
        return self.xi.values - self.base.values


@dataclass(frozen=True)
class SpectralEnergy:
    e0: float
    modes: float
    gauge_term: float
    # certified bound on the modes beyond the cutoff
    tail_bound: float
    cutoff: int
    per_mode: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        return self.e0 + self.modes + self.gauge_term

    @property
    def dirichlet(self) -> float:
        return self.e0 + self.modes


@dataclass(frozen=True)
class ExclusionCertificate:
    energy_xi: float
    shear_energy_bound: float
    momentum_match: float
    verdict: bool
    epsilon_threshold: float = math.nan
    margin: float = 0.05

    def report(self) -> str:
        return (f"energy_xi = {self.energy_xi!r}\n"
                f"shear_energy_bound = {self.shear_energy_bound!r}\n"
                f"momentum = {self.momentum_match!r}\n"
                f"margin = {self.margin!r}\n"
                f"verdict = {'true' if self.verdict else 'false'}\n"
                f"epsilon_threshold = {self.epsilon_threshold!r}\n")


def _require_channel(domain: Domain):
    if domain.kind != DomainKind.CHANNEL:
        raise UnsupportedDomainError("shear exclusion works on the channel")


def kolmogorov_shear(domain: Domain, amplitude: float = 1.0, mode: int = 1) -> VorticityField:
    """ Exact cell averages of amplitude * sin(2 pi mode x2) """
    _require_channel(domain)
    h = domain.dy
    lower = np.arange(domain.ny) * h
    wave = 2 * math.pi * mode
    rows = amplitude * (np.cos(wave * lower) - np.cos(wave * (lower + h))) / (wave * h)
    values = np.repeat(rows[:, None], domain.nx, axis=1)
    return VorticityField.with_bound(domain, values)


def _overlap(edges: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """ Fraction of each cell [edges[i], edges[i+1]] covered by [lo, hi] """
    covered = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return covered / np.diff(edges)


def check_peaked_parameters(delta: float, eps: float) -> None:
    if not 0.0 < eps < delta:
        raise PreconditionError(f"need 0 < eps < delta, got eps = {eps}, delta = {delta}")


def resolves(domain: Domain, eps: float) -> bool:
    """ True when a box of side 2 eps spans at least 4 cells in both directions """
    return 2 * eps >= 4 * domain.dx and 2 * eps >= 4 * domain.dy


def build_peaked(base: VorticityField, delta: float, eps: float,
                 center: Optional[Tuple[float, float]] = None, smooth: float = 0.0) -> PeakedDatum:
    """ xi = base + delta / eps^2 on the square of half-side eps around center.
    Cells are filled with their overlap fraction so the added mass is exactly 4 delta.
    smooth > 0 applies a Gaussian of that many cells.
    """
    domain = base.domain
    _require_channel(domain)
    check_peaked_parameters(delta, eps)
    if not resolves(domain, eps):
        raise UnresolvedScaleError(
            f"box of side {2 * eps:g} spans fewer than 4 cells (dx = {domain.dx:g}, dy = {domain.dy:g})")
    if center is None:
        center = (domain.lx / 2.0, 0.5)
    c1, c2 = center
    if c1 - eps < 0 or c1 + eps > domain.lx or c2 - eps < 0 or c2 + eps > 1:
        raise PreconditionError("box leaves the channel")

    x_edges = np.arange(domain.nx + 1) * domain.dx
    y_edges = np.arange(domain.ny + 1) * domain.dy
    weights = np.outer(_overlap(y_edges, c2 - eps, c2 + eps), _overlap(x_edges, c1 - eps, c1 + eps))
    bump = delta / eps ** 2 * weights
    if smooth > 0:
        bump = scipy.ndimage.gaussian_filter(bump, smooth, mode=('constant', 'wrap'))
    xi = VorticityField.with_bound(domain, base.values + bump)
    logger.debug("peaked datum: delta=%g eps=%g peak=%g", delta, eps, delta / eps ** 2)
    return PeakedDatum(base, delta, eps, xi, (c1, c2))


def _one_minus_p(alpha: np.ndarray) -> np.ndarray:
    """ 1 - (1 - exp(-alpha)) / alpha without cancellation """
    small = alpha < 1e-3
    safe = np.where(small, 1.0, alpha)
    series = alpha / 2 - alpha ** 2 / 6 + alpha ** 3 / 24 - alpha ** 4 / 120
    return np.where(small, series, 1.0 + np.expm1(-safe) / safe)


def _mode_energies(k: np.ndarray, delta: float, eps: float, lx: float) -> np.ndarray:
    """ Dirichlet energy of the +-k pair of x1 modes of a centred box """
    kappa = 2 * math.pi * k / lx
    alpha = 2 * kappa * eps
    one_minus_p = _one_minus_p(alpha)
    t = np.exp(-kappa * (1 - 2 * eps))
    s = np.exp(-kappa)
    one_minus_s = ((one_minus_p * (1 + t)) + t * np.expm1(-alpha)) / (1 + s)
    q = 2 * eps / kappa ** 2 * one_minus_s
    coefficient = 2 * delta * np.sin(kappa * eps) / (eps ** 2 * kappa * lx)
    return lx * coefficient ** 2 * q


def box_energy_spectral(delta: float, eps: float, lx: float = 2 * math.pi, nx: int = 0,
                        gauge: ChannelGauge = ChannelGauge.MOMENTUM) -> SpectralEnergy:
    """ Energy of the pure box vortex (zero base) from its Fourier expansion in x1 """
    if not 0.0 < eps < 0.5:
        raise PreconditionError(f"need 0 < eps < 1/2, got {eps}")
    a, b = 0.5 - eps, 0.5 + eps

    def primitive(y):
        return y ** 3 / 3 - y ** 4 / 4 - a ** 2 * (y - y ** 2 / 2)

    q0 = primitive(b) - primitive(a)
    c0 = 2 * delta / (eps * lx)
    e0 = 0.5 * lx * c0 ** 2 * q0

    cutoff = max(math.ceil(10.0 / eps), nx // 2)
    total = 0.0
    head = None
    # small terms first for a stable sum
    for start in range(cutoff, 0, -CHUNK):
        k = np.arange(max(start - CHUNK + 1, 1), start + 1, dtype=float)
        energies = _mode_energies(k, delta, eps, lx)
        total += float(np.sum(energies[::-1]))
        if k[0] == 1:
            head = energies[:BREAKDOWN_MODES]

    tail = 8 * delta ** 2 / (lx * eps ** 3) * (lx / (2 * math.pi)) ** 4 / (3 * cutoff ** 3)
    gauge_term = (2 * delta) ** 2 / (2 * lx) if gauge == ChannelGauge.MOMENTUM else 0.0
    return SpectralEnergy(e0, total, gauge_term, tail, cutoff, head)


def peaked_energy_spectral(datum: PeakedDatum) -> SpectralEnergy:
    if np.any(datum.base.values != 0):
        raise PreconditionError("the spectral expansion covers the pure box vortex, base must be zero")
    if datum.center[1] != 0.5:
        raise PreconditionError("the spectral expansion assumes the box centred at x2 = 1/2")
    domain = datum.xi.domain
    return box_energy_spectral(datum.delta, datum.eps, domain.lx, domain.nx, domain.gauge)


def mode_bound(k: np.ndarray, delta: float, eps: float, lx: float = 2 * math.pi) -> np.ndarray:
    """ Upper bound 8 delta^2 / lx * eps / (eps kappa)^4 on a mode pair's energy """
    kappa = 2 * math.pi * np.asarray(k, dtype=float) / lx
    return 8 * delta ** 2 / lx * eps / (eps * kappa) ** 4


def max_shear_energy_bound(omega0: VorticityField, momentum0: Optional[float] = None) -> float:
    """ Rigorous bound on the energy of any shear flow in the orbit closure of omega0 with
    momentum momentum0: (P^2 + N^2) / (8 Lx) + M0^2 / (2 Lx), P and N the positive and
    negative masses. The momentum part is absent in the wall gauge.
    """
    domain = omega0.domain
    _require_channel(domain)
    if momentum0 is None:
        momentum0 = momentum(omega0)
    positive, negative = omega0.positive_mass(), omega0.negative_mass()
    bound = (positive ** 2 + negative ** 2) / (8 * domain.lx)
    if domain.gauge == ChannelGauge.MOMENTUM:
        bound += momentum0 ** 2 / (2 * domain.lx)
    return bound


def _strip_energy(profile: np.ndarray, lx: float) -> Tuple[float, np.ndarray]:
    """ Wall-gauge energy of a shear profile and its stream function rows """
    domain = Domain.channel(4, profile.size, lx, ChannelGauge.WALL)
    field_ = VorticityField(domain, np.repeat(profile[:, None], 4, axis=1))
    solution = solve_stream(field_)
    value = float(-0.5 * np.sum(solution.psi * field_.values) * domain.cell_area)
    return value, solution.psi[:, 0]


def heuristic_shear_maximum(omega0: VorticityField, rng: np.random.Generator, restarts: int = 100,
                            momentum0: Optional[float] = None, max_sweeps: int = 200) -> float:
    """ Largest shear energy found by sorting-alignment ascent over the strip profiles
    whose values are block averages of the sorted datum. Momentum enters only through
    the fixed M0^2 / (2 Lx) term, so the search covers a superset of the feasible shears.
    """
    domain = omega0.domain
    _require_channel(domain)
    if momentum0 is None:
        momentum0 = momentum(omega0)
    blocks = -np.sort(-omega0.flat).reshape(domain.ny, domain.nx).mean(axis=1)

    best = 0.0
    for _ in range(restarts):
        profile = blocks[rng.permutation(domain.ny)]
        value, psi = _strip_energy(profile, domain.lx)
        for _ in range(max_sweeps):
            # energy is convex: the linearisation is maximised by the largest values on the most negative psi
            candidate = np.empty_like(profile)
            candidate[np.argsort(psi, kind='stable')] = blocks
            candidate_value, candidate_psi = _strip_energy(candidate, domain.lx)
            if candidate_value <= value * (1 + 1e-14):
                break
            profile, value, psi = candidate, candidate_value, candidate_psi
        best = max(best, value)
    if domain.gauge == ChannelGauge.MOMENTUM:
        best += momentum0 ** 2 / (2 * domain.lx)
    return best


def certify_field(xi: VorticityField, margin: float = 0.05) -> ExclusionCertificate:
    """ Gridded certificate: E(xi) against the shear bound at the momentum of xi """
    _require_channel(xi.domain)
    energy_xi = energy(xi)
    momentum_xi = momentum(xi)
    bound = max_shear_energy_bound(xi, momentum_xi)
    verdict = energy_xi > bound + margin * energy_xi
    return ExclusionCertificate(energy_xi, bound, momentum_xi, bool(verdict), margin=margin)


def certify_no_shear(datum: PeakedDatum, margin: float = 0.05) -> ExclusionCertificate:
    return certify_field(datum.xi, margin)


def certify_parameters(amplitude: float, mode: int, delta: float, eps: float,
                       lx: float = 2 * math.pi, margin: float = 0.05) -> ExclusionCertificate:
    """ Semi-analytic certificate for a Kolmogorov base amplitude * sin(2 pi mode x2) plus a
    centred box, valid at scales no grid resolves. The base-box cross term vanishes for
    integer modes by symmetry about x2 = 1/2.
    """
    spectral = box_energy_spectral(delta, eps, lx)
    base_energy = lx * amplitude ** 2 / (16 * math.pi ** 2 * mode ** 2)
    momentum_base = lx * amplitude / (2 * math.pi * mode)
    momentum_xi = momentum_base - 2 * delta
    energy_xi = base_energy + spectral.dirichlet + momentum_xi ** 2 / (2 * lx)

    positive = lx * abs(amplitude) / math.pi + 4 * delta
    negative = lx * abs(amplitude) / math.pi
    bound = (positive ** 2 + negative ** 2) / (8 * lx) + momentum_xi ** 2 / (2 * lx)
    verdict = energy_xi > bound + margin * energy_xi
    return ExclusionCertificate(energy_xi, bound, momentum_xi, bool(verdict), margin=margin)


def epsilon_threshold(amplitude: float, mode: int, delta: float, lx: float = 2 * math.pi,
                      margin: float = 0.05, eps_max: float = 0.45, eps_min: float = 1e-12,
                      rel_tol: float = 0.01) -> float:
    """ Largest eps (to rel_tol) for which the semi-analytic certificate holds; nan if none above eps_min """
    def holds(eps):
        return certify_parameters(amplitude, mode, delta, eps, lx, margin).verdict

    if holds(eps_max):
        return eps_max
    upper = eps_max
    lower = eps_max / 2
    while not holds(lower):
        upper = lower
        lower /= 2
        if lower < eps_min:
            logger.info("no certified eps above %g", eps_min)
            return math.nan
    # lower holds, upper fails
    while upper / lower > 1 + rel_tol:
        middle = math.sqrt(lower * upper)
        if holds(middle):
            lower = middle
        else:
            upper = middle
    logger.info("certificate threshold eps* = %.6g (amplitude=%g, delta=%g)", lower, amplitude, delta)
    return lower


@dataclass(frozen=True)
class RobustnessReport:
    trials: int
    holding: int
    worst_gap: float


def perturbation_robustness(xi: VorticityField, rng: np.random.Generator, trials: int = 10,
                            level: float = 0.01, margin: float = 0.05) -> RobustnessReport:
    """ Re-certifies xi * (1 + level * U) for uniform U in [-1, 1] """
    holding, worst = 0, math.inf
    for _ in range(trials):
        noisy = xi.replace(xi.values * (1.0 + level * rng.uniform(-1.0, 1.0, xi.values.shape)))
        certificate = certify_field(noisy, margin)
        holding += certificate.verdict
        worst = min(worst, certificate.energy_xi - certificate.shear_energy_bound)
    return RobustnessReport(trials, holding, worst)
