""" Minimal flows: minimise a strictly convex Casimir over the closed rearrangement orbit
of a datum at fixed energy (and optionally momentum).

With equal cell areas the closed orbit is the permutohedron of the datum values.
The energy constraint is scalarised,

    I_f(omega) + beta * E(omega) + nu * M(omega),

the inner problem is solved by Frank-Wolfe and projected-gradient steps over the
permutohedron, and beta (then nu) is searched until the constraint binds.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.optimize

from mflab.bistoch import random_mixing
from mflab.errors import (
    DegenerateFitError,
    FunctionDomainError,
    InfeasibleEnergyError,
    LevelCapError,
    NonConvergenceError,
    ResolutionError,
)
from mflab.field import (
    ChannelGauge,
    Domain,
    DomainKind,
    VorticityField,
)
from mflab.functions import (
    ConvexFunction,
    Quadratic,
)
from mflab.greens import (
    StreamSolution,
    momentum,
    solve_stream,
)
from mflab.rearrange import casimir

logger = logging.getLogger(__name__)

MAX_LEVELS = 64
BETA_CAP = 2.0 ** 40
LINE_SAMPLES = 33
# first bracket step relative to a warm-start beta
BRACKET_FRACTION = 0.05
# bracket energies further apart than this fraction of E0 count as a jump
JUMP_FRACTION = 1e-3


@dataclass
class MinimizeOptions:
    max_iter: int = 2000
    gap_tol: float = 1e-8
    energy_tol: float = 1e-8
    restarts: int = 5
    seed: int = 0
    fix_momentum: bool = False
    max_bisections: int = 200
    # width of the final beta bracket relative to beta
    beta_rtol: float = 1e-9
    # nu steps after the momentum bracket is found
    max_momentum_steps: int = 8
    # beta bracket width used inside the nu search
    momentum_beta_rtol: float = 1e-5


class FitDirection(enum.Enum):
    INCREASING = enum.auto()
    DECREASING = enum.auto()


@dataclass(frozen=True)
class MonotoneFitReport:
    direction: FitDirection
    # area-weighted L2 distance from the best monotone F(psi)
    isotonic_residual: float
    plateau_levels: List[float]
    relative_residual: float = 0.0


@dataclass(frozen=True)
class KKTReport:
    gamma: float
    # multipliers of the interior level constraints, ascending levels
    lambdas: np.ndarray
    levels: np.ndarray
    # (lower, upper) box multipliers of the extreme levels
    box_multipliers: Tuple[float, float]
    stationarity: float
    complementary_slackness: float
    bracket_violation: float
    min_lambda: float
    rank_deficient: bool


@dataclass
class MinimalFlowResult:
    omega_star: VorticityField
    psi_star: StreamSolution
    beta: float
    gamma: float
    lambdas: np.ndarray
    f_value: float
    residuals: Dict[str, float]
    nu: float = 0.0
    interpolated: bool = False
    iterations: int = 0
    kkt: Optional[KKTReport] = field(default=None, repr=False)


@dataclass
class SolverState:
    """ Progress of one inner solve """
    iteration: int = 0
    objective: float = math.inf
    gap: float = math.inf
    converged: bool = False
    stalled: bool = False
    history: List[float] = field(default_factory=list, repr=False)


def linear_oracle(gradient: np.ndarray, levels_desc: np.ndarray) -> np.ndarray:
    """ Vertex of the permutohedron minimising <gradient, s>: largest values on the smallest gradient """
    vertex = np.empty_like(levels_desc)
    vertex[np.argsort(gradient, kind='stable')] = levels_desc
    return vertex


def project_permutohedron(y: np.ndarray, levels_desc: np.ndarray) -> np.ndarray:
    """ Euclidean projection onto the convex hull of the permutations of levels_desc """
    order = np.argsort(-y, kind='stable')
    s = y[order]
    u = scipy.optimize.isotonic_regression(s - levels_desc, increasing=False).x
    x = np.empty_like(y)
    x[order] = s - u
    return x


def centered_stream(field: VorticityField) -> StreamSolution:
    """ Stream function with the torus mean removed first """
    if field.domain.kind == DomainKind.TORUS:
        field = field.replace(field.values - np.mean(field.values))
    return solve_stream(field)


def centered_energy(field: VorticityField) -> float:
    solution = centered_stream(field)
    return float(-0.5 * np.sum(solution.psi * field.values) * field.domain.cell_area)


class EnergyModel:
    """ Flat-vector view of the energy quadratic form on one domain """

    def __init__(self, domain: Domain):
        self.domain = domain
        self.area = domain.cell_area
        _, x2 = domain.centers()
        self.x2 = x2.reshape(-1)

    def stream(self, values: np.ndarray) -> np.ndarray:
        values = values.reshape(self.domain.shape)
        if self.domain.kind == DomainKind.TORUS:
            values = values - np.mean(values)
        return solve_stream(VorticityField(self.domain, values)).psi.reshape(-1)

    def energy(self, values: np.ndarray, psi: np.ndarray) -> float:
        return float(-0.5 * self.area * np.dot(psi, values))

    def momentum(self, values: np.ndarray) -> float:
        return float(-self.area * np.dot(self.x2, values))

    def largest_eigenvalue(self, seed: int = 0, iterations: int = 60) -> float:
        """ Power iteration for the top eigenvalue of omega -> -psi[omega] """
        rng = np.random.default_rng(seed)
        vector = rng.standard_normal(self.domain.size)
        if self.domain.kind == DomainKind.TORUS:
            vector -= vector.mean()
        estimate = 0.0
        for _ in range(iterations):
            vector /= np.linalg.norm(vector)
            image = -self.stream(vector)
            estimate = float(np.dot(vector, image))
            vector = image
            if not np.any(vector):
                return 0.0
        return estimate


class PolytopeSolver:
    """ Minimises I_f + beta E + nu M over the permutohedron of one datum """

    def __init__(self, model: EnergyModel, levels_desc: np.ndarray, f: ConvexFunction,
                 beta: float, nu: float, options: MinimizeOptions, eigenvalue: float):
        self.model = model
        self.levels_desc = levels_desc
        self.f = f
        self.beta = beta
        self.nu = nu
        self.options = options
        lo, hi = float(levels_desc[-1]), float(levels_desc[0])
        min_curvature, max_curvature = f.curvature_range(lo, hi)
        self.convex = beta >= 0 or min_curvature >= abs(beta) * eigenvalue
        lipschitz = max_curvature + abs(beta) * eigenvalue + 1e-300
        self.step = 1.0 / lipschitz if math.isfinite(lipschitz) else None
        self.values = None
        self.psi = None
        self.state = SolverState()

    def objective(self, values: np.ndarray, psi: np.ndarray) -> float:
        total = self.model.area * float(np.sum(self.f.value(values)))
        total += self.beta * self.model.energy(values, psi)
        if self.nu:
            total += self.nu * self.model.momentum(values)
        return total

    def gradient(self) -> np.ndarray:
        gradient = self.f.derivative(self.values) - self.beta * self.psi
        if self.nu:
            gradient = gradient - self.nu * self.model.x2
        return self.model.area * gradient

    def _line_search(self, direction: np.ndarray, psi_direction: np.ndarray,
                     slope: float) -> Tuple[float, float]:
        """ Best step in [0, 1] along values + t * direction and the objective change """
        area = self.model.area
        curvature = -0.5 * area * self.beta * float(np.dot(psi_direction, direction))
        if isinstance(self.f, Quadratic):
            curvature += 0.5 * area * float(np.dot(direction, direction))
            if curvature > 0:
                t = min(max(-slope / (2 * curvature), 0.0), 1.0)
            else:
                t = 1.0 if slope + curvature < 0 else 0.0
            return t, slope * t + curvature * t * t

        base = area * float(np.sum(self.f.value(self.values)))
        linear = slope - area * float(np.dot(self.f.derivative(self.values), direction))

        def change(t):
            casimir_part = area * float(np.sum(self.f.value(self.values + t * direction))) - base
            return casimir_part + linear * t + curvature * t * t

        if self.convex:
            found = scipy.optimize.minimize_scalar(change, bounds=(0.0, 1.0), method='bounded',
                                                   options={'xatol': 1e-12})
            candidates = [(0.0, 0.0), (1.0, change(1.0)), (float(found.x), float(found.fun))]
        else:
            grid = np.linspace(0.0, 1.0, LINE_SAMPLES)
            samples = [change(t) for t in grid]
            best = int(np.argmin(samples))
            lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, LINE_SAMPLES - 1)]
            found = scipy.optimize.minimize_scalar(change, bounds=(lo, hi), method='bounded',
                                                   options={'xatol': 1e-12})
            candidates = [(float(grid[best]), float(samples[best])), (float(found.x), float(found.fun))]
        return min(candidates, key=lambda pair: pair[1])

    def start(self, values: np.ndarray):
        self.values = np.array(values, dtype=float)
        self.psi = self.model.stream(self.values)
        self.state = SolverState(objective=self.objective(self.values, self.psi))

    def iterate_once(self) -> bool:
        """ One descent step; returns whether the solve should continue """
        state = self.state
        gradient = self.gradient()
        vertex = linear_oracle(gradient, self.levels_desc)
        fw_direction = vertex - self.values
        state.gap = float(-np.dot(gradient, fw_direction))
        scale = max(abs(state.objective), self.model.area * float(np.sum(np.abs(self.f.value(self.values)))),
                    1e-300)
        if state.gap <= self.options.gap_tol * scale:
            state.converged = True
            return False
        if state.iteration >= self.options.max_iter:
            return False

        directions = [fw_direction]
        if self.step is not None:
            projected = project_permutohedron(self.values - self.step * gradient / self.model.area,
                                              self.levels_desc)
            directions.append(projected - self.values)

        best = None
        for direction in directions:
            if not np.any(direction):
                continue
            psi_direction = self.model.stream(direction)
            t, change = self._line_search(direction, psi_direction, float(np.dot(gradient, direction)))
            if best is None or change < best[1]:
                best = (t, change, direction, psi_direction)

        if best is None or best[0] == 0.0 or best[1] >= 0.0:
            state.stalled = True
            return False

        t, change, direction, psi_direction = best
        self.values = self.values + t * direction
        state.iteration += 1
        if state.iteration % 50 == 0:
            self.psi = self.model.stream(self.values)
        else:
            self.psi = self.psi + t * psi_direction
        state.objective = self.objective(self.values, self.psi)
        state.history.append(state.objective)
        if state.iteration % 500 == 0:
            logger.debug("beta=%g iteration %d objective %.12g gap %.3e",
                         self.beta, state.iteration, state.objective, state.gap)
        return True

    def solve(self, values: np.ndarray) -> SolverState:
        self.start(values)
        while self.iterate_once():
            pass
        self.psi = self.model.stream(self.values)
        self.state.objective = self.objective(self.values, self.psi)
        if not self.state.converged:
            logger.debug("inner solve at beta=%g stopped after %d iterations, gap %.3e",
                         self.beta, self.state.iteration, self.state.gap)
        return self.state


@dataclass
class _Candidate:
    beta: float
    nu: float
    values: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    energy: float
    objective: float
    iterations: int


class _ShellSearch:
    """ Finds multipliers putting the scalarised minimiser on the energy shell """

    def __init__(self, omega0: VorticityField, f: ConvexFunction, options: MinimizeOptions):
        self.omega0 = omega0
        self.f = f
        self.options = options
        self.model = EnergyModel(omega0.domain)
        self.datum = omega0.flat.copy()
        self.levels_desc = -np.sort(-self.datum)
        self.psi0 = self.model.stream(self.datum)
        self.energy0 = self.model.energy(self.datum, self.psi0)
        self.eigenvalue = self.model.largest_eigenvalue(options.seed)
        lo, hi = float(self.levels_desc[-1]), float(self.levels_desc[0])
        self.min_curvature = f.curvature_range(lo, hi)[0]
        self.rng = np.random.default_rng(options.seed)
        self.warm: Optional[np.ndarray] = None
        self.evaluations = 0
        self._cache: Dict[Tuple[float, float], _Candidate] = {}

    def evaluate(self, beta: float, nu: float) -> _Candidate:
        key = (float(beta), float(nu))
        if key not in self._cache:
            self._cache[key] = self._solve(beta, nu)
        return self._cache[key]

    def _solve(self, beta: float, nu: float) -> _Candidate:
        solver = PolytopeSolver(self.model, self.levels_desc, self.f, beta, nu, self.options, self.eigenvalue)
        starts = [self.warm if self.warm is not None else self.datum]
        if not solver.convex:
            starts = [self.datum] + ([self.warm] if self.warm is not None else [])
            starts += [self.rng.permutation(self.datum) for _ in range(self.options.restarts)]

        best: Optional[_Candidate] = None
        objectives = []
        for start in starts:
            state = solver.solve(start)
            candidate = _Candidate(beta, nu, solver.values.copy(), solver.psi.copy(),
                                   self.model.energy(solver.values, solver.psi), state.objective, state.iteration)
            objectives.append(candidate.objective)
            if best is None or candidate.objective < best.objective:
                best = candidate
        if len(objectives) > 1 and not math.isclose(min(objectives), max(objectives), rel_tol=1e-9):
            logger.warning("starts disagree at beta=%g: objectives %.12g .. %.12g",
                           beta, min(objectives), max(objectives))
        self.warm = best.values
        self.evaluations += 1
        return best

    def tolerance(self) -> float:
        return self.options.energy_tol * self.energy0

    def match_energy(self, nu: float, beta_guess: float = 0.0,
                     rtol: Optional[float] = None) -> Tuple[_Candidate, bool]:
        """ Returns the shell candidate and whether it was interpolated between two bracket solutions.

        E(beta) is non-increasing. The bracket is refined by regula falsi (Illinois variant,
        with a bisection whenever the bracket fails to halve twice in a row) until its width
        drops below rtol relative to beta; the last bracket is then closed exactly on the
        segment between its two solutions.
        """
        rtol = self.options.beta_rtol if rtol is None else rtol
        target = self.energy0
        tol = self.tolerance()
        current = self.evaluate(beta_guess, nu)
        if abs(current.energy - target) <= tol:
            return current, False

        # too little energy means beta must go down
        sign = -1.0 if current.energy < target else 1.0
        inner = current
        step = 1.0 if beta_guess == 0.0 else BRACKET_FRACTION * max(abs(beta_guess), 1.0)
        while True:
            beta = beta_guess + sign * step
            if abs(beta) > BETA_CAP:
                raise InfeasibleEnergyError(
                    f"energy {target:.6g} not reached with |beta| <= {BETA_CAP:g} "
                    f"(last energy {inner.energy:.6g})")
            outer = self.evaluate(beta, nu)
            if abs(outer.energy - target) <= tol:
                return outer, False
            if (outer.energy - target) * (current.energy - target) < 0:
                break
            inner = outer
            step *= 2.0
        logger.debug("beta bracket [%g, %g] at nu=%g", min(inner.beta, outer.beta), max(inner.beta, outer.beta), nu)

        # lo has energy above the target, hi below
        lo, hi = (inner, outer) if inner.energy > target else (outer, inner)
        f_lo, f_hi = lo.energy - target, hi.energy - target
        side = 0
        stalls = 0
        for _ in range(self.options.max_bisections):
            width = abs(hi.beta - lo.beta)
            if width <= rtol * max(1.0, abs(lo.beta), abs(hi.beta)):
                break
            midpoint = 0.5 * (lo.beta + hi.beta)
            beta = (lo.beta * f_hi - hi.beta * f_lo) / (f_hi - f_lo)
            if stalls >= 2 or not min(lo.beta, hi.beta) < beta < max(lo.beta, hi.beta):
                beta, stalls = midpoint, 0
            if beta in (lo.beta, hi.beta):
                break
            middle = self.evaluate(beta, nu)
            excess = middle.energy - target
            if abs(excess) <= tol:
                return middle, False
            if excess > 0:
                lo, f_lo = middle, excess
                if side > 0:
                    f_hi *= 0.5
                side = 1
            else:
                hi, f_hi = middle, excess
                if side < 0:
                    f_lo *= 0.5
                side = -1
            stalls = stalls + 1 if abs(hi.beta - lo.beta) > 0.5 * width else 0
        return self._interpolate(lo, hi), True

    def _interpolate(self, lo: _Candidate, hi: _Candidate) -> _Candidate:
        """ Point on the segment between two bracket solutions with exactly the target energy """
        t = _shell_crossing(self.model, self.energy0, (hi.values, hi.psi, hi.energy), (lo.values, lo.psi))
        values = hi.values + t * (lo.values - hi.values)
        psi = hi.psi + t * (lo.psi - hi.psi)
        beta = hi.beta + t * (lo.beta - hi.beta)
        if lo.energy - hi.energy > JUMP_FRACTION * abs(self.energy0):
            logger.warning("energy jump between beta=%g and beta=%g, interpolated at t=%.6f", lo.beta, hi.beta, t)
        else:
            logger.debug("closed the beta bracket [%g, %g] at t=%.6f", hi.beta, lo.beta, t)
        return _Candidate(beta, hi.nu, values, psi, self.model.energy(values, psi),
                          math.nan, lo.iterations + hi.iterations)

    def row_mean(self) -> Tuple[np.ndarray, np.ndarray]:
        """ Datum averaged along x1: same momentum, no more energy """
        rows = self.datum.reshape(self.model.domain.shape)
        values = np.repeat(rows.mean(axis=1, keepdims=True), rows.shape[1], axis=1).reshape(-1)
        return values, self.model.stream(values)

    def row_sorted(self, passes: int = 8) -> Tuple[np.ndarray, np.ndarray]:
        """ Rearrangement of the datum within each row, larger values where psi is lower.
        Each pass keeps the momentum and does not lower the energy.
        """
        shape = self.model.domain.shape
        values, psi = self.datum, self.psi0
        for _ in range(passes):
            rows = values.reshape(shape)
            order = np.argsort(psi.reshape(shape), axis=1, kind='stable')
            arranged = np.empty_like(rows)
            np.put_along_axis(arranged, order, -np.sort(-rows, axis=1), axis=1)
            arranged = arranged.reshape(-1)
            if np.array_equal(arranged, values):
                break
            values, psi = arranged, self.model.stream(arranged)
        return values, psi


def _shell_crossing(model: EnergyModel, target: float, below: Tuple[np.ndarray, np.ndarray, float],
                    above: Tuple[np.ndarray, np.ndarray]) -> float:
    """ t in [0, 1] with E(below + t (above - below)) = target, for E(below) <= target <= E(above).
    The energy is quadratic along the segment.
    """
    values, psi, energy = below
    direction = above[0] - values
    psi_direction = above[1] - psi
    e1 = -model.area * float(np.dot(psi, direction))
    e2 = -0.5 * model.area * float(np.dot(psi_direction, direction))
    offset = energy - target

    def excess(t):
        return offset + e1 * t + e2 * t * t

    if excess(0.0) >= 0.0:
        return 0.0
    if excess(1.0) <= 0.0:
        return 1.0
    return scipy.optimize.brentq(excess, 0.0, 1.0, xtol=1e-15)


def _check_integrand(f: ConvexFunction, omega0: VorticityField):
    if not f.strictly_convex or not f.is_convex:
        raise FunctionDomainError(f"{f.name} is not strictly convex")
    f.check_domain(float(np.min(omega0.values)), float(np.max(omega0.values)))


def _result_from(omega0: VorticityField, f: ConvexFunction, values: np.ndarray, beta: float, nu: float,
                 energy0: float, interpolated: bool, iterations: int,
                 momentum0: Optional[float] = None) -> MinimalFlowResult:
    omega = omega0.replace(values)
    solution = centered_stream(omega)
    energy = float(-0.5 * np.sum(solution.psi * omega.values) * omega.domain.cell_area)
    residuals = {
        'energy_gap': energy - energy0,
        'mean_gap': omega.integral() - omega0.integral(),
        'momentum_gap': momentum(omega) - momentum0 if momentum0 is not None else 0.0,
    }
    result = MinimalFlowResult(omega, solution, beta, 0.0, np.zeros(0), casimir(omega, f), residuals,
                               nu, interpolated, iterations)
    if np.ptp(omega.values) > 0 and np.ptp(solution.psi) > 0:
        fit = monotone_fit(omega, solution.psi)
        residuals['isotonic'] = fit.relative_residual
    else:
        residuals['isotonic'] = 0.0
    if np.unique(omega0.values).size <= MAX_LEVELS:
        report = kkt_report(result, omega0, f)
        result.kkt = report
        result.gamma = report.gamma
        result.lambdas = report.lambdas
        residuals['stationarity'] = report.stationarity
    else:
        residuals['stationarity'] = math.nan
    return result


def minimize_fixed(omega0: VorticityField, f: ConvexFunction, beta: float, nu: float = 0.0,
                   options: Optional[MinimizeOptions] = None) -> MinimalFlowResult:
    """ Inner problem only: minimiser of I_f + beta E + nu M at fixed multipliers """
    options = options or MinimizeOptions()
    _check_integrand(f, omega0)
    search = _ShellSearch(omega0, f, options)
    candidate = search.evaluate(beta, nu)
    return _result_from(omega0, f, candidate.values, beta, nu, search.energy0, False, candidate.iterations)


def minimize_casimir(omega0: VorticityField, f: ConvexFunction, fix_momentum: bool = False,
                     options: Optional[MinimizeOptions] = None) -> MinimalFlowResult:
    options = options or MinimizeOptions()
    _check_integrand(f, omega0)

    if np.ptp(omega0.values) == 0.0:
        # the orbit closure is a single point
        energy0 = centered_energy(omega0)
        momentum0 = momentum(omega0) if fix_momentum else None
        return _result_from(omega0, f, omega0.flat.copy(), 0.0, 0.0, energy0, False, 0, momentum0)

    search = _ShellSearch(omega0, f, options)
    logger.info("minimise %s: E0 = %.12g, lambda_E = %.6g", f.name, search.energy0, search.eigenvalue)

    if not (fix_momentum or options.fix_momentum):
        candidate, interpolated = search.match_energy(0.0)
        momentum0 = None
    else:
        momentum0 = momentum(omega0)
        candidate, interpolated = _match_momentum(search, momentum0)

    result = _result_from(omega0, f, candidate.values, candidate.beta, candidate.nu, search.energy0,
                          interpolated, candidate.iterations, momentum0)
    gap = abs(result.residuals['energy_gap'])
    if gap > max(search.tolerance(), 1e-12 * search.energy0):
        raise NonConvergenceError(f"energy gap {gap:.3e} above tolerance after {search.evaluations} solves",
                                  dict(result.residuals, beta=candidate.beta))
    logger.info("minimal flow: beta = %.9g, nu = %.6g, I_f = %.12g, %d solves",
                candidate.beta, candidate.nu, result.f_value, search.evaluations)
    return result


def _match_momentum(search: _ShellSearch, momentum0: float) -> Tuple[_Candidate, bool]:
    """ Shell candidate with the datum's momentum.

    nu is bracketed by doubling and refined by at most max_momentum_steps regula falsi
    steps, each energy solve warm-started from the previous beta. A remaining momentum
    gap is closed exactly by _momentum_repair.
    """
    options = search.options
    tol = options.energy_tol * max(abs(momentum0), search.omega0.l1_norm())
    cache: Dict[float, Tuple[_Candidate, bool, float]] = {}
    beta_guess = 0.0

    def shell(nu: float) -> Tuple[_Candidate, bool, float]:
        nonlocal beta_guess
        if nu not in cache:
            candidate, interpolated = search.match_energy(nu, beta_guess, options.momentum_beta_rtol)
            beta_guess = candidate.beta
            cache[nu] = (candidate, interpolated, search.model.momentum(candidate.values) - momentum0)
            logger.debug("nu=%g: beta=%g, momentum excess %.3e", nu, candidate.beta, cache[nu][2])
        return cache[nu]

    start = shell(0.0)
    if abs(start[2]) <= tol:
        return start[0], start[1]

    # a larger nu pushes the momentum down
    sign = 1.0 if start[2] > 0 else -1.0
    inner, step = start, 1.0
    while True:
        if step > BETA_CAP:
            raise NonConvergenceError(f"momentum {momentum0:.6g} not bracketed with |nu| <= {BETA_CAP:g}",
                                      {'momentum_excess': inner[2]})
        outer = shell(sign * step)
        if abs(outer[2]) <= tol:
            return outer[0], outer[1]
        if outer[2] * start[2] < 0:
            break
        inner, step = outer, 2.0 * step

    low, high = (inner, outer) if inner[2] < 0 else (outer, inner)
    f_low, f_high = low[2], high[2]
    side = 0
    for _ in range(options.max_momentum_steps):
        a, b = low[0].nu, high[0].nu
        if abs(b - a) <= options.beta_rtol * max(1.0, abs(a), abs(b)):
            break
        nu = (a * f_high - b * f_low) / (f_high - f_low)
        if not min(a, b) < nu < max(a, b):
            nu = 0.5 * (a + b)
        current = shell(nu)
        if abs(current[2]) <= tol:
            return current[0], current[1]
        if current[2] < 0:
            low, f_low = current, current[2]
            if side < 0:
                f_high *= 0.5
            side = -1
        else:
            high, f_high = current, current[2]
            if side > 0:
                f_low *= 0.5
            side = 1
    logger.info("nu bracket [%g, %g] left momentum excess %.3e, closing it on the shell",
                min(low[0].nu, high[0].nu), max(low[0].nu, high[0].nu), min(abs(low[2]), abs(high[2])))
    return _momentum_repair(search, momentum0, low[0], high[0]), True


def _momentum_repair(search: _ShellSearch, momentum0: float, low: _Candidate, high: _Candidate) -> _Candidate:
    """ Point of the closure with exactly the datum's energy and momentum.

    low and high are shell solutions with momentum below and above momentum0. Their
    momentum-matched combination has no more than the target energy since E is convex.
    The energy is then brought back to the target along a segment to an anchor with the
    same momentum: the datum sorted within rows (more energy) or averaged along rows
    (less energy). Both anchors keep every row of the datum, hence the momentum.
    """
    model = search.model
    target = search.energy0
    m_low = model.momentum(low.values)
    m_high = model.momentum(high.values)
    s = (momentum0 - m_low) / (m_high - m_low)
    values = low.values + s * (high.values - low.values)
    psi = low.psi + s * (high.psi - low.psi)
    beta = low.beta + s * (high.beta - low.beta)
    nu = low.nu + s * (high.nu - low.nu)
    energy = model.energy(values, psi)

    if energy <= target:
        anchor_values, anchor_psi = search.row_sorted()
        t = _shell_crossing(model, target, (values, psi, energy), (anchor_values, anchor_psi))
        values = values + t * (anchor_values - values)
        psi = psi + t * (anchor_psi - psi)
    else:
        anchor_values, anchor_psi = search.row_mean()
        anchor_energy = model.energy(anchor_values, anchor_psi)
        t = _shell_crossing(model, target, (anchor_values, anchor_psi, anchor_energy), (values, psi))
        values = anchor_values + t * (values - anchor_values)
        psi = anchor_psi + t * (psi - anchor_psi)
        t = 1.0 - t
    if t > 0.5:
        logger.warning("momentum repair moved %.3f of the way to its anchor", t)
    return _Candidate(beta, nu, values, psi, model.energy(values, psi), math.nan,
                      low.iterations + high.iterations)


def monotone_fit(omega: VorticityField, psi) -> MonotoneFitReport:
    psi = np.asarray(psi.psi if isinstance(psi, StreamSolution) else psi, dtype=float).reshape(-1)
    values = omega.flat
    if psi.size != values.size:
        raise ResolutionError("omega and psi must have the same number of cells")
    if np.ptp(psi) <= 1e-14 * max(float(np.max(np.abs(psi))), 1e-300):
        raise DegenerateFitError("psi is constant, no monotone relation can be fitted")

    area = omega.domain.cell_area
    keys, inverse, counts = np.unique(psi, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=values)
    means = sums / counts

    best = None
    for direction in (FitDirection.INCREASING, FitDirection.DECREASING):
        fitted = scipy.optimize.isotonic_regression(
            means, weights=counts.astype(float), increasing=direction == FitDirection.INCREASING).x
        residual = math.sqrt(float(np.sum((values - fitted[inverse]) ** 2)) * area)
        if best is None or residual < best[1]:
            best = (direction, residual)

    norm = omega.l2_norm()
    return MonotoneFitReport(best[0], best[1], plateau_levels(omega),
                             best[1] / norm if norm > 0 else 0.0)


def plateau_levels(omega: VorticityField, gap: float = 1e-6, min_fraction: float = 0.01) -> List[float]:
    """ Levels carried by a positive fraction of the area, after merging values closer than gap * range """
    values = np.sort(omega.flat)
    spread = float(values[-1] - values[0])
    if spread == 0.0:
        return [float(values[0])]
    breaks = np.flatnonzero(np.diff(values) > gap * spread) + 1
    levels = []
    for cluster in np.split(values, breaks):
        if cluster.size >= max(2, min_fraction * values.size):
            levels.append(float(np.mean(cluster)))
    return levels


def kkt_report(result: MinimalFlowResult, omega0: VorticityField,
               f: Optional[ConvexFunction] = None) -> KKTReport:
    """ Multipliers of the level constraints reconstructed from the stationarity relation

        f'(omega) - beta psi - nu x2 + gamma + sum_j lambda_j H(omega - c_j) = 0

    on cells strictly between levels, by nonnegative least squares. Cells sitting on a
    level only need -v inside the bracket [Gamma_1, Gamma_1 + lambda_level].
    """
    f = f or Quadratic()
    levels = np.unique(omega0.values)
    if levels.size > MAX_LEVELS:
        raise LevelCapError(f"datum has {levels.size} levels, at most {MAX_LEVELS} are supported")

    omega = result.omega_star
    values = omega.flat
    area = omega.domain.cell_area
    _, x2 = omega.domain.centers()
    v = f.derivative(values) - result.beta * result.psi_star.psi.reshape(-1) - result.nu * x2.reshape(-1)
    spread = max(float(levels[-1] - levels[0]), 1e-300)
    on_level = np.abs(values[:, None] - levels[None, :]) <= 1e-9 * spread
    level_of = np.where(on_level.any(axis=1), np.argmax(on_level, axis=1), -1)
    free = level_of < 0
    interior = levels[1:-1]

    heaviside = (values[free, None] > interior[None, :]).astype(float)
    rank_deficient = False
    if np.any(free):
        system = np.hstack([np.ones((free.sum(), 1)), -np.ones((free.sum(), 1)), heaviside])
        solution, _ = scipy.optimize.nnls(system, -v[free])
        gamma = float(solution[0] - solution[1])
        lambdas = solution[2:].copy()
        if np.linalg.matrix_rank(np.delete(system, 1, axis=1)) < 1 + interior.size:
            rank_deficient = True
    else:
        gamma = 0.0
        lambdas = np.zeros(interior.size)
        rank_deficient = interior.size > 0
    if rank_deficient:
        logger.warning("multiplier system is rank deficient, some lambda are not determined by free cells")

    # levels are visited in ascending order; interior index j sits at levels[j + 1]
    violation = 0.0
    for j in range(interior.size):
        cells = level_of == j + 1
        if not np.any(cells):
            continue
        lower = gamma + float(np.sum(lambdas[:j]))
        lambdas[j] = max(lambdas[j], float(np.max(-v[cells] - lower)))
        upper = lower + lambdas[j]
        violation = max(violation, float(np.max(np.maximum(lower + v[cells], -v[cells] - upper))))

    def gamma_at(value):
        return gamma + float(np.sum(lambdas[interior < value]))

    stationarity = 0.0
    if np.any(free):
        model = np.array([gamma_at(value) for value in values[free]])
        scale = max(float(np.linalg.norm(v[free])), 1e-300)
        stationarity = float(np.linalg.norm(model + v[free])) / scale

    bottom = level_of == 0
    top = level_of == levels.size - 1 if levels.size > 1 else np.zeros_like(free)
    lower_box = max(0.0, float(np.max(gamma + v[bottom]))) if np.any(bottom) else 0.0
    upper_box = max(0.0, float(np.max(-v[top] - gamma_at(levels[-1])))) if np.any(top) else 0.0

    slack = np.array([
        np.sum(np.maximum(omega0.flat - c, 0.0)) * area - np.sum(np.maximum(values - c, 0.0)) * area
        for c in interior])
    complementary = float(np.max(np.abs(lambdas * slack))) if interior.size else 0.0
    return KKTReport(gamma, lambdas, interior, (lower_box, upper_box), stationarity, complementary,
                     violation, float(np.min(lambdas)) if interior.size else 0.0, rank_deficient)


def clamp_residual(result: MinimalFlowResult, lo: float = -1.0, hi: float = 1.0) -> Tuple[float, float]:
    """ Best gamma and the relative L2 residual of omega* = clamp(beta psi* - gamma, lo, hi) """
    values = result.omega_star.values
    psi = result.psi_star.psi
    norm = max(float(np.linalg.norm(values)), 1e-300)

    def residual(gamma):
        return float(np.linalg.norm(values - np.clip(result.beta * psi - gamma, lo, hi))) / norm

    reach = abs(result.beta) * float(np.max(np.abs(psi))) + max(abs(lo), abs(hi))
    found = scipy.optimize.minimize_scalar(residual, bounds=(-reach, reach), method='bounded',
                                           options={'xatol': 1e-12})
    gamma = float(found.x)
    if residual(0.0) <= residual(gamma):
        gamma = 0.0
    return gamma, residual(gamma)


@dataclass(frozen=True)
class ProbeReport:
    trials: int
    violations: int
    worst_drop: float


def _first_crossing(offset: float, linear: float, quadratic: float) -> float:
    """ Smallest t in [0, 1] with offset + linear t + quadratic t^2 = 0, 1 if there is none earlier """
    coefficients = [quadratic, linear, offset] if quadratic != 0.0 else [linear, offset]
    if not any(coefficients[:-1]):
        return 1.0
    roots = np.atleast_1d(np.roots(coefficients))
    real = [float(r.real) for r in roots if abs(r.imag) <= 1e-12 * max(1.0, abs(r.real))]
    inside = [t for t in real if 0.0 <= t <= 1.0]
    return min(inside) if inside else 1.0


def minimality_probe(result: MinimalFlowResult, omega0: VorticityField, f: ConvexFunction,
                     rng: np.random.Generator, trials: int = 100, strength: float = 0.5,
                     tol: float = 1e-9) -> ProbeReport:
    """ Mixes omega*, walks back to the energy shell along the segment towards omega0,
    and counts points whose Casimir value drops below I_f(omega*)
    """
    model = EnergyModel(omega0.domain)
    datum = omega0.flat
    psi_datum = model.stream(datum)
    target = model.energy(datum, psi_datum)
    reference = result.f_value
    violations, worst = 0, -math.inf
    for _ in range(trials):
        mixed = random_mixing(result.omega_star, rng, strength).flat
        psi_mixed = model.stream(mixed)
        direction = datum - mixed
        t = _first_crossing(model.energy(mixed, psi_mixed) - target,
                            -model.area * float(np.dot(psi_mixed, direction)),
                            -0.5 * model.area * float(np.dot(psi_datum - psi_mixed, direction)))
        drop = reference - casimir(omega0.replace(mixed + t * direction), f)
        worst = max(worst, drop)
        if drop > tol * max(1.0, abs(reference)):
            violations += 1
    return ProbeReport(trials, violations, worst)


def two_patch_fixture(domain: Domain) -> VorticityField:
    """ +1 / -1 patches of equal area, sign(sin x1) on the torus """
    x1, _ = domain.centers()
    return VorticityField(domain, np.where(np.sin(2 * math.pi * x1 / domain.lx) > 0, 1.0, -1.0))


def flat_shear_fixture(nx: int = 16, ny: int = 16, lx: float = 2 * math.pi) -> VorticityField:
    """ Wall-gauge channel shear with omega = -1 on 1/4 < x2 < 3/4 and 0 elsewhere """
    if ny % 4:
        raise ResolutionError(f"ny must be a multiple of 4, got {ny}")
    domain = Domain.channel(nx, ny, lx, ChannelGauge.WALL)
    _, x2 = domain.centers()
    return VorticityField(domain, np.where((x2 > 0.25) & (x2 < 0.75), -1.0, 0.0))
