""" Quick checks of the closed-form cases every module must reproduce """
import logging
import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from mflab import (
    bistoch,
    exclude,
    greens,
    minimize,
    rearrange,
    simulate,
    stathydro,
)
from mflab.config import parse_config, RunConfig
from mflab.errors import PreconditionError
from mflab.field import Domain, VorticityField
from mflab.functions import Quadratic

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    message: str = ''


def _zero_channel_stream():
    solution = greens.solve_stream(VorticityField.zeros(Domain.channel(8, 8)))
    return np.all(solution.psi == 0.0)


def _uniform_disk_energy():
    field = VorticityField.constant(Domain.disk(16), 1.0)
    return math.isclose(greens.energy(field), math.pi / 16, rel_tol=1e-12)


def _field_in_own_closure():
    field = VorticityField.from_function(Domain.torus(8, 8), lambda x1, x2: np.sin(x1) * np.cos(2 * x2))
    return rearrange.in_orbit_closure(field, field).member


def _identity_birkhoff():
    decomposition = bistoch.birkhoff(bistoch.BistochasticMatrix.identity(5))
    return len(decomposition.weights) == 1 and math.isclose(decomposition.weights[0], 1.0)


def _fejer_keeps_constants():
    field = VorticityField.constant(Domain.torus(16, 16), 0.25)
    return np.allclose(bistoch.fejer(field, 4).values, 0.25, atol=1e-14)


def _constant_datum_is_minimal():
    field = VorticityField.constant(Domain.torus(8, 8), 0.0)
    result = minimize.minimize_casimir(field, Quadratic())
    return np.all(result.omega_star.values == 0.0)


def _zero_shear_bound():
    return exclude.max_shear_energy_bound(VorticityField.zeros(Domain.channel(8, 8)), 0.0) == 0.0


def _eps_equal_delta_rejected():
    base = VorticityField.zeros(Domain.channel(64, 64))
    try:
        exclude.build_peaked(base, 0.1, 0.1)
    except PreconditionError:
        return True
    return False


def _selective_decay_zero_energy():
    solution = stathydro.selective_decay(VorticityField.zeros(Domain.channel(8, 16)))
    return np.all(solution.omega_bar.values == 0.0)


def _liouville_beta_zero():
    solution = stathydro.liouville_solve(VorticityField.constant(Domain.disk(32), 1.0 / math.pi), 0.0)
    return np.allclose(solution.omega_bar.values, 1.0 / math.pi, rtol=1e-12)


def _sinh_poisson_beta_zero():
    field = VorticityField.from_function(Domain.torus(16, 16), lambda x1, x2: np.cos(x1))
    return np.all(stathydro.sinh_poisson_solve(field, 0.0).omega_bar.values == 0.0)


def _mrs_single_level():
    field = VorticityField.constant(Domain.disk(16), 0.5)
    distribution = stathydro.mrs_coarse_grain(field, 2.0)
    return np.allclose(distribution.rho, 1.0) and np.allclose(distribution.omega_bar.values, 0.5)


def _empty_run():
    domain = Domain.torus(16, 16)
    field = VorticityField.from_function(domain, lambda x1, x2: np.cos(x1))
    trajectory = simulate.run(simulate.SimConfig(domain, t_end=0.0, fejer_n=4), field)
    return len(trajectory.snapshots) == 1


def _empty_config():
    return parse_config('') == RunConfig()


CHECKS: List[Callable[[], bool]] = [
    _zero_channel_stream,
    _uniform_disk_energy,
    _field_in_own_closure,
    _identity_birkhoff,
    _fejer_keeps_constants,
    _constant_datum_is_minimal,
    _zero_shear_bound,
    _eps_equal_delta_rejected,
    _selective_decay_zero_energy,
    _liouville_beta_zero,
    _sinh_poisson_beta_zero,
    _mrs_single_level,
    _empty_run,
    _empty_config,
]


def run_selftest() -> List[CheckResult]:
    results = []
    for check in CHECKS:
        name = check.__name__.lstrip('_').replace('_', '-')
        try:
            passed = bool(check())
            results.append(CheckResult(name, passed, '' if passed else 'unexpected value'))
        except Exception as error:
            results.append(CheckResult(name, False, f"{type(error).__name__}: {error}"))
        logger.info("selftest %s: %s", name, 'ok' if results[-1].passed else 'FAILED')
    return results
