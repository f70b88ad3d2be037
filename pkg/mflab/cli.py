""" Command-line entry point: one subcommand per module, every run writes its outputs,
a manifest and a summary into --out.
"""
import argparse
import contextlib
import csv
import dataclasses
import hashlib
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft

import mflab
from mflab import (
    exclude,
    minimize,
    rearrange,
    simulate,
    stathydro,
)
from mflab.config import (
    RunConfig,
    apply_overrides,
    load_config,
)
from mflab.errors import (
    FunctionalUnsupportedError,
    MflabError,
)
from mflab.field import (
    Domain,
    VorticityField,
    export_csv,
    read_field,
    write_field,
)
from mflab.functions import convex_function
from mflab.greens import (
    energy,
    momentum,
    solve_stream,
)
from mflab.selftest import run_selftest

logger = logging.getLogger(__name__)

FIELD_KINDS = ('kolmogorov', 'two-patch', 'flat-shear', 'random', 'peaked')


@contextlib.contextmanager
def timer(name):
    t1 = time.perf_counter()
    yield
    t2 = time.perf_counter()
    logger.info("%s: %.02f ms", name, (t2 - t1) * 1000)


def file_digest(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    tool_version: str = mflab.__version__
    input_digests: List[Tuple[str, str]] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)

    def render(self, config: RunConfig) -> str:
        lines = [f"command = {self.command}",
                 f"config_hash = {self.config_hash}",
                 f"seed = {self.seed}",
                 f"tool_version = {self.tool_version}"]
        lines.extend(f"input = {path} sha256:{digest}" for path, digest in self.input_digests)
        lines.extend(f"output = {name}" for name in self.outputs)
        lines.append("")
        lines.append(config.render())
        return "\n".join(lines)


class Output:
    """ Output directory that remembers what was written into it """

    def __init__(self, directory: str):
        self.directory = directory
        self.written: List[str] = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name: str) -> str:
        if name not in self.written:
            self.written.append(name)
        return os.path.join(self.directory, name)

    def text(self, name: str, content: str):
        with open(self.path(name), 'w', encoding='utf-8') as handle:
            handle.write(content)

    def table(self, name: str, header: Sequence[str], rows):
        with open(self.path(name), 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(value)) if isinstance(value, (float, np.floating)) else value
                                 for value in row])

    def field(self, name: str, omega: VorticityField):
        write_field(omega, self.path(name))

    def plot(self, data: str, x: int, ys: Sequence[int], title: str, log_x: bool = False):
        """ gnuplot stub for columns of a CSV file (1-based columns) """
        lines = ["set datafile separator ','",
                 "set key autotitle columnhead",
                 f"set title '{title}'"]
        if log_x:
            lines.append("set logscale x")
        curves = ", ".join(f"'{data}' using {x}:{y} with linespoints" for y in ys)
        lines.append(f"plot {curves}")
        self.text('plot.gp', "\n".join(lines) + "\n")


def _summary(values: Dict[str, object]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in values.items())


def _load_input(path: str, manifest: RunManifest) -> VorticityField:
    manifest.input_digests.append((path, file_digest(path)))
    return read_field(path)


# subcommands

def cmd_rearrange(args, config: RunConfig, out: Output, manifest: RunManifest) -> Dict[str, object]:
    omega = _load_input(args.field, manifest)
    shape = rearrange.profile(omega)
    out.table('profile.csv', ['level', 'cum_area'], zip(shape.levels, shape.cum_area))
    out.plot('profile.csv', 2, [1], 'decreasing rearrangement')
    out.field('rearranged.mfl', rearrange.decreasing_rearrangement(omega))
    summary = {'levels': shape.levels.size, 'mean': omega.mean(), 'sup': omega.sup(),
               'casimir_quadratic': rearrange.casimir(omega, convex_function('quadratic'))}
    if args.reference:
        reference = _load_input(args.reference, manifest)
        membership = rearrange.in_orbit_closure(omega, reference)
        summary.update(member=membership.member, worst_level=membership.worst_constraint[0],
                       worst_margin=membership.worst_constraint[1], mean_gap=membership.mean_gap,
                       equimeasurable=rearrange.equimeasurable(omega, reference))
    return summary


def cmd_minimize(args, config: RunConfig, out: Output, manifest: RunManifest) -> Dict[str, object]:
    settings = config.minimize
    omega0 = _load_input(args.field, manifest)
    f = convex_function(settings.casimir, p=settings.power)
    options = minimize.MinimizeOptions(max_iter=settings.max_iter, gap_tol=settings.gap_tol,
                                       energy_tol=settings.energy_tol, restarts=settings.restarts,
                                       seed=config.general.seed, fix_momentum=settings.fix_momentum)
    with timer('minimize'):
        result = minimize.minimize_casimir(omega0, f, settings.fix_momentum, options)
    out.field('omega_star.mfl', result.omega_star)
    out.table('scatter.csv', ['psi', 'omega'], zip(result.psi_star.psi.reshape(-1), result.omega_star.flat))
    out.plot('scatter.csv', 1, [2], 'minimal flow: omega against psi')
    kkt = result.kkt
    summary = {'casimir': f.name, 'beta': result.beta, 'nu': result.nu, 'gamma': result.gamma,
               'lambdas': ' '.join(repr(float(v)) for v in result.lambdas), 'f_value': result.f_value,
               'interpolated': result.interpolated, 'iterations': result.iterations}
    summary.update(result.residuals)
    if kkt is not None:
        summary.update(kkt_stationarity=kkt.stationarity, kkt_bracket_violation=kkt.bracket_violation,
                       kkt_rank_deficient=kkt.rank_deficient)
    return summary


def _exclude_base(settings, domain: Domain) -> VorticityField:
    if settings.base == 'zero':
        return VorticityField.zeros(domain)
    return exclude.kolmogorov_shear(domain, settings.amplitude, settings.mode)


def cmd_exclude(args, config: RunConfig, out: Output, manifest: RunManifest) -> Dict[str, object]:
    settings = config.exclude
    exclude.check_peaked_parameters(settings.delta, settings.eps)
    domain = Domain.channel(settings.nx, settings.ny)
    amplitude = settings.amplitude if settings.base == 'kolmogorov' else 0.0

    if exclude.resolves(domain, settings.eps):
        datum = exclude.build_peaked(_exclude_base(settings, domain), settings.delta, settings.eps,
                                     smooth=1.0 if settings.smooth else 0.0)
        with timer('certify'):
            certificate = exclude.certify_no_shear(datum, settings.margin)
        out.field('xi.mfl', datum.xi)
        method = 'gridded'
    else:
        logger.info("eps = %g is below the grid scale, using the semi-analytic certificate", settings.eps)
        certificate = exclude.certify_parameters(amplitude, settings.mode, settings.delta, settings.eps,
                                                 margin=settings.margin)
        method = 'semi-analytic'

    rows = []
    for j in range(-8, 5):
        eps = settings.eps * 2.0 ** j
        if eps >= 0.5:
            continue
        point = exclude.certify_parameters(amplitude, settings.mode, settings.delta, eps, margin=settings.margin)
        rows.append((eps, point.energy_xi, point.shear_energy_bound, int(point.verdict)))
    out.table('scan.csv', ['eps', 'energy_xi', 'shear_bound', 'verdict'], rows)
    out.plot('scan.csv', 1, [2, 3], 'energy of xi against the shear bound', log_x=True)

    with timer('threshold'):
        threshold = exclude.epsilon_threshold(amplitude, settings.mode, settings.delta, margin=settings.margin)
    certificate = dataclasses.replace(certificate, epsilon_threshold=threshold)
    out.text('certificate.txt', certificate.report())
    return {'method': method, 'verdict': certificate.verdict, 'energy_xi': certificate.energy_xi,
            'shear_energy_bound': certificate.shear_energy_bound, 'epsilon_threshold': threshold}


def _stathydro_datum(settings, path: Optional[str], manifest: RunManifest) -> VorticityField:
    if path:
        return _load_input(path, manifest)
    if settings.model == 'selective-decay':
        return exclude.kolmogorov_shear(Domain.channel(settings.n, settings.n))
    if settings.model == 'liouville':
        return VorticityField.constant(Domain.disk(settings.nr), 1.0 / math.pi)
    return minimize.two_patch_fixture(Domain.torus(settings.n, settings.n))


def _target_energy(raw: str, omega0: VorticityField) -> Optional[float]:
    if raw == 'none':
        return None
    if raw == 'auto':
        return energy(omega0)
    try:
        return float(raw)
    except ValueError:
        raise FunctionalUnsupportedError(f"target energy must be 'none', 'auto' or a number, got {raw!r}")


def cmd_stathydro(args, config: RunConfig, out: Output, manifest: RunManifest) -> Dict[str, object]:
    settings = config.stathydro
    omega0 = _stathydro_datum(settings, args.field, manifest)
    target = _target_energy(settings.target_energy, omega0)
    iteration = dict(relaxation=settings.relaxation, tol=settings.tol, max_iter=settings.max_iter)
    extra = {}
    with timer(settings.model):
        if settings.model == 'selective-decay':
            solution = stathydro.selective_decay(omega0)
        elif settings.model == 'liouville':
            if target is not None:
                solution = stathydro.liouville_match_energy(omega0, target, **iteration)
            else:
                solution = stathydro.liouville_solve(omega0, settings.beta, **iteration)
        elif settings.model == 'sinh-poisson':
            solution = stathydro.sinh_poisson_solve(omega0, settings.beta, **iteration)
        else:
            distribution = stathydro.mrs_coarse_grain(omega0, settings.beta, **iteration)
            solution = distribution.as_solution()
            extra['response_gap'] = stathydro.mrs_response(distribution).max_gap
    if target is not None and settings.model != 'liouville':
        logger.warning("target energy is only matched by the liouville model, ignored for %s", settings.model)

    out.field('omega_bar.mfl', solution.omega_bar)
    out.field('psi_bar.mfl', VorticityField.with_bound(solution.omega_bar.domain, solution.psi_bar))
    out.table('profile.csv', ['psi', 'omega'], zip(solution.psi_bar.reshape(-1), solution.omega_bar.flat))
    out.plot('profile.csv', 1, [2], f'{settings.model}: omega against psi')
    out.text('report.txt', solution.report())
    summary = {'model': settings.model, 'beta': solution.beta, 'energy': solution.energy,
               'residual': solution.residual, 'iterations': solution.iterations,
               'steady_state_residual': stathydro.steady_state_residual(solution.omega_bar, solution.psi_bar)}
    summary.update(extra)
    return summary


def _simulation_datum(settings, domain: Domain, rng: np.random.Generator) -> VorticityField:
    if settings.datum == 'random':
        return simulate.random_datum(domain, rng, settings.amplitude)
    if settings.datum == 'shear':
        return VorticityField.from_function(domain, lambda x1, x2: settings.amplitude * np.cos(x2))
    if settings.datum == 'mode':
        return VorticityField.from_function(domain, lambda x1, x2: settings.amplitude * np.cos(x1))
    return simulate.vortex_pair(domain, settings.amplitude)


def cmd_simulate(args, config: RunConfig, out: Output, manifest: RunManifest) -> Dict[str, object]:
    settings = config.simulate
    if args.field:
        initial = _load_input(args.field, manifest)
        domain = initial.domain
    else:
        domain = Domain.torus(settings.n, settings.n)
        initial = _simulation_datum(settings, domain, np.random.default_rng(config.general.seed))
    sim_config = simulate.SimConfig(domain, settings.dt, settings.t_end, settings.fejer_n,
                                    settings.record_every, config.general.seed, settings.dealias)
    with timer('simulate'):
        trajectory = simulate.run(sim_config, initial)

    modes = simulate.low_mode_indices()
    header = ['t', 'energy', 'enstrophy', 'mean', 'quartic'] + [f'mode_{m1}_{m2}' for m1, m2 in modes]
    rows = [[t, e, z, m, q] + list(low) for t, e, z, m, q, low in
            zip(trajectory.times, trajectory.energy, trajectory.enstrophy, trajectory.mean,
                trajectory.quartic, trajectory.low_modes)]
    out.table('diagnostics.csv', header, rows)
    out.plot('diagnostics.csv', 1, [2, 3], 'energy and enstrophy')
    for index, snapshot in enumerate(trajectory.snapshots):
        out.field(f'snapshot_{index:04d}.mfl', snapshot)
    return {'snapshots': len(trajectory.snapshots), 'energy_drift': trajectory.energy_drift(),
            'mean_drift': trajectory.mean_drift(), 'enstrophy_drift': trajectory.enstrophy_drift(),
            'cfl_halvings': trajectory.halvings,
            'nonshear_energy_fraction': simulate.nonshear_energy_fraction(trajectory.snapshots[-1])}


def _make_field(args, config: RunConfig) -> VorticityField:
    rng = np.random.default_rng(config.general.seed)
    if args.kind == 'kolmogorov':
        return exclude.kolmogorov_shear(Domain.channel(args.nx, args.ny), args.amplitude)
    if args.kind == 'two-patch':
        return minimize.two_patch_fixture(Domain.torus(args.nx, args.ny))
    if args.kind == 'flat-shear':
        return minimize.flat_shear_fixture(args.nx, args.ny)
    if args.kind == 'random':
        return simulate.random_datum(Domain.torus(args.nx, args.ny), rng, args.amplitude)
    base = exclude.kolmogorov_shear(Domain.channel(args.nx, args.ny), args.amplitude)
    return exclude.build_peaked(base, args.delta, args.eps).xi


def cmd_fields(args, config: RunConfig, out: Output, manifest: RunManifest) -> Dict[str, object]:
    omega = _make_field(args, config)
    out.field('field.mfl', omega)
    export_csv(omega, out.path('field.csv'))
    info = {'kind': args.kind, 'domain': omega.domain.token, 'nx': omega.domain.nx, 'ny': omega.domain.ny,
            'mean': omega.mean(), 'sup': omega.sup(), 'l1': omega.l1_norm()}
    centred = omega.replace(omega.values - omega.mean()) if omega.domain.token == 'torus' else omega
    info['energy'] = energy(centred)
    if omega.domain.token.startswith('channel'):
        info['momentum'] = momentum(omega)
    print(_summary(info), end='')
    return info


# parser

OVERRIDES = {
    'minimize': ('minimize', ['casimir', 'power', 'fix_momentum', 'max_iter', 'restarts']),
    'exclude': ('exclude', ['base', 'amplitude', 'mode', 'delta', 'eps', 'nx', 'ny', 'margin', 'smooth']),
    'stathydro': ('stathydro', ['model', 'beta', 'target_energy', 'nr', 'n']),
    'simulate': ('simulate', ['n', 'dt', 't_end', 'fejer_n', 'record_every', 'dealias', 'datum', 'amplitude']),
}

COMMANDS = {
    'rearrange': cmd_rearrange,
    'minimize': cmd_minimize,
    'exclude': cmd_exclude,
    'stathydro': cmd_stathydro,
    'simulate': cmd_simulate,
    'fields': cmd_fields,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='store_true', help='log progress at INFO level')
    common.add_argument('--config', help='key = value configuration file')
    common.add_argument('--out', default='.', help='output directory')
    common.add_argument('--seed', type=int, help='overrides general.seed')

    parser = argparse.ArgumentParser(prog='mflab', description='Maximally mixed 2D Euler flows')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    sub = commands.add_parser('rearrange', parents=[common], help='rearrangement profile and orbit-closure test')
    sub.add_argument('--field', required=True)
    sub.add_argument('--reference')

    sub = commands.add_parser('minimize', parents=[common], help='minimal flow in the orbit closure')
    sub.add_argument('--field', required=True)
    sub.add_argument('--casimir')
    sub.add_argument('--power', type=float)
    sub.add_argument('--fix-momentum', dest='fix_momentum', action='store_true', default=None)
    sub.add_argument('--max-iter', dest='max_iter', type=int)
    sub.add_argument('--restarts', type=int)

    sub = commands.add_parser('exclude', parents=[common], help='shear-exclusion certificate')
    sub.add_argument('--base', choices=['kolmogorov', 'zero'])
    sub.add_argument('--amplitude', type=float)
    sub.add_argument('--mode', type=int)
    sub.add_argument('--delta', type=float)
    sub.add_argument('--eps', type=float)
    sub.add_argument('--nx', type=int)
    sub.add_argument('--ny', type=int)
    sub.add_argument('--margin', type=float)
    sub.add_argument('--smooth', action='store_true', default=None)

    sub = commands.add_parser('stathydro', parents=[common], help='mean-field equilibrium predictors')
    sub.add_argument('--model', choices=['selective-decay', 'liouville', 'sinh-poisson', 'mrs'])
    sub.add_argument('--beta', type=float)
    sub.add_argument('--target-energy', dest='target_energy')
    sub.add_argument('--nr', type=int)
    sub.add_argument('--n', type=int)
    sub.add_argument('--field')

    sub = commands.add_parser('simulate', parents=[common], help='Fejer-truncated Euler run on the torus')
    sub.add_argument('--n', type=int)
    sub.add_argument('--dt', type=float)
    sub.add_argument('--t-end', dest='t_end', type=float)
    sub.add_argument('--fejer-n', dest='fejer_n', type=int)
    sub.add_argument('--record-every', dest='record_every', type=int)
    sub.add_argument('--dealias', choices=['fejer', 'two-thirds', 'none'])
    sub.add_argument('--datum', choices=['random', 'shear', 'mode', 'vortices'])
    sub.add_argument('--amplitude', type=float)
    sub.add_argument('--field')

    sub = commands.add_parser('fields', parents=[common], help='create standard data fields')
    sub.add_argument('kind', choices=FIELD_KINDS)
    sub.add_argument('--nx', type=int, default=64)
    sub.add_argument('--ny', type=int, default=64)
    sub.add_argument('--amplitude', type=float, default=1.0)
    sub.add_argument('--delta', type=float, default=0.1)
    sub.add_argument('--eps', type=float, default=1.0 / 8.0)

    commands.add_parser('selftest', parents=[common], help='closed-form checks of every module')
    return parser


def _configure(args) -> RunConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config.general.seed = args.seed
    if args.command in OVERRIDES:
        section, keys = OVERRIDES[args.command]
        apply_overrides(config, section, {key: getattr(args, key, None) for key in keys})
    return config


def _selftest() -> int:
    results = run_selftest()
    for result in results:
        status = 'ok' if result.passed else 'FAILED'
        print(f"{status} {result.name}" + (f": {result.message}" if result.message else ''))
    return 0 if all(result.passed for result in results) else 1


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    try:
        config = _configure(args)
        with scipy.fft.set_workers(config.effective_threads()):
            if args.command == 'selftest':
                return _selftest()
            out = Output(args.out)
            manifest = RunManifest(args.command, config.digest(), config.general.seed)
            with timer(args.command):
                summary = COMMANDS[args.command](args, config, out, manifest)
            out.text('summary.txt', _summary(summary))
            manifest.outputs = list(out.written)
            with open(os.path.join(out.directory, 'manifest.txt'), 'w', encoding='utf-8') as handle:
                handle.write(manifest.render(config))
    except MflabError as error:
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
        return 1
    except OSError as error:
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    return dispatch(argv)


if __name__ == '__main__':
    sys.exit(main())
