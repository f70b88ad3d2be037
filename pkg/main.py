import logging
import math

import numpy as np

from mflab import (
    Domain,
    MinimizeOptions,
    Quadratic,
    VorticityField,
    build_peaked,
    certify_no_shear,
    energy,
    in_orbit_closure,
    liouville_solve,
    minimize_casimir,
    monotone_fit,
)
from mflab.exclude import kolmogorov_shear
from mflab.minimize import two_patch_fixture


def main():
    logging.basicConfig(level=logging.INFO)

    # two patches of opposite sign on the torus
    omega0 = two_patch_fixture(Domain.torus(32, 32))
    result = minimize_casimir(omega0, Quadratic(), options=MinimizeOptions(restarts=1))
    fit = monotone_fit(result.omega_star, result.psi_star)
    print(f"minimal flow: beta = {result.beta:.6g}, f = {result.f_value:.6g}, "
          f"omega = F(psi) {fit.direction.name.lower()}, "
          f"in closure = {in_orbit_closure(result.omega_star, omega0).member}")

    # a sharp box on top of a weak shear cannot mix into a shear
    datum = build_peaked(kolmogorov_shear(Domain.channel(256, 64), 0.05), delta=0.1, eps=1 / 16)
    print(certify_no_shear(datum).report())

    # Liouville state of a uniform unit-circulation disk
    disk = VorticityField.constant(Domain.disk(512), 1.0 / math.pi)
    for beta in (-4 * math.pi, 0.0, 4 * math.pi):
        solution = liouville_solve(disk, beta)
        print(f"liouville beta = {beta:+.4f}: E = {energy(solution.omega_bar):.8f}, "
              f"centre/wall = {solution.omega_bar.values[0, 0] / solution.omega_bar.values[-1, 0]:.4f}")

    """
    the minimal flow of the two-patch datum at 32^2 is the datum itself. Mixing only
    lowers the energy of this datum, which already maximises it over its closure, so the
    energy constraint leaves nothing else to choose.
    """
    print(np.round(result.omega_star.values[16, ::4], 3))


if __name__ == '__main__':
    main()
