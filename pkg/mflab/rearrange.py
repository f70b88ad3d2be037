""" Decreasing rearrangements and membership in the closure of a rearrangement orbit.

For piecewise-constant fields the closure of the orbit of omega0 is cut out by
finitely many inequalities

    integral (omega - c)+ <= integral (omega0 - c)+

taken at the distinct levels c of both fields, together with equal means.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from mflab.errors import (
    DomainMismatchError,
    FunctionDomainError,
)
from mflab.field import VorticityField
from mflab.functions import ConvexFunction


@dataclass(frozen=True)
class RearrangementProfile:
    # descending distinct levels and the area of {omega >= level}
    levels: np.ndarray
    cum_area: np.ndarray
    total_area: float

    @property
    def level_areas(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.cum_area]))

    def distribution(self, tau: float) -> float:
        """ Area of {omega > tau} """
        above = self.levels > tau
        return float(np.sum(self.level_areas[above]))

    def quantile(self, s: float) -> float:
        """ f*(s) = sup{tau : distribution(tau) > s} for 0 <= s < total_area """
        if not 0.0 <= s < self.total_area:
            raise ValueError(f"quantile argument must lie in [0, {self.total_area}), got {s}")
        index = int(np.searchsorted(self.cum_area, s, side='right'))
        return float(self.levels[min(index, self.levels.size - 1)])

    def positive_part(self, c: float) -> float:
        """ integral of (omega - c)+ """
        return float(np.sum(np.maximum(self.levels - c, 0.0) * self.level_areas))


@dataclass(frozen=True)
class ClosureMembership:
    member: bool
    # constraint level with the smallest margin and that margin
    worst_constraint: Tuple[float, float]
    mean_gap: float
    tol: float = 0.0
    margins: np.ndarray = field(default=None, repr=False)


def _check_same_domain(a: VorticityField, b: VorticityField) -> None:
    if a.domain != b.domain:
        raise DomainMismatchError(f"fields live on different domains: {a.domain} vs {b.domain}")


def profile(field: VorticityField) -> RearrangementProfile:
    values = field.flat
    order = np.lexsort((np.arange(values.size), -values))
    ordered = values[order]
    # last position of each run of equal values
    ends = np.flatnonzero(np.concatenate([ordered[1:] != ordered[:-1], [True]]))
    levels = ordered[ends]
    cum_area = (ends + 1) * field.domain.cell_area
    return RearrangementProfile(levels, cum_area, field.domain.total_area)


def decreasing_rearrangement(field: VorticityField) -> VorticityField:
    """ Cell values sorted in descending order along the flattened cell order.
    On the disk this puts the largest values innermost.
    """
    values = field.flat
    order = np.lexsort((np.arange(values.size), -values))
    return field.replace(values[order])


def _positive_parts(sorted_values: np.ndarray, levels: np.ndarray, area: float) -> np.ndarray:
    """ integral (omega - c)+ at every c in levels, given ascending cell values """
    suffix = np.concatenate([np.cumsum(sorted_values[::-1])[::-1], [0.0]])
    first_above = np.searchsorted(sorted_values, levels, side='right')
    count = sorted_values.size - first_above
    return area * (suffix[first_above] - levels * count)


def default_tolerance(omega0: VorticityField) -> float:
    return 1e-9 * float(np.max(np.abs(omega0.values))) * omega0.domain.total_area


def in_orbit_closure(omega: VorticityField, omega0: VorticityField, tol: Optional[float] = None) -> ClosureMembership:
    _check_same_domain(omega, omega0)
    if tol is None:
        tol = default_tolerance(omega0)
    area = omega.domain.cell_area
    values = np.sort(omega.flat)
    reference = np.sort(omega0.flat)
    levels = np.union1d(values, reference)

    margins = _positive_parts(reference, levels, area) - _positive_parts(values, levels, area)
    mean_gap = abs(float(np.sum(values) - np.sum(reference)) * area)
    worst = int(np.argmin(margins))
    member = mean_gap <= tol and bool(margins[worst] >= -tol)
    return ClosureMembership(member, (float(levels[worst]), float(margins[worst])), mean_gap, tol, margins)


def majorization_margins(omega: VorticityField, omega0: VorticityField) -> np.ndarray:
    """ Partial sums of the k largest values of omega0 minus those of omega, times the cell area """
    _check_same_domain(omega, omega0)
    area = omega.domain.cell_area
    top = np.cumsum(-np.sort(-omega.flat))
    top0 = np.cumsum(-np.sort(-omega0.flat))
    return area * (top0 - top)


def equimeasurable(omega1: VorticityField, omega2: VorticityField, tol: Optional[float] = None) -> bool:
    _check_same_domain(omega1, omega2)
    if tol is None:
        tol = 1e-12 * max(1.0, omega1.sup(), omega2.sup())
    gap = np.max(np.abs(np.sort(omega1.flat) - np.sort(omega2.flat)))
    return bool(gap <= tol)


def casimir(field: VorticityField, f: ConvexFunction) -> float:
    lo, hi = float(np.min(field.values)), float(np.max(field.values))
    f.check_domain(lo, hi)
    values = f.value(field.values)
    if not np.all(np.isfinite(values)):
        raise FunctionDomainError(f"{f.name} is not finite on [{lo}, {hi}]")
    return float(np.sum(values) * field.domain.cell_area)
