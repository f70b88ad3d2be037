""" Integrands for Casimir functionals I_f = integral of f(omega) """
import abc
from typing import Sequence

import numpy as np

from mflab.errors import FunctionDomainError


class ConvexFunction(abc.ABC):
    name: str = ''
    # -1 marks a concave integrand stored as the negation of a convex one
    sign: int = 1
    strictly_convex: bool = True

    @abc.abstractmethod
    def value(self, x: np.ndarray) -> np.ndarray:
        pass

    @abc.abstractmethod
    def derivative(self, x: np.ndarray) -> np.ndarray:
        pass

    @abc.abstractmethod
    def second_derivative(self, x: np.ndarray) -> np.ndarray:
        pass

    def check_domain(self, lo: float, hi: float) -> None:
        pass

    @property
    def is_convex(self) -> bool:
        return self.sign > 0

    def curvature_range(self, lo: float, hi: float):
        """ (min, max) of f'' over [lo, hi], from the endpoints and zero """
        points = np.array([lo, hi] + ([0.0] if lo < 0.0 < hi else []))
        with np.errstate(divide='ignore', invalid='ignore'):
            curvature = np.asarray(self.second_derivative(points), dtype=float)
        curvature = np.where(np.isnan(curvature), np.inf, curvature)
        return float(np.min(curvature)), float(np.max(curvature))

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class Quadratic(ConvexFunction):
    name = 'quadratic'

    def value(self, x):
        return 0.5 * np.square(x)

    def derivative(self, x):
        return np.asarray(x, dtype=float)

    def second_derivative(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


class PowerP(ConvexFunction):
    def __init__(self, p: float):
        if p <= 1.0:
            raise FunctionDomainError(f"|x|^p is strictly convex only for p > 1, got p = {p}")
        self.p = float(p)
        self.name = f'power{self.p:g}'

    def value(self, x):
        return np.abs(x) ** self.p

    def derivative(self, x):
        return self.p * np.sign(x) * np.abs(x) ** (self.p - 1.0)

    def second_derivative(self, x):
        return self.p * (self.p - 1.0) * np.abs(x) ** (self.p - 2.0)


class Entropy(ConvexFunction):
    """ x log x, extended by 0 at x = 0 """
    name = 'entropy'

    def value(self, x):
        x = np.asarray(x, dtype=float)
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, x * np.log(safe), 0.0)

    def derivative(self, x):
        return np.log(np.maximum(x, 1e-300)) + 1.0

    def second_derivative(self, x):
        return 1.0 / np.asarray(x, dtype=float)

    def check_domain(self, lo, hi):
        if lo < 0.0:
            raise FunctionDomainError(f"x log x needs nonnegative values, minimum is {lo}")


class NegEntropyBoltzmann(Entropy):
    """ -x log x, the concave Boltzmann integrand """
    name = 'neg-entropy'
    sign = -1
    strictly_convex = False

    def value(self, x):
        return -super().value(x)

    def derivative(self, x):
        return -super().derivative(x)

    def second_derivative(self, x):
        return -super().second_derivative(x)


class Exp(ConvexFunction):
    name = 'exp'

    def value(self, x):
        return np.exp(x)

    def derivative(self, x):
        return np.exp(x)

    def second_derivative(self, x):
        return np.exp(x)


class Tabulated(ConvexFunction):
    """ Piecewise-linear interpolation of tabulated values, linear beyond the ends """
    name = 'tabulated'
    strictly_convex = False

    def __init__(self, knots: Sequence[float], values: Sequence[float]):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise FunctionDomainError("tabulated function needs two or more matching knots and values")
        if np.any(np.diff(knots) <= 0):
            raise FunctionDomainError("tabulated knots must be strictly increasing")
        slopes = np.diff(values) / np.diff(knots)
        if np.any(np.diff(slopes) < -1e-12 * max(1.0, float(np.max(np.abs(slopes))))):
            raise FunctionDomainError("tabulated values are not convex")
        self.knots = knots
        self.values = values
        self.slopes = slopes

    def _segment(self, x):
        return np.clip(np.searchsorted(self.knots, x, side='right') - 1, 0, self.slopes.size - 1)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        segment = self._segment(x)
        return self.values[segment] + self.slopes[segment] * (x - self.knots[segment])

    def derivative(self, x):
        return self.slopes[self._segment(np.asarray(x, dtype=float))]

    def second_derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


def convex_function(name: str, **kwargs) -> ConvexFunction:
    """ Builds an integrand by name: quadratic, power (p=...), entropy, neg-entropy, exp,
    tabulated (knots=..., values=...)
    """
    if name == 'quadratic':
        return Quadratic()
    if name == 'power':
        return PowerP(kwargs.get('p', 4.0))
    if name == 'entropy':
        return Entropy()
    if name == 'neg-entropy':
        return NegEntropyBoltzmann()
    if name == 'exp':
        return Exp()
    if name == 'tabulated':
        return Tabulated(kwargs['knots'], kwargs['values'])
    raise ValueError(f"unknown convex function {name!r}")
