""" Bistochastic kernels on grid cells: mixing operators and their Birkhoff decompositions """
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.fft
import scipy.sparse
from scipy.sparse.csgraph import maximum_bipartite_matching

from mflab.errors import (
    CutoffError,
    FieldFormatError,
    MatchingFailureError,
    MatrixTooLargeError,
    NonConvergenceError,
    NotBistochasticError,
    OverlapError,
    ParameterRangeError,
    SizeMismatchError,
    UnsupportedDomainError,
)
from mflab.field import (
    Domain,
    DomainKind,
    VorticityField,
)
from mflab.greens import solve_stream

logger = logging.getLogger(__name__)

MAX_CELLS = 4096
SUM_TOL = 1e-12
SUPPORT_THRESHOLD = 1e-13
MAGIC = 'MFLABK1'


@dataclass(frozen=True)
class BistochasticMatrix:
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise NotBistochasticError(f"expected a square matrix, got shape {entries.shape}")
        if entries.shape[0] > MAX_CELLS:
            raise MatrixTooLargeError(f"dense kernels are capped at {MAX_CELLS} cells, got {entries.shape[0]}")
        if np.any(entries < -SUM_TOL):
            raise NotBistochasticError(f"negative entry {entries.min():.3e}")
        row_gap = np.max(np.abs(entries.sum(axis=1) - 1.0))
        col_gap = np.max(np.abs(entries.sum(axis=0) - 1.0))
        if row_gap > SUM_TOL or col_gap > SUM_TOL:
            raise NotBistochasticError(f"marginals off by {max(row_gap, col_gap):.3e}")
        entries = entries.copy()
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n: int) -> 'BistochasticMatrix':
        return cls(np.eye(n))

    @classmethod
    def complete_mixing(cls, n: int) -> 'BistochasticMatrix':
        return cls(np.full((n, n), 1.0 / n))

    @classmethod
    def from_permutation(cls, permutation: Sequence[int]) -> 'BistochasticMatrix':
        """ (P omega)[i] = omega[permutation[i]] """
        permutation = np.asarray(permutation)
        n = permutation.size
        if sorted(permutation.tolist()) != list(range(n)):
            raise NotBistochasticError("not a permutation of 0..n-1")
        entries = np.zeros((n, n))
        entries[np.arange(n), permutation] = 1.0
        return cls(entries)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, terms: Optional[int] = None) -> 'BistochasticMatrix':
        """ Dirichlet-weighted combination of random permutations """
        terms = terms or n
        weights = rng.dirichlet(np.ones(terms))
        entries = np.zeros((n, n))
        rows = np.arange(n)
        for weight in weights:
            entries[rows, rng.permutation(n)] += weight
        return cls(entries)

    @classmethod
    def sinkhorn(cls, positive: np.ndarray, tol: float = 1e-14, max_iter: int = 10000) -> 'BistochasticMatrix':
        matrix = np.asarray(positive, dtype=float).copy()
        if np.any(matrix <= 0):
            raise NotBistochasticError("Sinkhorn scaling needs strictly positive entries")
        for iteration in range(max_iter):
            matrix /= matrix.sum(axis=1, keepdims=True)
            matrix /= matrix.sum(axis=0, keepdims=True)
            gap = np.max(np.abs(matrix.sum(axis=1) - 1.0))
            if gap <= tol:
                logger.debug("sinkhorn converged after %d sweeps", iteration + 1)
                return cls(matrix)
        raise NonConvergenceError("Sinkhorn scaling did not converge", {'row_gap': float(gap)})

    def compose(self, other: 'BistochasticMatrix') -> 'BistochasticMatrix':
        """ Kernel of applying `other` first, then self """
        if other.n != self.n:
            raise SizeMismatchError(f"cannot compose kernels of sizes {self.n} and {other.n}")
        return BistochasticMatrix(self.entries @ other.entries)

    def apply(self, field: VorticityField) -> VorticityField:
        if field.domain.size != self.n:
            raise SizeMismatchError(f"kernel acts on {self.n} cells, field has {field.domain.size}")
        return field.replace(self.entries @ field.flat)


@dataclass(frozen=True)
class BirkhoffDecomposition:
    weights: np.ndarray
    permutations: List[np.ndarray] = field(repr=False)

    def __len__(self):
        return len(self.permutations)

    def reconstruct(self) -> np.ndarray:
        n = self.permutations[0].size
        entries = np.zeros((n, n))
        rows = np.arange(n)
        for weight, permutation in zip(self.weights, self.permutations):
            entries[rows, permutation] += weight
        return entries

    def report(self) -> str:
        lines = [f"terms = {len(self)}"]
        for weight, permutation in zip(self.weights, self.permutations):
            lines.append(f"{weight!r} {format_cycles(permutation)}")
        return "\n".join(lines) + "\n"


def birkhoff(kernel: BistochasticMatrix) -> BirkhoffDecomposition:
    """ Greedy extraction: a perfect matching on the positive entries gives a permutation,
    whose smallest entry becomes its weight. Every step empties at least one entry.
    """
    residual = np.array(kernel.entries)
    n = kernel.n
    rows = np.arange(n)
    weights, permutations = [], []
    max_terms = (n - 1) ** 2 + 1

    while residual.sum() > SUM_TOL * n:
        support = scipy.sparse.csr_matrix((residual > SUPPORT_THRESHOLD).astype(np.int8))
        matching = maximum_bipartite_matching(support, perm_type='column')
        if np.any(matching < 0):
            raise MatchingFailureError(
                f"no perfect matching on the residual support after {len(weights)} terms "
                f"(remaining mass {residual.sum():.3e})")
        along = residual[rows, matching]
        weakest = int(np.argmin(along))
        weight = float(along[weakest])
        residual[rows, matching] -= weight
        residual[weakest, matching[weakest]] = 0.0
        residual[residual < SUPPORT_THRESHOLD] = 0.0
        weights.append(weight)
        permutations.append(matching.astype(int))
        if len(weights) > max_terms:
            raise MatchingFailureError(f"more than {max_terms} terms extracted")

    logger.debug("birkhoff: %d terms for n = %d", len(weights), n)
    return BirkhoffDecomposition(np.array(weights), permutations)


def format_cycles(permutation: Sequence[int]) -> str:
    """ Cycle notation without fixed points, '()' for the identity """
    permutation = np.asarray(permutation)
    seen = np.zeros(permutation.size, dtype=bool)
    cycles = []
    for start in range(permutation.size):
        if seen[start] or permutation[start] == start:
            seen[start] = True
            continue
        cycle = []
        current = start
        while not seen[current]:
            seen[current] = True
            cycle.append(str(current))
            current = int(permutation[current])
        cycles.append('(' + ' '.join(cycle) + ')')
    return ''.join(cycles) or '()'


def fejer_multiplier(domain: Domain, cutoff: int) -> np.ndarray:
    if domain.kind != DomainKind.TORUS:
        raise UnsupportedDomainError("the Fejer kernel acts on the torus")
    if cutoff < 1 or 2 * cutoff >= domain.nx or 2 * cutoff >= domain.ny:
        raise CutoffError(f"cutoff N = {cutoff} must satisfy 1 <= N < n/2 for a {domain.nx}x{domain.ny} grid")
    m1, m2 = domain.wave_indices()
    return np.maximum(1.0 - np.abs(m1) / cutoff, 0.0) * np.maximum(1.0 - np.abs(m2) / cutoff, 0.0)


def fejer(field: VorticityField, cutoff: int) -> VorticityField:
    multiplier = fejer_multiplier(field.domain, cutoff)
    return field.replace(scipy.fft.ifft2(scipy.fft.fft2(field.values) * multiplier).real)


def fejer_matrix(domain: Domain, cutoff: int) -> BistochasticMatrix:
    """ Dense circulant form of the Fejer operator """
    if domain.size > MAX_CELLS:
        raise MatrixTooLargeError(f"dense kernels are capped at {MAX_CELLS} cells, got {domain.size}")
    multiplier = fejer_multiplier(domain, cutoff)
    delta = np.zeros(domain.shape)
    delta[0, 0] = 1.0
    kernel = np.maximum(scipy.fft.ifft2(scipy.fft.fft2(delta) * multiplier).real, 0.0)
    kernel /= kernel.sum()
    a, b = np.unravel_index(np.arange(domain.size), domain.shape)
    entries = kernel[(a[:, None] - a[None, :]) % domain.ny, (b[:, None] - b[None, :]) % domain.nx]
    return BistochasticMatrix(entries)


def square_cells(domain: Domain, row: int, col: int, size: int) -> np.ndarray:
    """ Flat indices of a size x size block of cells, periodic along x1 """
    if row < 0 or row + size > domain.ny:
        raise SizeMismatchError(f"block rows {row}..{row + size} leave the grid")
    rows = np.arange(row, row + size)
    cols = np.arange(col, col + size) % domain.nx
    return np.ravel_multi_index(np.meshgrid(rows, cols, indexing='ij'), domain.shape).reshape(-1)


def _swap_permutation(n: int, q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    q1 = np.asarray(q1, dtype=int).reshape(-1)
    q2 = np.asarray(q2, dtype=int).reshape(-1)
    if q1.size != q2.size:
        raise SizeMismatchError(f"swap sets have {q1.size} and {q2.size} cells")
    if np.intersect1d(q1, q2).size or np.unique(q1).size != q1.size or np.unique(q2).size != q2.size:
        raise OverlapError("swap sets must be disjoint sets of distinct cells")
    permutation = np.arange(n)
    permutation[q1] = q2
    permutation[q2] = q1
    return permutation


def swap_mix(q1, q2, eps: float, field: VorticityField) -> VorticityField:
    """ (1 - eps) omega + eps omega o phi, with phi exchanging q1[i] and q2[i] """
    if not 0.0 <= eps <= 1.0:
        raise ParameterRangeError(f"mixing weight must lie in [0, 1], got {eps}")
    permutation = _swap_permutation(field.domain.size, q1, q2)
    values = field.flat
    return field.replace((1.0 - eps) * values + eps * values[permutation])


def swap_energy_variation(field: VorticityField, q1, q2) -> float:
    """ d/d eps of the energy of swap_mix(q1, q2, eps, field) at eps = 0 """
    permutation = _swap_permutation(field.domain.size, q1, q2)
    q1 = np.asarray(q1, dtype=int).reshape(-1)
    values = field.flat
    psi = solve_stream(field).psi.reshape(-1)
    jump = values[q1] - values[permutation[q1]]
    return float(np.sum(jump * (psi[q1] - psi[permutation[q1]])) * field.domain.cell_area)


def random_mixing(field: VorticityField, rng: np.random.Generator, strength: float = 1.0,
                  terms: int = 4) -> VorticityField:
    """ (1 - strength) omega + strength * sum_t w_t omega o pi_t for random permutations pi_t
    and Dirichlet weights w_t; no dense kernel is formed.
    """
    if not 0.0 <= strength <= 1.0:
        raise ParameterRangeError(f"mixing strength must lie in [0, 1], got {strength}")
    values = field.flat
    mixed = np.zeros_like(values)
    for weight in rng.dirichlet(np.ones(terms)):
        mixed += weight * values[rng.permutation(values.size)]
    return field.replace((1.0 - strength) * values + strength * mixed)


def write_matrix(kernel: BistochasticMatrix, path) -> None:
    with open(path, 'wb') as handle:
        handle.write(f"{MAGIC} {kernel.n}\n".encode('ascii'))
        handle.write(np.ascontiguousarray(kernel.entries, dtype='<f8').tobytes())


def read_matrix(path) -> BistochasticMatrix:
    with open(path, 'rb') as handle:
        tokens = handle.readline().decode('ascii', errors='replace').split()
        payload = handle.read()
    if len(tokens) != 2 or tokens[0] != MAGIC or not tokens[1].isdigit() or int(tokens[1]) < 1:
        raise FieldFormatError(f"malformed header: expected '{MAGIC} <n>'")
    n = int(tokens[1])
    if len(payload) != 8 * n * n:
        raise SizeMismatchError(f"expected {8 * n * n} bytes of entries, found {len(payload)}")
    return BistochasticMatrix(np.frombuffer(payload, dtype='<f8').reshape(n, n))
