"""
Uniform finite-difference discretization of L^2(0, 1).

Functions are stored by their values at the M interior nodes of a uniform
grid; the two boundary values are zero (Dirichlet). Every L^2 quantity in
the package goes through :func:`inner_product`, which is the trapezoid rule
on that grid, so norms, mollifier projections and the Laplacian all share
one consistent discretization.

Example
-------
>>> grid = make_grid(3)
>>> grid.nodes
array([0.25, 0.5 , 0.75])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from cablelab.errors import InvalidArgument

#: Points per unit of mollifier support demanded by :func:`check_resolution`.
RESOLUTION_FACTOR = 50


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid with ``M`` interior nodes ``j*h``, ``h = 1/(M+1)``."""

    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 3:
            raise InvalidArgument(f"grid needs M >= 3 interior nodes, got {self.M!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.M + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return _frozen(np.arange(1, self.M + 1) * self.h)

    def sample(self, f) -> "GridFunction":
        """Evaluate a callable at the interior nodes."""
        return GridFunction(self, np.asarray(f(self.nodes), dtype=float))

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.M))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Interior values of a function on ``grid``; boundary values are zero."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.M,):
            raise InvalidArgument(
                f"expected {self.grid.M} interior values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("grid function has non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self)))

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "GridFunction":
        return GridFunction(self.grid, a * self.values)

    __rmul__ = __mul__


def _same_grid(u: GridFunction, v: GridFunction) -> None:
    if u.grid != v.grid:
        raise InvalidArgument(f"grid mismatch: M={u.grid.M} vs M={v.grid.M}")


def make_grid(M: int) -> SpatialGrid:
    return SpatialGrid(M)


def inner_product(u: GridFunction, v: GridFunction) -> float:
    """Trapezoid-rule L^2 inner product; with zero endpoints it is h * sum(u*v)."""
    _same_grid(u, v)
    return float(u.grid.h * np.dot(u.values, v.values))


def psi(u):
    """Unnormalized bump ``exp(-1/(1-u^2))`` on (-1, 1), zero elsewhere."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True, eq=False)
class Mollifier:
    """Samples of ``phi_i^N(xi) = N * psi(N (xi - i/N))``.

    Only the nodes strictly inside the support are stored: ``local`` holds
    the values at nodes ``start .. stop-1`` (0-based). ``samples`` expands
    them to a full :class:`GridFunction`.
    """

    i: int
    N: int
    grid: SpatialGrid
    start: int
    stop: int
    local: np.ndarray = field(repr=False)

    @property
    def center(self) -> float:
        return self.i / self.N

    @cached_property
    def samples(self) -> GridFunction:
        values = np.zeros(self.grid.M)
        values[self.start:self.stop] = self.local
        return GridFunction(self.grid, values)

    def project(self, x: GridFunction) -> float:
        """``(x, phi_i^N)`` touching only the support nodes."""
        _same_grid(x, self.samples)
        return float(self.grid.h * np.dot(self.local, x.values[self.start:self.stop]))


def mollifier_build(i: int, N: int, grid: SpatialGrid) -> Mollifier:
    if N < 2:
        raise InvalidArgument(f"N must be >= 2, got {N}")
    if not 1 <= i <= N - 1:
        raise InvalidArgument(f"site index must lie in 1..{N - 1}, got {i}")
    z = i / N
    nodes = grid.nodes
    # Support is the open interval (z - 1/N, z + 1/N); psi vanishes on its closure's boundary.
    inside = np.nonzero(np.abs(N * (nodes - z)) < 1.0)[0]
    if inside.size == 0:
        start = stop = 0
        local = np.zeros(0)
    else:
        start, stop = int(inside[0]), int(inside[-1]) + 1
        local = N * psi(N * (nodes[start:stop] - z))
    return Mollifier(i, N, grid, start, stop, _frozen(local))


def mollifier_family(N: int, grid: SpatialGrid) -> tuple[Mollifier, ...]:
    """All N-1 site mollifiers for population size N."""
    return tuple(mollifier_build(i, N, grid) for i in range(1, N))


def check_resolution(N: int, grid: SpatialGrid) -> None:
    """Reject grids too coarse to resolve the width-2/N mollifiers."""
    if grid.M < RESOLUTION_FACTOR * N:
        raise InvalidArgument(
            f"grid too coarse for N={N}: need M >= {RESOLUTION_FACTOR * N}, got M={grid.M}"
        )


def mollifier_mass() -> float:
    """``int psi`` over (-1, 1); also the integral of every phi_i^N."""
    from scipy.integrate import quad

    return quad(lambda u: float(psi(np.array(u))), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]


@dataclass(frozen=True)
class TridiagonalOperator:
    """Symmetric tridiagonal matrix with constant diagonal and off-diagonal."""

    M: int
    diag: float
    off: float

    def __matmul__(self, u):
        if isinstance(u, GridFunction):
            return GridFunction(u.grid, self @ u.values)
        u = np.asarray(u, dtype=float)
        out = self.diag * u
        out[1:] += self.off * u[:-1]
        out[:-1] += self.off * u[1:]
        return out

    def toarray(self) -> np.ndarray:
        return (
            np.diag(np.full(self.M, self.diag))
            + np.diag(np.full(self.M - 1, self.off), 1)
            + np.diag(np.full(self.M - 1, self.off), -1)
        )

    def eigenvalues(self) -> np.ndarray:
        """Closed-form spectrum of the constant-coefficient tridiagonal matrix, ascending."""
        k = np.arange(1, self.M + 1)
        return np.sort(self.diag + 2.0 * self.off * np.cos(k * np.pi / (self.M + 1)))


def laplacian_matrix(grid: SpatialGrid) -> TridiagonalOperator:
    """Centered second difference with zero Dirichlet data: (1, -2, 1)/h^2."""
    inv_h2 = 1.0 / grid.h**2
    return TridiagonalOperator(grid.M, -2.0 * inv_h2, inv_h2)


def dissipativity_constant(grid: SpatialGrid) -> float:
    """Smallest |eigenvalue| of the discrete Laplacian, so (Lu, u) <= -c ||u||^2."""
    return float(4.0 / grid.h**2 * np.sin(np.pi * grid.h / 2.0) ** 2)


@dataclass(frozen=True, eq=False)
class MollifierBank:
    """Stacked mollifier samples for vectorized projection and synthesis.

    ``dense`` is the (N-1, M) matrix of samples; ``starts``/``stops``/``flat``
    is the compressed support layout consumed by the compiled kernels.
    """

    N: int
    grid: SpatialGrid
    dense: np.ndarray
    starts: np.ndarray
    stops: np.ndarray
    offsets: np.ndarray
    flat: np.ndarray

    @classmethod
    def from_mollifiers(cls, mollifiers) -> "MollifierBank":
        mollifiers = tuple(mollifiers)
        if not mollifiers:
            raise InvalidArgument("empty mollifier list")
        N, grid = mollifiers[0].N, mollifiers[0].grid
        if any(m.N != N or m.grid != grid for m in mollifiers):
            raise InvalidArgument("mollifiers must share N and grid")
        if [m.i for m in mollifiers] != list(range(1, N)):
            raise InvalidArgument(f"expected sites 1..{N - 1} in order")
        dense = np.zeros((N - 1, grid.M))
        for k, m in enumerate(mollifiers):
            dense[k, m.start:m.stop] = m.local
        starts = np.array([m.start for m in mollifiers], dtype=np.int64)
        stops = np.array([m.stop for m in mollifiers], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(stops - starts)]).astype(np.int64)
        flat = np.concatenate([m.local for m in mollifiers])
        return cls(N, grid, _frozen(dense), starts, stops, offsets, _frozen(flat))

    @classmethod
    def build(cls, N: int, grid: SpatialGrid) -> "MollifierBank":
        return cls.from_mollifiers(mollifier_family(N, grid))

    def project(self, x: np.ndarray) -> np.ndarray:
        """All site potentials ``(x, phi_i^N)``; accepts (M,) or (..., M)."""
        return self.grid.h * (np.asarray(x) @ self.dense.T)

    def combine(self, weights: np.ndarray) -> np.ndarray:
        """Grid values of ``sum_i weights_i * phi_i^N``."""
        return np.asarray(weights) @ self.dense

    def gram(self) -> np.ndarray:
        """Matrix of discrete inner products ``(phi_i, phi_j)``."""
        return self.grid.h * (self.dense @ self.dense.T)
