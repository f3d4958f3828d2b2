"""
Deterministic solvers for the averaged and infinite-population equations.

Both use the same backward-Euler diffusion / explicit reaction step as the
hybrid simulator, on the same time lattice, so that differences between a
stochastic path and its deterministic counterpart are not polluted by
mismatched numerics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cablelab import _kernels as K
from cablelab.channels import ChannelModel
from cablelab.errors import InvalidArgument
from cablelab.grid import (
    GridFunction,
    MollifierBank,
    SpatialGrid,
    check_resolution,
    dissipativity_constant,
    laplacian_matrix,
)
from cablelab.hybrid import lattice_steps, lattice_times

MAX_DT = 1e-2


@dataclass(frozen=True, eq=False)
class DeterministicTrajectory:
    """Snapshots at ``times`` (every ``stride``-th lattice point, plus T)."""

    grid: SpatialGrid
    times: np.ndarray
    xs: np.ndarray
    dt: float
    stride: int = 1
    label: str = ""

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def x_at(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.xs[k])

    def as_reference(self):
        return self.times, self.xs


def _march(x0: GridFunction, dt: float, T: float, drift_of, stride: int,
           label: str) -> DeterministicTrajectory:
    if not 0 < dt <= MAX_DT:
        raise InvalidArgument(f"dt must lie in (0, {MAX_DT}], got {dt}")
    if not 0 < dt <= T:
        raise InvalidArgument("dt must not exceed T")
    if stride < 1:
        raise InvalidArgument("stride must be >= 1")
    grid = x0.grid
    L = laplacian_matrix(grid)
    n = lattice_steps(T, dt)
    t_all = lattice_times(T, dt)
    keep = [k for k in range(n + 1) if k % stride == 0 or k == n]
    xs = np.empty((len(keep), grid.M))
    x = np.array(x0.values, dtype=float)
    xn = np.empty(grid.M)
    cp = np.empty(grid.M)
    rhs = np.empty(grid.M)
    xs[0] = x
    row = 1
    for k in range(n):
        step = t_all[k + 1] - t_all[k]
        K.imex_into(x, drift_of(x), step, L.diag, L.off, cp, rhs, xn)
        x, xn = xn, x
        if row < len(keep) and keep[row] == k + 1:
            xs[row] = x
            row += 1
    if not np.all(np.isfinite(xs)):
        raise FloatingPointError(f"{label} solution became non-finite")
    xs.setflags(write=False)
    times = t_all[keep]
    times.setflags(write=False)
    return DeterministicTrajectory(grid, times, xs, dt, stride, label)


def solve_averaged(model: ChannelModel, N: int, grid: SpatialGrid, dt: float, T: float,
                   x0: GridFunction, stride: int = 1) -> DeterministicTrajectory:
    """March dx/dt = Lx + averaged_drift(x) on the lattice k*dt."""
    check_resolution(N, grid)
    if x0.grid != grid:
        raise InvalidArgument("x0 is not on the solver grid")
    bank = MollifierBank.build(N, grid)
    inv_n = 1.0 / N

    def drift(x):
        zeta = bank.project(x)
        return bank.combine(model.mean_current(zeta) * inv_n)

    return _march(x0, dt, T, drift, stride, f"averaged N={N}")


def solve_limit(model: ChannelModel, grid: SpatialGrid, dt: float, T: float,
                x0: GridFunction, mass: float = 1.0, stride: int = 1) -> DeterministicTrajectory:
    """March dx/dt = Lx + limit_drift(x); see :func:`limit_drift` for ``mass``."""
    if x0.grid != grid:
        raise InvalidArgument("x0 is not on the solver grid")

    def drift(x):
        return mass * model.mean_current(mass * x)

    return _march(x0, dt, T, drift, stride, "limit")


def reaction_bound_at_zero(model: ChannelModel, N: int, grid: SpatialGrid) -> float:
    """Bound on ||F^N(0, y)|| over all y: c_+ v_+ ||(1/N) sum_i phi_i||."""
    bank = MollifierBank.build(N, grid)
    profile = bank.combine(np.full(N - 1, 1.0 / N))
    return model.c_plus * model.v_plus * float(np.sqrt(grid.h * profile @ profile))


def apriori_radius(model: ChannelModel, N: int, grid: SpatialGrid, T: float,
                   x0_norm: float) -> float:
    """Radius of the ball holding every path on [0, T].

    Comparison with d/dt ||x||^2 <= kappa ||x||^2 + F0^2, where
    kappa = 1 + 2 F_d - 2 A_d. The reaction term is affine in x with a
    non-positive linear part, so F_d = 0; A_d is the first eigenvalue
    magnitude of the discrete Laplacian. The same radius holds for the
    averaged path because its drift is a mixture of reaction terms.
    """
    f0 = reaction_bound_at_zero(model, N, grid)
    kappa = 1.0 - 2.0 * dissipativity_constant(grid)

    def bound(t):
        if kappa == 0.0:
            return x0_norm**2 + f0**2 * t
        g = np.exp(kappa * t)
        return g * x0_norm**2 + f0**2 * (g - 1.0) / kappa

    return float(np.sqrt(max(bound(0.0), bound(T))))
