"""
Site-wise Poisson equation of the averaging argument and scaling checks.

For fixed potential x and comparison point z, the centered solution of
``Q^N(x) f = (F^N(x, .) - Fbar^N(x), x - z)`` splits into independent
single-site problems because the jump generator acts site by site and the
right-hand side is a sum of single-site terms. Each site needs one
|E|-dimensional solve; f^N(x, y) is then ``sum_i f_i(y(i))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from cablelab.averaged import apriori_radius, solve_averaged
from cablelab.channels import (
    ChannelModel,
    RateMatrix,
    StationaryMeasure,
    averaged_drift,
    check_config,
    reaction_term,
    stationary_batch,
)
from cablelab.errors import InconsistentRHS, InvalidArgument, ReducibleChain
from cablelab.grid import GridFunction, MollifierBank, RESOLUTION_FACTOR, inner_product, make_grid
from cablelab.rng import replication_seed, stream

SOLVABILITY_TOL = 1e-10
RESIDUAL_TOL = 1e-10
CENTERING_TOL = 1e-12


def _bank(mollifiers) -> MollifierBank:
    return mollifiers if isinstance(mollifiers, MollifierBank) else MollifierBank.from_mollifiers(mollifiers)


def _site_terms(model: ChannelModel, x: np.ndarray, z: np.ndarray, bank: MollifierBank):
    """Per-site (zeta, nu, Phi table of shape (N-1, |E|))."""
    zeta = bank.project(x)
    nu = stationary_batch(model, zeta)
    current = model.conductance[None, :] * (model.reversal[None, :] - zeta[:, None])
    centered = current - np.sum(nu * current, axis=1, keepdims=True)
    weight = bank.project(x - z)
    return zeta, nu, centered * weight[:, None] / bank.N


def phi_site(model: ChannelModel, i: int, x: GridFunction, e: int, z: GridFunction,
             mollifiers) -> float:
    """Site-i share of (F^N(x, y) - Fbar^N(x), x - z) when y(i) = e (i is 1-based)."""
    bank = _bank(mollifiers)
    if not 1 <= i <= bank.N - 1:
        raise InvalidArgument(f"site index must lie in 1..{bank.N - 1}, got {i}")
    if not 0 <= e < model.n_states:
        raise InvalidArgument(f"state index must lie in 0..{model.n_states - 1}, got {e}")
    _, _, table = _site_terms(model, x.values, z.values, bank)
    return float(table[i - 1, e])


def solve_poisson_site(Q: RateMatrix, phi, nu: StationaryMeasure) -> np.ndarray:
    """Centered solution of Q f = phi, nu . f = 0, via the bordered system [Q; nu] f = [phi; 0]."""
    Qm = Q.Q if isinstance(Q, RateMatrix) else RateMatrix(Q).Q
    nu_v = nu.nu if isinstance(nu, StationaryMeasure) else np.asarray(nu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n = len(Qm)
    if phi.shape != (n,) or nu_v.shape != (n,):
        raise InvalidArgument("phi and nu must match the rate matrix dimension")
    scale = max(1.0, float(np.max(np.abs(phi), initial=0.0)))
    if abs(nu_v @ phi) > SOLVABILITY_TOL * scale:
        raise InconsistentRHS(f"right-hand side not centered: nu.phi = {nu_v @ phi:.3e}")
    if n > 1:
        s = np.linalg.svd(Qm, compute_uv=False)
        if not np.any(Qm) or s[-2] <= 1e-12 * s[0] * n:
            raise ReducibleChain("generator has a stationary space of dimension != 1")
    A = np.vstack([Qm, nu_v[None, :]])
    b = np.concatenate([phi, [0.0]])
    f = np.linalg.lstsq(A, b, rcond=None)[0]
    f -= nu_v @ f
    _check_solution(Qm[None], f[None], phi[None], nu_v[None])
    return f


def _check_solution(Q, f, phi, nu):
    scale = np.maximum(1.0, np.max(np.abs(phi), axis=-1))
    resid = np.max(np.abs(np.einsum("sij,sj->si", Q, f) - phi), axis=-1)
    if np.any(resid > RESIDUAL_TOL * scale):
        raise ArithmeticError(f"Poisson residual {resid.max():.3e} above tolerance")
    center = np.abs(np.sum(nu * f, axis=-1))
    if np.any(center > CENTERING_TOL * scale):
        raise ArithmeticError(f"Poisson centering {center.max():.3e} above tolerance")


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    """Per-site centered solutions ``f[i, e]`` at potential x and comparison point z."""

    f: np.ndarray
    zeta: np.ndarray
    nu: np.ndarray
    Q: np.ndarray
    phi: np.ndarray
    x: GridFunction | None = field(default=None, repr=False)
    z: GridFunction | None = field(default=None, repr=False)
    t: float | None = None

    def value(self, y) -> float:
        y = np.asarray(y, dtype=np.int64)
        return float(self.f[np.arange(len(self.f)), y].sum())

    def sup_abs(self) -> float:
        """max over all configurations of |f^N(x, y)|; exact thanks to the site split."""
        hi = float(self.f.max(axis=1).sum())
        lo = float(self.f.min(axis=1).sum())
        return max(hi, -lo, 0.0)

    def argmax_config(self) -> np.ndarray:
        hi = self.f.max(axis=1).sum()
        lo = self.f.min(axis=1).sum()
        return self.f.argmax(axis=1) if hi >= -lo else self.f.argmin(axis=1)


def poisson_solve_all(model: ChannelModel, x: np.ndarray, z: np.ndarray, bank: MollifierBank,
                      check: bool = True) -> PoissonSolution:
    """Solve all N-1 site problems in one batched call.

    Uses the nonsingular matrix Q + 1 nu: its solution satisfies nu.f = 0
    and Q f = phi whenever nu.phi = 0, so it coincides with the bordered
    least-squares solution.
    """
    zeta, nu, phi = _site_terms(model, x, z, bank)
    Q = model.generators(zeta)
    scale = np.maximum(1.0, np.max(np.abs(phi), axis=1))
    if np.any(np.abs(np.sum(nu * phi, axis=1)) > SOLVABILITY_TOL * scale):
        raise InconsistentRHS("site right-hand side not centered")
    A = Q + nu[:, None, :]
    try:
        f = np.linalg.solve(A, phi[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ReducibleChain(f"{model.name}: singular Poisson system") from exc
    f -= np.sum(nu * f, axis=1, keepdims=True)
    if check:
        _check_solution(Q, f, phi, nu)
    return PoissonSolution(f, zeta, nu, Q, phi)


def poisson_solution(model: ChannelModel, x: GridFunction, z: GridFunction, mollifiers,
                     t: float | None = None) -> PoissonSolution:
    """Site-by-site :func:`solve_poisson_site` at (x, z)."""
    bank = _bank(mollifiers)
    zeta, nu, phi = _site_terms(model, x.values, z.values, bank)
    Q = model.generators(zeta)
    f = np.array([
        solve_poisson_site(RateMatrix(Q[i]), phi[i], StationaryMeasure(nu[i]))
        for i in range(bank.N - 1)
    ])
    return PoissonSolution(f, zeta, nu, Q, phi, x, z, t)


def assemble_f(model: ChannelModel, x: GridFunction, y, z: GridFunction, mollifiers) -> float:
    """f^N(x, y) = sum_i f_i(y(i))."""
    bank = _bank(mollifiers)
    y = check_config(model, y, bank.N)
    return poisson_solution(model, x, z, bank).value(y)


def generator_identity(model: ChannelModel, x: GridFunction, y, z: GridFunction, mollifiers):
    """Both sides of Q^N f^N (y) = (F^N(x, y) - Fbar^N(x), x - z).

    The left side applies each site generator to its own solution; the
    right side is evaluated directly from the reaction terms.
    """
    bank = _bank(mollifiers)
    y = check_config(model, y, bank.N)
    sol = poisson_solution(model, x, z, bank)
    Qf = np.einsum("sij,sj->si", sol.Q, sol.f)
    lhs = float(Qf[np.arange(bank.N - 1), y].sum())
    diff = reaction_term(model, x, y, bank) - averaged_drift(model, x, bank.N, bank)
    rhs = inner_product(diff, x - z)
    return lhs, rhs


def _bracket_sites(sol: PoissonSolution, model: ChannelModel) -> np.ndarray:
    """Table B[i, e1] = sum_e a_{e1 e}(zeta_i) (f_i(e) - f_i(e1))^2."""
    rates = model.rates(sol.zeta)
    jumps = sol.f[:, None, :] - sol.f[:, :, None]
    return np.sum(rates * jumps**2, axis=-1)


def bracket_bound(model: ChannelModel, x: GridFunction, y, z: GridFunction, mollifiers) -> float:
    """sum_i sum_e a_{y(i) e}(zeta_i) [f^N(x, y^{i->e}) - f^N(x, y)]^2."""
    bank = _bank(mollifiers)
    y = check_config(model, y, bank.N)
    if not model.active.any():
        # every jump rate vanishes, so does every term
        return 0.0
    sol = poisson_solution(model, x, z, bank)
    return float(_bracket_sites(sol, model)[np.arange(bank.N - 1), y].sum())


def bracket_ceiling(model: ChannelModel, sol: PoissonSolution, N: int) -> float:
    """4 a_plus |E| N (max_{i,e} |f_i(e)|)^2."""
    return 4.0 * model.a_plus * model.n_states * N * float(np.max(np.abs(sol.f))) ** 2


# ---------------------------------------------------------------------------
# Scaling measurements
# ---------------------------------------------------------------------------

QUANTITIES = ("sup_f", "sup_bracket", "sup_fx_fd", "sup_ft_fd")


@dataclass
class ScalingReport:
    """Per-N sups of |f^N|, the bracket and the two finite-difference derivatives.

    ``slopes[q]`` is the least-squares exponent of quantity ``q`` against N
    (None when degenerate) and ``intervals[q]`` its 90% bootstrap interval.
    """

    N: list[int]
    values: dict[str, list[float]]
    slopes: dict[str, float | None]
    intervals: dict[str, tuple[float, float] | None]
    config: dict
    degenerate: bool = False

    def half_width(self, q: str) -> float:
        lo, hi = self.intervals[q]
        return 0.5 * (hi - lo)

    def consistency(self) -> tuple[float, float]:
        """(|slope_bracket - (1 + 2 slope_f)|, allowed combined half-width)."""
        gap = abs(self.slopes["sup_bracket"] - (1.0 + 2.0 * self.slopes["sup_f"]))
        return gap, self.half_width("sup_bracket") + 2.0 * self.half_width("sup_f")

    def write_csv(self, path) -> None:
        lines = ["N," + ",".join(QUANTITIES)]
        for k, N in enumerate(self.N):
            lines.append(",".join([str(N)] + [repr(float(self.values[q][k])) for q in QUANTITIES]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_metadata(self, path) -> None:
        record = {"config": self.config, "slopes": self.slopes,
                  "intervals": {k: list(v) if v else None for k, v in self.intervals.items()},
                  "degenerate": self.degenerate}
        with open(path, "w") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def sample_ball(rng: np.random.Generator, grid, radius: float, count: int) -> np.ndarray:
    """Random sine series uniformly distributed in the L^2 ball of the given radius.

    Each draw picks a mode count K log-uniformly in [1, M] so that smooth
    and rough functions are both represented.
    """
    M = grid.M
    nodes = grid.nodes
    out = np.empty((count, M))
    for s in range(count):
        K = int(np.clip(np.round(np.exp(rng.uniform(0.0, np.log(M)))), 1, M))
        coef = rng.standard_normal(K)
        modes = np.sqrt(2.0) * np.sin(np.pi * np.outer(np.arange(1, K + 1), nodes))
        x = coef @ modes
        r = radius * rng.random() ** (1.0 / K)
        out[s] = x * (r / np.sqrt(grid.h * x @ x))
    return out


def _scalings_for_N(model, N, samples, seed, T, dt, n_times, n_dirs, fd_step):
    grid = make_grid(RESOLUTION_FACTOR * N)
    bank = MollifierBank.build(N, grid)
    x0 = grid.sample(lambda s: 0.5 * np.sin(np.pi * s))
    radius = apriori_radius(model, N, grid, T, x0.norm())
    traj = solve_averaged(model, N, grid, dt, T, x0)
    rng = stream(seed)
    xs = sample_ball(rng, grid, radius, samples)
    t_idx = np.unique(np.linspace(1, len(traj.times) - 2, n_times).round().astype(int))
    dirs = rng.standard_normal((n_dirs, grid.M))
    dirs /= np.sqrt(grid.h * np.sum(dirs * dirs, axis=1))[:, None]

    per_sample = np.zeros((samples, 4))
    for s, x in enumerate(xs):
        for k in t_idx:
            z = traj.xs[k]
            sol = poisson_solve_all(model, x, z, bank)
            sup_f = sol.sup_abs()
            br = float(_bracket_sites(sol, model).max(axis=1).sum())
            y = sol.argmax_config()
            fx = 0.0
            for d in dirs:
                fp = poisson_solve_all(model, x + fd_step * d, z, bank, check=False).value(y)
                fm = poisson_solve_all(model, x - fd_step * d, z, bank, check=False).value(y)
                fx = max(fx, abs(fp - fm) / (2 * fd_step))
            h_t = traj.times[k + 1] - traj.times[k]
            fp = poisson_solve_all(model, x, traj.xs[k + 1], bank, check=False).value(y)
            fm = poisson_solve_all(model, x, traj.xs[k - 1], bank, check=False).value(y)
            ft = abs(fp - fm) / (2 * h_t)
            per_sample[s] = np.maximum(per_sample[s], [sup_f, br, fx, ft])
    return per_sample


def _fit(logN, vals):
    if np.any(vals <= 0):
        return None
    return float(np.polyfit(logN, np.log(vals), 1)[0])


def measure_scalings(model: ChannelModel, N_list, samples: int, seed: int, T: float = 1.0,
                     dt: float = 1e-3, n_times: int = 3, n_dirs: int = 10,
                     fd_step: float = 1e-5, n_boot: int = 500) -> ScalingReport:
    """Empirical growth of the Poisson solution and its bracket with N.

    For each N, samples potentials in the a-priori ball, takes comparison
    points along the averaged trajectory, records the sups over samples and
    fits log-log slopes; intervals come from bootstrapping the samples.
    """
    N_list = [int(n) for n in N_list]
    if any(n < 4 for n in N_list) or N_list != sorted(set(N_list)):
        raise InvalidArgument("N_list must be strictly increasing with every N >= 4")
    if samples < 1:
        raise InvalidArgument("samples must be >= 1")
    tables = [
        _scalings_for_N(model, N, samples, replication_seed(seed, k), T, dt, n_times,
                        n_dirs, fd_step)
        for k, N in enumerate(N_list)
    ]
    sups = np.array([t.max(axis=0) for t in tables])
    values = {q: sups[:, j].tolist() for j, q in enumerate(QUANTITIES)}
    logN = np.log(N_list)
    config = dict(model=model.name, N_list=N_list, samples=samples, seed=seed, T=T, dt=dt,
                  n_times=n_times, n_dirs=n_dirs, fd_step=fd_step, n_boot=n_boot,
                  ball="sine series, log-uniform mode count")
    if np.all(sups == 0):
        return ScalingReport(N_list, values, {q: None for q in QUANTITIES},
                             {q: None for q in QUANTITIES}, config, degenerate=True)
    slopes = {q: _fit(logN, sups[:, j]) for j, q in enumerate(QUANTITIES)}
    rng = stream(replication_seed(seed, len(N_list)))
    boot = np.full((n_boot, 4), np.nan)
    for b in range(n_boot):
        res = np.array([t[rng.integers(0, len(t), len(t))].max(axis=0) for t in tables])
        for j in range(4):
            s = _fit(logN, res[:, j])
            if s is not None:
                boot[b, j] = s
    intervals = {}
    for j, q in enumerate(QUANTITIES):
        col = boot[:, j][np.isfinite(boot[:, j])]
        intervals[q] = (float(np.quantile(col, 0.05)), float(np.quantile(col, 0.95))) if col.size else None
    return ScalingReport(N_list, values, slopes, intervals, config)
