"""
Monte Carlo convergence experiments for the hybrid cable model.

An :class:`ExperimentPlan` lists (eps, N) pairs and a replication count.
Each replication draws a matched start (x0 deterministic, y0 sampled from
the quasi-stationary law at x0), runs the thinning simulator and records
the squared-L^2 sup distance to a deterministic reference path. Results
are merged by replication index, so the report never depends on how work
was scheduled across processes.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, stats

from cablelab.averaged import solve_averaged, solve_limit
from cablelab.channels import ChannelModel
from cablelab.errors import InvalidArgument, ReplicationFailure
from cablelab.grid import RESOLUTION_FACTOR, MollifierBank, make_grid, mollifier_mass
from cablelab.hybrid import SimParams, default_dt, lattice_steps, run_hybrid, sample_config
from cablelab.rng import replication_seed, stream

SERIES_SWITCH = 1e-4
MAX_REFERENCE_ROWS = 20_000
CI_LEVEL = 0.95
N_DELTAS = 12

ERRORS_HEADER = "eps,N,rep,sup_err2"
SUMMARY_HEADER = "eps,N,q10,q50,q90"
TAIL_HEADER = "eps,N,delta,freq,ci_half"


# ---------------------------------------------------------------------------
# Psi and the tail bound
# ---------------------------------------------------------------------------

def psi(x):
    """Psi(x) = (2/x^2) * int_0^x log(1+y) dy for x >= 0 (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise InvalidArgument("psi is only evaluated at x >= 0")
    small = arr < SERIES_SWITCH
    xs = np.where(small, 1.0, arr)
    closed = 2.0 * ((1.0 + xs) * np.log1p(xs) - xs) / (xs * xs)
    series = 1.0 - arr / 3.0 + arr * arr / 6.0
    out = np.where(small, series, closed)
    return float(out) if out.ndim == 0 else out


def _alpha(N):
    return float(N)


def _beta(N):
    return float(N) ** 1.5


def _cube(N):
    return float(N) ** 3


@dataclass(frozen=True)
class BoundParameters:
    """Free constants of the tail bound and the N-scalings it is evaluated with."""

    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    C4: float = 1.0
    C5: float = 1.0
    alpha: Callable[[int], float] = _alpha
    beta: Callable[[int], float] = _beta
    gamma: Callable[[int], float] = _cube
    rho: Callable[[int], float] = _cube

    def __post_init__(self):
        for name in ("C1", "C2", "C3", "C4", "C5"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidArgument(f"{name} must be a positive finite number, got {val}")

    def scalings(self, N: int) -> tuple[float, float, float, float]:
        vals = (self.alpha(N), self.beta(N), self.gamma(N), self.rho(N))
        if not all(v > 0 for v in vals):
            raise InvalidArgument(f"scalings must be positive at N={N}")
        return vals


def _exponent(delta, eps, N, params: BoundParameters):
    a, _, _, rho = params.scalings(N)
    return params.C4 * delta**2 / (eps * rho) * psi(params.C5 * delta * a / rho)


def theoretical_tail_bound(delta: float, eps: float, N: int, p0: float,
                           params: BoundParameters) -> float:
    """p0 + 1{eps (beta_N + gamma_N) >= C2 delta} + C3 exp(-C4 delta^2/(eps rho_N) Psi(C5 delta alpha_N/rho_N))."""
    if not delta > 0:
        raise InvalidArgument("delta must be positive")
    if not 0 < eps < 1:
        raise InvalidArgument("eps must lie in (0, 1)")
    if not 0 <= p0 <= 1:
        raise InvalidArgument("p0 must be a probability")
    _, b, g, _ = params.scalings(N)
    indicator = 1.0 if eps * (b + g) >= params.C2 * delta else 0.0
    return p0 + indicator + params.C3 * math.exp(-_exponent(delta, eps, N, params))


# ---------------------------------------------------------------------------
# Trajectory distance
# ---------------------------------------------------------------------------

def _interp_rows(times: np.ndarray, xs: np.ndarray, t: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 1)
    nxt = np.minimum(idx + 1, len(times) - 1)
    span = times[nxt] - times[idx]
    w = np.divide(t - times[idx], span, out=np.zeros_like(t), where=span > 0)
    w = np.clip(w, 0.0, 1.0)[:, None]
    return (1.0 - w) * xs[idx] + w * xs[nxt]


def sup_diff(a, b) -> float:
    """max over the union of both snapshot lattices of ||a(t) - b(t)||^2.

    Each trajectory is linearly interpolated in time onto the other's
    snapshot times. Both must share grid and horizon.
    """
    if a.grid != b.grid:
        raise InvalidArgument("trajectories live on different grids")
    ta, tb = np.asarray(a.times, dtype=float), np.asarray(b.times, dtype=float)
    if abs(ta[0] - tb[0]) > 1e-12 or abs(ta[-1] - tb[-1]) > 1e-12:
        raise InvalidArgument("trajectories cover different time horizons")
    t = np.union1d(ta, tb)
    d = _interp_rows(ta, np.asarray(a.xs), t) - _interp_rows(tb, np.asarray(b.xs), t)
    return float(np.max(a.grid.h * np.sum(d * d, axis=1)))


# ---------------------------------------------------------------------------
# Plans and ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    """Replicated hybrid runs over (eps, N) pairs compared with a deterministic target.

    ``M=None`` uses the minimal resolved grid (50 N nodes) per pair and
    ``dt=None`` the simulator default for each eps. ``y0`` is either
    ``"sampled"`` (quasi-stationary start) or a fixed state index.
    """

    model: ChannelModel
    pairs: tuple
    R: int
    T: float = 1.0
    dt: float | None = None
    M: int | None = None
    x0_amplitude: float = 0.5
    y0: str | int = "sampled"
    seed: int = 0
    target: str = "averaged"

    def __post_init__(self):
        pairs = tuple((float(e), int(n)) for e, n in self.pairs)
        if not pairs:
            raise InvalidArgument("plan needs at least one (eps, N) pair")
        if len(set(pairs)) != len(pairs):
            raise InvalidArgument("duplicate (eps, N) pair in plan")
        object.__setattr__(self, "pairs", pairs)
        if self.R < 1:
            raise InvalidArgument("R must be >= 1")
        if self.target not in ("averaged", "limit"):
            raise InvalidArgument(f"target must be 'averaged' or 'limit', got {self.target!r}")
        if self.y0 != "sampled":
            if not (isinstance(self.y0, (int, np.integer)) and 0 <= self.y0 < self.model.n_states):
                raise InvalidArgument(f"y0 must be 'sampled' or a state index, got {self.y0!r}")
        if not math.isfinite(self.x0_amplitude):
            raise InvalidArgument("x0_amplitude must be finite")
        for k in range(len(pairs)):
            self.params(k)

    def params(self, k: int) -> SimParams:
        eps, N = self.pairs[k]
        grid = make_grid(self.M if self.M is not None else RESOLUTION_FACTOR * N)
        return SimParams(eps=eps, N=N, T=self.T, grid=grid,
                         dt=self.dt if self.dt is not None else default_dt(eps), seed=self.seed)

    def rep_seed(self, k: int, r: int) -> int:
        """Replication r of pair k uses global index k * R + r."""
        return replication_seed(self.seed, k * self.R + r)

    def describe(self) -> dict:
        return dict(model=self.model.name, pairs=[list(p) for p in self.pairs], R=self.R,
                    T=self.T, dt=self.dt, M=self.M, x0_amplitude=self.x0_amplitude,
                    y0=self.y0, seed=self.seed, target=self.target)


def _reference(plan: ExperimentPlan, params: SimParams):
    grid = params.grid
    x0 = grid.sample(lambda s: plan.x0_amplitude * np.sin(np.pi * s))
    n = lattice_steps(plan.T, params.dt)
    stride = max(1, math.ceil(n / MAX_REFERENCE_ROWS))
    if plan.target == "averaged":
        traj = solve_averaged(plan.model, params.N, grid, params.dt, plan.T, x0, stride)
    else:
        traj = solve_limit(plan.model, grid, params.dt, plan.T, x0, mollifier_mass(), stride)
    return x0, traj.as_reference()


_WORKER: dict = {}


def _prepare(plan: ExperimentPlan) -> dict:
    cache: dict = {}
    setup = []
    for k in range(len(plan.pairs)):
        params = plan.params(k)
        key = (params.N, params.grid.M, params.dt)
        if key not in cache:
            x0, ref = _reference(plan, params)
            cache[key] = (x0, ref, MollifierBank.build(params.N, params.grid))
        setup.append((params, *cache[key]))
    return {"plan": plan, "setup": setup}


def _init_worker(state: dict) -> None:
    _WORKER.clear()
    _WORKER.update(state)


def replicate(plan: ExperimentPlan, setup, k: int, r: int) -> float:
    """sup_t ||X_t - reference_t||^2 for replication r of pair k."""
    params, x0, ref, bank = setup[k]
    rng = stream(plan.rep_seed(k, r))
    if plan.y0 == "sampled":
        y0 = sample_config(plan.model, x0, params.N, rng, bank)
    else:
        y0 = np.full(params.N - 1, int(plan.y0), dtype=np.int64)
    res = run_hybrid(plan.model, params, x0.values, y0, rng, record_snaps=False,
                     record_jumps=False, reference=ref, bank=bank)
    return res.sup_err2


def _task(job: tuple[int, int]) -> float:
    k, r = job
    plan = _WORKER["plan"]
    try:
        return replicate(plan, _WORKER["setup"], k, r)
    except Exception as exc:  # noqa: BLE001
        eps, N = plan.pairs[k]
        raise ReplicationFailure(eps, N, r, repr(exc)) from exc


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_ensemble(plan: ExperimentPlan, jobs: int | None = None,
                 deltas=None) -> "ErrorReport":
    """All replications of every pair; identical output for any ``jobs``.

    ``deltas`` fixes the tail levels; by default each pair gets its own grid.
    """
    jobs = default_jobs() if jobs is None else int(jobs)
    if jobs < 1:
        raise InvalidArgument("jobs must be >= 1")
    state = _prepare(plan)
    work = [(k, r) for k in range(len(plan.pairs)) for r in range(plan.R)]
    if jobs == 1:
        _init_worker(state)
        values = [_task(j) for j in work]
    else:
        methods = multiprocessing.get_all_start_methods()
        ctx = multiprocessing.get_context("fork" if "fork" in methods else "spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx, initializer=_init_worker,
                                 initargs=(state,)) as pool:
            values = list(pool.map(_task, work, chunksize=max(1, len(work) // (4 * jobs))))
    errors = {}
    for k, pair in enumerate(plan.pairs):
        errors[pair] = np.array(values[k * plan.R:(k + 1) * plan.R])
    return ErrorReport(errors, plan.describe(), None if deltas is None else tuple(deltas))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def wilson_half_width(freq: float, n: int, level: float = CI_LEVEL) -> float:
    """Half-width of the Wilson score interval for a binomial proportion."""
    z = stats.norm.isf((1.0 - level) / 2.0)
    denom = 1.0 + z * z / n
    return float(z * math.sqrt(freq * (1.0 - freq) / n + z * z / (4.0 * n * n)) / denom)


def median_interval(values: np.ndarray, level: float = CI_LEVEL) -> tuple[float, float]:
    """Distribution-free interval for the median from binomial order statistics."""
    s = np.sort(np.asarray(values, dtype=float))
    n = len(s)
    a = (1.0 - level) / 2.0
    lo = int(stats.binom.ppf(a, n, 0.5))
    hi = int(stats.binom.isf(a, n, 0.5))
    return float(s[max(lo - 1, 0)]), float(s[min(hi, n - 1)])


@dataclass
class ErrorReport:
    """Per-pair sup errors with summary statistics computed on demand."""

    errors: dict
    config: dict = field(default_factory=dict)
    deltas: tuple | None = None

    def __post_init__(self):
        clean = {}
        for (eps, N), vals in self.errors.items():
            arr = np.asarray(vals, dtype=float)
            if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InvalidArgument(f"errors for ({eps}, {N}) must be a non-empty finite "
                                      "non-negative vector")
            clean[(float(eps), int(N))] = arr
        self.errors = clean

    @property
    def pairs(self) -> list:
        return list(self.errors)

    def quantiles(self, pair) -> tuple[float, float, float]:
        q = np.quantile(self.errors[pair], [0.1, 0.5, 0.9])
        return float(q[0]), float(q[1]), float(q[2])

    def median(self, pair) -> float:
        return self.quantiles(pair)[1]

    def median_half_width(self, pair) -> float:
        lo, hi = median_interval(self.errors[pair])
        return 0.5 * (hi - lo)

    def delta_grid(self, pair) -> np.ndarray:
        """12 log-spaced levels between the 5th and 95th percentiles (empty if degenerate)."""
        lo, hi = np.quantile(self.errors[pair], [0.05, 0.95])
        if hi <= 0:
            return np.zeros(0)
        lo = lo if lo > 0 else hi * 1e-3
        if hi <= lo:
            return np.array([hi])
        return np.geomspace(lo, hi, N_DELTAS)

    def tail(self, pair, deltas=None):
        """(deltas, P-hat(sup >= delta), Wilson half-widths)."""
        if deltas is None:
            deltas = self.delta_grid(pair) if self.deltas is None else self.deltas
        deltas = np.asarray(deltas, dtype=float)
        vals = self.errors[pair]
        freq = np.array([np.mean(vals >= d) for d in deltas])
        half = np.array([wilson_half_width(f, len(vals)) for f in freq])
        return deltas, freq, half

    def eps_values(self, N: int) -> list[float]:
        return sorted(e for e, n in self.errors if n == N)

    def joint_table(self, c: float, rtol: float = 1e-9) -> list[tuple[int, float, float, float]]:
        """Rows (N, eps, median, half-width) for pairs on the schedule eps = c / N^3."""
        rows = [(N, eps, self.median((eps, N)), self.median_half_width((eps, N)))
                for eps, N in self.errors if math.isclose(eps * N**3, c, rel_tol=rtol)]
        return sorted(rows)

    def schedules(self) -> list[float]:
        """Distinct eps N^3 values shared by at least two pairs."""
        prods: list[float] = []
        for eps, N in self.errors:
            p = eps * N**3
            if not any(math.isclose(p, q, rel_tol=1e-9) for q in prods):
                prods.append(p)
        return [p for p in prods if len(self.joint_table(p)) >= 2]

    # -- export -------------------------------------------------------------

    def errors_rows(self) -> list[str]:
        rows = [ERRORS_HEADER]
        for (eps, N), vals in self.errors.items():
            rows += [f"{eps!r},{N},{r},{float(v)!r}" for r, v in enumerate(vals)]
        return rows

    def summary_rows(self) -> list[str]:
        rows = [SUMMARY_HEADER]
        for pair in self.errors:
            q = self.quantiles(pair)
            rows.append(f"{pair[0]!r},{pair[1]},{q[0]!r},{q[1]!r},{q[2]!r}")
        return rows

    def tail_rows(self) -> list[str]:
        rows = [TAIL_HEADER]
        for pair in self.errors:
            for d, f, h in zip(*self.tail(pair)):
                rows.append(f"{pair[0]!r},{pair[1]},{float(d)!r},{float(f)!r},{float(h)!r}")
        return rows

    def write(self, out_dir, plot: bool = False) -> dict:
        """Write errors.csv, summary.csv, tail.csv (and plot.svg); returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        files = {"errors": ("errors.csv", self.errors_rows(), ERRORS_HEADER),
                 "summary": ("summary.csv", self.summary_rows(), SUMMARY_HEADER),
                 "tail": ("tail.csv", self.tail_rows(), TAIL_HEADER)}
        paths = {}
        for key, (name, rows, header) in files.items():
            check_csv_schema(rows, header)
            paths[key] = os.path.join(out_dir, name)
            with open(paths[key], "w", newline="") as fh:
                fh.write("\n".join(rows) + "\n")
        if plot:
            paths["plot"] = os.path.join(out_dir, "plot.svg")
            write_plot(self, paths["plot"])
        return paths


def check_csv_schema(rows: list[str], header: str) -> None:
    if not rows or rows[0] != header:
        raise RuntimeError(f"CSV header mismatch: expected {header!r}")
    width = header.count(",")
    for line in rows[1:]:
        if line.count(",") != width:
            raise RuntimeError(f"CSV row has the wrong width: {line!r}")


def write_plot(report: ErrorReport, path) -> None:
    """Log-log SVG: median error^2 vs eps per N, and vs N along each eps N^3 schedule."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "cablelab"
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    for N in sorted({n for _, n in report.pairs}):
        eps = report.eps_values(N)
        med = [report.median((e, N)) for e in eps]
        if len(eps) > 1 and all(m > 0 for m in med):
            axes[0].loglog(eps, med, "o-", label=f"N={N}")
    axes[0].set_xlabel("eps")
    axes[0].set_ylabel("median sup error^2")
    for c in report.schedules():
        rows = report.joint_table(c)
        if all(r[2] > 0 for r in rows):
            axes[1].loglog([r[0] for r in rows], [r[2] for r in rows], "s-",
                           label=f"eps N^3 = {c:.3g}")
    axes[1].set_xlabel("N")
    for ax in axes:
        if ax.get_legend_handles_labels()[0]:
            ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# Fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingFit:
    slope: float | None
    interval: tuple[float, float] | None
    N: int
    eps: tuple
    medians: tuple
    degenerate: bool = False


def fit_scaling(report: ErrorReport, N: int | None = None, n_boot: int = 1000,
                seed: int = 0, level: float = 0.9) -> ScalingFit:
    """Least-squares slope of log median error^2 against log eps at fixed N."""
    if N is None:
        Ns = {n for _, n in report.pairs}
        if len(Ns) != 1:
            raise InvalidArgument("report holds several N; pass N explicitly")
        N = Ns.pop()
    eps = report.eps_values(N)
    if len(eps) < 3:
        raise InvalidArgument(f"need at least 3 eps values at N={N}, got {len(eps)}")
    data = [report.errors[(e, N)] for e in eps]
    med = np.array([np.median(d) for d in data])
    if np.any(med <= 0):
        return ScalingFit(None, None, N, tuple(eps), tuple(med.tolist()), degenerate=True)
    x = np.log(eps)
    slope = float(np.polyfit(x, np.log(med), 1)[0])
    rng = stream(replication_seed(seed, N))
    boots = []
    for _ in range(n_boot):
        m = np.array([np.median(d[rng.integers(0, len(d), len(d))]) for d in data])
        if np.all(m > 0):
            boots.append(np.polyfit(x, np.log(m), 1)[0])
    a = (1.0 - level) / 2.0
    interval = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))) if boots else None
    return ScalingFit(slope, interval, N, tuple(eps), tuple(med.tolist()))


def fit_constants(report: ErrorReport, pair, base: BoundParameters | None = None) -> BoundParameters:
    """Tightest (C3, C4) envelope over the pair's delta grid with C1 = C2 = C5 = 1.

    Solves the linear program in (log C3, C4) that minimizes the summed log
    gap between bound and target subject to the bound dominating every
    empirical frequency plus its half-width on levels where the indicator is
    off.
    """
    base = base or BoundParameters()
    params = BoundParameters(1.0, 1.0, 1.0, 1.0, 1.0, base.alpha, base.beta, base.gamma, base.rho)
    eps, N = pair
    deltas, freq, half = report.tail(pair)
    _, b, g, _ = params.scalings(N)
    live = eps * (b + g) < deltas
    target = np.minimum(freq + half, 1.0)[live]
    if target.size == 0:
        return params
    expo = np.array([_exponent(d, eps, N, params) for d in deltas[live]])
    scale = max(float(expo.max()), 1e-300)
    # variables: u = log C3, w = C4 * scale
    A = np.column_stack([-np.ones_like(expo), expo / scale])
    res = optimize.linprog(c=[target.size, -float(np.sum(expo / scale))], A_ub=A,
                           b_ub=-np.log(target), bounds=[(None, None), (1e-9, None)],
                           method="highs")
    if not res.success:
        raise RuntimeError(f"constant fit failed: {res.message}")
    u, w = res.x
    # nudge up so rounding never breaks domination
    return BoundParameters(1.0, 1.0, math.exp(u) * (1 + 1e-9), w / scale, 1.0,
                           base.alpha, base.beta, base.gamma, base.rho)
