"""
Exact-in-the-jumps simulation of the cable PDMP.

The membrane potential follows a backward-Euler/explicit-reaction
discretization of ``dx/dt = Lx + F^N(x, y)``; the channel configuration
jumps at rate ``a_{y(i) e}((x, phi_i))/eps`` per site and target. Jumps
are generated by thinning a homogeneous Poisson stream of rate
``(N-1) * a_plus * (|E|-1) / eps``, which is valid because every rate is
bounded by ``a_plus``. Given the numerically integrated potential, jump
times are therefore statistically exact; the only discretization error is
that of the PDE.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from cablelab import _kernels as K
from cablelab.channels import ChannelModel, check_config, stationary_batch
from cablelab.errors import InvalidArgument, MajorantViolation
from cablelab.grid import (
    GridFunction,
    MollifierBank,
    SpatialGrid,
    TridiagonalOperator,
    check_resolution,
)
from cablelab.rng import stream

UNIFORM_BLOCK = 3 * 8192


def default_dt(eps: float) -> float:
    return min(1e-3, eps / 10.0)


@dataclass(frozen=True)
class SimParams:
    eps: float
    N: int
    T: float
    grid: SpatialGrid
    dt: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise InvalidArgument(f"epsilon must be in (0,1], got {self.eps}")
        if int(self.N) != self.N or self.N < 2:
            raise InvalidArgument(f"N must be an integer >= 2, got {self.N}")
        if not self.T > 0:
            raise InvalidArgument(f"T must be > 0, got {self.T}")
        if self.dt is None:
            object.__setattr__(self, "dt", default_dt(self.eps))
        if not 0 < self.dt <= self.T:
            raise InvalidArgument(f"dt must lie in (0, T], got {self.dt}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgument("seed must be an unsigned 64-bit integer")
        check_resolution(self.N, self.grid)

    @property
    def n_steps(self) -> int:
        """Number of lattice intervals; the last one may be shorter than dt."""
        return lattice_steps(self.T, self.dt)


def lattice_steps(T: float, dt: float) -> int:
    n = math.ceil(T / dt)
    # Guard against T/dt = 100.00000000000001 style round-up.
    if n > 1 and (n - 1) * dt >= T * (1 - 1e-12):
        n -= 1
    return max(n, 1)


def lattice_times(T: float, dt: float) -> np.ndarray:
    n = lattice_steps(T, dt)
    t = np.arange(n + 1) * dt
    t[-1] = T
    return t


@dataclass(frozen=True, eq=False)
class HybridTrajectory:
    """Sample path on the uniform lattice plus every jump time.

    ``kinds`` marks each snapshot as lattice (0) or jump (1). Jump ``n`` in
    the log moved site ``jump_site[n]`` (0-based) from ``jump_from[n]`` to
    ``jump_to[n]`` at ``jump_t[n]``.
    """

    grid: SpatialGrid
    model: ChannelModel
    params: SimParams
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    kinds: np.ndarray
    jump_t: np.ndarray
    jump_site: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray
    n_candidates: int = 0

    @property
    def n_jumps(self) -> int:
        return int(self.jump_t.size)

    def x_at(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.xs[k])

    def write_csv(self, path, stride: int = 1) -> None:
        write_trajectory_csv(path, self, stride=stride)


def trajectory_header(M: int) -> list[str]:
    return ["t", "site_event", "from", "to"] + [f"x_{j}" for j in range(1, M + 1)]


def _fmt(a) -> list[str]:
    return [repr(float(v)) for v in a]


def write_trajectory_csv(path, traj, stride: int = 1) -> None:
    """Rows for lattice snapshots (every ``stride``-th) and for every jump.

    Jump rows carry the 1-based site index and the state names; lattice
    rows leave those three fields empty. Works for deterministic
    trajectories too (they have no jump rows).
    """
    if stride < 1:
        raise InvalidArgument("stride must be >= 1")
    M = traj.grid.M
    header = trajectory_header(M)
    kinds = getattr(traj, "kinds", None)
    if kinds is None:
        kinds = np.zeros(len(traj.times), dtype=np.int8)
    states = traj.model.states if getattr(traj, "model", None) is not None else None
    jump_iter = iter(range(getattr(traj, "n_jumps", 0)))
    n_lattice = int(np.sum(kinds == 0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        lat = 0
        for t, x, kind in zip(traj.times, traj.xs, kinds):
            if kind == 1:
                n = next(jump_iter)
                row = [repr(float(t)), str(int(traj.jump_site[n]) + 1),
                       states[traj.jump_from[n]], states[traj.jump_to[n]]]
            else:
                keep = lat % stride == 0 or lat == n_lattice - 1
                lat += 1
                if not keep:
                    continue
                row = [repr(float(t)), "", "", ""]
            if len(row) + len(x) != len(header):
                raise InvalidArgument("row does not match trajectory header")
            w.writerow(row + _fmt(x))


def imex_step(x: GridFunction, drift: GridFunction, dt: float,
              L: TridiagonalOperator) -> GridFunction:
    """Solve (I - dt L) x' = x + dt * drift with the Thomas algorithm."""
    if dt <= 0:
        raise InvalidArgument(f"dt must be > 0, got {dt}")
    if x.grid != drift.grid or L.M != x.grid.M:
        raise InvalidArgument("dimension mismatch between x, drift and L")
    M = x.grid.M
    out = np.empty(M)
    K.imex_into(np.asarray(x.values), np.asarray(drift.values), float(dt),
                float(L.diag), float(L.off), np.empty(M), np.empty(M), out)
    if not np.all(np.isfinite(out)):
        raise RuntimeError("tridiagonal solve produced non-finite values")
    return GridFunction(x.grid, out)


def majorant(model: ChannelModel, N: int, eps: float) -> float:
    return (N - 1) * model.a_plus * (model.n_states - 1) / eps


@dataclass
class RunResult:
    """Raw output of :func:`run_hybrid`; arrays are trimmed to their fill level."""

    x: np.ndarray
    y: np.ndarray
    sup_err2: float
    n_candidates: int
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    xs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ys: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    kinds: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    jump_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jump_site: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    jump_from: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    jump_to: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def run_hybrid(model: ChannelModel, params: SimParams, x0: np.ndarray, y0: np.ndarray,
               rng: np.random.Generator, record_snaps: bool = True,
               record_jumps: bool = True, reference=None,
               bank: MollifierBank | None = None) -> RunResult:
    """Drive the compiled thinning loop.

    ``reference`` is an optional ``(times, xs)`` pair; when given, the
    squared L^2 distance to it (linearly interpolated in time) is tracked
    at every lattice and jump time and its maximum returned as ``sup_err2``.
    """
    grid, N = params.grid, params.N
    if bank is None:
        bank = MollifierBank.build(N, grid)
    x = np.array(x0, dtype=float)
    y = np.array(y0, dtype=np.int64)
    lam = majorant(model, N, params.eps)
    n_steps = params.n_steps
    M = grid.M

    snap_cap = n_steps + 2 if record_snaps else 0
    jump_cap = 1024 if record_jumps else 0
    snap_t = np.empty(snap_cap)
    snap_x = np.empty((snap_cap, M))
    snap_y = np.empty((snap_cap, N - 1), dtype=np.int64)
    snap_kind = np.zeros(snap_cap, dtype=np.int8)
    jump_t = np.empty(jump_cap)
    jump_site = np.empty(jump_cap, dtype=np.int64)
    jump_from = np.empty(jump_cap, dtype=np.int64)
    jump_to = np.empty(jump_cap, dtype=np.int64)

    fstate = np.zeros(5)
    istate = np.zeros(8, dtype=np.int64)
    if record_snaps:
        snap_t[0], snap_x[0], snap_y[0] = 0.0, x, y
        istate[K.I_NSNAP] = 1

    use_ref = reference is not None
    if use_ref:
        ref_t, ref_x = (np.ascontiguousarray(a, dtype=float) for a in reference)
        if ref_x.ndim != 2 or ref_x.shape[1] != M or ref_t.size != ref_x.shape[0]:
            raise InvalidArgument("reference must be (times, xs) on the simulation grid")
        fstate[K.F_SUPERR] = K._sq_err(x, 0.0, ref_t, ref_x, 0, grid.h)[0]
    else:
        ref_t, ref_x = np.zeros(1), np.zeros((1, M))

    uni = rng.random(UNIFORM_BLOCK) if lam > 0 else np.zeros(0)
    args_model = (model.conductance, model.reversal, model.rate_min, model.rate_max,
                  model.slope, model.midpoint, model.active)
    while True:
        K.hybrid_run(x, y, fstate, istate, float(params.T), float(params.dt), n_steps,
                     grid.h, 1.0 / N, bank.starts, bank.stops, bank.offsets, bank.flat,
                     *args_model, lam, 1.0 / params.eps, uni, record_snaps, record_jumps,
                     snap_t, snap_x, snap_y, snap_kind, jump_t, jump_site, jump_from, jump_to,
                     use_ref, ref_t, ref_x)
        status = istate[K.I_STATUS]
        if status == K.DONE:
            break
        if status == K.NEED_UNIFORMS:
            p = istate[K.I_UPOS]
            uni = np.concatenate([uni[p:], rng.random(UNIFORM_BLOCK)])
            istate[K.I_UPOS] = 0
        elif status == K.SNAP_FULL:
            extra = max(snap_cap, 1024)
            snap_t = np.concatenate([snap_t, np.empty(extra)])
            snap_x = np.concatenate([snap_x, np.empty((extra, M))])
            snap_y = np.concatenate([snap_y, np.empty((extra, N - 1), dtype=np.int64)])
            snap_kind = np.concatenate([snap_kind, np.zeros(extra, dtype=np.int8)])
            snap_cap += extra
        elif status == K.JUMP_FULL:
            jump_t, jump_site, jump_from, jump_to = (
                np.concatenate([a, np.empty_like(a)])
                for a in (jump_t, jump_site, jump_from, jump_to)
            )
        elif status == K.MAJORANT:
            raise MajorantViolation(
                f"total jump rate exceeded the majorant {lam:g} at t={fstate[K.F_T]:.6g}; "
                f"the declared a_plus={model.a_plus:g} of model {model.name!r} is too small"
            )
        else:
            raise RuntimeError(f"unexpected kernel status {status}")

    n_snap, n_jump = istate[K.I_NSNAP], istate[K.I_NJUMP]
    return RunResult(
        x=x, y=y, sup_err2=float(fstate[K.F_SUPERR]), n_candidates=int(istate[K.I_NCAND]),
        times=snap_t[:n_snap], xs=snap_x[:n_snap], ys=snap_y[:n_snap],
        kinds=snap_kind[:n_snap],
        jump_t=jump_t[:n_jump], jump_site=jump_site[:n_jump],
        jump_from=jump_from[:n_jump], jump_to=jump_to[:n_jump],
    )


def simulate(model: ChannelModel, params: SimParams, x0: GridFunction, y0) -> HybridTrajectory:
    """One sample path of (X, Y) on [0, T] drawn from the stream keyed by ``params.seed``."""
    if x0.grid != params.grid:
        raise InvalidArgument("x0 is not on the simulation grid")
    y0 = check_config(model, y0, params.N)
    res = run_hybrid(model, params, x0.values, y0, stream(params.seed))
    kinds = res.kinds
    for a in (res.times, res.xs, res.ys, kinds):
        a.setflags(write=False)
    return HybridTrajectory(params.grid, model, params, res.times, res.xs, res.ys, kinds,
                            res.jump_t, res.jump_site, res.jump_from, res.jump_to,
                            res.n_candidates)


def sample_config(model: ChannelModel, x: GridFunction, N: int, rng: np.random.Generator,
                  bank: MollifierBank | None = None) -> np.ndarray:
    """Draw y(i) ~ nu((x, phi_i)) independently for every site."""
    bank = bank or MollifierBank.build(N, x.grid)
    nu = stationary_batch(model, bank.project(x.values))
    cum = np.cumsum(nu, axis=-1)
    cum[:, -1] = 1.0
    u = rng.random(N - 1)
    return (u[:, None] >= cum).sum(axis=-1).astype(np.int64)


# ---------------------------------------------------------------------------
# Scalar instance: H = R, A = -a, F(x, y) = c_y (v_y - x)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ToyTrajectory:
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    kinds: np.ndarray
    jump_t: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray


def toy_flow(x0: float, t: float, decay: float, c: float, v: float) -> float:
    """Exact solution of x' = -decay*x + c(v - x) after time t."""
    rate_total = decay + c
    if rate_total == 0.0:
        return x0
    x_inf = c * v / rate_total
    return x_inf + (x0 - x_inf) * math.exp(-rate_total * t)


def simulate_toy(model: ChannelModel, eps: float, T: float, dt: float, x0: float, y0: int,
                 seed: int, decay: float = 1.0) -> ToyTrajectory:
    """Single-channel scalar PDMP with exact flow between events.

    Uses the same thinning scheme and uniform consumption order as the
    cable simulator, with majorant ``a_plus * (|E|-1) / eps`` and jump
    rates evaluated at ``zeta = x``.
    """
    if not 0.0 < eps <= 1.0:
        raise InvalidArgument(f"epsilon must be in (0,1], got {eps}")
    if not 0 < dt <= T:
        raise InvalidArgument("dt must lie in (0, T]")
    if not 0 <= y0 < model.n_states:
        raise InvalidArgument("initial state out of range")
    rng = stream(seed)
    lam = model.a_plus * (model.n_states - 1) / eps
    lat = lattice_times(T, dt)
    c, v = model.conductance, model.reversal
    times, xs, ys, kinds = [0.0], [float(x0)], [int(y0)], [0]
    jt, jf, jto = [], [], []
    t, x, y = 0.0, float(x0), int(y0)
    t_cand = 0.0
    k = 1
    buf = np.zeros(0)
    pos = 0
    while k < lat.size:
        if lam > 0:
            if pos + 3 > buf.size:
                buf = np.concatenate([buf[pos:], rng.random(UNIFORM_BLOCK)])
                pos = 0
            t_cand = t_cand - math.log1p(-buf[pos]) / lam
            u_acc, u_sel = buf[pos + 1], buf[pos + 2]
            pos += 3
        else:
            t_cand = math.inf
        while k < lat.size and lat[k] <= t_cand:
            x = toy_flow(x, lat[k] - t, decay, c[y], v[y])
            t = lat[k]
            times.append(t), xs.append(x), ys.append(y), kinds.append(0)
            k += 1
        if k >= lat.size:
            break
        x = toy_flow(x, t_cand - t, decay, c[y], v[y])
        t = t_cand
        r = model.rates(x)[y] / eps
        total = float(r.sum())
        if total > lam * (1 + 1e-12):
            raise MajorantViolation(f"total rate {total:g} exceeds majorant {lam:g}")
        if u_acc * lam < total:
            cum = np.cumsum(r)
            dest = int(np.searchsorted(cum, u_sel * total, side="right"))
            dest = min(dest, model.n_states - 1)
            while r[dest] <= 0:
                dest -= 1
            jt.append(t), jf.append(y), jto.append(dest)
            y = dest
            times.append(t), xs.append(x), ys.append(y), kinds.append(1)
    return ToyTrajectory(np.array(times), np.array(xs), np.array(ys), np.array(kinds, np.int8),
                         np.array(jt), np.array(jf, dtype=np.int64), np.array(jto, dtype=np.int64))
