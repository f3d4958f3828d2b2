"""
Ion-channel kinetics and the three reaction terms of the cable model.

Every transition rate is a sigmoid of the local potential ``zeta``::

    a(zeta) = a_min + (a_max - a_min) / (1 + exp(-k (zeta - zeta0)))

Constant rates are the special case ``a_min == a_max`` and absent
transitions are ``a_min == a_max == 0``. Keeping a single parametric form
lets the compiled simulation kernel evaluate any shipped model.

The product measure over all N-1 sites is never built; every average is
taken site by site.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from cablelab.errors import InvalidArgument, ReducibleChain
from cablelab.grid import GridFunction, MollifierBank
from cablelab.rng import stream


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """Finite-state channel with conductances, reversal potentials and rates.

    ``rate_min``, ``rate_max``, ``slope`` and ``midpoint`` are |E| x |E|
    arrays of sigmoid parameters; diagonal entries are ignored.
    ``declared_a_plus`` overrides the rate bound used as thinning majorant.
    """

    states: tuple[str, ...]
    conductance: np.ndarray
    reversal: np.ndarray
    rate_min: np.ndarray
    rate_max: np.ndarray
    slope: np.ndarray
    midpoint: np.ndarray
    name: str = "custom"
    declared_a_plus: float | None = None
    spec: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = len(self.states)
        if not 1 <= n <= 8:
            raise InvalidArgument(f"state space must have 1..8 states, got {n}")
        if len(set(self.states)) != n:
            raise InvalidArgument(f"duplicate state names in {self.states}")
        for name in ("conductance", "reversal"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            if a.shape != (n,):
                raise InvalidArgument(f"{name} must have {n} entries, got {a.size}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.conductance < 0):
            raise InvalidArgument("conductances must be >= 0")
        for name in ("rate_min", "rate_max", "slope", "midpoint"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (n, n):
                raise InvalidArgument(f"{name} must be {n}x{n}, got {a.shape}")
            np.fill_diagonal(a, 0.0)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        lo, hi = self.rate_min, self.rate_max
        if np.any(lo < 0) or np.any(hi < 0):
            raise InvalidArgument("rates must be non-negative")
        zero = (lo == 0) & (hi == 0)
        if np.any(~zero & (np.minimum(lo, hi) <= 0)):
            raise InvalidArgument("each rate must be identically zero or strictly positive")
        if not np.all(np.isfinite(self.slope)) or not np.all(np.isfinite(self.midpoint)):
            raise InvalidArgument("rate parameters must be finite")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def active(self) -> np.ndarray:
        """Boolean mask of transitions that are not identically zero."""
        return (self.rate_min > 0) | (self.rate_max > 0)

    @property
    def a_plus(self) -> float:
        """Upper bound on every rate (the declared one if given)."""
        if self.declared_a_plus is not None:
            return float(self.declared_a_plus)
        return float(np.max(np.maximum(self.rate_min, self.rate_max), initial=0.0))

    @property
    def c_plus(self) -> float:
        return float(np.max(self.conductance))

    @property
    def v_plus(self) -> float:
        return float(np.max(np.abs(self.reversal)))

    @property
    def lipschitz(self) -> float:
        """Largest Lipschitz constant among the rate functions."""
        return float(np.max(np.abs(self.rate_max - self.rate_min) * np.abs(self.slope) / 4.0))

    def rates(self, zeta) -> np.ndarray:
        """Rates a_{e1 e2}(zeta); shape (..., |E|, |E|) with zero diagonal."""
        z = np.asarray(zeta, dtype=float)[..., None, None]
        a = self.rate_min + (self.rate_max - self.rate_min) * expit(self.slope * (z - self.midpoint))
        return np.where(self.active, a, 0.0)

    def generators(self, zeta) -> np.ndarray:
        """Batched rate matrices; shape (..., |E|, |E|)."""
        a = self.rates(zeta)
        idx = np.arange(self.n_states)
        a[..., idx, idx] = -a.sum(axis=-1)
        return a

    def currents(self) -> np.ndarray:
        """Per-state (c_e, c_e v_e) so that the state-e current is c_e v_e - c_e zeta."""
        return self.conductance, self.conductance * self.reversal

    def mean_current(self, zeta) -> np.ndarray:
        """sum_e nu(zeta)(e) c_e (v_e - zeta), vectorized over zeta."""
        zeta = np.asarray(zeta, dtype=float)
        nu = stationary_batch(self, zeta)
        return nu @ (self.conductance * self.reversal) - (nu @ self.conductance) * zeta

    def mean_current_slope_bound(self, zeta_max: float, points: int = 20001) -> float:
        """Upper bound on d/dzeta of :meth:`mean_current` over [-zeta_max, zeta_max].

        Taken as the largest difference quotient on a fine lattice, inflated
        by the curvature allowance of one lattice cell.
        """
        z = np.linspace(-zeta_max, zeta_max, points)
        g = self.mean_current(z)
        dq = np.diff(g) / np.diff(z)
        allowance = np.max(np.abs(np.diff(dq)), initial=0.0)
        return float(max(np.max(dq) + allowance, 0.0))


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Generator of one channel at fixed potential: rows sum to zero."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise InvalidArgument(f"rate matrix must be square, got {Q.shape}")
        off = Q[~np.eye(len(Q), dtype=bool)]
        if np.any(off < 0):
            raise InvalidArgument("off-diagonal rates must be >= 0")
        scale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))
        if np.max(np.abs(Q.sum(axis=1)), initial=0.0) > 1e-14 * scale * len(Q):
            raise InvalidArgument("rows of a rate matrix must sum to zero")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def n_states(self) -> int:
        return len(self.Q)


@dataclass(frozen=True, eq=False)
class StationaryMeasure:
    nu: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float)
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)


def rate_matrix(model: ChannelModel, zeta: float) -> RateMatrix:
    return RateMatrix(model.generators(float(zeta)))


def _kernel_dimension(Q: np.ndarray) -> int:
    s = np.linalg.svd(Q, compute_uv=False)
    scale = max(float(s[0]), 1e-300) if s.size else 1.0
    return int(np.sum(s <= 1e-12 * scale * len(Q))) if np.any(Q) else len(Q)


def stationary_measure(Q: RateMatrix) -> StationaryMeasure:
    """Solve nu Q = 0, sum(nu) = 1 through the bordered system [Q^T; 1^T] nu = [0; 1]."""
    Qm = Q.Q if isinstance(Q, RateMatrix) else RateMatrix(Q).Q
    n = len(Qm)
    if n == 1:
        return StationaryMeasure(np.ones(1))
    if _kernel_dimension(Qm) != 1:
        raise ReducibleChain("generator has a stationary space of dimension != 1")
    A = np.vstack([Qm.T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    nu = np.linalg.lstsq(A, b, rcond=None)[0]
    # Round-off can leave tiny negative masses on rarely visited states.
    nu = np.clip(nu, 0.0, None)
    return StationaryMeasure(nu / nu.sum())


def stationary_batch(model: ChannelModel, zeta) -> np.ndarray:
    """nu(zeta) for an array of potentials; shape (..., |E|).

    Square-system variant of :func:`stationary_measure` (last balance
    equation replaced by normalization), solved in one batched call.
    """
    zeta = np.asarray(zeta, dtype=float)
    n = model.n_states
    if n == 1:
        return np.ones(zeta.shape + (1,))
    A = np.swapaxes(model.generators(zeta), -1, -2).copy()
    A[..., -1, :] = 1.0
    b = np.zeros(zeta.shape + (n,))
    b[..., -1] = 1.0
    try:
        nu = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ReducibleChain(f"{model.name}: singular stationary system") from exc
    if not np.all(np.isfinite(nu)):
        raise ReducibleChain(f"{model.name}: stationary system is ill-conditioned")
    nu = np.clip(nu, 0.0, None)
    return nu / nu.sum(axis=-1, keepdims=True)


def check_config(model: ChannelModel, y, N: int) -> np.ndarray:
    """Validate a channel configuration (N-1 state indices) and return it as int64."""
    y = np.asarray(y)
    if y.shape != (N - 1,):
        raise InvalidArgument(f"configuration must have {N - 1} sites, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise InvalidArgument("configuration entries must be integer state indices")
    y = y.astype(np.int64)
    if np.any((y < 0) | (y >= model.n_states)):
        raise InvalidArgument(f"state index outside 0..{model.n_states - 1}")
    return y


def _bank(mollifiers) -> MollifierBank:
    return mollifiers if isinstance(mollifiers, MollifierBank) else MollifierBank.from_mollifiers(mollifiers)


def _site_potentials(x: GridFunction, bank: MollifierBank) -> np.ndarray:
    if x.grid != bank.grid:
        raise InvalidArgument("x and mollifiers live on different grids")
    return bank.project(x.values)


def reaction_term(model: ChannelModel, x: GridFunction, y, mollifiers) -> GridFunction:
    """(1/N) sum_i c_{y(i)} (v_{y(i)} - (x, phi_i)) phi_i."""
    bank = _bank(mollifiers)
    y = check_config(model, y, bank.N)
    zeta = _site_potentials(x, bank)
    c = model.conductance[y]
    w = c * (model.reversal[y] - zeta) / bank.N
    return GridFunction(x.grid, bank.combine(w))


def averaged_drift(model: ChannelModel, x: GridFunction, N: int, mollifiers) -> GridFunction:
    """Reaction term averaged over the site-wise stationary measures at x."""
    bank = _bank(mollifiers)
    if bank.N != N:
        raise InvalidArgument(f"mollifiers built for N={bank.N}, asked for N={N}")
    zeta = _site_potentials(x, bank)
    return GridFunction(x.grid, bank.combine(model.mean_current(zeta) / N))


def empirical_average_drift(model: ChannelModel, x: GridFunction, N: int, mollifiers,
                            samples: int, seed: int, chunk: int = 4096):
    """Monte Carlo estimate of :func:`averaged_drift`.

    Draws ``samples`` independent configurations with y(i) ~ nu((x, phi_i))
    and returns ``(mean, standard_error)``, the latter per grid node.
    """
    if samples < 1:
        raise InvalidArgument("samples must be >= 1")
    bank = _bank(mollifiers)
    if bank.N != N:
        raise InvalidArgument(f"mollifiers built for N={bank.N}, asked for N={N}")
    zeta = _site_potentials(x, bank)
    cum = np.cumsum(stationary_batch(model, zeta), axis=-1)
    cum[:, -1] = 1.0
    currents = model.conductance[None, :] * (model.reversal[None, :] - zeta[:, None]) / N
    rng = stream(seed)
    mean = np.zeros(x.grid.M)
    m2 = np.zeros(x.grid.M)
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        u = rng.random((n, N - 1))
        y = (u[:, :, None] >= cum[None, :, :]).sum(axis=-1)
        F = bank.combine(currents[np.arange(N - 1), y])
        # Chan et al. pairwise update of mean and sum of squared deviations
        c_mean = F.mean(axis=0)
        c_m2 = ((F - c_mean) ** 2).sum(axis=0)
        delta = c_mean - mean
        total = done + n
        mean = mean + delta * (n / total)
        m2 = m2 + c_m2 + delta**2 * (done * n / total)
        done = total
    if samples > 1:
        stderr = np.sqrt(m2 / (samples - 1) / samples)
    else:
        stderr = np.full(x.grid.M, np.inf)
    return GridFunction(x.grid, mean), stderr


def limit_drift(model: ChannelModel, x: GridFunction, mass: float = 1.0) -> GridFunction:
    """Pointwise drift sum_e nu(x)(e) c_e (v_e - x).

    ``mass`` is the integral of the mollifier profile. The site sum of
    :func:`averaged_drift` tends to ``mass * g(mass * x)`` with ``g`` the
    mean current, which reduces to the plain pointwise drift when the
    profile has unit mass.
    """
    return GridFunction(x.grid, mass * model.mean_current(mass * x.values))


# ---------------------------------------------------------------------------
# Shipped models
# ---------------------------------------------------------------------------

def _matrices(n):
    return np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n))


def two_state_constant(alpha: float = 1.0, beta: float = 3.0,
                       conductance=(0.0, 1.0), reversal=(0.0, 1.0)) -> ChannelModel:
    """Closed (0) <-> open (1) with constant opening rate alpha and closing rate beta."""
    lo, hi, k, z0 = _matrices(2)
    lo[0, 1] = hi[0, 1] = alpha
    lo[1, 0] = hi[1, 0] = beta
    return ChannelModel(("C", "O"), conductance, reversal, lo, hi, k, z0,
                        name="two_state_constant",
                        spec={"family": "two_state_constant", "alpha": alpha, "beta": beta})


def two_state_sigmoid(open_min: float = 0.5, open_max: float = 5.0, open_slope: float = 4.0,
                      open_mid: float = 0.2, close_min: float = 0.5, close_max: float = 5.0,
                      close_slope: float = -4.0, close_mid: float = 0.2,
                      conductance=(0.0, 1.0), reversal=(0.0, 1.0)) -> ChannelModel:
    """Closed <-> open with voltage-dependent sigmoid rates.

    The opening rate rises toward ``open_max`` with depolarization; the
    closing rate (negative slope) falls toward ``close_min``.
    """
    lo, hi, k, z0 = _matrices(2)
    lo[0, 1], hi[0, 1], k[0, 1], z0[0, 1] = open_min, open_max, open_slope, open_mid
    lo[1, 0], hi[1, 0], k[1, 0], z0[1, 0] = close_min, close_max, close_slope, close_mid
    params = dict(open_min=open_min, open_max=open_max, open_slope=open_slope,
                  open_mid=open_mid, close_min=close_min, close_max=close_max,
                  close_slope=close_slope, close_mid=close_mid)
    return ChannelModel(("C", "O"), conductance, reversal, lo, hi, k, z0,
                        name="two_state_sigmoid", spec={"family": "two_state_sigmoid", **params})


def three_state_chain(rate_min: float = 0.5, rate_max: float = 6.0, slope: float = 3.0,
                      midpoint: float = 0.0, conductance=(0.0, 0.0, 1.0),
                      reversal=(-0.5, 0.0, 1.0)) -> ChannelModel:
    """Linear chain C1 <-> C2 <-> O; forward rates rise and backward rates fall with zeta."""
    lo, hi, k, z0 = _matrices(3)
    for a, b in ((0, 1), (1, 2)):
        lo[a, b], hi[a, b], k[a, b], z0[a, b] = rate_min, rate_max, slope, midpoint
        lo[b, a], hi[b, a], k[b, a], z0[b, a] = rate_min, rate_max, -slope, midpoint
    params = dict(rate_min=rate_min, rate_max=rate_max, slope=slope, midpoint=midpoint)
    return ChannelModel(("C1", "C2", "O"), conductance, reversal, lo, hi, k, z0,
                        name="three_state_chain", spec={"family": "three_state_chain", **params})


def single_state(conductance: float = 1.0, reversal: float = 1.0) -> ChannelModel:
    """One always-open state; the reaction term is then deterministic."""
    z = np.zeros((1, 1))
    return ChannelModel(("O",), [conductance], [reversal], z, z, z, z,
                        name="single_state", spec={"family": "single_state"})


def with_currents(model: ChannelModel, conductance=None, reversal=None) -> ChannelModel:
    """Copy of ``model`` with replaced conductances and/or reversal potentials."""
    return ChannelModel(
        model.states,
        model.conductance if conductance is None else conductance,
        model.reversal if reversal is None else reversal,
        model.rate_min, model.rate_max, model.slope, model.midpoint,
        name=model.name, declared_a_plus=model.declared_a_plus, spec=dict(model.spec),
    )


FAMILIES = {
    "two_state_constant": two_state_constant,
    "two_state_sigmoid": two_state_sigmoid,
    "three_state_chain": three_state_chain,
    "single_state": single_state,
}
