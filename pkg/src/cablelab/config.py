"""
Run configuration files.

The format is flat ``key = value`` text. Keys carry dotted section prefixes
(``model.family = two_state_sigmoid``); a ``[section]`` line may be used
instead, in which case following bare keys get that prefix. ``#`` starts a
comment. Lists are comma separated. Unknown keys are rejected.

Example::

    model.family = two_state_sigmoid
    model.c = 0, 1
    numerics.T = 1
    experiment.epsilon = 0.1, 0.01, 0.001
    experiment.N = 8
    experiment.R = 20
"""

from __future__ import annotations

import inspect
import math
import os
from dataclasses import dataclass, field

from cablelab.channels import FAMILIES, ChannelModel, with_currents
from cablelab.convergence import ExperimentPlan
from cablelab.errors import CablelabError
from cablelab.grid import RESOLUTION_FACTOR, make_grid


class ConfigError(CablelabError):
    """Configuration problem; ``kind`` is one of missing, parse, validation."""

    CODES = {"missing": 3, "parse": 4, "validation": 5}

    def __init__(self, kind: str, key: str, message: str):
        self.kind, self.key, self.message = kind, key, message
        super().__init__(f"{key}: {message}" if key else message)

    @property
    def code(self) -> int:
        return self.CODES[self.kind]

    def __reduce__(self):
        return type(self), (self.kind, self.key, self.message)


FIXED_KEYS = {
    "model.family", "model.states", "model.c", "model.v",
    "numerics.M", "numerics.dt", "numerics.T",
    "experiment.epsilon", "experiment.N", "experiment.pairing", "experiment.schedule_c",
    "experiment.R", "experiment.target", "experiment.delta_grid", "experiment.seed",
    "experiment.x0_amplitude", "experiment.y0",
    "output.dir", "output.stride", "output.plot",
    "poisson.N", "poisson.samples",
}


def _known(key: str) -> bool:
    if key in FIXED_KEYS:
        return True
    return key.startswith("model.rates.") and key.count(".") == 2


def read_pairs(path) -> dict[str, tuple[str, int]]:
    """Raw ``{key: (value, line_number)}``; raises ConfigError on I/O or syntax problems."""
    if not os.path.isfile(path):
        raise ConfigError("missing", "", f"config file not found: {path}")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("missing", "", f"cannot read {path}: {exc}") from exc
    out: dict[str, tuple[str, int]] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section.replace(".", "").replace("_", "").isalnum():
                raise ConfigError("parse", "", f"line {lineno}: bad section header {raw.strip()!r}")
            continue
        if "=" not in line:
            raise ConfigError("parse", "", f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not all(part.replace("_", "").isalnum() for part in key.split(".")):
            raise ConfigError("parse", "", f"line {lineno}: bad key {key!r}")
        if section:
            key = f"{section}.{key}"
        if not _known(key):
            raise ConfigError("validation", key, f"unknown key {key!r}")
        if key in out:
            raise ConfigError("parse", key, f"line {lineno}: duplicate key")
        out[key] = (value, lineno)
    return out


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration; see the module docstring for the file format."""

    model: ChannelModel
    T: float
    dt: float | None
    M: int | None
    epsilon: tuple
    N: tuple
    pairs: tuple
    R: int
    target: str
    deltas: tuple | None
    seed: int
    x0_amplitude: float
    y0: str | int
    out_dir: str
    stride: int
    plot: bool
    poisson_N: tuple
    poisson_samples: int
    raw: dict = field(default_factory=dict, repr=False)

    def plan(self, seed: int | None = None) -> ExperimentPlan:
        return ExperimentPlan(self.model, self.pairs, self.R, self.T, self.dt, self.M,
                              self.x0_amplitude, self.y0,
                              self.seed if seed is None else seed, self.target)

    def grid_for(self, N: int):
        return make_grid(self.M if self.M is not None else RESOLUTION_FACTOR * N)


class _Reader:
    def __init__(self, pairs):
        self.pairs = pairs
        self.used: set[str] = set()

    def has(self, key):
        return key in self.pairs

    def raw(self, key, default=None, required=False):
        if key not in self.pairs:
            if required:
                raise ConfigError("validation", key, "required key is missing")
            return default
        self.used.add(key)
        return self.pairs[key][0]

    def _convert(self, key, text, conv, what):
        try:
            return conv(text)
        except ValueError:
            raise ConfigError("parse", key, f"expected {what}, got {text!r}") from None

    def number(self, key, default=None, required=False):
        text = self.raw(key, None, required)
        if text is None:
            return default
        val = self._convert(key, text, float, "a number")
        if not math.isfinite(val):
            raise ConfigError("validation", key, "must be finite")
        return val

    def integer(self, key, default=None, required=False):
        text = self.raw(key, None, required)
        return default if text is None else self._convert(key, text, int, "an integer")

    def numbers(self, key, default=None, required=False):
        text = self.raw(key, None, required)
        if text is None:
            return default
        vals = tuple(self._convert(key, s.strip(), float, "a number list")
                     for s in text.split(",") if s.strip())
        if not vals:
            raise ConfigError("parse", key, "empty list")
        return vals

    def integers(self, key, default=None, required=False):
        text = self.raw(key, None, required)
        if text is None:
            return default
        vals = tuple(self._convert(key, s.strip(), int, "an integer list")
                     for s in text.split(",") if s.strip())
        if not vals:
            raise ConfigError("parse", key, "empty list")
        return vals

    def boolean(self, key, default=False):
        text = self.raw(key)
        if text is None:
            return default
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError("parse", key, f"expected a boolean, got {text!r}")


def _build_model(rd: _Reader) -> ChannelModel:
    family = rd.raw("model.family", required=True)
    if family not in FAMILIES:
        raise ConfigError("validation", "model.family",
                          f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    ctor = FAMILIES[family]
    accepted = set(inspect.signature(ctor).parameters) - {"conductance", "reversal"}
    kwargs = {}
    for key in sorted(k for k in rd.pairs if k.startswith("model.rates.")):
        name = key.split(".", 2)[2]
        if name not in accepted:
            raise ConfigError("validation", key,
                              f"family {family!r} has no parameter {name!r}")
        kwargs[name] = rd.number(key)
    try:
        model = ctor(**kwargs)
        c = rd.numbers("model.c")
        v = rd.numbers("model.v")
        if c is not None or v is not None:
            for key, vals in (("model.c", c), ("model.v", v)):
                if vals is not None and len(vals) != model.n_states:
                    raise ConfigError("validation", key,
                                      f"needs {model.n_states} values, got {len(vals)}")
            model = with_currents(model, c, v)
    except ConfigError:
        raise
    except (ValueError, CablelabError) as exc:
        raise ConfigError("validation", "model", str(exc)) from exc
    states = rd.raw("model.states")
    if states is not None:
        names = tuple(s.strip() for s in states.split(","))
        if names != model.states:
            raise ConfigError("validation", "model.states",
                              f"family {family!r} has states {','.join(model.states)}")
    return model


def _check(cond, key, message):
    if not cond:
        raise ConfigError("validation", key, message)


def parse_config(path) -> RunConfig:
    """Read and validate a run configuration."""
    pairs = read_pairs(path)
    rd = _Reader(pairs)
    model = _build_model(rd)

    T = rd.number("numerics.T", 1.0)
    _check(T > 0, "numerics.T", "T must be > 0")
    dt = rd.number("numerics.dt")
    _check(dt is None or 0 < dt <= min(T, 1e-2), "numerics.dt", "dt must be in (0, min(T, 0.01)]")
    M = rd.integer("numerics.M")
    _check(M is None or M >= 3, "numerics.M", "M must be >= 3")

    Ns = rd.integers("experiment.N", required=True)
    for N in Ns:
        _check(N >= 2, "experiment.N", "N must be >= 2")
        _check(M is None or M >= RESOLUTION_FACTOR * N, "numerics.M",
               f"M must be >= {RESOLUTION_FACTOR}*N = {RESOLUTION_FACTOR * N} to resolve the mollifiers")
    pairing = rd.raw("experiment.pairing", "product")
    _check(pairing in ("product", "zip", "schedule"), "experiment.pairing",
           "pairing must be product, zip or schedule")
    if pairing == "schedule":
        _check(not rd.has("experiment.epsilon"), "experiment.epsilon",
               "epsilon is derived from schedule_c when pairing = schedule")
        c = rd.number("experiment.schedule_c", required=True)
        _check(c > 0, "experiment.schedule_c", "schedule_c must be > 0")
        eps_list = tuple(c / N**3 for N in Ns)
    else:
        _check(not rd.has("experiment.schedule_c"), "experiment.schedule_c",
               "schedule_c requires pairing = schedule")
        eps_list = rd.numbers("experiment.epsilon", required=True)
    for e in eps_list:
        _check(0 < e <= 1, "experiment.epsilon", "epsilon must be in (0,1]")
    if pairing == "product":
        pair_list = tuple((e, N) for N in Ns for e in eps_list)
    else:
        _check(len(eps_list) == len(Ns), "experiment.N",
               "epsilon and N lists must have equal length when pairing = zip")
        pair_list = tuple(zip(eps_list, Ns))
    _check(len(set(pair_list)) == len(pair_list), "experiment", "duplicate (epsilon, N) pair")

    R = rd.integer("experiment.R", 1)
    _check(R >= 1, "experiment.R", "R must be >= 1")
    target = rd.raw("experiment.target", "averaged")
    _check(target in ("averaged", "limit"), "experiment.target", "target must be averaged or limit")
    grid_text = rd.raw("experiment.delta_grid", "auto")
    if grid_text == "auto":
        deltas = None
    else:
        deltas = rd.numbers("experiment.delta_grid")
        _check(all(d > 0 for d in deltas), "experiment.delta_grid", "levels must be > 0")
    seed = rd.integer("experiment.seed", 0)
    _check(0 <= seed < 2**64, "experiment.seed", "seed must be an unsigned 64-bit integer")
    amp = rd.number("experiment.x0_amplitude", 0.5)
    y0_text = rd.raw("experiment.y0", "sampled")
    if y0_text == "sampled":
        y0: str | int = "sampled"
    else:
        _check(y0_text in model.states, "experiment.y0",
               f"y0 must be 'sampled' or one of {','.join(model.states)}")
        y0 = model.states.index(y0_text)

    out_dir = rd.raw("output.dir", "out")
    stride = rd.integer("output.stride", 1)
    _check(stride >= 1, "output.stride", "stride must be >= 1")
    plot = rd.boolean("output.plot", False)

    pN = rd.integers("poisson.N", (8, 16, 32, 64))
    _check(all(n >= 4 for n in pN) and list(pN) == sorted(set(pN)), "poisson.N",
           "poisson.N must be strictly increasing with every N >= 4")
    pS = rd.integer("poisson.samples", 50)
    _check(pS >= 1, "poisson.samples", "samples must be >= 1")

    unused = set(pairs) - rd.used
    _check(not unused, sorted(unused)[0] if unused else "", "key is not used by this configuration")

    cfg = RunConfig(model, T, dt, M, tuple(eps_list), tuple(Ns), pair_list, R, target, deltas,
                    seed, amp, y0, out_dir, stride, plot, tuple(pN), pS,
                    {k: v for k, (v, _) in pairs.items()})
    try:
        cfg.plan()
    except (ValueError, CablelabError) as exc:
        raise ConfigError("validation", "experiment", str(exc)) from exc
    return cfg
