"""Command-line front end: ``cablelab <subcommand> [flags]``.

Exit codes: 0 success, 1 failed invariant check, 2 usage error, 3 missing
config file, 4 config parse error, 5 config validation error, 6 runtime
failure. Errors are reported on stderr as a single JSON line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from cablelab.averaged import solve_averaged, solve_limit
from cablelab.channels import rate_matrix, stationary_measure
from cablelab.config import ConfigError, RunConfig, parse_config
from cablelab.convergence import default_jobs, psi, run_ensemble
from cablelab.errors import CablelabError
from cablelab.grid import GridFunction, MollifierBank, mollifier_mass
from cablelab.hybrid import (
    SimParams,
    default_dt,
    sample_config,
    simulate,
    trajectory_header,
    write_trajectory_csv,
)
from cablelab.poisson import generator_identity, measure_scalings
from cablelab.rng import replication_seed, stream

EXIT_CHECK_FAILED = 1
EXIT_RUNTIME = 6


def _error(kind: str, message: str, key: str = "", code: int = EXIT_RUNTIME) -> int:
    print(json.dumps({"error": kind, "key": key, "message": message}, sort_keys=True),
          file=sys.stderr)
    return code


def _x0(cfg: RunConfig, grid):
    return grid.sample(lambda s: cfg.x0_amplitude * np.sin(np.pi * s))


def _out_dir(cfg: RunConfig, args) -> str:
    path = args.out or cfg.out_dir
    os.makedirs(path, exist_ok=True)
    return path


def _check_header(path: str, expected: list[str]) -> None:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
    if first != ",".join(expected):
        raise RuntimeError(f"{path}: header does not match the trajectory schema")


def cmd_simulate(cfg: RunConfig, args) -> int:
    eps, N = cfg.pairs[0]
    grid = cfg.grid_for(N)
    params = SimParams(eps, N, cfg.T, grid, cfg.dt if cfg.dt is not None else default_dt(eps), args.seed)
    x0 = _x0(cfg, grid)
    if cfg.y0 == "sampled":
        y0 = sample_config(cfg.model, x0, N, stream(replication_seed(args.seed, 0)))
    else:
        y0 = np.full(N - 1, cfg.y0, dtype=np.int64)
    traj = simulate(cfg.model, params, x0, y0)
    path = os.path.join(_out_dir(cfg, args), "trajectory.csv")
    traj.write_csv(path, stride=args.stride or cfg.stride)
    _check_header(path, trajectory_header(grid.M))
    print(path)
    return 0


def cmd_average(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    stride = args.stride or cfg.stride
    written = []
    for N in sorted(set(cfg.N)):
        grid = cfg.grid_for(N)
        dt = cfg.dt if cfg.dt is not None else 1e-3
        if cfg.target == "limit":
            traj = solve_limit(cfg.model, grid, dt, cfg.T, _x0(cfg, grid), mollifier_mass())
            name = f"limit_M{grid.M}.csv"
        else:
            traj = solve_averaged(cfg.model, N, grid, dt, cfg.T, _x0(cfg, grid))
            name = f"averaged_N{N}.csv"
        path = os.path.join(out, name)
        if path in written:
            continue
        write_trajectory_csv(path, traj, stride)
        _check_header(path, trajectory_header(grid.M))
        written.append(path)
    print("\n".join(written))
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    report = run_ensemble(cfg.plan(args.seed), jobs=args.jobs, deltas=cfg.deltas)
    paths = report.write(_out_dir(cfg, args), plot=args.plot or cfg.plot)
    print("\n".join(paths[k] for k in sorted(paths)))
    return 0


def cmd_poisson_check(cfg: RunConfig, args) -> int:
    rep = measure_scalings(cfg.model, cfg.poisson_N, cfg.poisson_samples, args.seed, T=cfg.T)
    out = _out_dir(cfg, args)
    csv_path, meta_path = os.path.join(out, "scaling.csv"), os.path.join(out, "scaling.jsonl")
    rep.write_csv(csv_path)
    rep.write_metadata(meta_path)
    print(csv_path)
    print(meta_path)
    return 0


def cmd_psi_table(args) -> int:
    if not args.max > 0 or args.points < 2:
        return _error("validation", "need --max > 0 and --points >= 2", code=5)
    xs = np.linspace(0.0, args.max, args.points)
    lines = ["x,psi"] + [f"{float(x)!r},{float(v)!r}" for x, v in zip(xs, psi(xs))]
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "psi.csv")
        with open(path, "w") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(cfg: RunConfig, args) -> int:
    """Run the invariant checks on the configured model and print one line each."""
    model = cfg.model
    rng = stream(replication_seed(args.seed, 0))
    results = []

    zetas = np.linspace(-2.0, 2.0, 41)
    worst = 0.0
    for z in zetas:
        Q = rate_matrix(model, z)
        nu = stationary_measure(Q).nu
        worst = max(worst, float(np.max(np.abs(nu @ Q.Q))), abs(nu.sum() - 1.0))
    results.append(("stationary measure balance", worst, 1e-10))

    N = min(cfg.N)
    grid = cfg.grid_for(N)
    bank = MollifierBank.build(N, grid)
    worst = 0.0
    for _ in range(20):
        x = GridFunction(grid, 0.3 * rng.standard_normal(grid.M))
        z = GridFunction(grid, 0.3 * rng.standard_normal(grid.M))
        y = rng.integers(0, model.n_states, N - 1)
        lhs, rhs = generator_identity(model, x, y, z, bank)
        worst = max(worst, abs(lhs - rhs))
    results.append(("Poisson generator identity", worst, 1e-8))

    eps = cfg.pairs[0][0]
    params = SimParams(eps, N, min(cfg.T, 0.1), grid, cfg.dt if cfg.dt is not None else default_dt(eps),
                       args.seed)
    x0 = _x0(cfg, grid)
    traj = simulate(model, params, x0, sample_config(model, x0, N, rng, bank))
    finite = 0.0 if np.all(np.isfinite(traj.xs)) else 1.0
    results.append(("hybrid run finite", finite, 0.0))

    ok = True
    for name, value, tol in results:
        passed = value <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {value:.3e} (tol {tol:.0e})")
    return 0 if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cablelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="master seed (default: experiment.seed, else 0)")
        sp.add_argument("--jobs", type=int, default=None, metavar="INT")
        sp.add_argument("--out", default=None, metavar="DIR")
        sp.add_argument("--stride", type=int, default=None, metavar="INT")
        sp.add_argument("--plot", action="store_true")

    for name, text in (("simulate", "one hybrid trajectory"),
                       ("average", "averaged or limit trajectory"),
                       ("sweep", "Monte Carlo ensemble and report CSVs"),
                       ("poisson-check", "Poisson scaling report"),
                       ("validate", "invariant checks for the configured model")):
        common(sub.add_parser(name, help=text))
    sp = sub.add_parser("psi-table", help="Psi on a uniform lattice")
    common(sp, config=False)
    sp.add_argument("--max", type=float, default=10.0)
    sp.add_argument("--points", type=int, default=101)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "average": cmd_average,
    "sweep": cmd_sweep,
    "poisson-check": cmd_poisson_check,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.stride is not None and args.stride < 1:
        return _error("validation", "stride must be >= 1", "--stride", 5)
    if args.jobs is not None and args.jobs < 1:
        return _error("validation", "jobs must be >= 1", "--jobs", 5)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _error("validation", "seed must be an unsigned 64-bit integer", "--seed", 5)
    if args.jobs is None:
        args.jobs = default_jobs()
    if args.command == "psi-table":
        return cmd_psi_table(args)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        return _error(exc.kind, exc.message, exc.key, exc.code)
    if args.seed is None:
        args.seed = cfg.seed
    try:
        return COMMANDS[args.command](cfg, args)
    except (CablelabError, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        return _error("runtime", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
