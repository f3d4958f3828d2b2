"""Two-timescale hybrid cable neuron: simulation, averaging and convergence tools."""

from cablelab.grid import (
    GridFunction,
    Mollifier,
    SpatialGrid,
    inner_product,
    laplacian_matrix,
    make_grid,
    mollifier_build,
    mollifier_family,
    mollifier_mass,
)
from cablelab.channels import (
    ChannelModel,
    averaged_drift,
    empirical_average_drift,
    limit_drift,
    rate_matrix,
    reaction_term,
    stationary_measure,
)
from cablelab.hybrid import HybridTrajectory, SimParams, imex_step, simulate, simulate_toy
from cablelab.averaged import solve_averaged, solve_limit
from cablelab.poisson import (
    ScalingReport,
    assemble_f,
    bracket_bound,
    measure_scalings,
    phi_site,
    solve_poisson_site,
)
from cablelab.convergence import (
    BoundParameters,
    ErrorReport,
    ExperimentPlan,
    fit_scaling,
    psi,
    run_ensemble,
    sup_diff,
    theoretical_tail_bound,
)
from cablelab.config import RunConfig, parse_config

__version__ = "0.1.0"

__all__ = [
    "BoundParameters",
    "ChannelModel",
    "ErrorReport",
    "ExperimentPlan",
    "GridFunction",
    "HybridTrajectory",
    "Mollifier",
    "RunConfig",
    "ScalingReport",
    "SimParams",
    "SpatialGrid",
    "assemble_f",
    "averaged_drift",
    "bracket_bound",
    "empirical_average_drift",
    "fit_scaling",
    "imex_step",
    "inner_product",
    "laplacian_matrix",
    "limit_drift",
    "make_grid",
    "measure_scalings",
    "mollifier_build",
    "mollifier_family",
    "mollifier_mass",
    "parse_config",
    "phi_site",
    "psi",
    "rate_matrix",
    "reaction_term",
    "run_ensemble",
    "simulate",
    "simulate_toy",
    "solve_averaged",
    "solve_limit",
    "solve_poisson_site",
    "stationary_measure",
    "sup_diff",
    "theoretical_tail_bound",
]
