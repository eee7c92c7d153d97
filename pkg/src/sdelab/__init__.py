"""Monte Carlo and quadrature laboratory for singular SDE counterexamples."""

from .core import SamplePath, SeedSpec, TimeGrid, brownian_path, derive_stream
from .models import (
    ModelSpec,
    build_model,
    coupled_em_solver,
    full_reference_solver,
    penalized_spec,
    reference_solutions,
    shifted_solve,
    simulate,
    simulate_batch,
    stopped_reference_solver,
)
from .scale_oracle import (
    BumpSpec,
    ExitQuery,
    bm_occupation_oracle,
    canonical_bump,
    exit_prob_oracle,
    limit_c,
    log_weight,
)
from .solvers import (
    CoefficientField,
    HitResult,
    StopRule,
    euler_maruyama,
    first_hit,
    fold_reflect,
    passthrough_circle,
    solve_stopped,
)
from .stats import (
    EstimateCI,
    KSResult,
    coupled_sup_distance,
    ks_two_sample,
    mc_exit_prob,
    modulus_of_continuity,
    occupation_fraction,
    strong_markov_probe,
)

__version__ = "0.1.0"

__all__ = [
    "BumpSpec",
    "CoefficientField",
    "EstimateCI",
    "ExitQuery",
    "HitResult",
    "KSResult",
    "ModelSpec",
    "SamplePath",
    "SeedSpec",
    "StopRule",
    "TimeGrid",
    "bm_occupation_oracle",
    "brownian_path",
    "build_model",
    "canonical_bump",
    "coupled_em_solver",
    "coupled_sup_distance",
    "derive_stream",
    "euler_maruyama",
    "exit_prob_oracle",
    "first_hit",
    "fold_reflect",
    "full_reference_solver",
    "ks_two_sample",
    "limit_c",
    "log_weight",
    "mc_exit_prob",
    "modulus_of_continuity",
    "occupation_fraction",
    "passthrough_circle",
    "penalized_spec",
    "reference_solutions",
    "shifted_solve",
    "simulate",
    "simulate_batch",
    "solve_stopped",
    "stopped_reference_solver",
    "strong_markov_probe",
]
