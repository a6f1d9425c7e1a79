"""Simulation and deterministic numerics for critical branching Lévy processes with stable offspring tails."""

__version__ = "0.1.0"

from .engine import Outcomes, SimConfig, TreeOutcome, run_ensemble, simulate_tree
from .estimator import TailEstimate, compare_constant, estimate_tail, fit_exponent, wilson_interval
from .motion import (
    MotionModel,
    brownian,
    compound_poisson_diffusion,
    lattice_walk,
    sample_segment,
    validate_moments,
)
from .offspring import OffspringLaw, f_of_v, lemma2_constant, make_explicit, make_stable_tail, sample_offspring
from .rng import Stream
from .theory import (
    TheoryParams,
    discrete_fixed_point,
    finite_variance_constant,
    limit_constant,
    ode_residual,
    phi_closed_form,
    solve_bvp_shooting,
    theta,
)
