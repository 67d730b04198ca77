"""Pre- and post-processing debiasers with partial strength."""
from .eod import EodSolution, eod_objective, fit_eod_policy, post_flip_rates, solve_eod_lp
from .nlinprog import (FairnessTerm, PerformanceTerm, PfopObjective, SolverConfig, SolverResult,
                       fairness_loss, fit_nlinprog_policy, pfop_ideal, policy_objective,
                       project_simplex, projected_descent, solve_nlinprog)
from .policy import IDENTITY, CalibrationJoint, FlipPolicy, apply_policy, induced_cells, induced_fact, interpolate
from .reweigh import ReweighPlan, UnsupportedSchemeError, check_strength, reweigh, reweigh_exactness_check
