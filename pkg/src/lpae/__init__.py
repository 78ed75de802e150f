"""Autoencoders whose latent code is trained to solve a linear program.

The latent vector is read as an LP decision; the training loss adds a
squared-hinge constraint penalty and a linear objective reward to the usual
reconstruction error.
"""
__version__ = "0.1.0"

from .errors import ContractError, DivergenceError, DomainError, SolverError
from .lp import (LinearProgram, LpSolution, Status, check_kkt, enumerate_vertices,
                 is_feasible, phi, project_onto_polytope, solve_simplex, violation,
                 violation_grad)
from .net import AdamState, Mlp, adam_step, backward, forward, xavier_init
from .hybrid import (AnnealSchedule, HybridLossConfig, LossBreakdown, gap_bound,
                     hybrid_grad, hybrid_loss, lambda_at)
from .datagen import (Dataset, HospitalScenario, corrupt_noise, generate_dataset,
                      mask_features, sample_scenario, scenario_to_features,
                      scenario_to_lp)
from .trainer import (Metrics, TrainConfig, baseline_ae_project, baseline_lp, evaluate,
                      run_experiment, train)
