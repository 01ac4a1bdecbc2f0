from .closed_loop import ClosedLoopLog, StepRecord, run_closed_loop
from .common import ExcitationError, Plan
from .config import ControllerConfig, L1InputCost, QuadraticCost
from .data_driven import (AffineFeedback, CausalBasis, CausalFeedback, build_robust_deepc,
                          causal_basis, causal_data_matrix, check_excitation, data_stack,
                          solve_causal_robust_deepc, solve_deepc, solve_robust_deepc,
                          stack_causal_basis, stack_dims)
from .estimators import DeePC, InfeasibleError, RobustDeePC, RobustMPC
from .model_based import build_robust_mpc, feedback_mask, prediction_matrices, solve_robust_mpc

__all__ = [
    "AffineFeedback", "CausalBasis", "CausalFeedback", "ClosedLoopLog", "ControllerConfig",
    "DeePC", "ExcitationError", "InfeasibleError", "L1InputCost", "Plan", "QuadraticCost",
    "RobustDeePC", "RobustMPC", "StepRecord", "build_robust_deepc", "build_robust_mpc",
    "causal_basis", "causal_data_matrix", "check_excitation", "data_stack", "feedback_mask",
    "prediction_matrices", "run_closed_loop", "solve_causal_robust_deepc", "solve_deepc",
    "solve_robust_deepc", "solve_robust_mpc", "stack_causal_basis", "stack_dims",
]
