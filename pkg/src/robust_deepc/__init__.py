"""Robust data-enabled predictive control for uncertain LTI systems."""

from .hankel import (HankelMatrix, StackedHankel, SubspaceReport, build_hankel,
                     hankel_column_update, is_persistently_exciting, verify_fundamental_lemma)
from .lti import (BoxSchedule, DisturbancePolytope, LtiSystem, Trajectory, generate_excitation,
                  simulate)
from .sls import (StateFeedbackLaw, controller_to_response, response_to_controller,
                  sls_hankel_equivalence)
from .controllers import (ControllerConfig, DeePC, L1InputCost, QuadraticCost, RobustDeePC,
                          RobustMPC, run_closed_loop)

__version__ = "0.1.0"

__all__ = [
    "BoxSchedule", "ControllerConfig", "DeePC", "DisturbancePolytope", "HankelMatrix",
    "L1InputCost", "LtiSystem", "QuadraticCost", "RobustDeePC", "RobustMPC", "StackedHankel",
    "StateFeedbackLaw", "SubspaceReport", "Trajectory", "build_hankel", "controller_to_response",
    "generate_excitation", "hankel_column_update", "is_persistently_exciting",
    "response_to_controller", "run_closed_loop", "simulate", "sls_hankel_equivalence",
    "verify_fundamental_lemma",
]
