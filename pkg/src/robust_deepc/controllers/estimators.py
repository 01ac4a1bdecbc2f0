"""scikit-learn style wrappers: ``fit`` on recorded data, then ``plan``/``act``/``predict``.

All controllers expose the same call, ``plan(u_init, w_init, y_init, x=None, t=0)``:
data-driven controllers read the past windows, the model-based one reads
the state ``x``.
"""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_signal
from ..lti import LtiSystem, Trajectory
from .config import ControllerConfig
from .data_driven import (check_excitation, data_stack, solve_causal_robust_deepc, solve_deepc,
                          solve_robust_deepc, stack_causal_basis, stack_dims)
from .model_based import solve_robust_mpc


class InfeasibleError(RuntimeError):
    def __init__(self, plan, t):
        super().__init__(f"controller returned {plan.status!r} at t={t}")
        self.plan = plan
        self.t = t


def _unpack_data(X, y, w):
    if isinstance(X, Trajectory):
        return X.u, X.y, X.w
    return X, y, w


class _Controller(BaseEstimator):
    needs_state = False
    name = "controller"

    def _require_config(self):
        if not isinstance(self.config, ControllerConfig):
            raise TypeError("config must be a ControllerConfig")
        return self.config

    def act(self, u_init=None, w_init=None, y_init=None, x=None, t=0):
        """First input of the plan; raises :class:`InfeasibleError` if there is none."""
        plan = self.plan(u_init, w_init, y_init, x, t)
        if not plan.ok:
            raise InfeasibleError(plan, t)
        return plan.first_input

    def predict(self, u_init=None, w_init=None, y_init=None, x=None, t=0):
        """Nominal output prediction over the horizon, shape ``(n_h, n_y)``."""
        plan = self.plan(u_init, w_init, y_init, x, t)
        if not plan.ok:
            raise InfeasibleError(plan, t)
        return plan.y_pred


class DeePC(_Controller):
    """Deterministic data-driven predictive control.

    When fitted with disturbance data the measured past disturbances enter
    the past window and the future ones are set to zero.
    """

    name = "deepc"

    def __init__(self, config=None, backend="clarabel"):
        self.config = config
        self.backend = backend

    def fit(self, X, y=None, w=None):
        cfg = self._require_config()
        u, y_, w = _unpack_data(X, y, w)
        u = check_signal(u, "u")
        y_ = check_signal(y_, "y", length=u.shape[0])
        if w is not None:
            w = check_signal(w, "w", length=u.shape[0])
        self.stack_ = data_stack(u, y_, cfg.t_init, cfg.n_h, w)
        check_excitation(self.stack_)
        d = stack_dims(self.stack_)
        self.n_u_, self.n_w_, self.n_y_ = d.n_u, d.n_w, d.n_y
        self.n_columns_ = d.n_c
        return self

    def plan(self, u_init=None, w_init=None, y_init=None, x=None, t=0):
        check_is_fitted(self, "stack_")
        return solve_deepc(self.config, self.stack_, u_init, y_init, w_init, t, self.backend)


class RobustDeePC(DeePC):
    """Robust DeePC with disturbance feedback; ``causal=True`` restricts it to causal laws."""

    name = "robust-deepc"

    def __init__(self, config=None, causal=True, backend="clarabel"):
        self.config = config
        self.causal = causal
        self.backend = backend

    def fit(self, X, y=None, w=None):
        u, y_, w = _unpack_data(X, y, w)
        if w is None:
            raise ValueError("robust DeePC needs the recorded disturbances w")
        super().fit(u, y_, w)
        self.basis_ = stack_causal_basis(self.stack_) if self.causal else None
        return self

    def plan(self, u_init=None, w_init=None, y_init=None, x=None, t=0):
        check_is_fitted(self, "stack_")
        if self.causal:
            return solve_causal_robust_deepc(self.config, self.stack_, u_init, w_init, y_init, t,
                                             self.basis_, self.backend)
        return solve_robust_deepc(self.config, self.stack_, u_init, w_init, y_init, t,
                                  self.backend)


class RobustMPC(_Controller):
    """Model-based robust MPC baseline with causal affine disturbance feedback."""

    needs_state = True
    name = "robust-mpc"

    def __init__(self, system=None, config=None, robust=True, backend="clarabel"):
        self.system = system
        self.config = config
        self.robust = robust
        self.backend = backend

    def fit(self, X=None, y=None, w=None):
        self._require_config()
        if not isinstance(self.system, LtiSystem):
            raise TypeError("system must be an LtiSystem")
        s = self.system
        self.n_u_, self.n_w_, self.n_y_, self.n_x_ = s.n_u, s.n_w, s.n_y, s.n_x
        return self

    def plan(self, u_init=None, w_init=None, y_init=None, x=None, t=0):
        check_is_fitted(self, "n_x_")
        if x is None:
            raise ValueError("robust MPC needs the current state x")
        return solve_robust_mpc(self.system, self.config, x, t, self.robust, self.backend)
