"""Pieces shared by the data-driven and model-based controllers."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .config import L1InputCost, QuadraticCost


class ExcitationError(ValueError):
    """The dataset does not excite the behaviour the controller relies on."""


@dataclass
class Plan:
    """Outcome of one receding-horizon solve.

    ``u_pred``/``y_pred`` are the nominal (zero future disturbance) predictions,
    shape ``(n_h, n_u)`` and ``(n_h, n_y)``. ``input_feedback`` maps the stacked
    future disturbances to input corrections when the controller is robust.
    """

    status: str
    u_pred: np.ndarray = None
    y_pred: np.ndarray = None
    objective: float = float("nan")
    input_feedback: np.ndarray = None
    output_feedback: np.ndarray = None
    feedback: object = None
    stats: dict = field(default_factory=dict)
    program: object = None

    @property
    def ok(self):
        return self.status == "optimal"

    @property
    def first_input(self):
        return self.u_pred[0].copy()

    def inputs_under(self, w_future):
        """Inputs the plan applies when the future disturbances are ``w_future``."""
        u = self.u_pred.ravel().copy()
        if self.input_feedback is not None:
            u = u + self.input_feedback @ np.ravel(w_future)
        return u.reshape(self.u_pred.shape)


def box_rows(schedule, t0, n):
    """``(F, f)`` of the finite bounds over ``n`` steps from absolute time ``t0``."""
    return schedule.stacked_constraints(t0, n)


def add_stage_cost(builder, cost, var, u_map, y_map, y_offset, t0, n_h, n_u, n_y,
                   regularization=0.0):
    """Add the nominal stage cost with ``u = u_map v`` and ``y = y_map v + y_offset``.

    Quadratic cost: outputs ``y_1 .. y_{n_h-1}`` track the reference and all
    ``n_h`` inputs are penalised. One-norm cost: ``weight * |u|_1`` over all
    inputs. ``regularization * |v|^2`` is added in both cases.

    The nominal trajectory gets its own variables ``u_nominal``/``y_nominal``
    tied to ``v`` by equalities, which keeps the Hessian diagonal; condensing
    ``y_map' Q y_map`` onto ``v`` is badly conditioned when ``v`` is a Hankel
    combination with a vanishing regulariser.
    """
    if isinstance(cost, QuadraticCost):
        Q, R = cost.matrices(n_u, n_y)
    elif not isinstance(cost, L1InputCost):
        raise TypeError(f"unsupported cost {type(cost).__name__}")
    size = builder.var(var).size
    n_ut, n_yt = n_h * n_u, n_h * n_y
    builder.variable("u_nominal", n_ut)
    builder.variable("y_nominal", n_yt)
    builder.eq({"u_nominal": sp.eye(n_ut), var: -dense_block(u_map)}, np.zeros(n_ut),
               "nominal:u")
    builder.eq({"y_nominal": sp.eye(n_yt), var: -dense_block(y_map)}, y_offset, "nominal:y")
    if regularization:
        builder.quadratic(var, 2.0 * regularization * sp.eye(size))
    if isinstance(cost, QuadraticCost):
        Qbar = np.kron(np.diag(np.r_[0.0, np.ones(n_h - 1)]), Q)
        Rbar = np.kron(np.eye(n_h), R)
        ref = cost.reference_horizon(t0, n_h, n_y).ravel()
        builder.quadratic("y_nominal", 2.0 * Qbar, -2.0 * Qbar @ ref)
        builder.quadratic("u_nominal", 2.0 * Rbar)
        builder.constant(ref @ Qbar @ ref)
    else:
        builder.l1({"u_nominal": sp.eye(n_ut)}, np.zeros(n_ut), cost.weight)


def dense_block(M):
    return sp.csr_matrix(np.asarray(M, dtype=float))
