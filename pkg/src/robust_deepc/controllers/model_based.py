"""Robust MPC with causal affine disturbance feedback, using the known model.

Over ``n_h`` steps from the current state ``x``::

    y = O x + G_u u + G_w w,      u = u_bar + K_w w

with ``K_w`` strictly block-lower-triangular, so input ``i`` reacts only to
disturbances ``0 .. i-1``. The cost is evaluated on the nominal ``w = 0``
prediction and the input and output bounds are enforced for every ``w`` in
the disturbance polytope.
"""

import numpy as np

from .._validation import check_vector
from ..convex import ProgramBuilder, dualize, left_matmul_map, solve
from ..sls import _block_lower_mask
from .common import Plan, add_stage_cost, box_rows


def prediction_matrices(sys, n_h):
    """``(O, G_u, G_w)`` mapping ``(x_0, u, w)`` to ``y_0 .. y_{n_h-1}``."""
    n_y, n_u, n_w = sys.n_y, sys.n_u, sys.n_w
    A_pows = [np.eye(sys.n_x)]
    for _ in range(n_h):
        A_pows.append(A_pows[-1] @ sys.A)
    O = np.vstack([sys.C @ A_pows[i] for i in range(n_h)])
    G_u = np.zeros((n_h * n_y, n_h * n_u))
    G_w = np.zeros((n_h * n_y, n_h * n_w))
    for i in range(n_h):
        ri = slice(i * n_y, (i + 1) * n_y)
        G_u[ri, i * n_u:(i + 1) * n_u] = sys.D
        G_w[ri, i * n_w:(i + 1) * n_w] = sys.F
        for j in range(i):
            M = sys.C @ A_pows[i - 1 - j]
            G_u[ri, j * n_u:(j + 1) * n_u] = M @ sys.B
            G_w[ri, j * n_w:(j + 1) * n_w] = M @ sys.E
    return O, G_u, G_w


def feedback_mask(n_h, n_u, n_w):
    """Strictly block-lower-triangular pattern of ``K_w``."""
    return _block_lower_mask(n_h, n_h, n_u, n_w, strict=True)


def build_robust_mpc(sys, cfg, x, t=0, robust=True):
    n_h = cfg.n_h
    x = check_vector(x, "x", sys.n_x)
    O, G_u, G_w = prediction_matrices(sys, n_h)
    y0 = O @ x
    b = ProgramBuilder()
    b.variable("u", n_h * sys.n_u)
    add_stage_cost(b, cfg.cost, "u", np.eye(n_h * sys.n_u), G_u, y0, t, n_h, sys.n_u, sys.n_y,
                   cfg.regularization)
    u_s, y_s, w_s = cfg.schedules(sys.n_u, sys.n_y, sys.n_w)
    Fu, fu = box_rows(u_s, t, n_h)
    Fy, fy = box_rows(y_s, t, n_h)
    if not robust:
        if Fu.shape[0]:
            b.ineq({"u": Fu}, fu, "input-bounds")
        if Fy.shape[0]:
            b.ineq({"u": Fy @ G_u}, fy - Fy @ y0, "output-bounds")
        return b.build()
    Kw = b.variable("K_w", (n_h * sys.n_u, n_h * sys.n_w),
                    mask=feedback_mask(n_h, sys.n_u, sys.n_w))
    W = w_s.polytope(t, n_h)
    if Fu.shape[0]:
        b.robust({"u": Fu}, fu, {"K_w": left_matmul_map(Fu, Kw)}, None, W, "input-bounds")
    if Fy.shape[0]:
        b.robust({"u": Fy @ G_u}, fy - Fy @ y0, {"K_w": left_matmul_map(Fy @ G_u, Kw)},
                 Fy @ G_w, W, "output-bounds")
    b.metadata.update(controller="robust-mpc", t=int(t))
    return b.build()


def solve_robust_mpc(sys, cfg, x, t=0, robust=True, backend="clarabel"):
    """Robust MPC from state ``x`` at absolute time ``t`` (nominal MPC if ``robust=False``)."""
    prog = build_robust_mpc(sys, cfg, x, t, robust)
    sol = solve(dualize(prog) if robust else prog, backend=backend)
    if not sol.ok:
        return Plan(sol.status, stats=dict(sol.stats), program=prog)
    n_h = cfg.n_h
    O, G_u, G_w = prediction_matrices(sys, n_h)
    u = sol["u"]
    y = O @ np.asarray(x, dtype=float) + G_u @ u
    plan = Plan("optimal", u.reshape(n_h, sys.n_u), y.reshape(n_h, sys.n_y), sol.objective,
                stats=dict(sol.stats), program=prog)
    if robust:
        K_w = sol["K_w"]
        plan.feedback = K_w
        plan.input_feedback = K_w
        plan.output_feedback = G_w + G_u @ K_w
    return plan
