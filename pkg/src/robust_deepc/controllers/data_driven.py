"""Data-driven predictive controllers over block-Hankel data.

Three programs share one data stack ``[U_p; W_p; Y_p; U_f; W_f; Y_f]``:

* deterministic DeePC: one trajectory ``g`` matching the past window;
* robust DeePC: ``g = g_bar + K_d w_f`` with ``g_bar`` the nominal trajectory
  and ``K_d`` a disturbance feedback, constraints enforced for every
  ``w_f`` in the disturbance polytope;
* causal robust DeePC: as above with ``K_d`` restricted to a basis in which
  no future disturbance can affect an earlier input or output.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .._validation import RANK_RTOL, DimensionError, check_signal, independent_rows, numerical_rank
from ..convex import ProgramBuilder, dualize, left_matmul_map, solve
from ..hankel import StackedHankel
from ..sls import block_upper_violation
from .common import ExcitationError, Plan, add_stage_cost, box_rows

EQ_TOL = 1e-8
CAUSAL_TOL = 1e-9


@dataclass(frozen=True)
class StackDims:
    t_init: int
    n_h: int
    n_u: int
    n_w: int
    n_y: int
    n_c: int


def stack_dims(stack):
    t, n = stack.t_init, stack.n_h
    if t is None or n is None:
        raise ValueError("stack must come from StackedHankel.init_pred")
    n_w = stack.rows("w_init") // t if "w_init" in stack else 0
    return StackDims(t, n, stack.rows("u_init") // t, n_w, stack.rows("y_init") // t,
                     stack.n_columns)


def data_stack(u, y, t_init, n_h, w=None):
    """Init/prediction stack of a recorded dataset."""
    return StackedHankel.init_pred(u, y, t_init, n_h, w=w)


def check_excitation(stack, rtol=RANK_RTOL):
    """Raise :class:`ExcitationError` naming the block whose Hankel rows are dependent.

    The input and disturbance Hankel rows must be jointly independent, which
    is necessary for the data to span every trajectory of the horizon.
    """
    d = stack_dims(stack)
    names = ["u_init", "u_pred"] + (["w_init", "w_pred"] if d.n_w else [])
    for label in ("u", "w"):
        if label == "w" and not d.n_w:
            continue
        M = stack.matrix([f"{label}_init", f"{label}_pred"])
        if numerical_rank(M, rtol) < M.shape[0]:
            raise ExcitationError(f"block {label}: Hankel rows of {label} are linearly dependent "
                                  f"(rank {numerical_rank(M, rtol)} < {M.shape[0]})")
    M = stack.matrix(names)
    r = numerical_rank(M, rtol)
    if r < M.shape[0]:
        raise ExcitationError(f"blocks u and w: joint Hankel rank {r} < {M.shape[0]}")


def _window(value, n, t_init, name):
    return check_signal(value, name, n, t_init).ravel() if n else np.zeros(0)


def _init_vector(stack, d, u_init, w_init, y_init):
    parts = [_window(u_init, d.n_u, d.t_init, "u_init")]
    if d.n_w:
        parts.append(_window(w_init, d.n_w, d.t_init, "w_init"))
    parts.append(_window(y_init, d.n_y, d.t_init, "y_init"))
    return np.concatenate(parts)


def _init_labels(d):
    return ["u_init"] + (["w_init"] if d.n_w else []) + ["y_init"]


def _nominal_equalities(stack, d, h_init):
    """Independent rows of ``[H_init; W_f] g = [h_init; 0]`` (dependent rows dropped)."""
    H_init = stack.matrix(_init_labels(d))
    Wf = stack["w_pred"] if d.n_w else np.zeros((0, d.n_c))
    M = np.vstack([H_init, Wf])
    keep = independent_rows(M)
    rhs = np.concatenate([h_init, np.zeros(Wf.shape[0])])
    n_init_rows = H_init.shape[0]
    dropped_w = [k - n_init_rows for k in range(n_init_rows, M.shape[0]) if k not in set(keep)]
    if dropped_w:
        raise ExcitationError(f"block w_pred: rows {dropped_w} depend on earlier rows")
    return M[keep], rhs[keep], keep, n_init_rows


def _nominal(builder, cfg, stack, d, t0):
    """Nominal-trajectory decision ``g_bar``, its cost and the schedule data."""
    Uf, Yf = stack["u_pred"], stack["y_pred"]
    add_stage_cost(builder, cfg.cost, "g", Uf, Yf, np.zeros(Yf.shape[0]), t0, d.n_h, d.n_u,
                   d.n_y, cfg.regularization)
    u_s, y_s, w_s = cfg.schedules(d.n_u, d.n_y, max(d.n_w, 1))
    Fu, fu = box_rows(u_s, t0, d.n_h)
    Fy, fy = box_rows(y_s, t0, d.n_h)
    return Uf, Yf, (Fu, fu), (Fy, fy), w_s


def _plan_from(stack, d, sol, program=None):
    if not sol.ok:
        return Plan(sol.status, stats=dict(sol.stats), program=program)
    g = sol["g"]
    u = (stack["u_pred"] @ g).reshape(d.n_h, d.n_u)
    y = (stack["y_pred"] @ g).reshape(d.n_h, d.n_y)
    return Plan("optimal", u, y, sol.objective, stats=dict(sol.stats), program=program,
                feedback=g)


def solve_deepc(cfg, stack, u_init, y_init, w_init=None, t=0, backend="clarabel"):
    """Deterministic DeePC; disturbance channels, if present, are pinned to zero ahead."""
    d = stack_dims(stack)
    h_init = _init_vector(stack, d, u_init, w_init, y_init)
    b = ProgramBuilder()
    b.variable("g", d.n_c)
    Uf, Yf, (Fu, fu), (Fy, fy), _ = _nominal(b, cfg, stack, d, t)
    A_eq, b_eq, _, _ = _nominal_equalities(stack, d, h_init)
    b.eq({"g": A_eq}, b_eq, "nominal")
    if Fu.shape[0]:
        b.ineq({"g": Fu @ Uf}, fu, "input-bounds")
    if Fy.shape[0]:
        b.ineq({"g": Fy @ Yf}, fy, "output-bounds")
    prog = b.build()
    sol = solve(prog, backend=backend)
    plan = _plan_from(stack, d, sol, program=prog)
    if plan.ok:
        plan.feedback = sol["g"]
    return plan


@dataclass(frozen=True)
class CausalBasis:
    """Orthonormal basis of the causal data matrix ``H`` and the causal ``K_p`` pattern.

    ``H`` stacks the past window followed by the interleaved prediction rows
    ``u_0, y_0, u_1, y_1, ..``. Rows that depend on earlier rows are dropped
    before the factorisation ``H_kept' = [Q_a, Q_b] [R; 0]``, so every prefix
    of kept rows spans exactly the rows of the same prefix of ``H``.
    """

    H: np.ndarray
    kept: np.ndarray
    Q_a: np.ndarray
    Q_b: np.ndarray
    R: np.ndarray
    n_init: int
    n_init_kept: int
    column_starts: tuple
    block_width: int
    row_blocks: tuple

    @property
    def n_r(self):
        return self.Q_a.shape[1]

    @property
    def n_c(self):
        return self.H.shape[1]

    @property
    def dependent_rows(self):
        return np.setdiff1d(np.arange(self.H.shape[0]), self.kept)

    @property
    def Q(self):
        return np.hstack([self.Q_a, self.Q_b])

    @property
    def feedback_basis(self):
        """``[Q_a[:, n_init:], Q_b]``, the columns orthogonal to the past window and ``u_0``."""
        return self.Q[:, self.n_init_kept:]

    def kept_before(self, n):
        """Number of kept rows among the first ``n`` rows of ``H``."""
        return int(np.searchsorted(self.kept, n))

    def prefix_basis(self, n):
        """Orthonormal basis of the row space of ``H[:n]``."""
        return self.Q_a[:, :self.kept_before(n)]

    def r_diagonal_min(self):
        return float(np.min(np.abs(np.diag(self.R))[:self.n_r]), initial=np.inf)

    def parameter_mask(self):
        """Sparsity of ``K_p``: column block ``j`` may only use rows ``column_starts[j]:``."""
        n_rows = self.n_c - self.n_init_kept
        mask = np.zeros((n_rows, len(self.column_starts) * self.block_width), dtype=bool)
        for j, s in enumerate(self.column_starts):
            mask[s:, j * self.block_width:(j + 1) * self.block_width] = True
        return mask


def causal_data_matrix(stack):
    """``[U_p; W_p; Y_p; u_0; y_0; ..; u_{n_h-1}; y_{n_h-1}]`` and its ``n_init``."""
    d = stack_dims(stack)
    rows = [stack[label] for label in _init_labels(d)]
    Uf, Yf = stack["u_pred"], stack["y_pred"]
    for i in range(d.n_h):
        rows.append(Uf[i * d.n_u:(i + 1) * d.n_u])
        rows.append(Yf[i * d.n_y:(i + 1) * d.n_y])
    n_init = d.t_init * (d.n_u + d.n_w + d.n_y) + d.n_u
    return np.vstack(rows), n_init


def causal_basis(H, n_init=0, step_rows=None, n_blocks=0, block_width=1, rtol=RANK_RTOL):
    """QR factorisation of ``H'`` after dropping dependent rows.

    ``n_init`` counts the rows whose span every feedback column must avoid;
    feedback column block ``j`` (of ``block_width`` columns, ``j < n_blocks``)
    must additionally avoid the next ``j * step_rows`` rows.
    """
    H = np.asarray(H, dtype=float)
    kept = independent_rows(H, rtol)
    Q, R = scipy.linalg.qr(H[kept].T, mode="full")
    n_r = kept.size
    n_init_kept = int(np.searchsorted(kept, n_init))
    step_rows = step_rows or 0
    starts = tuple(int(np.searchsorted(kept, n_init + j * step_rows)) - n_init_kept
                   for j in range(n_blocks))
    bounds = [int(np.searchsorted(kept, n_init + j * step_rows)) for j in range(n_blocks)]
    heights = [bounds[j + 1] - bounds[j] for j in range(n_blocks - 1)]
    if n_blocks:
        heights.append(H.shape[1] - bounds[-1])
    if sum(heights) != (H.shape[1] - n_init_kept if n_blocks else 0):
        raise AssertionError("K_p row blocks do not cover the feedback basis")
    return CausalBasis(H, kept, Q[:, :n_r], Q[:, n_r:], R, n_init, n_init_kept, starts,
                       block_width, tuple(heights))


def stack_causal_basis(stack):
    d = stack_dims(stack)
    H, n_init = causal_data_matrix(stack)
    return causal_basis(H, n_init, d.n_u + d.n_y, d.n_h, d.n_w)


@dataclass(frozen=True)
class AffineFeedback:
    """``g = g_bar + K_d w_f``: nominal trajectory plus disturbance feedback."""

    g_bar: np.ndarray
    K_d: np.ndarray

    def induced(self, stack):
        """``(U_f K_d, Y_f K_d)``: input and output responses to future disturbances."""
        return stack["u_pred"] @ self.K_d, stack["y_pred"] @ self.K_d

    def check(self, stack):
        d = stack_dims(stack)
        H_init = stack.matrix(_init_labels(d))
        Wf = stack["w_pred"]
        Kw, Ky = self.induced(stack)
        return {
            "init_residual": float(np.max(np.abs(H_init @ self.K_d), initial=0.0)),
            "identity_residual": float(np.max(np.abs(Wf @ self.K_d - np.eye(Wf.shape[0])),
                                              initial=0.0)),
            "input_causality": block_upper_violation(Kw, d.n_u, d.n_w, strict=True),
            "output_causality": block_upper_violation(Ky, d.n_y, d.n_w, strict=False),
        }


@dataclass(frozen=True)
class CausalFeedback(AffineFeedback):
    """Causal disturbance feedback ``K_d = [Q_a[:, n_init:], Q_b] K_p``."""

    K_p: np.ndarray = None
    basis: CausalBasis = None

    def basis_residual(self):
        return float(np.max(np.abs(self.K_d - self.basis.feedback_basis @ self.K_p)))

    def parameter_violation(self):
        return float(np.max(np.abs(self.K_p[~self.basis.parameter_mask()]), initial=0.0))

    def satisfied(self, stack, eq_tol=EQ_TOL, causal_tol=CAUSAL_TOL):
        r = self.check(stack)
        return (r["init_residual"] <= eq_tol and r["identity_residual"] <= eq_tol
                and r["input_causality"] <= causal_tol and r["output_causality"] <= causal_tol)


def _prune(M, rtol=1e-12):
    """Zero out roundoff-sized entries; they upset the solver's equilibration."""
    M = np.array(M, dtype=float)
    M[np.abs(M) <= rtol * np.abs(M).max(initial=0.0)] = 0.0
    return M


def _identity_rows(M, n_wt, rtol=RANK_RTOL, tol=EQ_TOL):
    """Independent rows of ``W_f K_d = I``.

    Column ``j`` of ``K_d`` only meets rows ``(i, j)``, so each column's
    system is reduced on its own. Under the causal pattern some rows (or
    combinations of rows) vanish: a combination of ``w_0 .. w_{j-1}`` that the
    outputs already reveal cannot be moved by column ``j``. Dropped rows must
    have a right-hand side implied by the kept ones; otherwise the requested
    disturbance cannot be reached and the data is insufficient.
    """
    M = sp.csr_matrix(M)
    rhs = np.eye(n_wt).ravel()
    keep_rows = []
    for j in range(n_wt):
        rows = np.arange(j, n_wt * n_wt, n_wt)
        sub = M[rows].toarray()
        cols = np.flatnonzero(np.abs(sub).sum(axis=0))
        sub = sub[:, cols]
        kept = independent_rows(sub, rtol) if cols.size else np.zeros(0, dtype=int)
        dropped = np.setdiff1d(np.arange(n_wt), kept)
        if dropped.size:
            if kept.size:
                coef, *_ = np.linalg.lstsq(sub[kept].T, sub[dropped].T, rcond=None)
                implied = coef.T @ rhs[rows[kept]]
            else:
                implied = np.zeros(dropped.size)
            bad = np.abs(implied - rhs[rows[dropped]]) > tol
            if np.any(bad):
                raise ExcitationError(f"block w_pred: future disturbance {j} cannot be "
                                      "reached by the causal feedback")
        keep_rows.extend(rows[kept])
    keep_rows = np.sort(np.asarray(keep_rows, dtype=int))
    return M[keep_rows], rhs[keep_rows]


def build_robust_deepc(cfg, stack, u_init, w_init, y_init, t=0, basis=None):
    """Robust DeePC program with the universally quantified rows still attached.

    Without ``basis`` the feedback ``K_d`` is a dense decision with
    ``H_init K_d = 0`` and ``W_f K_d = I``. With a :class:`CausalBasis`, ``K_d``
    is parametrised as ``feedback_basis @ K_p`` with the causal pattern on
    ``K_p``; ``H_init K_d = 0`` then holds by construction.
    """
    d = stack_dims(stack)
    if not d.n_w:
        raise DimensionError("robust DeePC needs disturbance channels in the data stack")
    h_init = _init_vector(stack, d, u_init, w_init, y_init)
    b = ProgramBuilder()
    b.variable("g", d.n_c)
    Uf, Yf, (Fu, fu), (Fy, fy), w_s = _nominal(b, cfg, stack, d, t)
    A_eq, b_eq, keep, n_init_rows = _nominal_equalities(stack, d, h_init)
    b.eq({"g": A_eq}, b_eq, "nominal")

    Wf = stack["w_pred"]
    n_wt = d.n_h * d.n_w
    if basis is None:
        Kd = b.variable("K_d", (d.n_c, n_wt))
        name, right = "K_d", np.eye(d.n_c)
        H_init = stack.matrix(_init_labels(d))
        init_keep = keep[keep < n_init_rows]
        b.eq({name: left_matmul_map(H_init[init_keep], Kd)},
             np.zeros(init_keep.size * n_wt), "feedback:init")
    else:
        right = basis.feedback_basis
        Kd = b.variable("K_p", (right.shape[1], n_wt), mask=basis.parameter_mask())
        name = "K_p"
    ident_map, ident_rhs = _identity_rows(left_matmul_map(_prune(Wf @ right), Kd), n_wt)
    b.eq({name: ident_map}, ident_rhs, "feedback:identity")

    W = w_s.polytope(t, d.n_h)
    if Fu.shape[0]:
        b.robust({"g": Fu @ Uf}, fu, {name: left_matmul_map(_prune(Fu @ Uf @ right), Kd)}, None, W,
                 "input-bounds")
    if Fy.shape[0]:
        b.robust({"g": Fy @ Yf}, fy, {name: left_matmul_map(_prune(Fy @ Yf @ right), Kd)}, None, W,
                 "output-bounds")
    b.metadata.update(controller="robust-deepc", causal=basis is not None, t=int(t))
    return b.build()


def _solve_robust(cfg, stack, u_init, w_init, y_init, t, basis, backend):
    d = stack_dims(stack)
    prog = build_robust_deepc(cfg, stack, u_init, w_init, y_init, t, basis)
    sol = solve(dualize(prog), backend=backend)
    plan = _plan_from(stack, d, sol, program=prog)
    if not plan.ok:
        return plan
    if basis is None:
        fb = AffineFeedback(sol["g"], sol["K_d"])
    else:
        K_p = sol["K_p"]
        fb = CausalFeedback(sol["g"], basis.feedback_basis @ K_p, K_p, basis)
    plan.feedback = fb
    plan.input_feedback, plan.output_feedback = fb.induced(stack)
    plan.stats["feedback_check"] = fb.check(stack)
    return plan


def solve_robust_deepc(cfg, stack, u_init, w_init, y_init, t=0, backend="clarabel"):
    """General robust DeePC with a dense disturbance feedback."""
    return _solve_robust(cfg, stack, u_init, w_init, y_init, t, None, backend)


def solve_causal_robust_deepc(cfg, stack, u_init, w_init, y_init, t=0, basis=None,
                              backend="clarabel"):
    """Causal robust DeePC; pass a precomputed ``basis`` to reuse it across steps."""
    basis = stack_causal_basis(stack) if basis is None else basis
    return _solve_robust(cfg, stack, u_init, w_init, y_init, t, basis, backend)
