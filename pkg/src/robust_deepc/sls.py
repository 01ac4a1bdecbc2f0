"""Finite-horizon system level synthesis and its link to the data Hankel matrices.

Over a horizon of ``L`` steps the stacked states ``x = (x_0, .., x_L)`` obey

    x = Z A_blk x + Z B_blk u + Efor (x_0, w_0, .., w_{L-1})

with ``A_blk = blkdiag(A, .., A, 0)`` (``L`` copies of ``A``), ``B_blk``
likewise, ``Z`` the block down-shift and ``Efor`` the forcing map that places
``x_0`` in block 0 and ``E w_i`` in block ``i + 1``. For ``E = I`` the forcing
map is the identity and the affine response constraint reads
``[I - Z A_blk, -Z B_blk] [Phi_x; Phi_u] = I``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import DimensionError, check_matrix, check_positive_int, numerical_rank
from .hankel import (MEMBERSHIP_TOL, SubspaceReport, _excitation_causes, build_hankel)

CAUSAL_TOL = 1e-12


def _block_lower_mask(n_blocks_r, n_blocks_c, rows, cols, strict=False):
    """Boolean mask of the block-lower-triangular pattern (block (i, j) with j <= i)."""
    bi = np.arange(n_blocks_r)[:, None]
    bj = np.arange(n_blocks_c)[None, :]
    pattern = bj < bi if strict else bj <= bi
    return np.kron(pattern, np.ones((rows, cols), dtype=bool)).astype(bool)


def block_upper_violation(M, rows, cols, strict=False):
    """Largest entry of ``M`` outside the block-lower-triangular pattern."""
    nr, nc = M.shape[0] // rows, M.shape[1] // cols
    mask = _block_lower_mask(nr, nc, rows, cols, strict)
    return float(np.max(np.abs(M[~mask]), initial=0.0))


@dataclass(frozen=True)
class LiftedDynamics:
    A: np.ndarray
    B: np.ndarray
    Z: np.ndarray
    forcing: np.ndarray
    depth: int
    n_x: int
    n_u: int
    n_w: int

    @property
    def constraint_matrix(self):
        """``[I - Z A_blk, -Z B_blk]``."""
        n = self.A.shape[0]
        return np.hstack([np.eye(n) - self.Z @ self.A, -self.Z @ self.B])


def lift(sys, depth):
    """Stacked dynamics over ``depth`` steps (``depth + 1`` state blocks)."""
    L = check_positive_int(depth, "depth")
    n_x, n_u, n_w = sys.n_x, sys.n_u, sys.n_w
    eye_L = np.diag(np.r_[np.ones(L), 0.0])
    A_blk = np.kron(eye_L, sys.A)
    B_blk = np.kron(eye_L, sys.B)
    Z = np.kron(np.eye(L + 1, k=-1), np.eye(n_x))
    forcing = np.zeros(((L + 1) * n_x, n_x + L * n_w))
    forcing[:n_x, :n_x] = np.eye(n_x)
    for i in range(L):
        forcing[(i + 1) * n_x:(i + 2) * n_x, n_x + i * n_w:n_x + (i + 1) * n_w] = sys.E
    return LiftedDynamics(A_blk, B_blk, Z, forcing, L, n_x, n_u, n_w)


@dataclass(frozen=True)
class SlsResponse:
    """Closed-loop maps from ``(x_0, w)`` to stacked states and inputs."""

    phi_x: np.ndarray
    phi_u: np.ndarray
    lifted: LiftedDynamics

    def residual(self):
        """Max-norm violation of the affine response constraint."""
        lhs = self.lifted.constraint_matrix @ np.vstack([self.phi_x, self.phi_u])
        return float(np.max(np.abs(lhs - self.lifted.forcing)))

    def causality_violation(self):
        lf = self.lifted
        # column block 0 is x_0 (time 0); column block j >= 1 is w_{j-1},
        # which first reaches x_j.
        widths = [lf.n_x] + [lf.n_w] * lf.depth
        worst = 0.0
        for M, rows in ((self.phi_x, lf.n_x), (self.phi_u, lf.n_u)):
            c = 0
            for j, wdt in enumerate(widths):
                worst = max(worst, float(np.max(np.abs(M[:j * rows, c:c + wdt]), initial=0.0)))
                c += wdt
        return worst

    def apply(self, x0, w):
        """``(x, u)`` stacked trajectories for initial state ``x0`` and disturbances ``w``."""
        delta = np.concatenate([np.ravel(x0), np.ravel(w)])
        return self.phi_x @ delta, self.phi_u @ delta


@dataclass(frozen=True)
class StateFeedbackLaw:
    """Causal time-varying gain ``u = K x`` over ``depth + 1`` steps."""

    K: np.ndarray
    n_u: int
    n_x: int

    def __post_init__(self):
        K = check_matrix(self.K, "K")
        if K.shape[0] % self.n_u or K.shape[1] % self.n_x:
            raise DimensionError(f"K of shape {K.shape} is not made of {self.n_u}x{self.n_x} blocks")
        if block_upper_violation(K, self.n_u, self.n_x) > CAUSAL_TOL * max(1.0, np.abs(K).max()):
            raise ValueError("K must be block-lower-triangular")
        object.__setattr__(self, "K", K)

    @classmethod
    def zeros(cls, sys, depth):
        return cls(np.zeros(((depth + 1) * sys.n_u, (depth + 1) * sys.n_x)), sys.n_u, sys.n_x)

    @classmethod
    def random(cls, sys, depth, rng=None, scale=0.5):
        rng = np.random.default_rng(rng)
        shape = ((depth + 1) * sys.n_u, (depth + 1) * sys.n_x)
        mask = _block_lower_mask(depth + 1, depth + 1, sys.n_u, sys.n_x)
        return cls(np.where(mask, scale * rng.standard_normal(shape), 0.0), sys.n_u, sys.n_x)

    @classmethod
    def constant_gain(cls, sys, depth, gain):
        gain = check_matrix(gain, "gain", (sys.n_u, sys.n_x))
        return cls(np.kron(np.eye(depth + 1), gain), sys.n_u, sys.n_x)


def open_loop_response(sys, depth):
    lf = lift(sys, depth)
    n = lf.A.shape[0]
    phi_x = np.linalg.solve(np.eye(n) - lf.Z @ lf.A, lf.forcing)
    return SlsResponse(phi_x, np.zeros((lf.B.shape[1], phi_x.shape[1])), lf)


def controller_to_response(sys, law, depth):
    """``Phi_x = (I - Z A_blk - Z B_blk K)^-1 Efor`` and ``Phi_u = K Phi_x``."""
    lf = lift(sys, depth)
    K = law.K if isinstance(law, StateFeedbackLaw) else StateFeedbackLaw(law, sys.n_u, sys.n_x).K
    if K.shape != (lf.B.shape[1], lf.A.shape[0]):
        raise DimensionError(f"K has shape {K.shape}, expected {(lf.B.shape[1], lf.A.shape[0])}")
    n = lf.A.shape[0]
    phi_x = np.linalg.solve(np.eye(n) - lf.Z @ lf.A - lf.Z @ lf.B @ K, lf.forcing)
    return SlsResponse(phi_x, K @ phi_x, lf)


def response_to_controller(resp):
    """Recover ``K = Phi_u Phi_x^-1`` (square ``Phi_x``, i.e. ``E = I``)."""
    phi_x = resp.phi_x
    if phi_x.shape[0] != phi_x.shape[1]:
        raise DimensionError("Phi_x must be square to recover a state feedback law")
    if numerical_rank(phi_x) < phi_x.shape[0]:
        raise np.linalg.LinAlgError("Phi_x is singular")
    K = np.linalg.solve(phi_x.T, resp.phi_u.T).T
    lf = resp.lifted
    # Inverse of a block-unit-lower-triangular matrix keeps the pattern; clear roundoff.
    K = np.where(_block_lower_mask(lf.depth + 1, lf.depth + 1, lf.n_u, lf.n_x), K, 0.0)
    return StateFeedbackLaw(K, lf.n_u, lf.n_x)


def closed_loop_rollout(sys, law, x0, w):
    """Step-by-step recurrence under ``u_i = sum_j K_ij x_j`` (independent of the lifted maps)."""
    K = law.K
    L = np.asarray(w).reshape(-1, sys.n_w).shape[0]
    w = np.asarray(w, dtype=float).reshape(L, sys.n_w)
    xs = [np.asarray(x0, dtype=float)]
    us = []
    for i in range(L + 1):
        u = sum(K[i * sys.n_u:(i + 1) * sys.n_u, j * sys.n_x:(j + 1) * sys.n_x] @ xs[j]
                for j in range(i + 1))
        us.append(u)
        if i < L:
            xs.append(sys.A @ xs[i] + sys.B @ u + sys.E @ w[i])
    return np.concatenate(xs), np.concatenate(us)


def sls_hankel_equivalence(sys, dataset, depth, n_laws=20, n_samples=5, seed=0,
                           gain_scale=0.5, tol=MEMBERSHIP_TOL):
    """Check that the response subspace and the data Hankel subspace coincide.

    For random causal laws ``K`` the responses ``[Phi_x; Phi_u]`` are written
    as ``[H_{L+1}(x); H_L(u)] G``; then ``[H_{L+1,1}(x); H_L(w)] G = I`` must
    hold, and ``G (x_0, w)`` must reproduce the closed-loop ``(x, u)``. Both
    subspaces must have dimension ``n_x + L (n_u + n_w)``.
    """
    L = check_positive_int(depth, "depth")
    claimed = sys.n_x + L * (sys.n_u + sys.n_w)
    T = len(dataset)
    if T < L + 1:
        return SubspaceReport(claimed, 0, float("inf"), False,
                              [f"dataset of {T} samples is too short for depth {L}"])
    causes = _excitation_causes(dataset.u, dataset.w, L, sys.n_x)
    Hu = build_hankel(dataset.u, L).data
    Hw = build_hankel(dataset.w, L).data
    Hx = build_hankel(dataset.x[:T + 1], L + 1).data
    M = np.vstack([Hx, Hu])
    S = np.vstack([Hx[:sys.n_x], Hw])
    rank_hankel = numerical_rank(np.vstack([Hu, Hw, Hx]))

    rng = np.random.default_rng(seed)
    res = {"existence": 0.0, "step_a": 0.0, "step_b": 0.0, "response": 0.0, "rollout": 0.0}
    responses = []
    for k in range(n_laws):
        law = StateFeedbackLaw.random(sys, L, rng, gain_scale)
        resp = controller_to_response(sys, law, L)
        res["response"] = max(res["response"], resp.residual())
        target = np.vstack([resp.phi_x, resp.phi_u[:L * sys.n_u]])
        responses.append(target)
        G, *_ = np.linalg.lstsq(M, target, rcond=None)
        res["existence"] = max(res["existence"], float(np.max(np.abs(M @ G - target))))
        res["step_a"] = max(res["step_a"], float(np.max(np.abs(S @ G - np.eye(S.shape[0])))))
        for _ in range(n_samples):
            x0 = rng.standard_normal(sys.n_x)
            w = rng.standard_normal(L * sys.n_w)
            g_hat = G @ np.concatenate([x0, w])
            xs, us = closed_loop_rollout(sys, law, x0, w)
            recon = M @ g_hat
            ref = np.concatenate([xs, us[:L * sys.n_u]])
            res["step_b"] = max(res["step_b"], float(np.max(np.abs(recon - ref))))
            px, pu = resp.apply(x0, w)
            res["rollout"] = max(res["rollout"],
                                 float(np.max(np.abs(np.concatenate([px, pu]) - np.concatenate([xs, us])))))
    rank_sls = numerical_rank(np.hstack(responses))
    worst = max(res.values())
    if rank_hankel != claimed:
        causes.append(f"Hankel subspace rank {rank_hankel} differs from {claimed}")
    if rank_sls != claimed:
        causes.append(f"response subspace rank {rank_sls} differs from {claimed}")
    for name, v in res.items():
        if v > tol:
            causes.append(f"{name} residual {v:.3e} exceeds {tol:.1e}")
    return SubspaceReport(claimed, rank_hankel, worst, not causes, causes,
                          {"sls_rank": rank_sls, "residuals": res, "n_laws": n_laws,
                           "depth": L, "seed": seed})
