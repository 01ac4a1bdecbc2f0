"""Sparse convex-program exchange format, robust-constraint dualisation and solvers.

A :class:`ConvexProgram` is a QP in one stacked decision vector ``z``::

    minimise    0.5 z'Pz + q'z + r + sum_j weight_j * ||S_j z - s_j||_1
    subject to  A_eq z = b_eq,   A_in z <= b_in,
                A_rob z + (T z + c0)' w <= b_rob   for all w in W

Named variable blocks (optionally with a sparsity mask) map onto slices of
``z``; matrix blocks are flattened row-major over their free entries. The
robust rows couple the uncertainty ``w`` to the decision through the
coefficient matrix ``C(z) = T z + c0`` of shape ``(m, dim W)``, stored with
row ``k * dim W + l`` of ``T`` holding entry ``(k, l)``.
"""

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .lti import DisturbancePolytope

DEFAULT_TOL = 1e-7
STATUSES = ("optimal", "infeasible", "unbounded", "numerical-failure")


def acceptance_tol():
    """Primal-residual acceptance tolerance; ``HSC_SOLVER_TOL`` overrides the default."""
    value = os.environ.get("HSC_SOLVER_TOL")
    return float(value) if value else DEFAULT_TOL


@dataclass(frozen=True)
class Variable:
    name: str
    shape: tuple
    offset: int
    mask: np.ndarray = None

    @property
    def size(self):
        return int(self.mask.sum()) if self.mask is not None else int(np.prod(self.shape))

    @property
    def slice(self):
        return slice(self.offset, self.offset + self.size)

    def local_index(self):
        """Array of ``shape`` holding each entry's position in the block (``-1`` if fixed at 0)."""
        idx = np.full(self.shape, -1, dtype=int)
        if self.mask is None:
            idx[...] = np.arange(self.size).reshape(self.shape)
        else:
            idx[self.mask] = np.arange(self.size)
        return idx

    def unpack(self, z):
        out = np.zeros(self.shape)
        vals = z[self.slice]
        if self.mask is None:
            out[...] = vals.reshape(self.shape)
        else:
            out[self.mask] = vals
        return out

    def to_dict(self):
        d = {"name": self.name, "shape": list(self.shape), "offset": self.offset}
        if self.mask is not None:
            d["mask"] = self.mask.astype(int).tolist()
        return d


@dataclass(frozen=True)
class L1Term:
    S: sp.csr_matrix
    s: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True)
class RobustBlock:
    """Rows ``A z + (T z + c0)' w <= b`` required for every ``w`` in ``polytope``."""

    A: sp.csr_matrix
    b: np.ndarray
    T: sp.csr_matrix
    c0: np.ndarray
    polytope: DisturbancePolytope
    groups: tuple = ()

    @property
    def n_rows(self):
        return self.A.shape[0]

    def coefficients(self, z):
        """The ``(m, dim W)`` matrix multiplying ``w`` at decision ``z``."""
        d = self.polytope.dim
        return (self.T @ z).reshape(self.n_rows, d) + self.c0

    def worst_case_slack(self, z):
        """``b - A z - max_w C(z) w`` per row, evaluated on the polytope vertices."""
        V = self.polytope.vertices()
        lhs = (self.A @ z)[:, None] + self.coefficients(z) @ V.T
        return self.b - lhs.max(axis=1)


@dataclass(frozen=True)
class ConvexProgram:
    variables: tuple
    P: sp.csc_matrix
    q: np.ndarray
    r: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    eq_groups: tuple = ()
    in_groups: tuple = ()
    l1: tuple = ()
    robust: RobustBlock = None
    metadata: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.q.size

    def var(self, name):
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def unpack(self, z):
        return {v.name: v.unpack(z) for v in self.variables}

    def objective(self, z):
        val = 0.5 * z @ (self.P @ z) + self.q @ z + self.r
        for term in self.l1:
            val += term.weight * np.abs(term.S @ z - term.s).sum()
        return float(val)

    def primal_residuals(self, z):
        """Absolute max-norm violation of the equalities and of the inequalities."""
        eq = float(np.max(np.abs(self.A_eq @ z - self.b_eq), initial=0.0))
        ineq = float(np.max(self.A_in @ z - self.b_in, initial=0.0))
        return eq, max(ineq, 0.0)

    def scaled_primal_residual(self, z):
        """Largest row violation divided by ``max(1, |b_i|, max_j |A_ij z_j|)``.

        Rows whose terms are large (inputs of order 1e3, say) cannot be met to
        an absolute 1e-7 by an interior-point method; this measures each row
        against its own magnitude.
        """
        worst = 0.0
        for A, b, absval in ((self.A_eq, self.b_eq, True), (self.A_in, self.b_in, False)):
            if not A.shape[0]:
                continue
            r = A @ z - b
            r = np.abs(r) if absval else np.maximum(r, 0.0)
            terms = abs(A.multiply(z[None, :]).tocsr()).max(axis=1).toarray().ravel()
            worst = max(worst, float(np.max(r / np.maximum(1.0, np.maximum(np.abs(b), terms)))))
        return worst

    def group_rows(self, kind, label):
        groups = self.eq_groups if kind == "eq" else self.in_groups
        start = 0
        for name, count in groups:
            if name == label:
                return slice(start, start + count)
            start += count
        raise KeyError(label)

    def to_dict(self):
        """JSON-ready description: variable table, sparse triplets, dense vectors."""
        def trip(M):
            M = sp.coo_matrix(M)
            return {"shape": list(M.shape), "rows": M.row.tolist(), "cols": M.col.tolist(),
                    "vals": M.data.tolist()}
        d = {
            "format": "robust-deepc/convex-program",
            "version": 1,
            "variables": [v.to_dict() for v in self.variables],
            "objective": {"P": trip(self.P), "q": self.q.tolist(), "r": self.r,
                          "l1": [{"S": trip(t.S), "s": t.s.tolist(), "weight": t.weight}
                                 for t in self.l1]},
            "equalities": {"A": trip(self.A_eq), "b": self.b_eq.tolist(),
                           "groups": [list(g) for g in self.eq_groups]},
            "inequalities": {"A": trip(self.A_in), "b": self.b_in.tolist(),
                             "groups": [list(g) for g in self.in_groups]},
            "robust": None,
            "metadata": self.metadata,
        }
        if self.robust is not None:
            rb = self.robust
            d["robust"] = {"A": trip(rb.A), "b": rb.b.tolist(), "T": trip(rb.T),
                           "c0": rb.c0.tolist(), "polytope": rb.polytope.to_dict(),
                           "groups": [list(g) for g in rb.groups]}
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        def untrip(t, fmt=sp.csr_matrix):
            return fmt((t["vals"], (t["rows"], t["cols"])), shape=tuple(t["shape"]))
        variables = tuple(
            Variable(v["name"], tuple(v["shape"]), v["offset"],
                     None if "mask" not in v else np.array(v["mask"], dtype=bool))
            for v in d["variables"])
        obj = d["objective"]
        robust = None
        if d.get("robust"):
            rb = d["robust"]
            robust = RobustBlock(untrip(rb["A"]), np.array(rb["b"], dtype=float),
                                 untrip(rb["T"]), np.array(rb["c0"], dtype=float).reshape(
                                     len(rb["b"]), -1),
                                 DisturbancePolytope.from_dict(rb["polytope"]),
                                 tuple(tuple(g) for g in rb["groups"]))
        return cls(variables, untrip(obj["P"], sp.csc_matrix), np.array(obj["q"], dtype=float),
                   float(obj["r"]),
                   untrip(d["equalities"]["A"]), np.array(d["equalities"]["b"], dtype=float),
                   untrip(d["inequalities"]["A"]), np.array(d["inequalities"]["b"], dtype=float),
                   tuple(tuple(g) for g in d["equalities"]["groups"]),
                   tuple(tuple(g) for g in d["inequalities"]["groups"]),
                   tuple(L1Term(untrip(t["S"]), np.array(t["s"], dtype=float), t["weight"])
                         for t in obj["l1"]),
                   robust, d.get("metadata", {}))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def left_matmul_map(M, var):
    """Sparse map from ``var``'s free entries to ``vec(M @ X)`` (row-major)."""
    M = np.asarray(M, dtype=float)
    p, qn = var.shape
    if M.shape[1] != p:
        raise ValueError(f"cannot multiply {M.shape} by {var.shape}")
    idx = var.local_index()
    I, J = np.nonzero(idx >= 0)
    cols = idx[I, J]
    r = M.shape[0]
    rows = (np.arange(r)[:, None] * qn + J[None, :]).ravel()
    vals = M[:, I].ravel()
    cols = np.broadcast_to(cols, (r, cols.size)).ravel()
    keep = vals != 0.0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(r * qn, var.size))


class ProgramBuilder:
    """Incremental assembly of a :class:`ConvexProgram`.

    Constraint and objective terms are given as ``{variable_name: matrix}``
    where each matrix acts on that block's free entries.
    """

    def __init__(self):
        self._vars = []
        self._n = 0
        self._eq, self._in, self._rob = [], [], []
        self._quad = []
        self._lin = []
        self._l1 = []
        self._r = 0.0
        self._polytope = None
        self.metadata = {}

    def variable(self, name, shape, mask=None):
        if any(v.name == name for v in self._vars):
            raise ValueError(f"duplicate variable {name!r}")
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != shape:
                raise ValueError(f"mask shape {mask.shape} differs from {shape}")
        v = Variable(name, shape, self._n, mask)
        self._vars.append(v)
        self._n += v.size
        return v

    def var(self, name):
        for v in self._vars:
            if v.name == name:
                return v
        raise KeyError(name)

    def _row_block(self, terms, n_rows):
        blocks = []
        for name, M in terms.items():
            v = self.var(name)
            M = sp.csr_matrix(M)
            if M.shape != (n_rows, v.size):
                raise ValueError(f"term for {name!r} has shape {M.shape}, "
                                 f"expected {(n_rows, v.size)}")
            blocks.append((v, M))
        return blocks

    @staticmethod
    def _rows_of(terms, rhs):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float)).ravel()
        return rhs, rhs.size

    def eq(self, terms, rhs, label):
        rhs, m = self._rows_of(terms, rhs)
        self._eq.append((label, self._row_block(terms, m), rhs))

    def ineq(self, terms, rhs, label):
        rhs, m = self._rows_of(terms, rhs)
        self._in.append((label, self._row_block(terms, m), rhs))

    def robust(self, terms, rhs, uncertain, c0, polytope, label):
        """Rows ``terms z + (uncertain z + c0)' w <= rhs`` for all ``w`` in ``polytope``.

        ``uncertain`` maps variable names to ``(m * dim W, size)`` matrices.
        """
        rhs, m = self._rows_of(terms, rhs)
        if self._polytope is None:
            self._polytope = polytope
        elif polytope is not self._polytope:
            raise ValueError("all robust rows must share one uncertainty polytope")
        d = polytope.dim
        c0 = np.zeros((m, d)) if c0 is None else np.asarray(c0, dtype=float).reshape(m, d)
        self._rob.append((label, self._row_block(terms, m), rhs,
                          self._row_block(uncertain, m * d), c0))

    def quadratic(self, name, P, q=None):
        """Add ``0.5 x'Px + q'x`` on block ``name``."""
        v = self.var(name)
        self._quad.append((v, sp.csr_matrix(P)))
        if q is not None:
            self._lin.append((v, np.asarray(q, dtype=float).ravel()))

    def linear(self, name, q):
        self._lin.append((self.var(name), np.asarray(q, dtype=float).ravel()))

    def constant(self, r):
        self._r += float(r)

    def l1(self, terms, offset, weight=1.0):
        offset, m = self._rows_of(terms, offset)
        self._l1.append((self._row_block(terms, m), offset, float(weight)))

    def _assemble(self, blocks, m):
        out = sp.csr_matrix((m, self._n))
        for v, B in blocks:
            out = out + sp.csr_matrix((B.data, B.indices + v.offset, B.indptr), shape=(m, self._n))
        return out

    def _stack(self, items):
        mats, rhs, groups = [], [], []
        for label, blocks, b in items:
            mats.append(self._assemble(blocks, b.size))
            rhs.append(b)
            groups.append((label, b.size))
        if not mats:
            return sp.csr_matrix((0, self._n)), np.zeros(0), ()
        return sp.vstack(mats, format="csr"), np.concatenate(rhs), tuple(groups)

    def build(self):
        n = self._n
        P = sp.csc_matrix((n, n))
        for v, B in self._quad:
            pad = sp.csc_matrix((B.tocoo().data,
                                 (B.tocoo().row + v.offset, B.tocoo().col + v.offset)),
                                shape=(n, n))
            P = P + pad
        q = np.zeros(n)
        for v, qq in self._lin:
            q[v.slice] += qq
        A_eq, b_eq, eqg = self._stack(self._eq)
        A_in, b_in, ing = self._stack(self._in)
        l1 = tuple(L1Term(self._assemble(blocks, off.size), off, w) for blocks, off, w in self._l1)
        robust = None
        if self._rob:
            A = sp.vstack([self._assemble(bl, b.size) for _, bl, b, _, _ in self._rob], format="csr")
            b = np.concatenate([b for _, _, b, _, _ in self._rob])
            T = sp.vstack([self._assemble(ub, b_.size * self._polytope.dim)
                           for _, _, b_, ub, _ in self._rob], format="csr")
            c0 = np.vstack([c for *_, c in self._rob])
            groups = tuple((label, b_.size) for label, _, b_, _, _ in self._rob)
            robust = RobustBlock(A, b, T, c0, self._polytope, groups)
        return ConvexProgram(tuple(self._vars), sp.csc_matrix(P), q, self._r, A_eq, b_eq,
                             A_in, b_in, eqg, ing, l1, robust, dict(self.metadata))


def _extend(program, new_vars, n_new):
    """Program with ``n_new`` extra columns appended for ``new_vars``."""
    def widen(M, fmt="csr"):
        return sp.hstack([M, sp.csr_matrix((M.shape[0], n_new))], format=fmt)
    P = sp.block_diag([program.P, sp.csc_matrix((n_new, n_new))], format="csc")
    l1 = tuple(L1Term(widen(t.S), t.s, t.weight) for t in program.l1)
    robust = None
    if program.robust is not None:
        rb = program.robust
        robust = replace(rb, A=widen(rb.A), T=widen(rb.T))
    return replace(program, variables=program.variables + tuple(new_vars), P=P,
                   q=np.concatenate([program.q, np.zeros(n_new)]),
                   A_eq=widen(program.A_eq), A_in=widen(program.A_in), l1=l1, robust=robust)


def dualize(program):
    """Replace the robust rows by their finite dual counterpart.

    Row ``k`` holds for all ``w`` with ``F w <= f`` iff some ``lambda_k >= 0``
    satisfies ``F' lambda_k = C(z)_k`` and ``f' lambda_k <= b_k - A_k z``. The
    multipliers form the block ``Lambda`` of shape ``(rows of F, m)``, one
    column per robust inequality.
    """
    rb = program.robust
    if rb is None or rb.n_rows == 0:
        return replace(program, robust=None)
    rb.polytope.check_bounded()
    Fw, fw = rb.polytope.F, rb.polytope.f
    k_w, d = Fw.shape
    m = rb.n_rows
    n = program.n
    lam = Variable("Lambda", (k_w, m), n)
    out = _extend(program, [lam], k_w * m)
    n_lam = k_w * m

    # F' lambda_k - T_k z = c0_k: rows kk*d + l, Lambda[i, kk] sits at i*m + kk.
    kk, l, i = np.meshgrid(np.arange(m), np.arange(d), np.arange(k_w), indexing="ij")
    vals = Fw[i, l].ravel()
    rows, cols = (kk * d + l).ravel(), (i * m + kk).ravel()
    nz = vals != 0.0
    L_eq = sp.csr_matrix((vals[nz], (rows[nz], cols[nz])), shape=(m * d, n_lam))
    eq_block = sp.hstack([-rb.T, L_eq], format="csr")
    # f' lambda_k + A_k z <= b_k
    kk2, i2 = np.meshgrid(np.arange(m), np.arange(k_w), indexing="ij")
    vals2 = fw[i2].ravel()
    nz2 = vals2 != 0.0
    L_in = sp.csr_matrix((vals2[nz2], (kk2.ravel()[nz2], (i2 * m + kk2).ravel()[nz2])),
                         shape=(m, n_lam))
    in_block = sp.hstack([rb.A, L_in], format="csr")
    nonneg = sp.hstack([sp.csr_matrix((n_lam, n)), -sp.eye(n_lam, format="csr")], format="csr")

    meta = dict(program.metadata)
    meta["dualized"] = {"robust_groups": [list(g) for g in rb.groups], "polytope_rows": k_w}
    return replace(out,
                   A_eq=sp.vstack([out.A_eq, eq_block], format="csr"),
                   b_eq=np.concatenate([out.b_eq, rb.c0.ravel()]),
                   eq_groups=out.eq_groups + (("dual:coefficients", m * d),),
                   A_in=sp.vstack([out.A_in, in_block, nonneg], format="csr"),
                   b_in=np.concatenate([out.b_in, rb.b, np.zeros(n_lam)]),
                   in_groups=out.in_groups + (("dual:support", m), ("dual:nonneg", n_lam)),
                   robust=None, metadata=meta)


def vertex_robust_oracle(program, max_vertices=4096):
    """Enforce the robust rows at every vertex of the uncertainty polytope.

    Exact for polytopes (the rows are affine in ``w``); intended as an
    independent check of :func:`dualize` on small instances.
    """
    rb = program.robust
    if rb is None or rb.n_rows == 0:
        return replace(program, robust=None)
    count = rb.polytope.vertex_count()
    if count is not None and count > max_vertices:
        raise ValueError(f"{count} vertices exceed {max_vertices}; use dualize() instead")
    V = rb.polytope.vertices(max_vertices)
    m, d = rb.n_rows, rb.polytope.dim
    blocks, rhs = [], []
    for v in V:
        weave = sp.kron(sp.eye(m), sp.csr_matrix(v.reshape(1, d)), format="csr")
        blocks.append(rb.A + weave @ rb.T)
        rhs.append(rb.b - rb.c0 @ v)
    meta = dict(program.metadata)
    meta["vertex_count"] = len(V)
    return replace(program, A_in=sp.vstack([program.A_in] + blocks, format="csr"),
                   b_in=np.concatenate([program.b_in] + rhs),
                   in_groups=program.in_groups + (("vertex", m * len(V)),),
                   robust=None, metadata=meta)


def norm1_epigraph(program):
    """Rewrite ``weight * ||S z - s||_1`` terms with epigraph variables ``t >= |S z - s|``."""
    if not program.l1:
        return program
    new_vars, offset = [], program.n
    for j, term in enumerate(program.l1):
        new_vars.append(Variable(f"l1_epigraph_{j}", (term.S.shape[0],), offset))
        offset += term.S.shape[0]
    n_new = offset - program.n
    out = _extend(program, new_vars, n_new)
    q = out.q.copy()
    rows, rhs = [], []
    for v, term in zip(new_vars, program.l1):
        q[v.slice] = term.weight
        S = sp.hstack([term.S, sp.csr_matrix((term.S.shape[0], n_new))], format="csr")
        sel = sp.csr_matrix((np.ones(v.size), (np.arange(v.size), np.arange(v.size) + v.offset)),
                            shape=(v.size, out.n))
        rows += [S - sel, -S - sel]
        rhs += [term.s, -term.s]
    return replace(out, q=q, l1=(), A_in=sp.vstack([out.A_in] + rows, format="csr"),
                   b_in=np.concatenate([out.b_in] + rhs),
                   in_groups=out.in_groups + (("l1:epigraph", sum(r.shape[0] for r in rows)),))


@dataclass
class Solution:
    status: str
    values: dict
    objective: float
    stats: dict
    z: np.ndarray = None

    @property
    def ok(self):
        return self.status == "optimal"

    def __getitem__(self, name):
        return self.values[name]


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}

CLARABEL_DEFAULTS = {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10,
                     "tol_ktratio": 1e-8, "max_iter": 300}


def _solve_clarabel(prog, settings):
    import clarabel

    s = clarabel.DefaultSettings()
    s.verbose = False
    for key, val in {**CLARABEL_DEFAULTS, **settings}.items():
        setattr(s, key, val)
    A = sp.vstack([prog.A_eq, prog.A_in], format="csc")
    b = np.concatenate([prog.b_eq, prog.b_in])
    cones = []
    if prog.A_eq.shape[0]:
        cones.append(clarabel.ZeroConeT(prog.A_eq.shape[0]))
    if prog.A_in.shape[0]:
        cones.append(clarabel.NonnegativeConeT(prog.A_in.shape[0]))
    P = sp.triu(prog.P, format="csc")
    res = clarabel.DefaultSolver(P, prog.q, A, b, cones, s).solve()
    status = _CLARABEL_STATUS.get(str(res.status), "numerical-failure")
    return status, np.array(res.x), {"backend": "clarabel", "raw_status": str(res.status),
                                     "iterations": int(res.iterations)}


def _solve_cvxpy(prog, settings):
    import cvxpy as cp

    z = cp.Variable(prog.n)
    obj = 0.5 * cp.quad_form(z, cp.psd_wrap(prog.P)) + prog.q @ z + prog.r
    cons = []
    if prog.A_eq.shape[0]:
        cons.append(prog.A_eq @ z == prog.b_eq)
    if prog.A_in.shape[0]:
        cons.append(prog.A_in @ z <= prog.b_in)
    solver = settings.pop("solver", "CLARABEL")
    problem = cp.Problem(cp.Minimize(obj), cons)
    try:
        problem.solve(solver=solver, **settings)
    except cp.error.SolverError as exc:
        return "numerical-failure", np.full(prog.n, np.nan), {"backend": "cvxpy",
                                                              "error": str(exc)}
    mapping = {cp.OPTIMAL: "optimal", cp.OPTIMAL_INACCURATE: "optimal",
               cp.INFEASIBLE: "infeasible", cp.INFEASIBLE_INACCURATE: "infeasible",
               cp.UNBOUNDED: "unbounded", cp.UNBOUNDED_INACCURATE: "unbounded"}
    x = z.value if z.value is not None else np.full(prog.n, np.nan)
    return mapping.get(problem.status, "numerical-failure"), np.asarray(x), {
        "backend": f"cvxpy/{solver}", "raw_status": problem.status}


BACKENDS = {"clarabel": _solve_clarabel, "cvxpy": _solve_cvxpy}


# Settings tried in turn when an attempt ends in ``numerical-failure``. Degenerate
# LP-like programs (feedback and multiplier blocks carry no curvature) can stall
# the interior-point iteration or fail to factor; stronger KKT regularisation or
# skipping equilibration usually recovers them without changing the program. The
# primal residual check in ``_attempt`` guards every rung.
CLARABEL_RETRIES = ({}, {"static_regularization_constant": 1e-7},
                    {"static_regularization_constant": 1e-5},
                    {"dynamic_regularization_enable": False},
                    {"equilibrate_enable": False})


def _attempt(prog, program, backend, settings, tol):
    try:
        status, z, stats = BACKENDS[backend](prog, dict(settings))
    except Exception as exc:  # solver crashes surface as a status
        status, z, stats = "numerical-failure", np.full(prog.n, np.nan), {"error": repr(exc)}
    if np.all(np.isfinite(z)):
        eq, ineq = prog.primal_residuals(z)
        scaled = prog.scaled_primal_residual(z)
        stats.update(eq_residual=eq, ineq_residual=ineq, primal_residual=scaled)
        if status == "optimal" and scaled > tol:
            status = "numerical-failure"
            stats["diagnostic"] = f"primal residual {scaled:.3e} exceeds {tol:.1e}"
    elif status == "optimal":
        status = "numerical-failure"
        stats["diagnostic"] = "solver returned non-finite values"
    return status, z, stats


def solve(program, backend="clarabel", tol=None, **settings):
    """Solve a (non-robust) program; never raises on solver trouble.

    Robust rows must be removed first with :func:`dualize` or
    :func:`vertex_robust_oracle`. An ``optimal`` status is only reported when
    the row-scaled primal residual (:meth:`ConvexProgram.scaled_primal_residual`)
    is within ``tol`` (default :func:`acceptance_tol`).
    """
    if program.robust is not None and program.robust.n_rows:
        raise ValueError("program has robust rows; call dualize() or vertex_robust_oracle()")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}")
    tol = acceptance_tol() if tol is None else tol
    prog = norm1_epigraph(program)
    ladder = CLARABEL_RETRIES if backend == "clarabel" else ({},)
    t0 = time.perf_counter()
    attempts = []
    for extra in ladder:
        status, z, stats = _attempt(prog, program, backend, {**extra, **settings}, tol)
        attempts.append({"settings": extra, "status": status,
                         "raw_status": stats.get("raw_status")})
        if status != "numerical-failure":
            break
    stats["attempts"] = attempts
    stats["solve_time"] = time.perf_counter() - t0
    values, objective = {}, float("nan")
    if np.all(np.isfinite(z)):
        z = z[:program.n]
        values = program.unpack(z)
        objective = program.objective(z)
    return Solution(status, values, objective, stats, z)
