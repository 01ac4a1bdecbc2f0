"""Uncertain discrete-time LTI systems.

The plant is

    x[i+1] = A x[i] + B u[i] + E w[i]
    y[i]   = C x[i] + D u[i] + F w[i]

where ``w`` is an exogenous disturbance that is measured after the fact (it is
part of the recorded data) but unknown in advance.
"""

import csv
import hashlib
import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from ._validation import (RANK_RTOL, DimensionError, check_matrix, check_signal,
                          check_vector, numerical_rank, readonly)


class ExcitationWarning(UserWarning):
    """The requested excitation length is too short for the intended Hankel depth."""


@dataclass(frozen=True)
class LtiSystem:
    """State-space matrices of the plant.

    Omitted matrices default to the fully observed case: ``C = I``, ``D = 0``,
    ``E = I`` and ``F = 0``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray = None
    D: np.ndarray = None
    E: np.ndarray = None
    F: np.ndarray = None

    def __post_init__(self):
        A = check_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        n_x = A.shape[0]
        B = check_matrix(self.B, "B", (n_x, None))
        n_u = B.shape[1]
        C = np.eye(n_x) if self.C is None else check_matrix(self.C, "C", (None, n_x))
        n_y = C.shape[0]
        E = np.eye(n_x) if self.E is None else check_matrix(self.E, "E", (n_x, None))
        n_w = E.shape[1]
        D = np.zeros((n_y, n_u)) if self.D is None else check_matrix(self.D, "D", (n_y, n_u))
        F = np.zeros((n_y, n_w)) if self.F is None else check_matrix(self.F, "F", (n_y, n_w))
        for name, M in zip("ABCDEF", (A, B, C, D, E, F)):
            object.__setattr__(self, name, readonly(M))

    @classmethod
    def fully_observed(cls, A, B):
        """The system with ``E = I``, ``C = I``, ``D = 0``, ``F = 0``."""
        return cls(A, B)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    @property
    def n_w(self):
        return self.E.shape[1]

    @property
    def dims(self):
        return {"n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y, "n_w": self.n_w}

    @property
    def is_fully_observed(self):
        n = self.n_x
        return (self.n_w == n and self.n_y == n
                and np.array_equal(self.E, np.eye(n)) and np.array_equal(self.C, np.eye(n))
                and not self.D.any() and not self.F.any())

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in "ABCDEF"}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in "ABCDEF" if k in d and d[k] is not None})

    def __eq__(self, other):
        if not isinstance(other, LtiSystem):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCDEF")

    __hash__ = None


@dataclass(frozen=True)
class Trajectory:
    """A recorded run: ``u``, ``w``, ``y`` have ``T`` samples, ``x`` has ``T + 1``."""

    u: np.ndarray
    w: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in "uwxy":
            object.__setattr__(self, name, readonly(check_signal(getattr(self, name), name)))
        T = self.u.shape[0]
        if self.w.shape[0] != T or self.y.shape[0] != T:
            raise DimensionError("u, w and y must have the same number of samples")
        if self.x.shape[0] != T + 1:
            raise DimensionError(f"x must have {T + 1} samples, got {self.x.shape[0]}")

    def __len__(self):
        return self.u.shape[0]

    def suffix(self, k):
        """The trajectory starting at sample ``k`` (itself a valid trajectory from x[k])."""
        return Trajectory(self.u[k:], self.w[k:], self.x[k:], self.y[k:])

    def truncated(self, T):
        return Trajectory(self.u[:T], self.w[:T], self.x[:T + 1], self.y[:T])

    def columns(self):
        names = []
        for sig in "uwxy":
            names += [f"{sig}{j}" for j in range(getattr(self, sig).shape[1])]
        return names

    def to_csv(self, path):
        """One row per time step; the final state sits on its own row with blank u, w, y."""
        path = Path(path)
        T = len(self)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + self.columns())
            for k in range(T + 1):
                row = [k]
                for sig in "uwxy":
                    v = getattr(self, sig)
                    row += ([repr(float(a)) for a in v[k]] if k < v.shape[0]
                            else [""] * v.shape[1])
                writer.writerow(row)
        return path

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        out = {}
        for sig in "uwxy":
            idx = [i for i, h in enumerate(header) if h[0] == sig and h[1:].isdigit()]
            vals = [[float(r[i]) for i in idx] for r in body if r[idx[0]] != ""]
            out[sig] = np.array(vals).reshape(len(vals), len(idx))
        return cls(**out)


def simulate(sys, x0, u, w):
    """Propagate the plant from ``x0`` under input ``u`` and disturbance ``w``."""
    u = check_signal(u, "u", sys.n_u)
    w = check_signal(w, "w", sys.n_w)
    if u.shape[0] != w.shape[0]:
        raise DimensionError(f"u has {u.shape[0]} samples but w has {w.shape[0]}")
    x = np.empty((u.shape[0] + 1, sys.n_x))
    x[0] = check_vector(x0, "x0", sys.n_x)
    for i in range(u.shape[0]):
        x[i + 1] = sys.A @ x[i] + sys.B @ u[i] + sys.E @ w[i]
    y = x[:-1] @ sys.C.T + u @ sys.D.T + w @ sys.F.T
    return Trajectory(u, w, x, y)


def required_length(n_u, n_w, depth, n_x):
    """Sample count that leaves room for persistent excitation of order ``depth + n_x``."""
    return (n_u + n_w + 1) * (depth + n_x)


def generate_excitation(n_u, n_w, length, seed=0, amplitude=1.0, w_amplitude=None,
                        depth=None, n_x=None):
    """I.i.d. uniform excitation ``u ~ U[-a, a]``, ``w ~ U[-a_w, a_w]``.

    When ``depth`` and ``n_x`` are given and ``length`` is shorter than
    :func:`required_length`, an :class:`ExcitationWarning` is issued; the data
    is returned regardless.
    """
    if depth is not None and n_x is not None:
        need = required_length(n_u, n_w, depth, n_x)
        if length < need:
            warnings.warn(f"excitation length {length} < {need} needed for depth {depth} "
                          f"with n_x={n_x}", ExcitationWarning, stacklevel=2)
    w_amplitude = amplitude if w_amplitude is None else w_amplitude
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, (length, n_u)) * amplitude
    w = rng.uniform(-1.0, 1.0, (length, n_w)) * w_amplitude
    return u, w


def controllability_matrix(A, B):
    A = np.asarray(A, dtype=float)
    blocks = [np.asarray(B, dtype=float)]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A, C):
    A = np.asarray(A, dtype=float)
    blocks = [np.asarray(C, dtype=float)]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def is_controllable(sys, rtol=RANK_RTOL):
    return numerical_rank(controllability_matrix(sys.A, sys.B), rtol) == sys.n_x


def is_observable(sys, rtol=RANK_RTOL):
    return numerical_rank(observability_matrix(sys.A, sys.C), rtol) == sys.n_x


class DisturbancePolytope:
    """The set ``{w : F w <= f}``, typically stacked over a prediction horizon.

    Boxes keep their bounds in ``lower``/``upper`` so vertices and samples can
    be produced without solving anything.
    """

    def __init__(self, F, f, lower=None, upper=None):
        self.F = readonly(check_matrix(F, "F_w"))
        self.f = readonly(check_vector(f, "f_w", self.F.shape[0]))
        self.lower = None if lower is None else readonly(check_vector(lower, "lower"))
        self.upper = None if upper is None else readonly(check_vector(upper, "upper"))

    @classmethod
    def from_box(cls, lower, upper):
        lower = check_vector(lower, "lower")
        upper = check_vector(upper, "upper", lower.size)
        if np.any(lower > upper):
            raise ValueError("box lower bound exceeds upper bound")
        n = lower.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]),
                   lower, upper)

    @classmethod
    def from_boxes(cls, boxes):
        """Stack per-step ``(lower, upper)`` boxes into one horizon polytope."""
        lower = np.concatenate([check_vector(lo, "lower") for lo, _ in boxes])
        upper = np.concatenate([check_vector(hi, "upper") for _, hi in boxes])
        return cls.from_box(lower, upper)

    @classmethod
    def zero(cls, n):
        return cls.from_box(np.zeros(n), np.zeros(n))

    @property
    def dim(self):
        return self.F.shape[1]

    @property
    def n_constraints(self):
        return self.F.shape[0]

    @property
    def is_box(self):
        return self.lower is not None

    def contains(self, w, tol=1e-12):
        w = np.asarray(w, dtype=float)
        return bool(np.all(self.F @ w <= self.f + tol))

    def bounding_box(self):
        if self.is_box:
            return self.lower.copy(), self.upper.copy()
        lo, hi = np.empty(self.dim), np.empty(self.dim)
        for j in range(self.dim):
            c = np.zeros(self.dim)
            c[j] = 1.0
            for sign, out in ((1.0, lo), (-1.0, hi)):
                res = linprog(sign * c, A_ub=self.F, b_ub=self.f, bounds=(None, None),
                              method="highs")
                if res.status == 2:
                    raise ValueError("disturbance polytope is empty")
                if res.status == 3:
                    raise ValueError("disturbance polytope is unbounded")
                out[j] = res.x[j]
        return lo, hi

    def check_bounded(self):
        """Raise ``ValueError`` if the polytope is empty or unbounded."""
        self.bounding_box()

    def is_bounded_nonempty(self):
        try:
            self.check_bounded()
        except ValueError:
            return False
        return True

    def vertex_count(self):
        if self.is_box:
            return 2 ** int(np.sum(self.upper > self.lower))
        return None

    def vertices(self, max_vertices=4096):
        """All vertices, as rows. Boxes enumerate corners; general polytopes use
        brute-force active-set enumeration (desk-scale only)."""
        if self.is_box:
            free = np.flatnonzero(self.upper > self.lower)
            if 2 ** free.size > max_vertices:
                raise ValueError(f"{2 ** free.size} vertices exceed the limit of {max_vertices}")
            V = np.tile(self.lower, (2 ** free.size, 1))
            for r, bits in enumerate(itertools.product((0, 1), repeat=free.size)):
                V[r, free] = np.where(bits, self.upper[free], self.lower[free])
            return V
        d, m = self.dim, self.n_constraints
        verts = []
        for rows in itertools.combinations(range(m), d):
            Fa = self.F[list(rows)]
            if numerical_rank(Fa) < d:
                continue
            v = np.linalg.solve(Fa, self.f[list(rows)])
            if self.contains(v, 1e-9) and not any(np.allclose(v, u, atol=1e-9) for u in verts):
                verts.append(v)
                if len(verts) > max_vertices:
                    raise ValueError(f"more than {max_vertices} vertices")
        return np.array(verts).reshape(-1, d)

    def sample(self, n, rng=None, max_tries=10000):
        """Uniform samples (rejection sampling inside the bounding box)."""
        rng = np.random.default_rng(rng)
        lo, hi = self.bounding_box()
        if self.is_box:
            return rng.uniform(lo, hi, (n, self.dim))
        out = []
        for _ in range(max_tries):
            cand = rng.uniform(lo, hi, (max(n, 16), self.dim))
            ok = np.all(cand @ self.F.T <= self.f + 1e-12, axis=1)
            out.extend(cand[ok])
            if len(out) >= n:
                return np.array(out[:n])
        raise RuntimeError("rejection sampling failed; polytope too thin")

    def to_dict(self):
        d = {"F": self.F.tolist(), "f": self.f.tolist()}
        if self.is_box:
            d.update(lower=self.lower.tolist(), upper=self.upper.tolist())
        return d

    @classmethod
    def from_dict(cls, d):
        if "lower" in d:
            return cls.from_box(d["lower"], d["upper"])
        return cls(d["F"], d["f"])


@dataclass(frozen=True)
class BoxSchedule:
    """Per-step box bounds, constant or cycling through a table of time slots.

    Slot ``k`` of the table applies at absolute steps ``t`` with
    ``t mod period == k``; entries may be infinite for one-sided bounds.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_2d(np.array(self.lower, dtype=float))
        hi = np.atleast_2d(np.array(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionError(f"lower {lo.shape} and upper {hi.shape} differ in shape")
        if np.any(lo > hi):
            raise ValueError("schedule lower bound exceeds upper bound")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("schedule bounds contain NaN")
        object.__setattr__(self, "lower", readonly(lo))
        object.__setattr__(self, "upper", readonly(hi))

    @classmethod
    def constant(cls, lower, upper):
        return cls(np.atleast_1d(lower)[None, :], np.atleast_1d(upper)[None, :])

    @classmethod
    def unbounded(cls, n):
        return cls.constant(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def day_night(cls, day, night, day_start=6, day_end=22, period=24):
        """Hourly table: ``day`` bounds on ``[day_start, day_end)``, ``night`` otherwise."""
        lo, hi = [], []
        for h in range(period):
            lo_h, hi_h = day if day_start <= h < day_end else night
            lo.append(np.atleast_1d(np.asarray(lo_h, dtype=float)))
            hi.append(np.atleast_1d(np.asarray(hi_h, dtype=float)))
        return cls(np.array(lo), np.array(hi))

    @property
    def period(self):
        return self.lower.shape[0]

    @property
    def dim(self):
        return self.lower.shape[1]

    def bounds(self, t):
        k = int(t) % self.period
        return self.lower[k].copy(), self.upper[k].copy()

    def horizon(self, t0, n):
        """Stacked ``(lower, upper)`` arrays of shape ``(n, dim)`` for steps ``t0..t0+n-1``."""
        idx = (np.arange(n) + int(t0)) % self.period
        return self.lower[idx].copy(), self.upper[idx].copy()

    def polytope(self, t0, n):
        lo, hi = self.horizon(t0, n)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("disturbance bounds must be finite")
        return DisturbancePolytope.from_box(lo.ravel(), hi.ravel())

    def stacked_constraints(self, t0, n):
        """``(F, f)`` with one row per finite bound over the horizon, step-major."""
        lo, hi = self.horizon(t0, n)
        d = self.dim
        rows, rhs = [], []
        for i in range(n):
            for j in range(d):
                if np.isfinite(hi[i, j]):
                    r = np.zeros(n * d)
                    r[i * d + j] = 1.0
                    rows.append(r)
                    rhs.append(hi[i, j])
                if np.isfinite(lo[i, j]):
                    r = np.zeros(n * d)
                    r[i * d + j] = -1.0
                    rows.append(r)
                    rhs.append(-lo[i, j])
        return np.array(rows).reshape(-1, n * d), np.array(rhs)

    def to_dict(self):
        def enc(a):
            return [[x if np.isfinite(x) else ("inf" if x > 0 else "-inf") for x in row]
                    for row in a.tolist()]
        return {"lower": enc(self.lower), "upper": enc(self.upper)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["lower"], dtype=float), np.array(d["upper"], dtype=float))


def as_schedule(bounds, n):
    """Accept ``None``, a ``(lower, upper)`` pair or a :class:`BoxSchedule`."""
    if bounds is None:
        return BoxSchedule.unbounded(n)
    if isinstance(bounds, BoxSchedule):
        sched = bounds
    else:
        lo, hi = bounds
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
        sched = BoxSchedule.constant(lo, hi)
    if sched.dim != n:
        raise DimensionError(f"bounds have dimension {sched.dim}, expected {n}")
    return sched


@dataclass
class DatasetManifest:
    dims: dict
    seed: int
    length: int
    amplitude: float
    w_amplitude: float
    x0: list
    extra: dict = field(default_factory=dict)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.__dict__, indent=2, sort_keys=True))

    @classmethod
    def from_json(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def signal_hash(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()


def state_before(sys, x_target, u, w):
    """The state from which ``u``/``w`` drive ``sys`` exactly to ``x_target``.

    Needs ``A`` invertible; used to place the end of a warm-up window on a
    prescribed state.
    """
    u = check_signal(u, "u", sys.n_u)
    w = check_signal(w, "w", sys.n_w, u.shape[0])
    x = check_vector(x_target, "x_target", sys.n_x)
    for i in reversed(range(u.shape[0])):
        x = np.linalg.solve(sys.A, x - sys.B @ u[i] - sys.E @ w[i])
    return x
