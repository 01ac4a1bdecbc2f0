"""Receding-horizon execution against a simulated plant."""

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._validation import check_signal, check_vector
from .config import L1InputCost, QuadraticCost


@dataclass(frozen=True)
class StepRecord:
    t: int
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    w: np.ndarray
    status: str
    solve_time: float
    objective: float


def _fmt(v):
    v = float(v)
    return repr(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf") if np.isinf(v) else "nan"


@dataclass
class ClosedLoopLog:
    controller: str
    records: list = field(default_factory=list)
    warmup: dict = field(default_factory=dict)
    halted_at: int = None
    halt_status: str = None
    u_schedule: object = None
    y_schedule: object = None
    reference: object = None

    def __len__(self):
        return len(self.records)

    @property
    def completed(self):
        return self.halted_at is None

    def _stack(self, name):
        if not self.records:
            return np.zeros((0, 0))
        return np.array([getattr(r, name) for r in self.records])

    @property
    def t(self):
        return np.array([r.t for r in self.records], dtype=int)

    @property
    def u(self):
        return self._stack("u")

    @property
    def y(self):
        return self._stack("y")

    @property
    def w(self):
        return self._stack("w")

    @property
    def x(self):
        return self._stack("x")

    @property
    def solve_times(self):
        return np.array([r.solve_time for r in self.records])

    def bounds(self, schedule):
        lo, hi = zip(*(schedule.bounds(t) for t in self.t)) if len(self) else ((), ())
        return np.array(lo), np.array(hi)

    def violations(self, tol=0.0):
        """Per-step amount by which ``u``/``y`` leave their scheduled boxes."""
        out = {}
        for name, sched, vals in (("u", self.u_schedule, self.u), ("y", self.y_schedule, self.y)):
            if sched is None or not len(self):
                out[name] = np.zeros(len(self))
                continue
            lo, hi = self.bounds(sched)
            excess = np.maximum(vals - hi, lo - vals).max(axis=1)
            out[name] = np.maximum(excess, 0.0)
        out["flags"] = (out["u"] > tol) | (out["y"] > tol)
        return out

    def max_violation(self):
        v = self.violations()
        return float(max(v["u"].max(initial=0.0), v["y"].max(initial=0.0)))

    def references(self):
        if not isinstance(self.reference, QuadraticCost) or not len(self):
            return None
        n_y = self.y.shape[1]
        return np.array([self.reference.reference_at(t, n_y) for t in self.t])

    def to_csv(self, path):
        """Columns ``t, y.., ref.., max.., min.., u.., w.., status`` (deterministic, no timings)."""
        path = Path(path)
        n_y = self.y.shape[1] if len(self) else 0
        n_u = self.u.shape[1] if len(self) else 0
        n_w = self.w.shape[1] if len(self) else 0
        ref = self.references()
        lo, hi = self.bounds(self.y_schedule) if self.y_schedule is not None and len(self) else (
            np.full((len(self), n_y), -np.inf), np.full((len(self), n_y), np.inf))
        header = (["t"] + [f"y{i}" for i in range(n_y)] + [f"ref{i}" for i in range(n_y)]
                  + [f"max{i}" for i in range(n_y)] + [f"min{i}" for i in range(n_y)]
                  + [f"u{i}" for i in range(n_u)] + [f"w{i}" for i in range(n_w)] + ["status"])
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for k, r in enumerate(self.records):
                refs = [_fmt(v) for v in ref[k]] if ref is not None else [""] * n_y
                wr.writerow([r.t] + [_fmt(v) for v in r.y] + refs + [_fmt(v) for v in hi[k]]
                            + [_fmt(v) for v in lo[k]] + [_fmt(v) for v in r.u]
                            + [_fmt(v) for v in r.w] + [r.status])
        return path

    def total_cost(self):
        """Closed-loop cost of the applied trajectory under the configured stage cost."""
        cost = self.reference
        if not len(self) or cost is None:
            return 0.0
        if isinstance(cost, L1InputCost):
            return float(cost.weight * np.abs(self.u).sum())
        Q, R = cost.matrices(self.u.shape[1], self.y.shape[1])
        e = self.y - self.references()
        return float(np.einsum("ti,ij,tj->", e, Q, e) + np.einsum("ti,ij,tj->", self.u, R, self.u))

    def summary(self):
        v = self.violations()
        st = self.solve_times
        return {
            "controller": self.controller,
            "steps": len(self),
            "completed": self.completed,
            "halted_at": self.halted_at,
            "halt_status": self.halt_status,
            "max_input_violation": float(v["u"].max(initial=0.0)),
            "max_output_violation": float(v["y"].max(initial=0.0)),
            "violating_steps": int(v["flags"].sum()),
            "max_violation": float(max(v["u"].max(initial=0.0), v["y"].max(initial=0.0))),
            "input_l1_cost": float(np.abs(self.u).sum()) if len(self) else 0.0,
            "total_cost": self.total_cost(),
            "solve_time": {"mean": float(st.mean()) if st.size else 0.0,
                           "max": float(st.max()) if st.size else 0.0,
                           "total": float(st.sum())},
        }


def _step(sys, x, u, w):
    y = sys.C @ x + sys.D @ u + sys.F @ w
    return sys.A @ x + sys.B @ u + sys.E @ w, y


def run_closed_loop(controller, plant, disturbances, steps=None, x_start=None, warmup_u=None,
                    warmup_w=None, start_time=0, observer=None):
    """Run ``controller`` on ``plant`` for ``steps`` receding-horizon steps.

    The first ``t_init`` samples are a warm-up from ``x_start`` with inputs
    ``warmup_u`` (zeros by default) and disturbances ``warmup_w``, ending at
    absolute time ``start_time``. Each step applies the first nominal input,
    advances the plant with the realised disturbance and slides the past
    windows. An infeasible solve halts the run and is recorded in the log.
    ``observer(t, x, plan)``, when given, sees every plan before it is applied.
    """
    cfg = controller.config
    t_init = cfg.t_init
    n_u, n_w, n_y, n_x = plant.n_u, plant.n_w, plant.n_y, plant.n_x
    dist = check_signal(disturbances, "disturbances", n_w)
    steps = dist.shape[0] if steps is None else int(steps)
    if dist.shape[0] < steps:
        raise ValueError(f"{dist.shape[0]} disturbance samples for {steps} steps")
    x = np.zeros(n_x) if x_start is None else check_vector(x_start, "x_start", n_x)
    wu = np.zeros((t_init, n_u)) if warmup_u is None else check_signal(warmup_u, "warmup_u",
                                                                       n_u, t_init)
    ww = np.zeros((t_init, n_w)) if warmup_w is None else check_signal(warmup_w, "warmup_w",
                                                                       n_w, t_init)
    u_hist, w_hist, y_hist = [], [], []
    for k in range(t_init):
        x, y = _step(plant, x, wu[k], ww[k])
        u_hist.append(wu[k])
        w_hist.append(ww[k])
        y_hist.append(y)
    u_s, y_s, _ = cfg.schedules(n_u, n_y, n_w)
    log = ClosedLoopLog(getattr(controller, "name", type(controller).__name__),
                        warmup={"u": wu, "w": ww, "y": np.array(y_hist)},
                        u_schedule=u_s, y_schedule=y_s, reference=cfg.cost)
    for k in range(steps):
        t = start_time + k
        t0 = time.perf_counter()
        plan = controller.plan(np.array(u_hist[-t_init:]), np.array(w_hist[-t_init:]),
                               np.array(y_hist[-t_init:]), x.copy(), t)
        elapsed = time.perf_counter() - t0
        if observer is not None:
            observer(t, x.copy(), plan)
        if not plan.ok:
            log.halted_at, log.halt_status = t, plan.status
            break
        u = plan.first_input
        w = dist[k]
        x_next, y = _step(plant, x, u, w)
        log.records.append(StepRecord(t, x.copy(), u, y, w.copy(), plan.status, elapsed,
                                      plan.objective))
        x = x_next
        u_hist.append(u)
        w_hist.append(w)
        y_hist.append(y)
    return log
