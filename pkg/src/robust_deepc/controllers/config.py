"""Controller configuration: horizons, stage cost, constraint and disturbance schedules.

Configuration files are JSON or TOML with the keys::

    t_init   = 2                  # past window length
    horizon  = 8                  # prediction steps n_h
    seed     = 0                  # realisation seed (used by experiments)
    [weights]                     # quadratic cost; omit for cost = "l1"
    Q = 10.0                      # scalar, per-channel list or matrix
    R = 0.1
    [bounds]                      # constant boxes; null/"inf" entries are open
    u = [-5, 5]
    y = [-0.5, 0.5]
    w = [-0.1, 0.1]
    [reference]
    values = [[0.4], [-0.4]]      # cycled table, one row per slot
    hold   = 15                   # steps per slot
    [schedule]                    # optional time-varying boxes, overriding [bounds]
    y = {lower = [[...]], upper = [[...]]}
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._validation import check_positive_int
from ..lti import BoxSchedule, as_schedule

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _weight_matrix(value, n, name):
    W = np.asarray(value, dtype=float)
    if W.ndim == 0:
        W = W * np.eye(n)
    elif W.ndim == 1:
        W = np.diag(W)
    if W.shape != (n, n):
        raise ValueError(f"{name} must be scalar, length-{n} or {n}x{n}; got shape {W.shape}")
    if not np.allclose(W, W.T):
        raise ValueError(f"{name} must be symmetric")
    return W


@dataclass(frozen=True)
class QuadraticCost:
    """``sum_{i>=1} |y_i - r_{t+i}|_Q^2 + sum_{i>=0} |u_i|_R^2`` on the nominal prediction.

    ``reference`` is a table cycled over absolute time, each row held for
    ``hold`` steps; ``y_0`` is excluded because no input can change it when
    the output has no feedthrough.
    """

    Q: object = 1.0
    R: object = 1.0
    reference: object = 0.0
    hold: int = 1

    def matrices(self, n_u, n_y):
        Q = _weight_matrix(self.Q, n_y, "Q")
        R = _weight_matrix(self.R, n_u, "R")
        if np.min(np.linalg.eigvalsh(Q), initial=0.0) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(R)) <= 0.0:
            raise ValueError("R must be positive definite")
        return Q, R

    def reference_table(self, n_y):
        r = np.asarray(self.reference, dtype=float)
        if r.ndim == 0:
            r = np.full((1, n_y), float(r))
        elif r.ndim == 1:
            r = r.reshape(-1, 1) if n_y == 1 else r.reshape(1, n_y)
        if r.shape[1] != n_y:
            raise ValueError(f"reference rows have {r.shape[1]} entries, expected {n_y}")
        return r

    def reference_at(self, t, n_y):
        table = self.reference_table(n_y)
        return table[(int(t) // self.hold) % table.shape[0]]

    def reference_horizon(self, t0, n, n_y):
        return np.array([self.reference_at(t0 + i, n_y) for i in range(n)]).reshape(n, n_y)

    def to_dict(self):
        conv = lambda v: np.asarray(v, dtype=float).tolist()
        return {"kind": "quadratic", "Q": conv(self.Q), "R": conv(self.R),
                "reference": conv(self.reference), "hold": self.hold}


@dataclass(frozen=True)
class L1InputCost:
    """``weight * sum_i |u_i|_1`` on the nominal inputs."""

    weight: float = 1.0

    def to_dict(self):
        return {"kind": "l1", "weight": self.weight}


@dataclass(frozen=True)
class ControllerConfig:
    t_init: int
    n_h: int
    cost: object = field(default_factory=QuadraticCost)
    u_bounds: object = None
    y_bounds: object = None
    w_bounds: object = None
    regularization: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.t_init, "t_init")
        check_positive_int(self.n_h, "n_h")
        if not isinstance(self.cost, (QuadraticCost, L1InputCost)):
            raise TypeError("cost must be QuadraticCost or L1InputCost")
        if self.regularization < 0:
            raise ValueError("regularization must be nonnegative")

    @property
    def depth(self):
        return self.t_init + self.n_h

    def schedules(self, n_u, n_y, n_w):
        """``(u, y, w)`` :class:`BoxSchedule` objects with the right dimensions."""
        return (as_schedule(self.u_bounds, n_u), as_schedule(self.y_bounds, n_y),
                as_schedule(self.w_bounds, n_w) if self.w_bounds is not None
                else BoxSchedule.constant(np.zeros(n_w), np.zeros(n_w)))

    def replace(self, **changes):
        params = {k: getattr(self, k) for k in self.__dataclass_fields__}
        params.update(changes)
        return ControllerConfig(**params)

    def to_dict(self):
        def enc(b):
            if b is None:
                return None
            if isinstance(b, BoxSchedule):
                return b.to_dict()
            lo, hi = b
            return [np.asarray(lo, dtype=float).tolist(), np.asarray(hi, dtype=float).tolist()]
        return {"t_init": self.t_init, "horizon": self.n_h, "cost": self.cost.to_dict(),
                "bounds": {"u": enc(self.u_bounds), "y": enc(self.y_bounds),
                           "w": enc(self.w_bounds)},
                "regularization": self.regularization, "seed": self.seed}

    @classmethod
    def from_mapping(cls, d, base=None):
        """Build from a parsed file, filling missing keys from ``base``."""
        known = {"t_init", "horizon", "n_h", "seed", "weights", "cost", "bounds", "schedule",
                 "reference", "regularization"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        params = {} if base is None else {k: getattr(base, k) for k in cls.__dataclass_fields__}
        if "t_init" in d:
            params["t_init"] = int(d["t_init"])
        if "horizon" in d or "n_h" in d:
            params["n_h"] = int(d.get("horizon", d.get("n_h")))
        if "seed" in d:
            params["seed"] = int(d["seed"])
        if "regularization" in d:
            params["regularization"] = float(d["regularization"])

        cost = params.get("cost", QuadraticCost())
        kind = d.get("cost", {}).get("kind") if isinstance(d.get("cost"), dict) else d.get("cost")
        if kind == "l1":
            weight = d["cost"].get("weight", 1.0) if isinstance(d.get("cost"), dict) else 1.0
            cost = L1InputCost(float(weight))
        elif "weights" in d or "reference" in d or kind == "quadratic":
            prev = cost if isinstance(cost, QuadraticCost) else QuadraticCost()
            if isinstance(d.get("cost"), dict):  # the layout written by to_dict()
                c = d["cost"]
                prev = QuadraticCost(c.get("Q", prev.Q), c.get("R", prev.R),
                                     c.get("reference", prev.reference), int(c.get("hold", prev.hold)))
            w = d.get("weights", {})
            ref = d.get("reference", {})
            if not isinstance(ref, dict):
                ref = {"values": ref}
            cost = QuadraticCost(w.get("Q", prev.Q), w.get("R", prev.R),
                                 ref.get("values", prev.reference),
                                 int(ref.get("hold", prev.hold)))
        params["cost"] = cost

        for name, b in d.get("bounds", {}).items():
            if name not in ("u", "y", "w"):
                raise ValueError(f"unknown bound channel {name!r}")
            box = None if b is None else _parse_box(b)
            if box is not None and box[0].ndim == 2:  # a per-slot table, as to_dict() writes
                box = BoxSchedule(*box)
            params[f"{name}_bounds"] = box
        for name, s in d.get("schedule", {}).items():
            if name not in ("u", "y", "w"):
                raise ValueError(f"unknown schedule channel {name!r}")
            lo, hi = _floats(s["lower"]), _floats(s["upper"])
            params[f"{name}_bounds"] = BoxSchedule(np.where(np.isnan(lo), -np.inf, lo),
                                                   np.where(np.isnan(hi), np.inf, hi))
        if "t_init" not in params or "n_h" not in params:
            raise ValueError("configuration needs t_init and horizon")
        return cls(**params)

    @classmethod
    def from_file(cls, path, base=None):
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            d = tomllib.loads(text)
        else:
            d = json.loads(text)
        return cls.from_mapping(d, base)


def _floats(a):
    def conv(x):
        if x is None:
            return np.nan
        return float(x)
    return np.vectorize(conv, otypes=[float])(np.array(a, dtype=object))


def _parse_box(b):
    if isinstance(b, dict) and "lower" in b:
        lo, hi = np.atleast_1d(_floats(b["lower"])), np.atleast_1d(_floats(b["upper"]))
    else:
        lo, hi = b
        lo, hi = np.atleast_1d(_floats(lo)), np.atleast_1d(_floats(hi))
    lo = np.where(np.isnan(lo), -np.inf, lo)
    hi = np.where(np.isnan(hi), np.inf, hi)
    return lo, hi
