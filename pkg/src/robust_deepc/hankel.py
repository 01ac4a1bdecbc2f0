"""Block-Hankel data matrices and the behavioural (fundamental lemma) checks."""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from ._validation import (RANK_RTOL, DimensionError, check_positive_int, check_signal,
                          numerical_rank, readonly)
from .lti import signal_hash, simulate

# Max-norm residual below which a trajectory counts as lying in the data span.
MEMBERSHIP_TOL = 1e-8

INIT_PRED_LABELS = ("u_init", "w_init", "y_init", "u_pred", "w_pred", "y_pred")
STATE_LABELS = ("u", "w", "x_first", "x_rest")


@dataclass(frozen=True)
class HankelMatrix:
    """Depth-``L`` block-Hankel matrix of a signal ``s_0 .. s_T``.

    Block ``(i, j)`` holds sample ``s_{i+j}``; column ``j`` is the window of
    ``L`` samples starting at ``j``. ``qr`` optionally carries a complete QR
    factorisation ``(Q, R)`` of ``data.T``, kept current by
    :func:`hankel_column_update`.
    """

    data: np.ndarray
    depth: int
    block_size: int
    signal: np.ndarray
    qr: tuple = None

    @property
    def n_columns(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def row_block(self, i, j=None):
        """Row blocks ``i`` (to ``j`` exclusive when given), zero-based."""
        j = i + 1 if j is None else j
        return self.data[i * self.block_size:j * self.block_size]

    def with_qr(self):
        Q, R = scipy.linalg.qr(self.data.T, mode="full")
        return HankelMatrix(self.data, self.depth, self.block_size, self.signal,
                            (readonly(Q), readonly(R)))

    def to_csv(self, path, source=None):
        """Write the matrix as CSV plus a ``.json`` sidecar with depth, block size
        and the SHA-256 of the source samples."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.data:
                writer.writerow([repr(float(v)) for v in row])
        meta = {"depth": self.depth, "block_size": self.block_size,
                "n_columns": self.n_columns, "n_samples": int(self.signal.shape[0]),
                "source_sha256": signal_hash(self.signal)}
        if source is not None:
            meta["source"] = str(source)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path


def build_hankel(signal, depth):
    """Depth-``depth`` Hankel matrix of ``signal`` (shape ``(T, n_s)``)."""
    s = check_signal(signal, "signal")
    depth = check_positive_int(depth, "depth")
    n_samples, n_s = s.shape
    if depth > n_samples:
        raise ValueError(f"depth {depth} exceeds the {n_samples} available samples")
    n_c = n_samples - depth + 1
    data = np.lib.stride_tricks.sliding_window_view(s, depth, axis=0)  # (n_c, n_s, depth)
    data = data.transpose(2, 1, 0).reshape(depth * n_s, n_c)
    return HankelMatrix(readonly(data), depth, n_s, readonly(s))


def is_persistently_exciting(signal, order, rtol=RANK_RTOL):
    s = check_signal(signal, "signal")
    if order > s.shape[0]:
        return False
    H = build_hankel(s, order)
    return numerical_rank(H.data, rtol) == H.data.shape[0]


def split_init_pred(h, t_init, n_h, name="s"):
    """Split ``h`` into its first ``t_init`` and remaining ``n_h`` row blocks."""
    if t_init + n_h != h.depth:
        raise ValueError(f"t_init + n_h = {t_init + n_h} differs from depth {h.depth}")
    return StackedHankel([(f"{name}_init", h.row_block(0, t_init)),
                          (f"{name}_pred", h.row_block(t_init, h.depth))],
                         t_init=t_init, n_h=n_h)


class StackedHankel:
    """Ordered, labelled row blocks sharing one column count."""

    def __init__(self, blocks, t_init=None, n_h=None):
        blocks = [(label, readonly(np.atleast_2d(M))) for label, M in blocks]
        widths = {M.shape[1] for _, M in blocks}
        if len(widths) > 1:
            raise DimensionError(f"blocks have different column counts {sorted(widths)}")
        self._blocks = dict(blocks)
        self.labels = tuple(label for label, _ in blocks)
        self.t_init = t_init
        self.n_h = n_h
        if t_init is not None and n_h is not None:
            self.depth = t_init + n_h

    @classmethod
    def init_pred(cls, u, y, t_init, n_h, w=None):
        """Init/pred split of ``[H(u); H(w); H(y)]`` (``w`` optional), depth ``t_init + n_h``."""
        L = t_init + n_h
        parts = [("u", u), ("w", w), ("y", y)]
        blocks = []
        for stage in ("init", "pred"):
            for name, sig in parts:
                if sig is None:
                    continue
                h = build_hankel(sig, L)
                sl = (0, t_init) if stage == "init" else (t_init, L)
                blocks.append((f"{name}_{stage}", h.row_block(*sl)))
        return cls(blocks, t_init=t_init, n_h=n_h)

    @classmethod
    def state_stack(cls, u, w, x, depth):
        """``[H_L(u); H_L(w); H_{L+1,1}(x); H_{L+1,2:L+1}(x)]``.

        ``x`` carries one more sample than ``u``/``w``; the depth-``L+1`` state
        Hankel then has the same column count as the depth-``L`` input ones.
        """
        u = check_signal(u, "u")
        w = check_signal(w, "w", length=u.shape[0])
        x = check_signal(x, "x")
        if x.shape[0] < u.shape[0] + 1:
            raise DimensionError("x needs one more sample than u")
        x = x[:u.shape[0] + 1]
        Hu, Hw, Hx = build_hankel(u, depth), build_hankel(w, depth), build_hankel(x, depth + 1)
        return cls([("u", Hu.data), ("w", Hw.data), ("x_first", Hx.row_block(0)),
                    ("x_rest", Hx.row_block(1, depth + 1))], t_init=None, n_h=None)

    def __getitem__(self, label):
        return self._blocks[label]

    def __contains__(self, label):
        return label in self._blocks

    @property
    def n_columns(self):
        return next(iter(self._blocks.values())).shape[1]

    def matrix(self, labels=None):
        labels = self.labels if labels is None else labels
        return np.vstack([self._blocks[k] for k in labels])

    def rows(self, label):
        return self._blocks[label].shape[0]


@dataclass
class SubspaceReport:
    claimed_dimension: int
    measured_rank: int
    max_residual: float
    verdict: bool
    causes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)


def trajectory_membership(stack, trajectory, labels=None):
    """Least-squares ``g`` with ``stack @ g = trajectory``; returns ``(g, residual)``.

    ``trajectory`` is a mapping ``label -> samples`` (or a stacked vector in
    ``labels`` order). The minimum-norm solution is returned and the residual
    is the max-norm mismatch.
    """
    labels = stack.labels if labels is None else labels
    M = stack.matrix(labels)
    if isinstance(trajectory, dict):
        target = np.concatenate([np.asarray(trajectory[k], dtype=float).ravel() for k in labels])
    else:
        target = np.asarray(trajectory, dtype=float).ravel()
    if target.size != M.shape[0]:
        raise DimensionError(f"trajectory has {target.size} entries, stack has {M.shape[0]} rows")
    g, *_ = np.linalg.lstsq(M, target, rcond=None)
    return g, float(np.max(np.abs(M @ g - target), initial=0.0))


def _excitation_causes(u, w, depth, n_x):
    causes = []
    order = depth + n_x
    if not is_persistently_exciting(u, order):
        causes.append(f"u is not persistently exciting of order {order}")
    if w is not None and not is_persistently_exciting(w, order):
        causes.append(f"w is not persistently exciting of order {order}")
    return causes


def verify_fundamental_lemma(sys, dataset, depth, mode="uncertain", output="y",
                             n_samples=20, seed=0, tol=MEMBERSHIP_TOL):
    """Check that the data Hankel spans every ``depth``-step trajectory.

    ``mode`` is ``"uncertain"`` (stack ``u, w`` and outputs) or
    ``"deterministic"`` (stack ``u`` and outputs only); ``output`` selects
    ``y`` or the state ``x`` as the recorded output. The claimed dimension is
    ``n_x + depth * (n_u + n_w)`` (``n_w`` dropped in deterministic mode).
    """
    if mode not in ("uncertain", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    if output not in ("y", "x"):
        raise ValueError(f"unknown output {output!r}")
    uncertain = mode == "uncertain"
    claimed = sys.n_x + depth * (sys.n_u + (sys.n_w if uncertain else 0))
    T = len(dataset)
    causes = []
    if T < depth:
        return SubspaceReport(claimed, 0, float("inf"), False,
                              [f"dataset of {T} samples is shorter than depth {depth}"])
    out_sig = dataset.y if output == "y" else dataset.x[:T]
    blocks = [("u", build_hankel(dataset.u, depth).data)]
    if uncertain:
        blocks.append(("w", build_hankel(dataset.w, depth).data))
    blocks.append((output, build_hankel(out_sig, depth).data))
    stack = StackedHankel(blocks)
    M = stack.matrix()
    rank = numerical_rank(M)
    causes += _excitation_causes(dataset.u, dataset.w if uncertain else None, depth, sys.n_x)
    if stack.n_columns < claimed:
        causes.append(f"{stack.n_columns} columns cannot span dimension {claimed}")

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        x0 = rng.standard_normal(sys.n_x)
        u = rng.standard_normal((depth, sys.n_u))
        w = rng.standard_normal((depth, sys.n_w)) if uncertain else np.zeros((depth, sys.n_w))
        tr = simulate(sys, x0, u, w)
        target = {"u": tr.u, "w": tr.w, output: tr.y if output == "y" else tr.x[:depth]}
        _, res = trajectory_membership(stack, target)
        worst = max(worst, res)
    if rank != claimed:
        causes.append(f"rank {rank} differs from claimed dimension {claimed}")
    if worst > tol:
        causes.append(f"membership residual {worst:.3e} exceeds {tol:.1e}")
    return SubspaceReport(claimed, rank, worst, not causes, causes,
                          {"mode": mode, "output": output, "depth": depth,
                           "n_columns": stack.n_columns, "n_samples": n_samples, "seed": seed})


def hankel_column_update(h, sample):
    """Slide the window one step: drop the oldest column, append the newest.

    When ``h`` carries QR factors of ``data.T`` they are updated by a row
    deletion followed by a row insertion (Givens updates, linear in the matrix
    size) instead of refactorising.
    """
    sample = np.asarray(sample, dtype=float).reshape(-1)
    if sample.size != h.block_size:
        raise DimensionError(f"sample has size {sample.size}, expected {h.block_size}")
    signal = np.vstack([h.signal[1:], sample[None, :]])
    new_col = signal[-h.depth:].reshape(-1)
    data = np.column_stack([h.data[:, 1:], new_col])
    qr = None
    if h.qr is not None:
        Q, R = h.qr
        Q, R = scipy.linalg.qr_delete(Q, R, 0, 1, which="row", overwrite_qr=False)
        Q, R = scipy.linalg.qr_insert(Q, R, new_col, Q.shape[0], which="row",
                                      overwrite_qru=False)
        qr = (readonly(Q), readonly(R))
    return HankelMatrix(readonly(data), h.depth, h.block_size, readonly(signal), qr)
