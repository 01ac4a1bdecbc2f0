"""Input validation helpers shared by the estimators and the numerical kernels."""

import numbers

import numpy as np

# Singular values below RANK_RTOL * sigma_max count as zero.
RANK_RTOL = 1e-9


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with the declared dimensions."""


def check_matrix(M, name, shape=None, allow_none=False):
    """Return ``M`` as a finite 2-D float array, optionally checking its shape.

    ``shape`` entries may be ``None`` to leave that axis unchecked.
    """
    if M is None:
        if allow_none:
            return None
        raise DimensionError(f"{name} is required")
    M = np.array(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got {M.ndim}-D")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(M.shape, shape)):
            if want is not None and got != want:
                raise DimensionError(
                    f"{name} has shape {M.shape}, expected axis {axis} of size {want}")
    return M


def check_signal(s, name, n=None, length=None):
    """Coerce a signal to shape ``(T, n)``.

    A 1-D array is read as a scalar channel when ``n`` is 1 or unknown, and as a
    single sample when its size matches ``n`` and ``length == 1``.
    """
    s = np.array(s, dtype=float)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    elif s.ndim == 1:
        if n is not None and n > 1:
            if s.size % n:
                raise DimensionError(f"{name} of size {s.size} is not a multiple of {n}")
            s = s.reshape(-1, n)
        else:
            s = s.reshape(-1, 1)
    if s.ndim != 2:
        raise DimensionError(f"{name} must be a sequence of vectors")
    if n is not None and s.shape[1] != n:
        raise DimensionError(f"{name} samples have dimension {s.shape[1]}, expected {n}")
    if length is not None and s.shape[0] != length:
        raise DimensionError(f"{name} has {s.shape[0]} samples, expected {length}")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"{name} contains non-finite entries")
    return s


def check_vector(v, name, size=None):
    v = np.array(v, dtype=float).reshape(-1)
    if size is not None and v.size != size:
        raise DimensionError(f"{name} has size {v.size}, expected {size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def numerical_rank(M, rtol=RANK_RTOL):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def independent_rows(M, rtol=RANK_RTOL):
    """Indices of rows that are not (numerically) spanned by the rows before them.

    Scanning top to bottom keeps the first occurrence of every direction, so the
    row space of any kept prefix equals the row space of the matching prefix of
    ``M``.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(0, dtype=int)
    atol = rtol * np.linalg.norm(M, ord=2)
    basis = np.zeros((M.shape[1], 0))
    keep = []
    for k, row in enumerate(M):
        # classical Gram-Schmidt with one reorthogonalisation pass
        v = row - basis @ (basis.T @ row)
        v = v - basis @ (basis.T @ v)
        nv = np.linalg.norm(v)
        if nv > atol:
            keep.append(k)
            basis = np.column_stack([basis, v / nv])
    return np.asarray(keep, dtype=int)


def readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a
