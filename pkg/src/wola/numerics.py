"""Dense vector primitives shared by the aggregators, attacks and objective code."""

from __future__ import annotations

import numpy as np

WEISZFELD_EPS = 1e-12


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its budget.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("vector has non-finite entries")
    return arr


def as_batch(rows) -> np.ndarray:
    """Stack ``rows`` into a finite ``(count, dim)`` float64 matrix."""
    if isinstance(rows, np.ndarray):
        arr = np.asarray(rows, dtype=np.float64)
    else:
        rows = list(rows)
        if not rows:
            raise InvalidInputError("batch must hold at least one row")
        dims = {np.asarray(r).shape for r in rows}
        if len(dims) != 1:
            raise InvalidInputError(f"rows have mismatched shapes: {sorted(dims)}")
        arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError(f"expected a (count, dim) batch, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("batch has non-finite entries")
    return arr


def l2_norm(v) -> float:
    v = as_vector(v)
    return float(np.sqrt(np.dot(v, v)))


def pairwise_sq_distances(rows) -> np.ndarray:
    """Squared Euclidean distance matrix.

    Differences are formed explicitly rather than through the Gram-matrix
    identity, so the diagonal is exactly zero and the result is exactly
    symmetric.
    """
    b = as_batch(rows)
    diff = b[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def coordinate_median(rows) -> np.ndarray:
    # np.median averages the two middle order statistics for even counts.
    return np.median(as_batch(rows), axis=0)


def geometric_median_objective(x, rows) -> float:
    b = as_batch(rows)
    return float(np.linalg.norm(b - np.asarray(x, dtype=np.float64), axis=1).sum())


def _optimal_row(b: np.ndarray) -> int | None:
    """Index of an input row that is the geometric median, if one is.

    Row ``k`` minimizes the objective iff the summed unit vectors pointing
    from it to the distinct rows have norm at most its multiplicity. The
    iteration approaches such a point very slowly, so it is checked directly.
    If several distinct rows pass, the minimizer is not unique and ``None``
    is returned so the (order-independent) iteration decides.
    """
    d = np.sqrt(pairwise_sq_distances(b))
    found = None
    for k in range(b.shape[0]):
        same = d[k] == 0
        if found is not None and same[found]:
            continue
        others = ~same
        if not others.any():
            return k
        pull = ((b[others] - b[k]) / d[k, others, None]).sum(axis=0)
        mult = same.sum()
        if np.linalg.norm(pull) <= mult * (1 + 1e-12):
            if found is not None:
                return None
            found = k
    return found


def weiszfeld_geometric_median(
    rows,
    tol: float = 1e-9,
    max_iter: int = 1000,
    callback=None,
) -> np.ndarray:
    """Geometric median by the smoothed Weiszfeld iteration.

    Starts from the coordinate-wise mean; the distance in each weight is
    offset by ``WEISZFELD_EPS`` so an iterate landing on an input row still
    moves. Every iterate is a convex combination of the rows. When an input
    row already satisfies the optimality condition it is returned as is.

    Args:
        rows: ``(count, dim)`` batch.
        tol: stop once an update moves the iterate less than this in l2.
        max_iter: iteration budget.
        callback: optional ``callback(iterate)`` invoked after every update.

    Raises:
        ConvergenceError: the budget ran out before the step fell below ``tol``.
    """
    if tol <= 0 or max_iter < 1:
        raise InvalidInputError("tol must be positive and max_iter at least 1")
    b = as_batch(rows)
    x = b.mean(axis=0)
    if b.shape[0] == 1:
        return x
    k = _optimal_row(b)
    if k is not None:
        return b[k].copy()
    for _ in range(max_iter):
        dist = np.linalg.norm(b - x, axis=1)
        w = 1.0 / (dist + WEISZFELD_EPS)
        w /= w.sum()
        x_new = w @ b
        if callback is not None:
            callback(x_new)
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if step < tol:
            return x
    raise ConvergenceError(
        f"Weiszfeld did not reach tol={tol} within {max_iter} iterations", x
    )
