"""Learnable sparse adjacency and doubly-stochastic normalization.

An :class:`AdjacencyParam` emits a non-negative N x N matrix with exact
zeros: entry (i, j) survives only if gamma_ij = exp(alpha_ij) exceeds the
sum of its row threshold sigmoid(beta_row_i) * l1(row i) and column
threshold sigmoid(beta_col_j) * l1(col j).  Rows and columns are two
overlapping competition groups, so every entry answers to both.

Normalization comes in three forms:

* :func:`sinkhorn` - alternating row/column scaling to double
  stochasticity, strict preconditions, error on non-convergence;
* :func:`balanced_normalize` - symmetric scaling by inverse square roots,
  same stopping rule (its convergence is an empirical observation, not a
  theorem);
* :func:`unrolled_normalize` - a fixed 15-iteration differentiable unroll
  used inside training forwards; it tolerates all-zero rows/columns by
  leaving them untouched, because a thresholded matrix can legitimately
  lose lines mid-training.

A thresholded-then-normalized matrix is generally NOT doubly stochastic
once re-sparsified; only converged sinkhorn/balanced outputs of supported
matrices carry that guarantee.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "AdjacencyParam",
    "StochMatrix",
    "NonConvergenceError",
    "sparse_adjacency",
    "sinkhorn",
    "balanced_normalize",
    "partial_normalize",
    "unrolled_normalize",
    "zero_line_count",
]

TRAIN_UNROLL = 15


class NonConvergenceError(RuntimeError):
    """Normalization failed to reach tolerance; carries the final deviation."""

    def __init__(self, scheme: str, deviation: float, iters: int):
        super().__init__(
            f"{scheme} did not converge in {iters} iterations "
            f"(deviation {deviation:.3e})"
        )
        self.deviation = float(deviation)
        self.iters = int(iters)


class AdjacencyParam:
    """N x N free matrix plus per-row and per-column threshold parameters."""

    def __init__(self, alpha, beta_row, beta_col, grad_mode: str = "exact"):
        alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
        beta_row = beta_row if isinstance(beta_row, Tensor) else Tensor(beta_row)
        beta_col = beta_col if isinstance(beta_col, Tensor) else Tensor(beta_col)
        if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1]:
            raise ValueError("alpha must be square")
        n = alpha.shape[0]
        if beta_row.shape != (n,) or beta_col.shape != (n,):
            raise ValueError("beta vectors must have one entry per row/column")
        if grad_mode not in ("exact", "rectified"):
            raise ValueError(f"unknown grad mode {grad_mode!r}")
        self.alpha = alpha
        self.beta_row = beta_row
        self.beta_col = beta_col
        self.grad_mode = grad_mode

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @classmethod
    def init_uniform(cls, n: int, beta0: float = -6.0,
                     grad_mode: str = "exact") -> "AdjacencyParam":
        """All-ones gamma with thresholds low enough that no entry starts dead.

        With alpha = 0 each row/column l1 norm is n, so the per-entry
        threshold is 2 n sigmoid(beta0); beta0 = -6 keeps that at about
        0.15 n / n, well under the entry value 1.
        """
        return cls(np.zeros((n, n)), np.full(n, beta0), np.full(n, beta0),
                   grad_mode=grad_mode)

    def with_params(self, alpha: Tensor, beta_row: Tensor,
                    beta_col: Tensor) -> "AdjacencyParam":
        return AdjacencyParam(alpha, beta_row, beta_col, self.grad_mode)


class StochMatrix:
    """Non-negative square matrix with row/column normalization flags."""

    def __init__(self, values: Tensor, row_normalized: bool = False,
                 col_normalized: bool = False):
        values = values if isinstance(values, Tensor) else Tensor(values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("StochMatrix requires a square matrix")
        if np.any(values.data < 0.0):
            raise ValueError("StochMatrix requires non-negative entries")
        self.values = values
        self.row_normalized = bool(row_normalized)
        self.col_normalized = bool(col_normalized)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def max_deviation(self) -> float:
        """Worst |sum - 1| over flagged lines, ignoring all-zero lines."""
        data = self.values.data
        worst = 0.0
        if self.row_normalized:
            sums = data.sum(axis=1)
            live = sums != 0.0
            if np.any(live):
                worst = max(worst, float(np.max(np.abs(sums[live] - 1.0))))
        if self.col_normalized:
            sums = data.sum(axis=0)
            live = sums != 0.0
            if np.any(live):
                worst = max(worst, float(np.max(np.abs(sums[live] - 1.0))))
        return worst


def _thresh_relu(x: Tensor, grad_mode: str) -> Tensor:
    return T.relu(x) if grad_mode == "exact" else T.rgf_relu(x)


def sparse_adjacency(param: AdjacencyParam) -> StochMatrix:
    """Emit the thresholded non-negative matrix gamma-tilde (exact zeros).

    gamma_tilde_ij = relu(gamma_ij - sigmoid(beta_row_i) * l1(row_i)
                                   - sigmoid(beta_col_j) * l1(col_j)).
    """
    gamma = T.exp(param.alpha)
    row_l1 = T.tsum(gamma, axis=1)
    col_l1 = T.tsum(gamma, axis=0)
    t_row = T.sigmoid(param.beta_row) * row_l1
    t_col = T.sigmoid(param.beta_col) * col_l1
    minus_rows = T.transpose(T.bias_add(T.transpose(gamma), T.neg(t_row)))
    shifted = T.bias_add(minus_rows, T.neg(t_col))
    return StochMatrix(_thresh_relu(shifted, param.grad_mode))


def _as_values(m) -> Tensor:
    if isinstance(m, StochMatrix):
        return m.values
    return m if isinstance(m, Tensor) else Tensor(m)


def _require_support(data: np.ndarray, scheme: str) -> None:
    if np.any(data < 0.0):
        raise ValueError(f"{scheme} requires a non-negative matrix")
    if np.any(data.sum(axis=1) <= 0.0) or np.any(data.sum(axis=0) <= 0.0):
        raise ValueError("sinkhorn requires total support")


def _deviation(data: np.ndarray) -> float:
    return max(float(np.max(np.abs(data.sum(axis=1) - 1.0))),
               float(np.max(np.abs(data.sum(axis=0) - 1.0))))


def _div_rows(m: Tensor, denom: Tensor) -> Tensor:
    return T.transpose(T.mul_vec_last(T.transpose(m), 1.0 / denom))


def _div_cols(m: Tensor, denom: Tensor) -> Tensor:
    return T.mul_vec_last(m, 1.0 / denom)


def sinkhorn(m, tol: float = 1e-8, max_iters: int = 1000) -> StochMatrix:
    """Alternate row and column normalization until doubly stochastic.

    Each iteration is recorded on the tape, so gradients flow through the
    whole unrolled computation.
    """
    values = _as_values(m)
    _require_support(values.data, "sinkhorn")
    for _ in range(max_iters):
        values = _div_rows(values, T.tsum(values, axis=1))
        values = _div_cols(values, T.tsum(values, axis=0))
        if _deviation(values.data) < tol:
            return StochMatrix(values, row_normalized=True, col_normalized=True)
    raise NonConvergenceError("sinkhorn", _deviation(values.data), max_iters)


def balanced_normalize(m, tol: float = 1e-8, max_iters: int = 1000) -> StochMatrix:
    """Symmetric scaling by inverse square roots of row and column sums."""
    values = _as_values(m)
    _require_support(values.data, "balanced normalization")
    for _ in range(max_iters):
        inv_r = 1.0 / T.sqrt(T.tsum(values, axis=1))
        values = T.transpose(T.mul_vec_last(T.transpose(values), inv_r))
        inv_c = 1.0 / T.sqrt(T.tsum(values, axis=0))
        values = T.mul_vec_last(values, inv_c)
        if _deviation(values.data) < tol:
            return StochMatrix(values, row_normalized=True, col_normalized=True)
    raise NonConvergenceError("balanced normalization",
                              _deviation(values.data), max_iters)


def partial_normalize(m) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized and column-normalized copies (evaluation side).

    All-zero rows/columns stay all-zero by convention.  Operates on plain
    arrays; no gradient flows through scores computed from these.
    """
    data = np.array(_as_values(m).data, dtype=np.float64)
    if np.any(data < 0.0):
        raise ValueError("partial_normalize requires a non-negative matrix")
    row_sums = data.sum(axis=1)
    col_sums = data.sum(axis=0)
    a_r = data / np.where(row_sums == 0.0, 1.0, row_sums)[:, None]
    a_c = data / np.where(col_sums == 0.0, 1.0, col_sums)[None, :]
    return a_r, a_c


def unrolled_normalize(m, scheme: str = "balanced",
                       iters: int = TRAIN_UNROLL) -> Tensor:
    """Fixed-depth differentiable normalization used in training forwards.

    All-zero rows/columns are excluded: their sums are replaced by 1 before
    dividing, which leaves the zero line exactly zero.  The replacement
    mask is data-dependent but locally constant, so the recorded gradient
    is the true gradient almost everywhere.
    """
    if scheme not in ("balanced", "sinkhorn"):
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    values = _as_values(m)
    if np.any(values.data < 0.0):
        raise ValueError("unrolled_normalize requires a non-negative matrix")
    for _ in range(iters):
        rows = T.tsum(values, axis=1)
        rows_safe = rows + T.constant((rows.data == 0.0).astype(np.float64))
        if scheme == "sinkhorn":
            values = _div_rows(values, rows_safe)
            cols = T.tsum(values, axis=0)
            cols_safe = cols + T.constant((cols.data == 0.0).astype(np.float64))
            values = _div_cols(values, cols_safe)
        else:
            values = _div_rows(values, T.sqrt(rows_safe))
            cols = T.tsum(values, axis=0)
            cols_safe = cols + T.constant((cols.data == 0.0).astype(np.float64))
            values = _div_cols(values, T.sqrt(cols_safe))
    return values


def zero_line_count(m) -> int:
    """Number of all-zero rows plus all-zero columns (degeneracy metric)."""
    data = _as_values(m).data
    return int(np.sum(data.sum(axis=1) == 0.0) + np.sum(data.sum(axis=0) == 0.0))
