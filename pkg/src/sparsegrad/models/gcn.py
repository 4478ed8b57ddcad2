"""Graph-convolution harness with a learnable sparse adjacency.

The adjacency matrix is itself a trained parameter.  In "ds" mode it is
emitted by a row/column-thresholded parameterization (exact zeros), then
pushed through a fixed-depth balanced normalization; "dense" drops the
threshold (no entry can reach zero); "raw" is a free non-negative matrix
meant for proximal training; "fixed" freezes a given matrix and trains
only the feature weights.

Node features are history windows of a per-node series.  The network is
an input head applied per node, a stack of graph-convolution blocks that
all share the one normalized adjacency, a concatenation of every block's
output, and an output head producing one scalar per node.

``relationship_score`` measures how much of each row's and column's mass
falls within k hops of the true graph; a learned adjacency whose support
lies inside the k-hop mask scores exactly 1.0.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..normalization import (AdjacencyParam, balanced_normalize,
                             sparse_adjacency, unrolled_normalize,
                             zero_line_count)
from ..tensor import Tensor

__all__ = ["GcnModel", "relationship_score"]

MODES = ("ds", "dense", "raw", "fixed")


def relationship_score(a, geodesic: np.ndarray, k: int) -> float:
    """Mean in-mask mass fraction over all rows and columns of ``a``.

    For each line (row or column) with nonzero sum, the score contribution
    is (mass on entries within k hops) / (total mass); all-zero lines
    contribute 0.  Entries outside the mask are zeroed with ``np.where``,
    so a line fully inside the mask contributes exactly 1.0.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("relationship_score requires a square matrix")
    if np.any(a < 0.0):
        raise ValueError("relationship_score requires a non-negative matrix")
    if geodesic.shape != a.shape:
        raise ValueError("geodesic matrix shape does not match")
    mask = geodesic <= k
    n = a.shape[0]
    total = 0.0
    for lines, m in ((a, mask), (a.T, mask.T)):
        for i in range(n):
            full = lines[i].sum()
            if full == 0.0:
                continue
            total += np.where(m[i], lines[i], 0.0).sum() / full
    return total / (2 * n)


def _he(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


class GcnModel:
    """Windowed node regressor whose adjacency is a trainable parameter."""

    def __init__(self, mode: str, grad_mode: str, n_nodes: int, history: int,
                 hidden: int, n_blocks: int, adjacency, head_in, blocks,
                 head_out):
        if mode not in MODES:
            raise ValueError(f"unknown adjacency mode {mode!r}")
        self.mode = mode
        self.grad_mode = grad_mode
        self.n_nodes = n_nodes
        self.history = history
        self.hidden = hidden
        self.n_blocks = n_blocks
        # adjacency is an AdjacencyParam (ds), a Tensor (dense: log-values,
        # raw: the non-negative matrix itself) or an ndarray (fixed: final
        # normalized values, zeros structurally absent).
        self.adjacency = adjacency
        self.head_in = head_in
        self.blocks = blocks
        self.head_out = head_out
        if mode == "fixed":
            dense = np.asarray(adjacency, dtype=np.float64)
            if dense.shape != (n_nodes, n_nodes):
                raise ValueError("fixed adjacency shape does not match n_nodes")
            self.adjacency = dense
            self._edge_index = [np.flatnonzero(dense[i] != 0.0)
                                for i in range(n_nodes)]
            self._edge_value = [dense[i][self._edge_index[i]]
                                for i in range(n_nodes)]

    @classmethod
    def create(cls, mode: str = "ds", grad_mode: str = "exact",
               n_nodes: int = 30, history: int = 8, hidden: int = 16,
               n_blocks: int = 5, seed: int = 0,
               fixed_adjacency=None) -> "GcnModel":
        rng = np.random.default_rng(seed)
        if mode == "ds":
            adjacency = AdjacencyParam.init_uniform(n_nodes, grad_mode=grad_mode)
        elif mode == "dense":
            adjacency = Tensor(np.zeros((n_nodes, n_nodes)))
        elif mode == "raw":
            adjacency = Tensor(np.ones((n_nodes, n_nodes)))
        elif mode == "fixed":
            if fixed_adjacency is None:
                raise ValueError("fixed mode requires an adjacency matrix")
            adjacency = balanced_normalize(np.asarray(fixed_adjacency,
                                                      dtype=np.float64)).values.data
        else:
            raise ValueError(f"unknown adjacency mode {mode!r}")
        widths = [history, hidden, hidden, hidden]
        head_in = [(Tensor(_he(rng, widths[i], widths[i + 1])),
                    Tensor(np.zeros(widths[i + 1]))) for i in range(3)]
        blocks = [(Tensor(_he(rng, hidden, hidden)), Tensor(np.zeros(hidden)))
                  for _ in range(n_blocks)]
        out_widths = [n_blocks * hidden, hidden, hidden, 1]
        head_out = [(Tensor(_he(rng, out_widths[i], out_widths[i + 1])),
                     Tensor(np.zeros(out_widths[i + 1]))) for i in range(3)]
        return cls(mode, grad_mode, n_nodes, history, hidden, n_blocks,
                   adjacency, head_in, blocks, head_out)

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.mode == "ds":
            out["adj_alpha"] = self.adjacency.alpha
            out["adj_beta_row"] = self.adjacency.beta_row
            out["adj_beta_col"] = self.adjacency.beta_col
        elif self.mode == "dense":
            out["adj_alpha"] = self.adjacency
        elif self.mode == "raw":
            out["adj_w"] = self.adjacency
        for i, (w, b) in enumerate(self.head_in):
            out[f"w_in{i}"], out[f"b_in{i}"] = w, b
        for i, (w, b) in enumerate(self.blocks):
            out[f"w_blk{i}"], out[f"b_blk{i}"] = w, b
        for i, (w, b) in enumerate(self.head_out):
            out[f"w_out{i}"], out[f"b_out{i}"] = w, b
        return out

    def set_params(self, new: dict[str, Tensor]) -> None:
        if self.mode == "ds":
            self.adjacency = self.adjacency.with_params(
                new["adj_alpha"], new["adj_beta_row"], new["adj_beta_col"])
        elif self.mode == "dense":
            self.adjacency = new["adj_alpha"]
        elif self.mode == "raw":
            self.adjacency = new["adj_w"]
        self.head_in = [(new[f"w_in{i}"], new[f"b_in{i}"]) for i in range(3)]
        self.blocks = [(new[f"w_blk{i}"], new[f"b_blk{i}"])
                       for i in range(self.n_blocks)]
        self.head_out = [(new[f"w_out{i}"], new[f"b_out{i}"]) for i in range(3)]

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def set_buffers(self, new: dict[str, np.ndarray]) -> None:
        pass

    def prox_targets(self) -> list[str]:
        return ["adj_w"] if self.mode == "raw" else []

    # -- adjacency views ----------------------------------------------------

    def emitted_adjacency(self) -> Tensor | None:
        """Pre-normalization non-negative matrix (None in fixed mode)."""
        if self.mode == "ds":
            return sparse_adjacency(self.adjacency).values
        if self.mode == "dense":
            return T.exp(self.adjacency)
        if self.mode == "raw":
            return self.adjacency
        return None

    def normalized_adjacency(self) -> Tensor:
        """Training-time adjacency: emitted matrix, balanced-normalized."""
        if self.mode == "fixed":
            return T.constant(self.adjacency)
        return unrolled_normalize(self.emitted_adjacency(), "balanced")

    def eval_adjacency(self) -> np.ndarray:
        """Plain-array snapshot of the normalized adjacency."""
        return np.array(self.normalized_adjacency().data)

    def regularizer_lines(self, a_norm: Tensor | None = None) -> list[Tensor]:
        """Rows then columns of the normalized adjacency, as 1d tensors.

        Every entry belongs to one row group and one column group, which is
        what an overlapping-group penalty on the adjacency needs.  The lines
        come from the normalized matrix: the normalizer is scale invariant,
        so penalizing pre-normalization entries would admit a uniform-shrink
        direction that zeroes the matrix without moving the data loss.  Pass
        the ``a_norm`` returned by :meth:`forward` to reuse its graph.
        """
        if self.mode == "fixed":
            return []
        if a_norm is None:
            a_norm = self.normalized_adjacency()
        n = self.n_nodes
        flat = T.reshape(a_norm, (n * n,))
        rows = [T.take(flat, np.arange(i * n, (i + 1) * n)) for i in range(n)]
        cols = [T.take(flat, np.arange(j, n * n, n)) for j in range(n)]
        return rows + cols

    # -- forward / predict ----------------------------------------------------

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Training forward: (predictions (B, N), normalized adjacency)."""
        h = x
        for w, b in self.head_in:
            h = T.relu(T.bias_add(h @ w, b))
        a_norm = self.normalized_adjacency()
        outs = []
        for w, b in self.blocks:
            h = T.relu(T.bias_add(a_norm @ (h @ w), b))
            outs.append(h)
        h = T.concat(outs, axis=2)
        for i, (w, b) in enumerate(self.head_out):
            h = T.bias_add(h @ w, b)
            if i < 2:
                h = T.relu(h)
        batch = x.shape[0]
        return T.reshape(h, (batch, self.n_nodes)), a_norm

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluation forward in plain numpy, gathering only live edges."""
        x = np.asarray(x, dtype=np.float64)
        if self.mode == "fixed":
            edge_index, edge_value = self._edge_index, self._edge_value
        else:
            a = self.eval_adjacency()
            edge_index = [np.flatnonzero(a[i] != 0.0)
                          for i in range(self.n_nodes)]
            edge_value = [a[i][edge_index[i]] for i in range(self.n_nodes)]
        h = x
        for w, b in self.head_in:
            h = np.maximum(h @ w.data + b.data, 0.0)
        outs = []
        for w, b in self.blocks:
            hw = h @ w.data
            agg = np.zeros_like(hw)
            for i in range(self.n_nodes):
                idx = edge_index[i]
                if idx.size:
                    agg[:, i, :] = np.einsum("k,bkf->bf", edge_value[i],
                                             hw[:, idx, :])
            h = np.maximum(agg + b.data, 0.0)
            outs.append(h)
        h = np.concatenate(outs, axis=2)
        for i, (w, b) in enumerate(self.head_out):
            h = h @ w.data + b.data
            if i < 2:
                h = np.maximum(h, 0.0)
        return h.reshape(x.shape[0], self.n_nodes)

    # -- structure ------------------------------------------------------------

    def sparsity(self) -> tuple[int, int]:
        """(exact zeros, total entries) of the emitted adjacency."""
        if self.mode == "fixed":
            data = self.adjacency
        else:
            data = self.emitted_adjacency().data
        return int(np.sum(data == 0.0)), int(data.size)

    def degenerate_group_count(self) -> int:
        """All-zero rows plus all-zero columns of the emitted adjacency."""
        if self.mode == "fixed":
            return zero_line_count(self.adjacency)
        return zero_line_count(self.emitted_adjacency())

    def prune_dead(self) -> "GcnModel":
        """Bake the normalized adjacency and drop its zero entries.

        The pruned model stores the surviving edges explicitly; its
        predictions match the source model's bit for bit because both
        gather exactly the same index/value pairs.
        """
        return GcnModel("fixed", self.grad_mode, self.n_nodes, self.history,
                        self.hidden, self.n_blocks, self.eval_adjacency(),
                        list(self.head_in), list(self.blocks),
                        list(self.head_out))
