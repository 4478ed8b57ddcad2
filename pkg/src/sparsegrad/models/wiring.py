"""Neural-wiring harness: learning which edges of a DAG exist at all.

Every directed edge (u, v) carries a signed weight; the weights entering
one destination node form one competition group, so training drives weak
in-edges to exactly zero.  A node's value is the plain weighted sum of its
predecessors, passed through relu at hidden nodes; output nodes stay
linear and serve as class logits.

The default topology is a 16-node graph (4 input, 10 hidden, 2 output)
with every forward edge (u, v), u < v, that does not enter an input node
or leave an output node: 113 candidate edges.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..gates import GateGroup, gates_signed
from ..tensor import Tensor

__all__ = ["WiringGraph", "default_topology", "toposort_nodes"]


def default_topology(n_input: int = 4, n_hidden: int = 10, n_output: int = 2):
    """Edge list of the standard dense DAG."""
    n = n_input + n_hidden + n_output
    first_output = n_input + n_hidden
    edges = []
    for v in range(n_input, n):
        for u in range(v):
            if u >= first_output:
                continue
            edges.append((u, v))
    return n, n_input, n_output, edges


def toposort_nodes(n_nodes: int, edges: list[tuple[int, int]]) -> list[int]:
    """Topological order of nodes; raises if the edge list has a cycle."""
    indeg = [0] * n_nodes
    succ: list[list[int]] = [[] for _ in range(n_nodes)]
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    queue = [v for v in range(n_nodes) if indeg[v] == 0]
    order = []
    while queue:
        v = queue.pop()
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    if len(order) != n_nodes:
        raise ValueError("wiring graph contains a cycle")
    return order


class WiringGraph:
    """DAG with one signed gate group per destination node."""

    def __init__(self, n_nodes: int, n_input: int, n_output: int,
                 edges: list[tuple[int, int]], groups: dict[int, GateGroup | Tensor],
                 gate_kind: str, grad_mode: str):
        if gate_kind not in ("ds", "raw"):
            raise ValueError(f"unknown gate kind {gate_kind!r}")
        self.n_nodes = n_nodes
        self.n_input = n_input
        self.n_output = n_output
        self.edges = list(edges)
        self.order = toposort_nodes(n_nodes, self.edges)  # cycle check here
        self.preds: dict[int, list[int]] = {v: [] for v in range(n_nodes)}
        for u, v in self.edges:
            if v < n_input:
                raise ValueError("edges may not enter input nodes")
            self.preds[v].append(u)
        self.groups = groups
        self.gate_kind = gate_kind
        self.grad_mode = grad_mode

    @classmethod
    def create(cls, gate_kind: str = "ds", grad_mode: str = "exact",
               seed: int = 0, topology=None) -> "WiringGraph":
        n, n_input, n_output, edges = topology or default_topology()
        rng = np.random.default_rng(seed)
        preds: dict[int, list[int]] = {v: [] for v in range(n)}
        for u, v in edges:
            preds[v].append(u)
        groups: dict[int, GateGroup | Tensor] = {}
        for v in range(n_input, n):
            k = len(preds[v])
            if k == 0:
                continue
            signs = rng.choice([-1.0, 1.0], size=k)
            magnitude = 0.5 * (k + 1) / k
            if gate_kind == "ds":
                beta = -np.log(float(k) * k + k - 1.0)
                groups[v] = GateGroup(signs * magnitude, beta, mode="signed",
                                      grad_mode=grad_mode)
            else:
                # raw weights start at the same emitted values (+-0.5)
                groups[v] = Tensor(signs * 0.5)
        return cls(n, n_input, n_output, edges, groups, gate_kind, grad_mode)

    def edge_weight_tensor(self, v: int) -> Tensor:
        g = self.groups[v]
        return gates_signed(g).a if self.gate_kind == "ds" else g

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for v, g in self.groups.items():
            if self.gate_kind == "ds":
                out[f"alpha{v}"] = g.alpha
                out[f"beta{v}"] = g.beta
            else:
                out[f"w{v}"] = g
        return out

    def set_params(self, new: dict[str, Tensor]) -> None:
        for v in list(self.groups):
            if self.gate_kind == "ds":
                self.groups[v] = self.groups[v].with_params(new[f"alpha{v}"],
                                                            new[f"beta{v}"])
            else:
                self.groups[v] = new[f"w{v}"]

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def set_buffers(self, new: dict[str, np.ndarray]) -> None:
        pass

    def prox_targets(self) -> list[str]:
        return [f"w{v}" for v in self.groups] if self.gate_kind == "raw" else []

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Training forward: (logits (B, n_output), per-node weight tensors)."""
        batch = x.shape[0]
        values: dict[int, Tensor] = {i: _col(x, i) for i in range(self.n_input)}
        weight_tensors: list[Tensor] = []
        first_output = self.n_nodes - self.n_output
        for v in self.order:
            if v < self.n_input:
                continue
            preds = self.preds[v]
            if not preds:
                values[v] = T.constant(np.zeros(batch))
                continue
            w_v = self.edge_weight_tensor(v)
            weight_tensors.append(w_v)
            stacked = T.concat([T.reshape(values[u], (batch, 1)) for u in preds],
                               axis=1)
            summed = T.reshape(stacked @ T.reshape(w_v, (len(preds), 1)),
                               (batch,))
            values[v] = summed if v >= first_output else T.relu(summed)
        logits = T.concat([T.reshape(values[v], (batch, 1))
                           for v in range(first_output, self.n_nodes)], axis=1)
        return logits, weight_tensors

    def edge_values(self) -> dict[int, np.ndarray]:
        """Current edge weights per destination (plain arrays)."""
        return {v: self.edge_weight_tensor(v).data for v in self.groups}

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluation logits in plain numpy, using only nonzero edges."""
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[0]
        values: dict[int, np.ndarray] = {i: x[:, i] for i in range(self.n_input)}
        weights = self.edge_values()
        first_output = self.n_nodes - self.n_output
        for v in self.order:
            if v < self.n_input:
                continue
            preds = self.preds[v]
            acc = np.zeros(batch)
            if preds:
                w = weights[v]
                live = np.flatnonzero(w != 0.0)
                if live.size:
                    stacked = np.stack([values[preds[i]] for i in live], axis=1)
                    acc = stacked @ w[live]
            values[v] = acc if v >= first_output else np.maximum(acc, 0.0)
        return np.stack([values[v] for v in range(first_output, self.n_nodes)],
                        axis=1)

    def sparsity(self) -> tuple[int, int]:
        zeros = total = 0
        for v in self.groups:
            w = self.edge_weight_tensor(v).data
            zeros += int(np.sum(w == 0.0))
            total += w.size
        return zeros, total

    def prune_dead(self) -> "WiringGraph":
        """Drop exactly-zero edges; surviving weights become plain constants."""
        weights = self.edge_values()
        new_edges = []
        new_groups: dict[int, Tensor] = {}
        for v in range(self.n_input, self.n_nodes):
            preds = self.preds[v]
            if not preds:
                continue
            w = weights[v]
            live = np.flatnonzero(w != 0.0)
            if live.size == 0:
                continue
            new_edges.extend((preds[i], v) for i in live)
            new_groups[v] = Tensor(w[live])
        return WiringGraph(self.n_nodes, self.n_input, self.n_output,
                           new_edges, new_groups, "raw", self.grad_mode)


def _col(x: Tensor, i: int) -> Tensor:
    # column slice via transpose + take: (B, F) -> (B,)
    return T.take(T.reshape(T.transpose(x), (x.shape[1] * x.shape[0],)),
                  np.arange(i * x.shape[0], (i + 1) * x.shape[0]))
