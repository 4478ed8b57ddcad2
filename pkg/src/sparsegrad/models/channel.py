"""Channel-gated dense network: the structured-pruning harness.

Each hidden layer standardizes its pre-activations per channel over the
batch (epsilon 1e-5 in the denominator) and emits

    y_i = a_i * (x_tilde_i + b_i),

so a channel whose gate a_i is exactly zero is identically zero for every
input and can be deleted outright.  Gates come from one signed competition
group per layer, initialized so every gate starts at 0.5.

Two forward paths exist on purpose:

* ``forward`` records the dense computation on the tape for training; dead
  channels stay in the graph so rectified gradient flow can revive them;
* ``predict`` is evaluation-only plain numpy using running statistics, and
  it gathers live channels before every product.  Structural pruning
  (:meth:`prune_dead`) therefore reproduces ``predict`` bit-identically:
  both run the same arithmetic on the same live slices.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..gates import GateGroup, gates_signed, init_half
from ..tensor import Tensor

__all__ = ["GatedChannelLayer", "ChannelNet"]

EPS = 1e-5
RUNNING_MOMENTUM = 0.1

GATE_KINDS = ("ds", "raw", "none")


class GatedChannelLayer:
    """One dense layer with per-channel standardization and gates."""

    def __init__(self, weight: Tensor, shift: Tensor, gate_kind: str,
                 gate, running_mean: np.ndarray, running_var: np.ndarray):
        if gate_kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {gate_kind!r}")
        self.weight = weight          # (in, out)
        self.shift = shift            # (out,) the b_i inside a_i (x~ + b_i)
        self.gate_kind = gate_kind
        self.gate = gate              # GateGroup | Tensor | None
        self.running_mean = running_mean
        self.running_var = running_var

    @classmethod
    def create(cls, n_in: int, n_out: int, gate_kind: str, grad_mode: str,
               rng: np.random.Generator) -> "GatedChannelLayer":
        weight = Tensor(rng.normal(size=(n_in, n_out)) * np.sqrt(2.0 / n_in))
        shift = Tensor(np.zeros(n_out))
        if gate_kind == "ds":
            gate = init_half(n_out, grad_mode=grad_mode)
        elif gate_kind == "raw":
            gate = Tensor(np.full(n_out, 0.5))
        else:
            gate = None
        return cls(weight, shift, gate_kind, gate,
                   np.zeros(n_out), np.ones(n_out))

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def gate_tensor(self) -> Tensor | None:
        """The gate values as a tape node (None for ungated layers)."""
        if self.gate_kind == "ds":
            return gates_signed(self.gate).a
        if self.gate_kind == "raw":
            return self.gate
        return None

    def gate_values(self) -> np.ndarray:
        t = self.gate_tensor()
        return np.ones(self.n_out) if t is None else t.data

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor | None]:
        """Training-mode forward; records the tape and updates running stats."""
        if x.shape[0] < 2:
            raise ValueError("training forward requires a batch of at least 2")
        h = x @ self.weight
        mean = T.tmean(h, axis=0)
        centered = T.bias_add(h, T.neg(mean))
        var = T.tmean(centered * centered, axis=0)
        inv_std = 1.0 / T.power(var + EPS, 0.5)
        x_tilde = T.mul_vec_last(centered, inv_std)
        self.running_mean = ((1.0 - RUNNING_MOMENTUM) * self.running_mean
                             + RUNNING_MOMENTUM * mean.data)
        self.running_var = ((1.0 - RUNNING_MOMENTUM) * self.running_var
                            + RUNNING_MOMENTUM * var.data)
        gate_t = self.gate_tensor()
        shifted = T.bias_add(x_tilde, self.shift)
        if gate_t is None:
            return shifted, None
        return T.mul_vec_last(shifted, gate_t), gate_t

    def predict_gathered(self, x: np.ndarray, live_in: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Eval forward on live channels only; returns (values, live mask)."""
        gates_now = self.gate_values()
        live = np.flatnonzero(gates_now != 0.0)
        w = self.weight.data[np.ix_(live_in, live)]
        h = x @ w
        x_tilde = ((h - self.running_mean[live])
                   / np.sqrt(self.running_var[live] + EPS))
        y = gates_now[live] * (x_tilde + self.shift.data[live])
        return y, live


class ChannelNet:
    """Input -> gated hidden layers (relu) -> linear logits."""

    def __init__(self, layers: list[GatedChannelLayer], w_out: Tensor,
                 b_out: Tensor, gate_kind: str, grad_mode: str):
        self.layers = layers
        self.w_out = w_out
        self.b_out = b_out
        self.gate_kind = gate_kind
        self.grad_mode = grad_mode

    @classmethod
    def create(cls, n_features: int = 16, n_hidden: int = 32,
               n_layers: int = 3, n_classes: int = 2, gate_kind: str = "ds",
               grad_mode: str = "exact", seed: int = 0) -> "ChannelNet":
        rng = np.random.default_rng(seed)
        layers = []
        n_in = n_features
        for _ in range(n_layers):
            layers.append(GatedChannelLayer.create(n_in, n_hidden, gate_kind,
                                                   grad_mode, rng))
            n_in = n_hidden
        w_out = Tensor(rng.normal(size=(n_in, n_classes)) * np.sqrt(2.0 / n_in))
        b_out = Tensor(np.zeros(n_classes))
        return cls(layers, w_out, b_out, gate_kind, grad_mode)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"w_out": self.w_out, "b_out": self.b_out}
        for i, layer in enumerate(self.layers):
            out[f"w{i}"] = layer.weight
            out[f"shift{i}"] = layer.shift
            if layer.gate_kind == "ds":
                out[f"alpha{i}"] = layer.gate.alpha
                out[f"beta{i}"] = layer.gate.beta
            elif layer.gate_kind == "raw":
                out[f"gain{i}"] = layer.gate
        return out

    def set_params(self, new: dict[str, Tensor]) -> None:
        self.w_out = new["w_out"]
        self.b_out = new["b_out"]
        for i, layer in enumerate(self.layers):
            layer.weight = new[f"w{i}"]
            layer.shift = new[f"shift{i}"]
            if layer.gate_kind == "ds":
                layer.gate = layer.gate.with_params(new[f"alpha{i}"],
                                                    new[f"beta{i}"])
            elif layer.gate_kind == "raw":
                layer.gate = new[f"gain{i}"]

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable eval-time state (running batch statistics)."""
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out[f"running_mean{i}"] = layer.running_mean
            out[f"running_var{i}"] = layer.running_var
        return out

    def set_buffers(self, new: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            layer.running_mean = np.asarray(new[f"running_mean{i}"])
            layer.running_var = np.asarray(new[f"running_var{i}"])

    def prox_targets(self) -> list[str]:
        """Names of the free parameters the prox baselines shrink."""
        return [f"gain{i}" for i in range(len(self.layers))
                if self.layers[i].gate_kind == "raw"]

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Training forward: (logits, per-layer gate tensors)."""
        gate_tensors: list[Tensor] = []
        h = x
        for layer in self.layers:
            y, gate_t = layer.forward(h)
            if gate_t is not None:
                gate_tensors.append(gate_t)
            h = T.relu(y)
        logits = T.bias_add(h @ self.w_out, self.b_out)
        return logits, gate_tensors

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluation logits (plain numpy, running stats, live channels only)."""
        h = np.asarray(x, dtype=np.float64)
        live = np.arange(h.shape[1])
        for layer in self.layers:
            y, live = layer.predict_gathered(h, live)
            h = np.maximum(y, 0.0)
        return h @ self.w_out.data[live] + self.b_out.data

    def gate_vectors(self) -> list[np.ndarray]:
        return [layer.gate_values() for layer in self.layers]

    def sparsity(self) -> tuple[int, int]:
        """(zero gates, total gates) over all gated layers."""
        zeros = total = 0
        for layer in self.layers:
            if layer.gate_kind == "none":
                continue
            v = layer.gate_values()
            zeros += int(np.sum(v == 0.0))
            total += v.size
        return zeros, total

    def prune_dead(self) -> "ChannelNet":
        """Structurally delete zero-gated channels.

        The pruned network stores the surviving gate values as plain gains;
        its ``predict`` runs the same gathered arithmetic as the original,
        so outputs match bit for bit.
        """
        pruned_layers = []
        live_in = np.arange(self.layers[0].weight.shape[0])
        for layer in self.layers:
            values = layer.gate_values()
            live = np.flatnonzero(values != 0.0)
            pruned_layers.append(GatedChannelLayer(
                Tensor(layer.weight.data[np.ix_(live_in, live)]),
                Tensor(layer.shift.data[live]),
                "raw",
                Tensor(values[live]),
                layer.running_mean[live].copy(),
                layer.running_var[live].copy(),
            ))
            live_in = live
        return ChannelNet(pruned_layers,
                          Tensor(self.w_out.data[live_in]),
                          Tensor(self.b_out.data.copy()),
                          "raw", self.grad_mode)
