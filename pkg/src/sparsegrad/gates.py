"""Sparse parameterizations: architecture parameters that reach exact zero.

A :class:`GateGroup` holds n free reals ``alpha`` and one free scalar
``beta``.  The emitted gate values ``a`` compete within the group through a
shared magnitude threshold ``sigmoid(beta) * l1_norm``, so gradient descent
on the free parameters alone can push individual gates to bit-exact 0.0.

Two families are provided:

* non-negative gates (optionally softmax-normalized):
  ``gamma = exp(alpha)``, ``gamma_tilde = relu(gamma - sigmoid(beta) *
  sum(gamma))``, and under softmax ``a = gamma_tilde / sum(gamma_tilde)``;
* signed gates: ``a_i = sign(alpha_i) * relu(|alpha_i| - sigmoid(beta) *
  sum|alpha|)``.

With grad-mode ``rectified`` the thresholding relu backpropagates the elu
derivative instead of the relu subgradient, so a gate that has been driven
to zero keeps receiving a learning signal and can re-enter the model.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "GateGroup",
    "GateOutput",
    "gates_nonneg",
    "gates_signed",
    "gates",
    "init_half",
    "dead_gate_gradient_probe",
]

MODES = ("nonneg-softmax", "nonneg-raw", "signed")
GRAD_MODES = ("exact", "rectified")


class GateGroup:
    """One competition group of architecture parameters."""

    def __init__(self, alpha, beta, mode: str, grad_mode: str = "exact"):
        if mode not in MODES:
            raise ValueError(f"unknown gate mode {mode!r}")
        if grad_mode not in GRAD_MODES:
            raise ValueError(f"unknown grad mode {grad_mode!r}")
        alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
        beta = beta if isinstance(beta, Tensor) else Tensor(beta)
        if alpha.ndim != 1 or alpha.size < 1:
            raise ValueError("alpha must be a vector with n >= 1")
        if beta.ndim != 0:
            raise ValueError("beta must be a scalar")
        self.alpha = alpha
        self.beta = beta
        self.mode = mode
        self.grad_mode = grad_mode

    @property
    def n(self) -> int:
        return self.alpha.size

    def with_params(self, alpha: Tensor, beta: Tensor) -> "GateGroup":
        """Same group with replaced free parameters (tensors are immutable)."""
        return GateGroup(alpha, beta, self.mode, self.grad_mode)


class GateOutput:
    """Emitted gates plus their exact nonzero pattern.

    ``active_mask`` is computed from bit-exact comparison with 0.0; there is
    no epsilon. ``degenerate`` marks a softmax group whose every member was
    thresholded away, in which case ``a`` is all-zeros by convention.
    """

    def __init__(self, a: Tensor, gamma_tilde: Tensor, degenerate: bool = False):
        self.a = a
        self.gamma_tilde = gamma_tilde
        self.active_mask = a.data != 0.0
        self.degenerate = bool(degenerate)

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.active_mask))


def _thresh_relu(x: Tensor, grad_mode: str) -> Tensor:
    return T.relu(x) if grad_mode == "exact" else T.rgf_relu(x)


def gates_nonneg(group: GateGroup) -> GateOutput:
    """Non-negative gates with within-group competition.

    The l1 norm of gamma is its plain sum (all entries positive), and the
    threshold sigmoid(beta) * sum(gamma) is subtracted from every entry
    before rectification.  Softmax mode renormalizes the survivors to sum
    to one; if no entry survives, the output is the all-zero gamma_tilde
    itself and the degenerate flag is set, rather than dividing by zero.
    """
    if group.mode not in ("nonneg-softmax", "nonneg-raw"):
        raise ValueError(f"gates_nonneg requires a nonneg mode, got {group.mode!r}")
    gamma = T.exp(group.alpha)
    threshold = T.sigmoid(group.beta) * T.tsum(gamma)
    gamma_tilde = _thresh_relu(gamma - threshold, group.grad_mode)
    total = T.tsum(gamma_tilde)
    if group.mode == "nonneg-raw":
        return GateOutput(gamma_tilde, gamma_tilde)
    if float(total.data) == 0.0:
        # Degenerate competition: every member below threshold.  Keeping
        # gamma_tilde on the tape lets rectified mode still feed gradient
        # back to alpha, so the group can recover in later steps.
        return GateOutput(gamma_tilde, gamma_tilde, degenerate=True)
    return GateOutput(gamma_tilde / total, gamma_tilde)


def gates_signed(group: GateGroup) -> GateOutput:
    """Signed gates: a_i = sign(alpha_i) * relu(|alpha_i| - threshold)."""
    if group.mode != "signed":
        raise ValueError(f"gates_signed requires signed mode, got {group.mode!r}")
    mag = T.absolute(group.alpha)
    threshold = T.sigmoid(group.beta) * T.tsum(mag)
    core = _thresh_relu(mag - threshold, group.grad_mode)
    a = T.sign(group.alpha) * core
    return GateOutput(a, core)


def gates(group: GateGroup) -> GateOutput:
    """Emit gate values for any mode."""
    if group.mode == "signed":
        return gates_signed(group)
    return gates_nonneg(group)


def init_half(n: int, grad_mode: str = "exact") -> GateGroup:
    """Signed group whose emitted gates all start at exactly 0.5.

    With alpha_i = 0.5 (n+1)/n the l1 norm is 0.5 (n+1); choosing beta so
    that sigmoid(beta) = 1 / (n^2 + n) makes the threshold 0.5/n and every
    gate 0.5 (n+1)/n - 0.5/n = 0.5.  That sigmoid value requires
    beta = -log(n^2 + n - 1).
    """
    if n < 1:
        raise ValueError("init_half requires n >= 1")
    alpha = np.full(n, 0.5 * (n + 1) / n)
    beta = -np.log(float(n) * n + n - 1.0)
    return GateGroup(alpha, beta, mode="signed", grad_mode=grad_mode)


def _gates_signed_simplified(group: GateGroup) -> GateOutput:
    # Per-component threshold a_i = sign(alpha_i) * relu(|alpha_i| -
    # sigmoid(beta)): no coupling through the group l1 norm.  Used only by
    # the dead-gate probe to isolate "no learning signal" in exact mode;
    # not part of the training API.
    mag = T.absolute(group.alpha)
    core = _thresh_relu(mag - T.sigmoid(group.beta), group.grad_mode)
    a = T.sign(group.alpha) * core
    return GateOutput(a, core)


def dead_gate_gradient_probe(group: GateGroup, i: int, c=None,
                             simplified: bool = False) -> tuple[float, float]:
    """Gradient bookkeeping at a dead gate.

    Builds the loss L = sum_j a_j * w_j * c_j with fresh downstream weights
    w (init 1.0) and constants c, requires gate i to be exactly zero, and
    returns ``(dL/dalpha_i, dL/dw_i)``.

    The second value is the learning signal reaching the weight behind the
    dead gate; it is exactly zero in every mode because the forward gate
    value multiplies it.  The first is zero for exact grad-mode with the
    simplified per-component threshold, and generally nonzero under
    rectified grad-mode (the elu backward manufactures a signal) or when
    other live gates couple through the shared threshold.
    """
    out = _gates_signed_simplified(group) if simplified else gates(group)
    a_val = out.a.data[i]
    if a_val != 0.0:
        raise ValueError(f"probe requires a dead gate, but a[{i}] = {a_val}")
    n = group.n
    cvec = T.constant(np.ones(n) if c is None else c)
    w = Tensor(np.ones(n))
    loss = T.tsum(out.a * w * cvec)
    grads = T.backward(loss, wrt=[group.alpha, w])
    return float(grads[group.alpha].data[i]), float(grads[w].data[i])
