"""Sparsity penalties evaluated on gate values inside the training objective.

All penalties are recorded on the tape, so the regularized loss
``L + lambda * R(a)`` is optimized by the same gradient descent that fits
the prediction loss; there is no separate shrinkage step.  Penalties apply
to emitted gate values (or their pre-normalized form), not to the free
parameters behind them.

Kinds:

* ``l1``: sum of absolute gate values.
* ``group-l21``: sum of per-group Euclidean norms; drives whole groups to
  zero together.  Uses the zero-safe norm so collapsed groups contribute a
  finite (zero) gradient.
* ``exclusive-l12``: half the sum of squared per-group l1 norms; promotes
  competition inside each group instead of between groups.
* ``lp`` with p in (0, 1]: sum over groups of (sum a_i^p)^(1/p) on
  non-negative gates.  Unlike l1, this is not constant on the softmax
  simplex, so it can sparsify normalized gates.  Entries that are exactly
  zero are excluded from the sum (their contribution is zero) and receive
  zero gradient, since the true derivative does not exist there.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .gradcheck import check_gradients
from .tensor import Tensor

__all__ = ["RegularizerSpec", "penalty", "penalty_gradient_check"]

KINDS = ("l1", "group-l21", "exclusive-l12", "lp")


class RegularizerSpec:
    """Declarative description of one sparsity penalty.

    ``grouping`` partitions gate indices into groups (list of index lists);
    ``None`` means one group containing every index.  Groups must be
    disjoint, non-empty, and cover all indices of the gate vector they are
    applied to.
    """

    def __init__(self, kind: str, lam: float, p: float | None = None,
                 grouping: list[list[int]] | None = None):
        if kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {kind!r}")
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        if kind == "lp":
            if p is None or not (0.0 < p <= 1.0):
                raise ValueError("lp kind requires p in (0, 1]")
        elif p is not None:
            raise ValueError("p is only meaningful for the lp kind")
        if grouping is not None:
            seen: set[int] = set()
            for group in grouping:
                if len(group) == 0:
                    raise ValueError("empty group")
                if seen.intersection(group):
                    raise ValueError("groups must be disjoint")
                seen.update(group)
        self.kind = kind
        self.lam = float(lam)
        self.p = None if p is None else float(p)
        self.grouping = None if grouping is None else [list(g) for g in grouping]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "p": self.p,
                "grouping": self.grouping}

    @classmethod
    def from_dict(cls, d: dict) -> "RegularizerSpec":
        return cls(d["kind"], d["lambda"], d.get("p"), d.get("grouping"))

    def __eq__(self, other):
        return (isinstance(other, RegularizerSpec)
                and self.to_dict() == other.to_dict())


def _groups_of(spec: RegularizerSpec, a: Tensor) -> list[Tensor]:
    if a.ndim != 1:
        raise ValueError("penalty expects a flat gate vector per call")
    if spec.grouping is None:
        return [a]
    covered = sorted(i for g in spec.grouping for i in g)
    if covered != list(range(a.size)):
        raise ValueError("grouping must cover all gate indices exactly once")
    return [T.take(a, g) for g in spec.grouping]


def penalty(spec: RegularizerSpec, a) -> Tensor:
    """R(a) as a scalar tape node; the training loss adds lambda * R(a).

    ``a`` is a flat gate Tensor, or a list of per-group tensors for gates
    that never lived in one vector (then ``spec.grouping`` must be None).
    """
    pre_grouped = (isinstance(a, (list, tuple)) and len(a) > 0
                   and all(isinstance(g, Tensor) for g in a))
    if pre_grouped:
        if spec.grouping is not None:
            raise ValueError("pass either pre-grouped tensors or a grouping, not both")
        groups = list(a)
        if any(g.size == 0 for g in groups):
            raise ValueError("empty group")
        flat = groups[0] if len(groups) == 1 else T.concat(groups)
    else:
        a = a if isinstance(a, Tensor) else Tensor(a)
        groups = _groups_of(spec, a)
        flat = a

    if spec.kind == "l1":
        return T.tsum(T.absolute(flat))

    if spec.kind == "group-l21":
        total = T.safe_l2_norm(groups[0])
        for g in groups[1:]:
            total = total + T.safe_l2_norm(g)
        return total

    if spec.kind == "exclusive-l12":
        total = None
        for g in groups:
            l1 = T.tsum(T.absolute(g))
            sq = l1 * l1
            total = sq if total is None else total + sq
        return 0.5 * total

    # lp: per-group (sum a_i^p)^(1/p) on non-negative gates; exact zeros
    # contribute nothing and are kept off the tape so they get exactly zero
    # gradient.
    if np.any(flat.data < 0.0):
        raise ValueError("lp penalty requires non-negative gates")
    total = None
    for g in groups:
        alive = np.flatnonzero(g.data)
        if alive.size == 0:
            continue
        survivors = T.take(g, alive) if alive.size < g.size else g
        term = T.power(T.tsum(T.power(survivors, spec.p)), 1.0 / spec.p)
        total = term if total is None else total + term
    return T.constant(0.0) if total is None else total


def penalty_gradient_check(spec: RegularizerSpec, a, tol: float = 1e-4) -> float:
    """Max relative error of the penalty gradient vs central differences.

    Requires every gate to sit at least 1e-3 away from a kink (|a_i| for
    the absolute-value kinds, a_i itself for lp); inputs at kinks are
    rejected because no finite-difference probe is meaningful there.

    The group-l21 comparison is run against the zero-safe norm whose
    backward shifts the denominator by 1e-19; away from kinks this is
    below 1e-15 relative and cannot affect the 1e-4 contract.
    """
    arr = np.asarray(a, dtype=np.float64)
    if spec.kind == "lp":
        if np.any(arr <= 1e-3):
            raise ValueError("gradient check requires gates > 1e-3 for lp")
    elif np.any(np.abs(arr) <= 1e-3):
        raise ValueError("gradient check requires |gates| > 1e-3")

    def build(leaves):
        return penalty(spec, leaves["a"])

    report = check_gradients(build, {"a": arr}, tol=tol, allow_custom=True)
    return report.max_error
