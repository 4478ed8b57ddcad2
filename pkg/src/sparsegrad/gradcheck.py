"""Finite-difference verification of recorded gradients.

Central differences with step 1e-5 on float64 give roughly 1e-10 truncation
error, far below the 1e-4 relative tolerance used to accept a gradient, so
a failure here points at the backward rule and not at the probe.

Operations whose backward rule deliberately departs from the true
derivative (``Tensor.backward_rule`` starting with ``custom:``) cannot be
checked this way; :func:`check_gradients` refuses graphs that contain them
unless the caller opts in to skipping the comparison for those paths.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward

__all__ = ["finite_difference", "relative_error", "check_gradients",
           "GradReport", "op_suite"]

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


def finite_difference(fn, params: list[np.ndarray], index: int,
                      step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of ``fn(params)`` w.r.t. ``params[index]``.

    ``fn`` maps a list of plain arrays to a float.  Every entry of the
    chosen parameter is perturbed one at a time.
    """
    base = [np.array(p, dtype=np.float64) for p in params]
    target = base[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + step
        f_plus = fn(base)
        target[idx] = orig - step
        f_minus = fn(base)
        target[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
        it.iternext()
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|), elementwise before the max."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


class GradReport:
    """Per-parameter comparison of recorded and finite-difference gradients."""

    def __init__(self, names, errors, tol):
        self.names = list(names)
        self.errors = list(errors)
        self.tol = float(tol)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def lines(self):
        for name, err in zip(self.names, self.errors):
            status = "ok" if err < self.tol else "FAIL"
            yield f"{name}: rel-err {err:.3e} [{status}]"


def _collect_custom_ops(root: Tensor) -> set[str]:
    found: set[str] = set()
    seen: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.backward_rule.startswith("custom:"):
            found.add(node.backward_rule)
        stack.extend(node._parents)
    return found


def check_gradients(build_loss, params: dict[str, np.ndarray],
                    step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL,
                    allow_custom: bool = False) -> GradReport:
    """Compare recorded gradients of a scalar graph against central differences.

    Parameters
    ----------
    build_loss:
        Callable taking ``dict[str, Tensor]`` and returning a scalar Tensor.
        It is re-invoked for every probe, so it must be deterministic.
    params:
        Name-to-array map of the leaves to check.
    allow_custom:
        Graphs containing intentionally inexact backward rules are rejected
        unless this is set; with it set, the comparison result is still
        computed but such ops make disagreement expected, so callers only
        set it when probing those rules on purpose.
    """
    names = sorted(params)
    leaf_map = {n: Tensor(params[n]) for n in names}
    loss = build_loss(leaf_map)
    if loss.ndim != 0:
        raise ValueError("check_gradients requires a scalar loss")
    custom = _collect_custom_ops(loss)
    if custom and not allow_custom:
        raise ValueError(
            "graph contains custom backward rules "
            f"({', '.join(sorted(custom))}); finite differences check the "
            "true derivative, not these rules"
        )
    grads = backward(loss, wrt=[leaf_map[n] for n in names])

    def as_fn(arrays):
        tensors = {n: Tensor(a) for n, a in zip(names, arrays)}
        return float(build_loss(tensors).data)

    errors = []
    arrays = [params[n] for n in names]
    for i, n in enumerate(names):
        numeric = finite_difference(as_fn, arrays, i, step=step)
        analytic = grads[leaf_map[n]].data
        errors.append(relative_error(analytic, numeric))
    return GradReport(names, errors, tol)


# -- standard suite ----------------------------------------------------------


def _away_from_zero(rng: np.random.Generator, shape, low: float = 0.05,
                    high: float = 2.0) -> np.ndarray:
    """Values with |x| in [low, high]: kink-free inputs for relu/abs/sign."""
    mag = rng.uniform(low, high, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def _gate_inputs(rng: np.random.Generator, n: int, signed: bool,
                 gap: float = 2e-3):
    """alpha/beta for a competition group with every member a safe distance
    from the threshold, so finite differencing never crosses the kink."""
    for _ in range(100):
        alpha = (_away_from_zero(rng, n, 0.2, 1.2) if signed
                 else rng.uniform(-0.5, 1.0, size=n))
        beta = float(rng.uniform(-3.5, -2.0))
        mag = np.abs(alpha) if signed else np.exp(alpha)
        margin = np.abs(mag - (1.0 / (1.0 + np.exp(-beta))) * mag.sum())
        if margin.min() > gap:
            return alpha, beta
    raise RuntimeError("could not construct kink-free gate inputs")


def op_suite(seed: int = 0, n_points: int = 100, step: float = DEFAULT_STEP,
             tol: float = DEFAULT_TOL) -> list:
    """Finite-difference checks covering every differentiable op.

    Returns (label, GradReport) pairs: one per op, plus composite graphs
    exercising the gated combination (exp gates, thresholding, softmax
    renormalization feeding a weighted sum) and full training objectives
    with each penalty attached.  Inputs stay a safe distance (> 1e-3) from
    relu/abs/sign kinks and thresholds so central differences measure the
    true derivative.
    """
    from .gates import GateGroup, gates_nonneg, gates_signed
    from .models.losses import mre_loss, softmax_xent
    from .regularizers import RegularizerSpec, penalty

    rng = np.random.default_rng(seed)
    n = int(n_points)
    reports = []

    def check(label, build_loss, params, allow_custom=False):
        reports.append((label, check_gradients(build_loss, params, step=step,
                                               tol=tol,
                                               allow_custom=allow_custom)))

    # cotangent weights: a plain sum would test only gradient 1s
    c = rng.standard_normal(n)
    cw = Tensor(c)

    def weighted(op):
        return lambda p: T.tsum(op(p["x"]) * cw)

    x_any = rng.standard_normal(n)
    x_pos = rng.uniform(0.1, 2.0, size=n)
    x_away = _away_from_zero(rng, n)
    check("neg", weighted(T.neg), {"x": x_any})
    check("exp", weighted(T.exp), {"x": x_any})
    check("log", weighted(T.log), {"x": x_pos})
    check("sqrt", weighted(T.sqrt), {"x": x_pos})
    check("abs", weighted(T.absolute), {"x": x_away})
    check("sign", weighted(T.sign), {"x": x_away})
    check("sigmoid", weighted(T.sigmoid), {"x": x_any})
    check("relu", weighted(T.relu), {"x": x_away})
    check("power", weighted(lambda t: T.power(t, 1.7)), {"x": x_pos})

    y_any = rng.standard_normal(n)
    y_away = _away_from_zero(rng, n, low=0.1)
    for label, op in (("add", T.add), ("sub", T.sub), ("mul", T.mul)):
        check(label, lambda p, op=op: T.tsum(op(p["x"], p["y"]) * cw),
              {"x": x_any, "y": y_any})
    check("div", lambda p: T.tsum(T.div(p["x"], p["y"]) * cw),
          {"x": x_any, "y": y_away})

    side = max(2, int(round(np.sqrt(n))))
    a_sq = rng.standard_normal((side, side))
    b_sq = rng.standard_normal((side, side))
    c_sq = Tensor(rng.standard_normal((side, side)))
    check("matmul", lambda p: T.tsum((p["x"] @ p["y"]) * c_sq),
          {"x": a_sq, "y": b_sq})
    check("sum", lambda p: T.tsum(T.tsum(p["x"], axis=0)
                                  * Tensor(c[:side])), {"x": a_sq})
    check("mean", lambda p: T.tsum(T.tmean(p["x"], axis=1)
                                   * Tensor(c[:side])), {"x": a_sq})
    check("transpose", lambda p: T.tsum(T.transpose(p["x"]) * c_sq),
          {"x": a_sq})
    check("reshape", lambda p: T.tsum(T.reshape(p["x"], (side * side,))
                                      * Tensor(c[:side * side])), {"x": a_sq})
    check("concat", lambda p: T.tsum(T.concat([p["x"], p["y"]], axis=0) * cw),
          {"x": x_any[:n // 2], "y": y_any[:n - n // 2]})
    check("bias_add", lambda p: T.tsum(T.bias_add(p["x"], p["b"]) * c_sq),
          {"x": a_sq, "b": rng.standard_normal(side)})
    check("mul_vec_last", lambda p: T.tsum(T.mul_vec_last(p["x"], p["v"])
                                           * c_sq),
          {"x": a_sq, "v": rng.standard_normal(side)})
    idx = rng.integers(0, n, size=n)
    check("take", lambda p: T.tsum(T.take(p["x"], idx) * cw), {"x": x_any})
    rows = rng.standard_normal((max(4, n // 8), 8))
    c_rows = Tensor(rng.standard_normal(rows.shape))
    check("softmax", lambda p: T.tsum(T.softmax(p["x"]) * c_rows),
          {"x": rows})
    check("log_softmax", lambda p: T.tsum(T.log_softmax(p["x"]) * c_rows),
          {"x": rows})

    # composite: exp gates -> threshold -> softmax renormalization gating a
    # linear combination of features
    k = 12
    alpha_n, beta_n = _gate_inputs(rng, k, signed=False)
    feats = Tensor(rng.standard_normal((8, k)))
    c_feat = Tensor(rng.standard_normal(8))

    def gated_combination(p):
        out = gates_nonneg(GateGroup(p["alpha"], p["beta"], "nonneg-softmax"))
        col = T.reshape(out.a, (k, 1))
        return T.tsum(T.reshape(feats @ col, (8,)) * c_feat)

    check("gated-combination", gated_combination,
          {"alpha": alpha_n, "beta": np.array(beta_n)})

    alpha_s, beta_s = _gate_inputs(rng, k, signed=True)

    def signed_combination(p):
        out = gates_signed(GateGroup(p["alpha"], p["beta"], "signed"))
        col = T.reshape(out.a, (k, 1))
        return T.tsum(T.reshape(feats @ col, (8,)) * c_feat)

    check("signed-combination", signed_combination,
          {"alpha": alpha_s, "beta": np.array(beta_s)})

    # composite: full classification objective, gated hidden layer plus an
    # attached penalty, for each penalty kind
    m, d, h = 16, 6, k
    x_data = rng.standard_normal((m, d))
    labels = rng.integers(0, 2, size=m)
    w1_0 = rng.standard_normal((d, h)) * 0.6
    w2_0 = rng.standard_normal((h, 2)) * 0.6
    grouping = [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11]]
    specs = [("l1", RegularizerSpec("l1", 0.05)),
             ("group-l21", RegularizerSpec("group-l21", 0.05,
                                           grouping=grouping)),
             ("exclusive-l12", RegularizerSpec("exclusive-l12", 0.05,
                                               grouping=grouping))]

    def objective_with(spec):
        def build(p):
            out = gates_nonneg(GateGroup(p["alpha"], p["beta"],
                                         "nonneg-softmax"))
            h_act = T.relu(Tensor(x_data) @ p["w1"])
            logits = T.mul_vec_last(h_act, out.a) @ p["w2"]
            return softmax_xent(logits, labels) + penalty(spec, out.a)
        return build

    for name, spec in specs:
        # the guarded l2-norm backward rule is exact away from zero, which
        # these inputs guarantee, so finite differences still apply
        check(f"objective-{name}", objective_with(spec),
              {"alpha": alpha_n, "beta": np.array(beta_n),
               "w1": w1_0, "w2": w2_0},
              allow_custom=(name == "group-l21"))

    # lp penalty needs strictly positive inputs away from its p<1 cusp
    lp_spec = RegularizerSpec("lp", 0.05, p=0.5, grouping=grouping)
    c_lp = Tensor(c[:k])
    check("objective-lp",
          lambda p: T.tsum(p["a"] * c_lp) + penalty(lp_spec, p["a"]),
          {"a": rng.uniform(0.1, 1.0, size=k)})

    # regression objective: mre's |pred - target| kink avoided by margin
    target = rng.uniform(1.0, 2.0, size=(8,))
    check("objective-mre",
          lambda p: mre_loss(
              T.reshape(Tensor(x_data[:8]) @ T.reshape(p["w"], (d, 1)), (8,)),
              target),
          {"w": rng.standard_normal(d) * 0.1})

    return reports
