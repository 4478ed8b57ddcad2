"""Experiment orchestration: configs, training loops, metrics, sweeps.

One :class:`ExperimentConfig` fully determines a run; two runs with equal
configs produce bit-identical parameters and metrics, because every random
draw flows through seeded generators and the arithmetic itself is
deterministic.

Harnesses and their methods:

* ``channel``: blob classification with channel-gated layers.
  Methods ``ds-exact`` / ``ds-rectified`` train threshold gates against a
  tape-recorded penalty; ``prox-l1`` / ``prox-group`` / ``prox-exclusive``
  train raw per-channel gains and shrink them after every optimizer step.
* ``wiring``: DAG classification where every edge weight sits in a signed
  per-destination competition group; same method split.
* ``gcn``: windowed traffic regression with a learnable adjacency.
  ``ds-*`` threshold and normalize the adjacency, ``dense-baseline`` drops
  the threshold (no exact zeros), ``fixed-adjacency-baseline`` freezes the
  true graph, ``prox-exclusive`` trains a raw non-negative matrix with the
  exclusive prox applied to rows then columns (sequential passes; the two
  group systems overlap, so this composition is itself a heuristic).

The differentiable penalty on the gcn harness applies to the rows and
columns of the *normalized* adjacency, not the raw thresholded one.  The
normalizer is scale invariant, so penalizing unnormalized entries has a
free descent direction (shrink everything uniformly) that zeroes the whole
matrix without moving the prediction loss.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import chronological_split, make_classify, make_traffic, window_series
from .models.channel import ChannelNet
from .models.gcn import GcnModel, relationship_score
from .models.losses import error_rate, mape, mre_loss, softmax_xent
from .models.wiring import WiringGraph
from .optim import Adam, Sgd, late_halving, step_decay
from .proximal import ProxSpec, prox_step
from .regularizers import RegularizerSpec, penalty
from .tensor import Tensor, backward

__all__ = [
    "HARNESSES",
    "METHODS",
    "ExperimentConfig",
    "MetricsRecord",
    "ExperimentResult",
    "load_data",
    "build_model",
    "evaluate_split",
    "run",
    "run_many",
    "run_sweep",
    "compare_methods",
    "sparsity_report",
    "write_metrics_csv",
    "write_summary_json",
]

HARNESSES = ("channel", "wiring", "gcn")

METHODS = {
    "channel": ("ds-exact", "ds-rectified", "prox-l1", "prox-group",
                "prox-exclusive"),
    "wiring": ("ds-exact", "ds-rectified", "prox-l1", "prox-group",
               "prox-exclusive"),
    "gcn": ("ds-exact", "ds-rectified", "dense-baseline",
            "fixed-adjacency-baseline", "prox-exclusive"),
}

_HARNESS_DEFAULTS = {
    "channel": {"optimizer": "sgd", "lr": 0.05, "schedule": "step",
                "reg_kind": "l1", "hidden": 32, "epochs": 200,
                "warmup_frac": 0.0},
    "wiring": {"optimizer": "sgd", "lr": 0.05, "schedule": "step",
               "reg_kind": "l1", "hidden": 0, "epochs": 200,
               "warmup_frac": 0.0},
    # the adjacency penalty waits for the heads: adam's scale-free updates
    # let the threshold kill entries while selection gradients are still
    # noise, so sparsification starts at half budget on this harness
    "gcn": {"optimizer": "adam", "lr": 0.0005, "schedule": "late",
            "reg_kind": "lp", "hidden": 16, "epochs": 150,
            "warmup_frac": 0.5},
}


def _prox_kind(config: "ExperimentConfig") -> str:
    # the shrinkage comes from the method name; on the gcn harness the
    # exclusive operator acts on a non-negative matrix, elsewhere on
    # signed weights
    if config.method == "prox-l1":
        return "l1"
    if config.method == "prox-group":
        return "group-l21"
    if config.harness == "gcn":
        return "exclusive-nonneg"
    return "exclusive-l12"


@dataclass
class ExperimentConfig:
    """Complete, validated description of one training run."""

    harness: str
    method: str = "ds-exact"
    seed: int = 0
    batch_size: int = 32
    lam: float = 0.0
    sweep: list[float] | None = None
    # None means "use the harness default" for the fields below
    epochs: int | None = None
    lr: float | None = None
    optimizer: str | None = None
    schedule: str | None = None
    reg_kind: str | None = None
    reg_p: float | None = None
    gate_kind: str | None = None
    warmup_frac: float | None = None
    # data / architecture sizes
    n_samples: int = 600
    n_features: int = 16
    n_layers: int = 3
    hidden: int | None = None
    n_nodes: int = 30
    t_steps: int = 400
    history: int = 8
    n_blocks: int = 5
    data_seed: int | None = None

    def __post_init__(self):
        if self.harness not in HARNESSES:
            raise ValueError(f"unknown harness {self.harness!r}")
        if self.method not in METHODS[self.harness]:
            raise ValueError(
                f"method {self.method!r} is not available for harness "
                f"{self.harness!r}")
        is_prox = self.method.startswith("prox-")
        if is_prox and self.reg_kind is not None:
            raise ValueError("prox methods take their shrinkage from the "
                             "method name; leave reg_kind unset")
        defaults = _HARNESS_DEFAULTS[self.harness]
        if self.epochs is None:
            self.epochs = defaults["epochs"]
        if self.lr is None:
            self.lr = defaults["lr"]
        if self.optimizer is None:
            self.optimizer = defaults["optimizer"]
        if self.schedule is None:
            self.schedule = defaults["schedule"]
        if self.reg_kind is None and not is_prox:
            self.reg_kind = defaults["reg_kind"]
        if self.hidden is None:
            self.hidden = defaults["hidden"]
        if self.warmup_frac is None:
            self.warmup_frac = defaults["warmup_frac"]
        if self.reg_kind == "lp" and self.reg_p is None:
            self.reg_p = 0.5
        if self.data_seed is None:
            self.data_seed = self.seed
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("step", "late", "none"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.sweep is not None:
            if not self.sweep:
                raise ValueError("sweep must list at least one lambda")
            if any(v < 0 for v in self.sweep):
                raise ValueError("sweep lambdas must be non-negative")
        if self.gate_kind is not None:
            if self.harness == "gcn":
                raise ValueError("the gcn harness derives its adjacency "
                                 "parameterization from the method")
            if self.gate_kind not in ("ds", "raw"):
                raise ValueError(f"unknown gate_kind {self.gate_kind!r}")
        if not is_prox and self.lam > 0:
            if self.method == "fixed-adjacency-baseline":
                raise ValueError("fixed-adjacency-baseline has no adjacency "
                                 "parameters to regularize")
            if self.reg_kind == "lp" and self.harness != "gcn":
                raise ValueError("lp penalty needs non-negative gates; only "
                                 "the gcn adjacency emits those")
            # constructing the spec validates kind / lambda / p consistency
            RegularizerSpec(self.reg_kind, self.lam, p=self.reg_p)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        values = dict(values)
        if "lambda" in values:
            # JSON configs may spell the regularization strength out
            if "lam" in values:
                raise ValueError("give lambda or lam, not both")
            values["lam"] = values.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)


@dataclass
class MetricsRecord:
    """Per-epoch snapshot of training and structure metrics."""

    epoch: int
    train_loss: float
    eval_error: float
    zeros: int
    total: int
    sparsity_rate: float
    nonzero_count: int
    degenerate_groups: int
    lr_score_k1: float | None = None
    lr_score_k2: float | None = None

    CSV_FIELDS = ("epoch", "train_loss", "eval_error", "zeros", "total",
                  "sparsity_rate", "nonzero_count", "degenerate_groups",
                  "lr_score_k1", "lr_score_k2")

    def csv_row(self) -> list:
        row = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            row.append("" if v is None else v)
        return row


class ExperimentResult:
    """A finished run: config, per-epoch records, final model, timing."""

    def __init__(self, config: ExperimentConfig, records: list[MetricsRecord],
                 model, wall_time: float):
        self.config = config
        self.records = records
        self.model = model
        self.wall_time = float(wall_time)

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]

    def to_summary(self, checkpoint_path: str | None = None) -> dict:
        final = {k: getattr(self.final, k) for k in MetricsRecord.CSV_FIELDS}
        return {
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "final": final,
            "sparsity": sparsity_report(self.model),
            "checkpoint_path": checkpoint_path,
            "wall_time_s": self.wall_time,
        }


# -- data -----------------------------------------------------------------


class Bundle:
    """Loaded dataset plus split indices and harness extras."""

    def __init__(self, **kw):
        self.__dict__.update(kw)


def load_data(config: ExperimentConfig) -> Bundle:
    """Generate the harness dataset for ``config`` (seeded, deterministic)."""
    if config.harness in ("channel", "wiring"):
        n_features = config.n_features if config.harness == "channel" else 4
        x, y = make_classify(config.n_samples, n_features,
                             seed=config.data_seed)
        tr, va, te = chronological_split(config.n_samples)
        return Bundle(x=x, y=y, idx_train=tr, idx_val=va, idx_test=te)
    data = make_traffic(config.n_nodes, config.t_steps, seed=config.data_seed)
    feats, targets = window_series(data.series, config.history)
    tr, va, te = chronological_split(feats.shape[0])
    node_base = targets[tr].mean(axis=0)
    # center the inputs on per-node train means (predictions add the base
    # back); row-normalized mixing passes a common level through unchanged,
    # so leaving it in would starve the adjacency of selection signal
    feats = feats - node_base[None, :, None]
    return Bundle(feats=feats, targets=targets, idx_train=tr, idx_val=va,
                  idx_test=te, geodesic=data.geodesic,
                  adjacency=data.adjacency, node_base=node_base)


def build_model(config: ExperimentConfig, bundle: Bundle):
    """Instantiate the untrained model the config describes."""
    grad_mode = "rectified" if config.method == "ds-rectified" else "exact"
    if config.harness in ("channel", "wiring"):
        kind = config.gate_kind
        if kind is None:
            kind = "ds" if config.method.startswith("ds-") else "raw"
        if config.harness == "channel":
            return ChannelNet.create(config.n_features, config.hidden,
                                     config.n_layers, 2, kind, grad_mode,
                                     seed=config.seed)
        return WiringGraph.create(kind, grad_mode, seed=config.seed)
    mode = {"ds-exact": "ds", "ds-rectified": "ds", "dense-baseline": "dense",
            "fixed-adjacency-baseline": "fixed",
            "prox-exclusive": "raw"}[config.method]
    return GcnModel.create(mode=mode, grad_mode=grad_mode,
                           n_nodes=config.n_nodes, history=config.history,
                           hidden=config.hidden, n_blocks=config.n_blocks,
                           seed=config.seed,
                           fixed_adjacency=(bundle.adjacency
                                            if mode == "fixed" else None))


# -- training ---------------------------------------------------------------


def _schedule_lr(config: ExperimentConfig, epoch: int) -> float:
    if config.schedule == "step":
        return step_decay(config.lr, epoch, config.epochs)
    if config.schedule == "late":
        return late_halving(config.lr, epoch, config.epochs)
    return config.lr


def _batch_loss(config: ExperimentConfig, model, bundle: Bundle,
                idx: np.ndarray) -> Tensor:
    if config.harness in ("channel", "wiring"):
        x = Tensor(bundle.x[idx])
        logits, gate_tensors = model.forward(x)
        loss = softmax_xent(logits, bundle.y[idx])
        reg_parts = gate_tensors
        reg_scale = config.lam
    else:
        x = Tensor(bundle.feats[idx])
        out, a_norm = model.forward(x)
        pred = T.bias_add(out, T.constant(bundle.node_base))
        loss = mre_loss(pred, bundle.targets[idx])
        reg_parts = model.regularizer_lines(a_norm)
        # every entry sits in one row group and one column group, so the
        # row+col sum double-counts and the penalty is halved
        reg_scale = 0.5 * config.lam
    if config.lam > 0 and not config.method.startswith("prox-") and reg_parts:
        spec = RegularizerSpec(config.reg_kind, config.lam, p=config.reg_p)
        loss = loss + reg_scale * penalty(spec, reg_parts)
    return loss


def _apply_prox(config: ExperimentConfig, model,
                params: dict[str, Tensor], eta: float) -> dict[str, Tensor]:
    kind = _prox_kind(config)
    out = dict(params)
    for name in model.prox_targets():
        w = np.array(out[name].data)
        if kind == "exclusive-nonneg":
            # the operator is defined on non-negative vectors; project first
            n = w.shape[0]
            w = np.maximum(w, 0.0).ravel()
            rows = [list(range(i * n, (i + 1) * n)) for i in range(n)]
            cols = [list(range(j, n * n, n)) for j in range(n)]
            w = prox_step(ProxSpec(kind, config.lam, eta, grouping=rows), w)
            w = prox_step(ProxSpec(kind, config.lam, eta, grouping=cols), w)
            out[name] = Tensor(w.reshape(n, n))
        else:
            out[name] = Tensor(prox_step(
                ProxSpec(kind, config.lam, eta, grouping=None), w))
    return out


def _degenerate_count(config: ExperimentConfig, model) -> int:
    if config.harness == "channel":
        return sum(bool(np.all(v == 0.0)) for v in model.gate_vectors())
    if config.harness == "wiring":
        return sum(bool(np.all(w == 0.0))
                   for w in model.edge_values().values())
    return model.degenerate_group_count()


def evaluate_split(config: ExperimentConfig, model, bundle: Bundle,
                   which: str = "val") -> dict:
    """Evaluate ``model`` on one split; scores are None off the gcn harness."""
    idx = {"train": bundle.idx_train, "val": bundle.idx_val,
           "test": bundle.idx_test}[which]
    err, s1, s2 = _evaluate(config, model, bundle, idx)
    return {"eval_error": err, "lr_score_k1": s1, "lr_score_k2": s2}


def _evaluate(config: ExperimentConfig, model, bundle: Bundle,
              idx: np.ndarray) -> tuple[float, float | None, float | None]:
    if config.harness in ("channel", "wiring"):
        err = error_rate(model.predict(bundle.x[idx]), bundle.y[idx])
        return err, None, None
    pred = model.predict(bundle.feats[idx]) + bundle.node_base
    err = mape(pred, bundle.targets[idx])
    a = model.eval_adjacency()
    return (err, relationship_score(a, bundle.geodesic, 1),
            relationship_score(a, bundle.geodesic, 2))


def _snapshot(config: ExperimentConfig, model, bundle: Bundle, epoch: int,
              train_loss: float) -> MetricsRecord:
    zeros, total = model.sparsity()
    err, s1, s2 = _evaluate(config, model, bundle, bundle.idx_val)
    return MetricsRecord(
        epoch=epoch,
        train_loss=train_loss,
        eval_error=err,
        zeros=zeros,
        total=total,
        sparsity_rate=(zeros / total) if total else 0.0,
        nonzero_count=total - zeros,
        degenerate_groups=_degenerate_count(config, model),
        lr_score_k1=s1,
        lr_score_k2=s2,
    )


def run(config: ExperimentConfig) -> ExperimentResult:
    """Train one model to completion and record per-epoch metrics."""
    start = time.perf_counter()
    bundle = load_data(config)
    model = build_model(config, bundle)
    params = model.params()
    names = sorted(params)
    opt = (Sgd(config.lr) if config.optimizer == "sgd" else Adam(config.lr))
    rng = np.random.default_rng(config.seed + 1)
    # prox at lambda 0 is the identity; skipping it keeps the trajectory
    # bit-identical to plain gradient descent
    is_prox = config.method.startswith("prox-") and config.lam > 0
    warm_cfg = (replace(config, lam=0.0, sweep=None)
                if config.warmup_frac > 0 and config.lam > 0 else config)
    first_reg_epoch = int(round(config.warmup_frac * config.epochs))
    records: list[MetricsRecord] = []
    n_train = len(bundle.idx_train)
    for epoch in range(config.epochs):
        opt.lr = _schedule_lr(config, epoch)
        regularizing = epoch >= first_reg_epoch
        epoch_cfg = config if regularizing else warm_cfg
        order = bundle.idx_train[rng.permutation(n_train)]
        losses = []
        for lo in range(0, n_train, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if idx.size < 2:
                continue  # standardization needs at least two rows
            loss = _batch_loss(epoch_cfg, model, bundle, idx)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at {lo} (lr {opt.lr:g})")
            losses.append(value)
            grads = backward(loss, wrt=[params[n] for n in names])
            by_name = {
                n: grads.get(params[n],
                             Tensor(np.zeros(params[n].shape)))
                for n in names
            }
            try:
                params = opt.step(params, by_name)
                if is_prox and regularizing:
                    params = _apply_prox(config, model, params, opt.lr)
            except ValueError as exc:
                raise RuntimeError(
                    f"training diverged: parameter update became non-finite "
                    f"at epoch {epoch}, batch starting at {lo} "
                    f"(lr {opt.lr:g})") from exc
            model.set_params(params)
            params = model.params()
        records.append(_snapshot(config, model, bundle, epoch,
                                 float(np.mean(losses)) if losses else np.nan))
    return ExperimentResult(config, records, model,
                            time.perf_counter() - start)


# -- reporting ----------------------------------------------------------------


def sparsity_report(model) -> dict:
    """Zeros / totals broken down by structural unit."""
    if isinstance(model, ChannelNet):
        layers = []
        for i, v in enumerate(model.gate_vectors()):
            layers.append({"layer": i, "zeros": int(np.sum(v == 0.0)),
                           "total": int(v.size)})
        zeros, total = model.sparsity()
        return {"kind": "channel", "zeros": zeros, "total": total,
                "layers": layers}
    if isinstance(model, WiringGraph):
        groups = []
        for v, w in sorted(model.edge_values().items()):
            groups.append({"node": int(v), "zeros": int(np.sum(w == 0.0)),
                           "total": int(w.size)})
        zeros, total = model.sparsity()
        return {"kind": "wiring", "zeros": zeros, "total": total,
                "groups": groups}
    if isinstance(model, GcnModel):
        zeros, total = model.sparsity()
        return {"kind": "gcn", "zeros": zeros, "total": total,
                "degenerate_lines": model.degenerate_group_count()}
    raise TypeError(f"no sparsity report for {type(model).__name__}")


def write_metrics_csv(records: list[MetricsRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsRecord.CSV_FIELDS)
        for record in records:
            writer.writerow(record.csv_row())


def write_summary_json(result: ExperimentResult, path: str,
                       checkpoint_path: str | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_summary(checkpoint_path), fh, indent=2,
                  sort_keys=True)
        fh.write("\n")


def save_model_checkpoint(result: ExperimentResult, path: str) -> None:
    save_checkpoint(path, result.model.params(), result.config.to_dict(),
                    buffers=result.model.buffers())


def restore_model(path: str) -> tuple[ExperimentConfig, object, Bundle]:
    """Rebuild (config, model, data bundle) from a checkpoint file.

    The data bundle is regenerated from the recorded seed, so restored
    models evaluate on exactly the splits they trained against.
    """
    config_dict, arrays, buffers = load_checkpoint(path)
    config = ExperimentConfig.from_dict(config_dict)
    bundle = load_data(config)
    model = build_model(config, bundle)
    expected = {name: t.shape for name, t in model.params().items()}
    got = {name: arr.shape for name, arr in arrays.items()}
    if got != expected:
        off = sorted(set(expected.items()) ^ set(got.items()))
        raise ValueError("checkpoint does not fit the configured model "
                         f"(mismatched entries: {off})")
    model.set_params({name: Tensor(arr) for name, arr in arrays.items()})
    model.set_buffers(buffers)
    return config, model, bundle


# -- multi-run drivers ----------------------------------------------------


def run_many(configs: list[ExperimentConfig],
             max_workers: int | None = None) -> list[ExperimentResult]:
    """Run several configs on a thread pool, preserving input order."""
    if not configs:
        return []
    with ThreadPoolExecutor(max_workers=max_workers or min(4, len(configs))) as pool:
        return list(pool.map(run, configs))


def run_sweep(config: ExperimentConfig,
              max_workers: int | None = None) -> list[ExperimentResult]:
    """Expand ``config.sweep`` into one run per lambda, in listed order."""
    if not config.sweep:
        raise ValueError("config.sweep must list the lambdas to run")
    cells = [replace(config, lam=lam, sweep=None) for lam in config.sweep]
    return run_many(cells, max_workers=max_workers)


def compare_methods(harness: str, methods: list[str], seeds: list[int],
                    lam_by_method: dict[str, float] | None = None,
                    aggregate: str = "median", **config_kw) -> dict:
    """Run a methods x seeds grid and tabulate final metrics.

    ``lam_by_method`` overrides the shared ``lam`` from ``config_kw`` per
    method, which is how sparsity levels get matched across methods.  Rows
    hold every (method, seed) cell; ``summary`` aggregates across seeds with
    the named statistic (``median`` or ``mean``, the latter with ``*_std``
    companions) so the table states which aggregation produced it.
    """
    if aggregate not in ("median", "mean"):
        raise ValueError(f"unknown aggregation {aggregate!r}")
    lam_by_method = lam_by_method or {}
    rows = []
    for method in methods:
        for seed in seeds:
            kw = dict(config_kw)
            kw["lam"] = lam_by_method.get(method, config_kw.get("lam", 0.0))
            if method == "fixed-adjacency-baseline":
                kw["lam"] = 0.0
            config = ExperimentConfig(harness=harness, method=method,
                                      seed=seed, **{k: v for k, v in kw.items()
                                                    if k != "harness"})
            result = run(config)
            rows.append({"method": method, "seed": seed,
                         "eval_error": result.final.eval_error,
                         "nonzero_count": result.final.nonzero_count,
                         "sparsity_rate": result.final.sparsity_rate,
                         "lr_score_k1": result.final.lr_score_k1,
                         "lr_score_k2": result.final.lr_score_k2,
                         "wall_time_s": result.wall_time})
    numeric = ("eval_error", "nonzero_count", "sparsity_rate",
               "lr_score_k1", "lr_score_k2")
    summary = []
    for method in methods:
        cells = [r for r in rows if r["method"] == method]
        entry = {"method": method, "n_seeds": len(cells)}
        for key in numeric:
            values = [c[key] for c in cells if c[key] is not None]
            if not values:
                entry[key] = None
                continue
            if aggregate == "median":
                entry[key] = float(np.median(values))
            else:
                entry[key] = float(np.mean(values))
                entry[key + "_std"] = float(np.std(values))
        summary.append(entry)
    return {"harness": harness, "aggregation": aggregate, "rows": rows,
            "summary": summary}
