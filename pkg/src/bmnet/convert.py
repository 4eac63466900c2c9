"""Standard-to-BM weight conversion and incremental layer-by-layer training.

Conversion splits each classical weight by sign into the log-domain banks:
positive weights populate V+ with ln w, negative ones populate V- with
ln|w|, and the vacant slot holds the -inf sentinel; the bias passes through
bitwise.  A single-input neuron converted this way is exact up to ln/exp
rounding, which is what anchors fine-tuning after each replacement.

The incremental schedule replaces convertible layers first to last.  After
each replacement the whole partly-BM network is evaluated (the immediate
post-conversion drop), fine-tuned for a fixed number of epochs with a
fresh optimizer, and evaluated again (the recovery).  After the last layer
an optional final phase trains until validation accuracy stops improving
under a patience rule, restoring the best state.  All weights stay
trainable in every stage, converted and classical alike.

Stage logs carry one record per evaluation: the baseline, then a
converted/finetuned pair per stage, then the final phase if it ran.
"""

from __future__ import annotations

import copy
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import AugmentConfig, DataBundle
from .layers import NEG_SENTINEL, BMConv2D, BMDense, BMWeights, Conv2D, Dense
from .network import Network
from .optim import Adam, AdamConfig
from .tensor import Tensor
from .train import NumericFailure, evaluate, train_epochs, train_until_no_improvement


class ConversionError(ValueError):
    """Plan and network disagree, or a layer cannot be converted."""


def convert_weights(w: Tensor, b: Tensor, neg_sentinel: float = NEG_SENTINEL) -> BMWeights:
    """Sign-split a classical weight tensor into log-domain banks."""
    w = np.asarray(w, dtype=np.float64)
    pos = w > 0
    neg = w < 0
    with np.errstate(divide="ignore"):
        vplus = np.where(pos, np.log(np.where(pos, w, 1.0)), neg_sentinel)
        vminus = np.where(neg, np.log(np.where(neg, -w, 1.0)), neg_sentinel)
    return BMWeights(vplus, vminus, np.array(b, dtype=np.float64, copy=True), neg_sentinel)


def reconstruct_weights(bm: BMWeights) -> Tensor:
    """Algebraic inverse of convert_weights for freshly converted banks."""
    w = np.zeros_like(bm.vplus)
    live_p = bm.vplus > bm.neg_sentinel
    live_m = bm.vminus > bm.neg_sentinel
    w[live_p] = np.exp(bm.vplus[live_p])
    w[live_m] -= np.exp(bm.vminus[live_m])
    return w


def convert_layer(layer):
    """Classical conv/fc layer -> its BM replacement, geometry preserved."""
    if isinstance(layer, Dense):
        return BMDense(convert_weights(layer.w, layer.b), act=layer.act)
    if isinstance(layer, Conv2D):
        return BMConv2D(convert_weights(layer.w, layer.b), stride=layer.stride,
                        padding=layer.padding, act=layer.act)
    raise ConversionError(f"layer of kind {getattr(layer, 'kind', '?')!r} is not convertible")


@dataclass
class ConversionPlan:
    """Which layers to convert, in order, and how long to fine-tune.

    final_epochs None means "train until validation accuracy stops
    improving" with the given patience; 0 skips the final phase."""

    layer_order: list[str]
    epochs_per_layer: int = 50
    final_epochs: int | None = None
    patience: int = 10


def plan_for_network(net: Network, epochs_per_layer: int = 50,
                     final_epochs: int | None = None, patience: int = 10) -> ConversionPlan:
    return ConversionPlan(net.convertible_layers(), epochs_per_layer, final_epochs, patience)


def _check_plan(net: Network, plan: ConversionPlan) -> None:
    convertible = net.convertible_layers()
    unknown = [lid for lid in plan.layer_order if lid not in convertible]
    if unknown:
        raise ConversionError(f"plan references non-convertible or unknown layers: {unknown}")
    if len(set(plan.layer_order)) != len(plan.layer_order):
        raise ConversionError("plan lists a layer more than once")


@dataclass
class StageRecord:
    stage: int
    layer_id: str
    phase: str  # baseline | converted | finetuned
    accuracy: float
    macro_precision: float
    macro_recall: float
    epoch_count: int
    wall_time: float


@dataclass
class ConversionResult:
    net: Network
    stages: list[StageRecord] = field(default_factory=list)


def _record(stages, stage, layer_id, phase, metrics, epochs, t0) -> None:
    stages.append(StageRecord(stage, layer_id, phase, metrics["accuracy"],
                              metrics["macro_precision"], metrics["macro_recall"],
                              epochs, time.perf_counter() - t0))


def incremental_convert_and_train(net: Network, bundle: DataBundle, plan: ConversionPlan,
                                  opt_cfg: AdamConfig | None = None, seed: int = 0,
                                  batch_size: int = 128, augment: AugmentConfig | None = None,
                                  eval_batch: int = 512,
                                  progress=None) -> ConversionResult:
    """Run the incremental conversion schedule in place on `net`.

    Every evaluation uses the test split; the final until-no-improvement
    phase monitors the validation split.  Deterministic for a fixed seed:
    stage s draws its shuffle streams from (seed, stage), so truncating the
    plan reproduces the untruncated run's prefix bit-exactly.
    """
    opt_cfg = opt_cfg or AdamConfig()
    _check_plan(net, plan)
    if len(bundle.train) == 0:
        raise ValueError("empty training dataset")
    stages: list[StageRecord] = []
    ncls = bundle.num_classes
    t0 = time.perf_counter()
    _record(stages, 0, "", "baseline",
            evaluate(net, bundle.test, eval_batch, num_classes=ncls), 0, t0)
    if progress:
        progress(stages[-1])
    for s, layer_id in enumerate(plan.layer_order, start=1):
        t0 = time.perf_counter()
        net.replace_layer(layer_id, convert_layer(net.layer(layer_id)))
        _record(stages, s, layer_id, "converted",
                evaluate(net, bundle.test, eval_batch, num_classes=ncls), 0, t0)
        if progress:
            progress(stages[-1])
        if plan.epochs_per_layer > 0:
            t0 = time.perf_counter()
            stage_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(s,)).generate_state(1)[0])
            try:
                train_epochs(net, bundle.train, plan.epochs_per_layer, batch_size,
                             Adam(opt_cfg), stage_seed, augment=augment)
            except NumericFailure as e:
                raise NumericFailure(f"fine-tuning stage {s} (layer {layer_id}): {e}") from e
            _record(stages, s, layer_id, "finetuned",
                    evaluate(net, bundle.test, eval_batch, num_classes=ncls),
                    plan.epochs_per_layer, t0)
            if progress:
                progress(stages[-1])
    if plan.layer_order and plan.final_epochs != 0:
        t0 = time.perf_counter()
        final_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(len(plan.layer_order) + 1,)).generate_state(1)[0])
        if plan.final_epochs is None:
            res = train_until_no_improvement(net, bundle.train, bundle.val, opt_cfg,
                                             batch_size, final_seed, plan.patience,
                                             augment=augment)
            epochs_run = res.epochs_run
        else:
            train_epochs(net, bundle.train, plan.final_epochs, batch_size,
                         Adam(opt_cfg), final_seed, augment=augment)
            epochs_run = plan.final_epochs
        _record(stages, len(plan.layer_order) + 1, "final", "finetuned",
                evaluate(net, bundle.test, eval_batch, num_classes=ncls), epochs_run, t0)
        if progress:
            progress(stages[-1])
    return ConversionResult(net, stages)


def partial_conversion_accuracy_curve(net: Network, bundle: DataBundle, plan: ConversionPlan,
                                      k: int, **kwargs) -> ConversionResult:
    """Incremental conversion stopped after k layers, on a copy of `net`.

    With k equal to the full plan length this is exactly
    incremental_convert_and_train (final phase included); for smaller k the
    final phase is skipped."""
    if not 0 <= k <= len(plan.layer_order):
        raise ConversionError(f"k={k} outside 0..{len(plan.layer_order)}")
    full = k == len(plan.layer_order)
    truncated = ConversionPlan(plan.layer_order[:k], plan.epochs_per_layer,
                               plan.final_epochs if full else 0, plan.patience)
    net.clear_caches()
    return incremental_convert_and_train(copy.deepcopy(net), bundle, truncated, **kwargs)


# ---------------------------------------------------------------------------
# stage log emission

STAGE_COLUMNS = ("stage", "layer_id", "phase", "accuracy", "macro_precision",
                 "macro_recall", "epoch_count", "wall_time")


def stage_log_to_csv(stages: list[StageRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(STAGE_COLUMNS) + "\n")
    for r in stages:
        d = asdict(r)
        buf.write(",".join(repr(d[c]) if isinstance(d[c], float) else str(d[c]) for c in STAGE_COLUMNS) + "\n")
    return buf.getvalue()


def stage_log_to_ndjson(stages: list[StageRecord]) -> str:
    return "".join(json.dumps(asdict(r)) + "\n" for r in stages)
