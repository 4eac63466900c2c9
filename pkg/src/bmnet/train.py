"""Mini-batch training and evaluation loops.

All randomness (shuffles, augmentation streams) derives from explicit
seeds; with threads=1 every run is bit-reproducible.  Evaluation may shard
batches over a thread pool: shards are independent forward passes whose
predictions are reassembled in order and whose op counters merge by
integer addition, so the result does not depend on scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentConfig, Dataset, augment_batch
from .layers import Softmax, softmax_cross_entropy
from .metrics import classification_metrics
from .network import Network
from .opcount import OpCount
from .optim import Adam, AdamConfig


class NumericFailure(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_accuracy: float | None
    wall_time: float


def _loss_and_grad(net: Network, out, labels):
    last = net.slots[-1][1] if net.slots else None
    logits = last._logits if isinstance(last, Softmax) else out
    return softmax_cross_entropy(logits, labels)


def train_epochs(net: Network, train: Dataset, epochs: int, batch_size: int,
                 opt: Adam, seed: int, augment: AugmentConfig | None = None,
                 val: Dataset | None = None, epoch_offset: int = 0) -> list[EpochStats]:
    """Plain epoch loop; raises NumericFailure on a non-finite loss.

    epoch_offset keys the per-epoch shuffle and augmentation streams, so a
    continued run draws fresh permutations rather than replaying epoch 0.
    """
    history = []
    n = len(train)
    if n == 0:
        raise ValueError("empty training dataset")
    for e in range(epochs):
        t0 = time.perf_counter()
        epoch = epoch_offset + e
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,))))
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            x = train.images[idx]
            if augment is not None and augment.active():
                x = augment_batch(x, augment, seed, epoch, start)
            out = net.forward(x, train=True)
            loss, grad = _loss_and_grad(net, out, train.labels[idx])
            if not np.isfinite(loss):
                raise NumericFailure(f"non-finite loss at epoch {epoch}, batch offset {start}")
            net.backward(grad)
            opt.step(net.named_parameters(), net.named_gradients())
            losses.append(loss)
        val_acc = evaluate(net, val)["accuracy"] if val is not None else None
        history.append(EpochStats(epoch, float(np.mean(losses)), val_acc, time.perf_counter() - t0))
    return history


def predict(net: Network, ds: Dataset, batch_size: int = 512,
            ops: OpCount | None = None, threads: int = 1) -> np.ndarray:
    """Class predictions over a dataset, forward passes in eval mode."""
    spans = [(s, min(s + batch_size, len(ds))) for s in range(0, len(ds), batch_size)]

    def run(span):
        local = OpCount() if ops is not None else None
        out = net.forward(ds.images[span[0] : span[1]], train=False, ops=local)
        return out.argmax(axis=1), local

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, spans))
    else:
        results = [run(sp) for sp in spans]
    if ops is not None:
        for _, local in results:
            ops += local
    return np.concatenate([r[0] for r in results]) if results else np.empty(0, dtype=np.int64)


def evaluate(net: Network, ds: Dataset, batch_size: int = 512, approx: bool = False,
             num_classes: int = 10, ops: OpCount | None = None, threads: int = 1) -> dict:
    """Accuracy/macro metrics of a network on a dataset; optionally with
    approximate ln/exp switched on in BM layers for the duration."""
    if approx:
        net.set_approx_math(True)
    try:
        preds = predict(net, ds, batch_size, ops=ops, threads=threads)
    finally:
        if approx:
            net.set_approx_math(False)
    return classification_metrics(ds.labels, preds, num_classes)


@dataclass
class EarlyStopResult:
    epochs_run: int
    best_val_accuracy: float
    history: list[EpochStats] = field(default_factory=list)


def train_until_no_improvement(net: Network, train: Dataset, val: Dataset,
                               opt_cfg: AdamConfig, batch_size: int, seed: int,
                               patience: int, max_epochs: int = 200,
                               augment: AugmentConfig | None = None,
                               epoch_offset: int = 0) -> EarlyStopResult:
    """Train until validation accuracy stops improving for `patience`
    epochs, then restore the best state."""
    opt = Adam(opt_cfg)
    best = evaluate(net, val)["accuracy"]
    best_snap = net.snapshot_state()
    best_epoch = -1
    history = []
    for e in range(max_epochs):
        history += train_epochs(net, train, 1, batch_size, opt, seed,
                                augment=augment, val=val, epoch_offset=epoch_offset + e)
        acc = history[-1].val_accuracy
        if acc > best:
            best, best_epoch = acc, e
            best_snap = net.snapshot_state()
        elif e - best_epoch >= patience:
            break
    net.restore_state(best_snap)
    return EarlyStopResult(len(history), best, history)
