"""Class-balanced loss, Adam, the schedule, and the training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, value_of
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, DataError, DegenerateSampleError, TrainingError
from .model import init_params, net_forward
from .paramtree import map_leaves, named_leaves
from .seeding import stream

CLAMP_EPS = 1e-6


@dataclass
class LossWeights:
    """Per-image class weights. The negative weight scales with the positive
    fraction (scarce edges -> cheap negatives), the positive weight with the
    negative fraction."""
    negative_weight: float
    positive_weight: float
    balance_scale: float
    positive_threshold: float


def class_balance_weights(label, balance_scale, positive_threshold) -> LossWeights:
    yv = np.asarray(value_of(label), dtype=np.float64)
    if yv.size == 0:
        raise DegenerateSampleError("empty label")
    if yv.min() < 0 or yv.max() > 1:
        raise DataError(f"label values outside [0, 1]: [{yv.min()}, {yv.max()}]")
    pos = int(np.count_nonzero(yv >= positive_threshold))
    neg = int(np.count_nonzero(yv == 0.0))
    total = pos + neg
    if total == 0:
        raise DegenerateSampleError(
            "label has no countable pixels (all inside the uncertain band)")
    return LossWeights(
        negative_weight=balance_scale * pos / total,
        positive_weight=neg / total,
        balance_scale=balance_scale,
        positive_threshold=positive_threshold,
    )


def weighted_bce(label, prediction, w: LossWeights):
    """-(negW * sum log(1-p) over zero pixels
       + posW * sum log(p) over pixels >= threshold).

    Pixels strictly between 0 and the threshold contribute nothing.
    Predictions are clamped away from {0, 1} before the logs.
    """
    yv = np.asarray(value_of(label), dtype=np.float64)
    pv = value_of(prediction)
    if yv.shape != pv.shape:
        raise ValueError(f"label {yv.shape} vs prediction {pv.shape}")
    p = ad.clamp(prediction, CLAMP_EPS, 1.0 - CLAMP_EPS)
    neg_mask = (yv == 0.0).astype(np.float64)
    pos_mask = (yv >= w.positive_threshold).astype(np.float64)
    neg_term = ad.reduce_sum(ad.mul(neg_mask, ad.log(ad.sub(1.0, p))))
    pos_term = ad.reduce_sum(ad.mul(pos_mask, ad.log(p)))
    return ad.neg(ad.add(ad.mul(w.negative_weight, neg_term),
                         ad.mul(w.positive_weight, pos_term)))


def detection_loss(label, outputs, balance_scale, positive_threshold):
    """Sum of the weighted BCE over the three side maps and the fused map,
    with the class weights computed once per image and shared."""
    w = class_balance_weights(label, balance_scale, positive_threshold)
    total = None
    for head in (*outputs.sides, outputs.fused):
        term = weighted_bce(label, head, w)
        total = term if total is None else ad.add(total, term)
    return total


# ---------------------------------------------------------------------------
# optimizer


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def init_adam(params) -> AdamState:
    state = AdamState()
    for name, leaf in named_leaves(params):
        arr = value_of(leaf)
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def lr_at_epoch(base_lr, epoch, gamma, decay_start):
    """Base rate through decay_start, then geometric decay per epoch."""
    if epoch <= decay_start:
        return base_lr
    return base_lr * gamma ** (epoch - decay_start)


def adam_step(state: AdamState, params, grads, lr):
    """Bias-corrected Adam update, in place on the parameter arrays.

    grads maps parameter names to arrays. Non-finite gradients abort the
    step before any parameter is touched.
    """
    leaves = list(named_leaves(params))
    for name, _ in leaves:
        g = grads[name]
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, leaf in leaves:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        leaf -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    params: object
    opt: AdamState
    epoch_losses: list
    step_losses: list
    skipped: int
    checkpoint_path: Path
    metrics_path: Path


def _leaf_tree(tape, params):
    return map_leaves(params, lambda name, arr: tape.leaf(arr, name))


def _grads_by_name(leafed, grads):
    return {name: grads[node.node_id] for name, node in named_leaves(leafed)}


def train(run_cfg: RunConfig, dataset, out_dir, *, max_steps=None,
          resume=None, progress=None) -> TrainResult:
    """Run the optimization loop.

    dataset: sequence of samples with .image (H, W, 3) and .label (H, W, 1),
    both in [0, 1]. Writes a checkpoint per epoch plus ``checkpoint.mtse``
    (latest) and appends one metrics line per epoch. max_steps caps the
    total number of optimizer steps across epochs (for short smoke runs).
    """
    net_cfg = run_cfg.network
    tr = run_cfg.train
    n = len(dataset)
    if n == 0:
        raise DataError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.tsv"

    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.network != net_cfg:
            raise ConfigError("checkpoint network config differs from the run config")
        params = ck.params
        opt = AdamState(**ck.opt) if ck.opt else init_adam(params)
        start_epoch = ck.epoch + 1
    else:
        params = init_params(net_cfg, stream(tr.seed, "init"))
        opt = init_adam(params)
        start_epoch = 1

    step_losses = []
    epoch_losses = []
    skipped = 0
    steps_done = 0
    ck_path = out_dir / "checkpoint.mtse"
    budget_spent = False

    for epoch in range(start_epoch, tr.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at_epoch(tr.learning_rate, epoch, tr.decay_gamma, tr.decay_start)
        order = stream(tr.seed, f"order.{epoch}").permutation(n)
        batch_losses = []
        for lo in range(0, n, tr.batch_size):
            if max_steps is not None and steps_done >= max_steps:
                budget_spent = True
                break
            tape = Tape()
            leafed = _leaf_tree(tape, params)
            terms = []
            for i in order[lo:lo + tr.batch_size]:
                sample = dataset[int(i)]
                try:
                    class_balance_weights(
                        sample.label, net_cfg.balance_scale, net_cfg.positive_threshold)
                except DegenerateSampleError:
                    skipped += 1
                    continue
                out = net_forward(tape.leaf(sample.image), net_cfg, leafed)
                terms.append(detection_loss(
                    sample.label, out, net_cfg.balance_scale, net_cfg.positive_threshold))
            if not terms:
                continue
            total = terms[0]
            for t in terms[1:]:
                total = ad.add(total, t)
            batch_loss = ad.mul(1.0 / len(terms), total)
            grads = tape.backward(batch_loss)
            adam_step(opt, params, _grads_by_name(leafed, grads), lr)
            loss_val = float(value_of(batch_loss))
            step_losses.append(loss_val)
            batch_losses.append(loss_val)
            steps_done += 1

        mean_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        epoch_losses.append(mean_loss)
        wall = time.perf_counter() - t0
        opt_dict = {"step": opt.step, "m": opt.m, "v": opt.v}
        save_checkpoint(out_dir / f"checkpoint-epoch{epoch:03d}.mtse",
                        net_cfg, params, epoch=epoch, opt=opt_dict)
        save_checkpoint(ck_path, net_cfg, params, epoch=epoch, opt=opt_dict)
        line = f"{epoch}\t{mean_loss:.6f}\t{lr:.6g}\t{wall:.3f}"
        with open(metrics_path, "a") as f:
            f.write(line + "\n")
        if progress is not None:
            progress(line)
        if budget_spent:
            break

    return TrainResult(
        params=params, opt=opt, epoch_losses=epoch_losses,
        step_losses=step_losses, skipped=skipped,
        checkpoint_path=ck_path, metrics_path=metrics_path)
