"""Reconstruction objective, Adadelta, augmentation and the training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from stcae.architectures import (
    init_params,
    model_backward,
    model_forward,
    normalize_variant,
    save_checkpoint,
)
from stcae.errors import ContractError, TrainingDiverged

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 16
    augment: bool = False
    seed: int = 0
    rho: float = 0.95
    eps: float = 1e-6
    lr: float = 1.0
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")

    @classmethod
    def for_variant(cls, variant, **overrides):
        """Batch size 16 and no augmentation for DSTCAE; 32 with flips for CAE/DAE."""
        v = normalize_variant(variant)
        three_d = v.startswith("dstcae")
        kw = {"batch_size": 16 if three_d else 32, "augment": not three_d}
        kw.update({k: val for k, val in overrides.items() if val is not None})
        return cls(**kw)


def mse_loss(inputs, outputs):
    """(1/N) * sum_i ||I_i - O_i||^2 and its gradient with respect to the outputs."""
    inputs = np.asarray(inputs, dtype=np.float32)
    outputs = np.asarray(outputs, dtype=np.float32)
    if inputs.shape != outputs.shape:
        raise ContractError(f"loss: input shape {inputs.shape} != output shape {outputs.shape}")
    n = inputs.shape[0]
    diff = outputs.astype(np.float64) - inputs.astype(np.float64)
    loss = float(np.sum(diff * diff) / n)
    return loss, (2.0 / n * diff).astype(np.float32)


@dataclass
class AdadeltaState:
    sq_grad: dict = field(default_factory=dict)
    sq_update: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, params):
        return cls(
            {i: [np.zeros_like(t) for t in ts] for i, ts in params.tensors.items()},
            {i: [np.zeros_like(t) for t in ts] for i, ts in params.tensors.items()},
        )


def adadelta_step(params, grads, state, cfg):
    """In-place Adadelta update of ``params`` and ``state``."""
    rho, eps, lr = cfg.rho, cfg.eps, cfg.lr
    for i, ts in params.tensors.items():
        for k, (p, g) in enumerate(zip(ts, grads.tensors[i])):
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient in layer {i}", layer=i)
            eg = state.sq_grad[i][k]
            ed = state.sq_update[i][k]
            eg *= rho
            eg += (1.0 - rho) * g * g
            delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
            ed *= rho
            ed += (1.0 - rho) * delta * delta
            p += (lr * delta).astype(p.dtype)
    return params, state


def augment_hflip(batch):
    """The batch followed by its left-right mirror (width is the second-to-last axis)."""
    batch = np.asarray(batch)
    return np.concatenate([batch, batch[..., ::-1, :]], axis=0)


def epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, epoch]).permutation(n)


def fit(spec, data, cfg: TrainConfig, params=None, checkpoint_path=None):
    """Train on ``data`` shaped (n,) + spec.input_shape; returns (params, per-epoch mean loss)."""
    data = np.asarray(data, dtype=np.float32)
    if len(data) == 0:
        raise ContractError("empty training set")
    if tuple(data.shape[1:]) != tuple(spec.input_shape):
        raise ContractError(f"training samples {data.shape[1:]} != model input {spec.input_shape}")
    if cfg.augment and spec.is_3d:
        log.warning("horizontal-flip augmentation requested for a 3D model")
    params = init_params(spec, cfg.seed) if params is None else params
    state = AdadeltaState.zeros(params)
    history = []
    n = len(data)
    for epoch in range(cfg.epochs):
        order = epoch_order(n, cfg.seed, epoch)
        losses = []
        for b, a in enumerate(range(0, n, cfg.batch_size)):
            batch = data[order[a:a + cfg.batch_size]]
            if cfg.augment:
                batch = augment_hflip(batch)
            rng = np.random.default_rng([cfg.seed, epoch, b])
            out, caches = model_forward(spec, params, batch, training=True, rng=rng)
            loss, grad = mse_loss(batch, out)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}", epoch=epoch + 1)
            grads = model_backward(spec, params, caches, grad)
            try:
                adadelta_step(params, grads, state, cfg)
            except TrainingDiverged as exc:
                exc.epoch = epoch + 1
                raise
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.info("epoch %d/%d loss %.6g", epoch + 1, cfg.epochs, history[-1])
        if checkpoint_path and cfg.checkpoint_interval and (epoch + 1) % cfg.checkpoint_interval == 0:
            save_checkpoint(params, checkpoint_path)
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path)
    return params, history


def write_loss_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for e, v in enumerate(history, start=1):
            w.writerow([e, repr(float(v))])


def read_loss_csv(path) -> list:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["mean_loss"]) for r in rows]


__all__ = [
    "TrainConfig", "AdadeltaState", "mse_loss", "adadelta_step", "augment_hflip",
    "fit", "write_loss_csv", "read_loss_csv", "epoch_order",
]
