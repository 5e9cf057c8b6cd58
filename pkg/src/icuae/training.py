"""Minibatch training with early stopping and reproducible histories.

The loop is model-agnostic: anything exposing ``parameters()`` plus a
batch loss/gradient hook trains the same way. Dense and sequence
autoencoders are adapted internally; tests plug in small probe models
through the same hook.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .dense import DenseAutoencoder, dense_backward, dense_forward
from .errors import ConfigError, NumericError, ShapeError
from .lstm import SeqAutoencoder, SeqBatch, seq_forward_backward
from .numeric import flatten_arrays, mse, write_flat


class Optimizer(Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int
    batch_size: int = 128
    patience: int = 5
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    seed: int = 0
    mask_padding: bool = False
    clip_norm: Optional[float] = 5.0  # None disables clipping

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        # 0 is allowed as a degenerate fixed-point probe.
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive or None, got {self.clip_norm}")


@dataclass
class TrainHistory:
    train_mse: List[float] = field(default_factory=list)
    validation_mse: List[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 before any epoch completes
    stopped_early: bool = False

    def epochs_since_improvement(self) -> int:
        """Epochs elapsed after the (first) minimum validation loss."""
        if not self.validation_mse:
            return 0
        best_index = int(np.argmin(self.validation_mse))
        return len(self.validation_mse) - best_index - 1


@dataclass
class OptimizerState:
    kind: Optimizer
    step: int = 0
    first_moment: Optional[np.ndarray] = None
    second_moment: Optional[np.ndarray] = None

    @classmethod
    def for_params(cls, kind: Optimizer, n_params: int) -> "OptimizerState":
        if kind is Optimizer.ADAM:
            return cls(kind=kind, first_moment=np.zeros(n_params),
                       second_moment=np.zeros(n_params))
        return cls(kind=kind)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _check_finite_grads(grads: np.ndarray) -> None:
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient")


def sgd_update(params: np.ndarray, grads: np.ndarray, state: OptimizerState,
               lr: float) -> Tuple[np.ndarray, OptimizerState]:
    _check_finite_grads(grads)
    state.step += 1
    return params - lr * grads, state


def adam_update(params: np.ndarray, grads: np.ndarray, state: OptimizerState,
                lr: float) -> Tuple[np.ndarray, OptimizerState]:
    _check_finite_grads(grads)
    if state.first_moment is None or state.second_moment is None:
        raise ConfigError("optimizer state missing moment accumulators")
    state.step += 1
    state.first_moment *= ADAM_BETA1
    state.first_moment += (1.0 - ADAM_BETA1) * grads
    state.second_moment *= ADAM_BETA2
    state.second_moment += (1.0 - ADAM_BETA2) * grads * grads
    m_hat = state.first_moment / (1.0 - ADAM_BETA1 ** state.step)
    v_hat = state.second_moment / (1.0 - ADAM_BETA2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS), state


def minibatch_iter(dataset_size: int, batch_size: int, seed: int,
                   epoch: int) -> List[np.ndarray]:
    """Shuffled partition of range(dataset_size), deterministic per epoch."""
    if dataset_size < 1:
        raise ConfigError("dataset_size must be >= 1")
    perm = np.random.default_rng([seed, epoch]).permutation(dataset_size)
    return [perm[i:i + batch_size] for i in range(0, dataset_size, batch_size)]


def early_stop_check(history: TrainHistory, patience: int) -> bool:
    """True when validation loss has not strictly improved for `patience` epochs."""
    return history.epochs_since_improvement() >= patience


@dataclass
class WindowSet:
    """Fixed-length windows plus each sample's true (unpadded) hour count."""
    windows: np.ndarray  # n x T x features
    true_hours: np.ndarray  # n

    def __post_init__(self):
        self.windows = np.ascontiguousarray(self.windows, dtype=np.float64)
        self.true_hours = np.asarray(self.true_hours, dtype=np.int64)
        if self.windows.ndim != 3:
            raise ShapeError("windows must be n x T x features", self.windows.shape)
        if self.true_hours.shape != (self.windows.shape[0],):
            raise ShapeError("true_hours must have one entry per window",
                             self.true_hours.shape, (self.windows.shape[0],))

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def num_steps(self) -> int:
        return self.windows.shape[1]

    @property
    def num_features(self) -> int:
        return self.windows.shape[2]


def _batch_loss_and_grads(model, windows: np.ndarray, lengths: np.ndarray,
                          mask_padding: bool):
    """(loss, grads, weight) for one minibatch; weight is the loss denominator."""
    if isinstance(model, DenseAutoencoder):
        if mask_padding:
            raise ConfigError("mask_padding applies to sequence models only")
        rows = windows.reshape(windows.shape[0], -1)
        recon, cache = dense_forward(model, rows)
        grads = dense_backward(model, cache, rows)
        return mse(recon, rows), grads, float(rows.size)
    if isinstance(model, SeqAutoencoder):
        batch = SeqBatch(values=windows, true_lengths=lengths)
        loss, grads = seq_forward_backward(model, batch, mask_padding)
        if mask_padding:
            weight = float(np.sum(lengths) * windows.shape[2])
        else:
            weight = float(windows.size)
        return loss, grads, weight
    return model.batch_loss_and_grads(windows, lengths, mask_padding)


def evaluate_mse(model, dataset: WindowSet, mask_padding: bool = False,
                 batch_size: int = 128) -> float:
    """Exact mean squared error over a whole dataset, evaluated in chunks.

    With mask_padding=True the average runs over true hours only. For
    dense models that is an eval-only view (training stays unmasked, the
    fixed-length objective has no notion of sequence length).
    """
    total = 0.0
    weight_sum = 0.0
    if isinstance(model, DenseAutoencoder) and mask_padding:
        steps = dataset.num_steps
        for start in range(0, len(dataset), batch_size):
            idx = slice(start, start + batch_size)
            windows = dataset.windows[idx]
            rows = windows.reshape(windows.shape[0], -1)
            recon = dense_forward(model, rows)[0].reshape(windows.shape)
            real = (np.arange(steps)[None, :, None]
                    < dataset.true_hours[idx][:, None, None])
            total += float(np.sum(((recon - windows) ** 2) * real))
            weight_sum += float(real.sum()) * windows.shape[2]
        return total / weight_sum
    for start in range(0, len(dataset), batch_size):
        idx = slice(start, start + batch_size)
        loss, _, weight = _batch_loss_and_grads(
            model, dataset.windows[idx], dataset.true_hours[idx], mask_padding)
        total += loss * weight
        weight_sum += weight
    return total / weight_sum


def clip_gradients(flat_grads: np.ndarray, clip_norm: Optional[float]) -> np.ndarray:
    """Scale down to the given global L2 norm; no-op when under it."""
    _check_finite_grads(flat_grads)
    if clip_norm is None:
        return flat_grads
    norm = float(np.linalg.norm(flat_grads))
    if norm > clip_norm:
        return flat_grads * (clip_norm / norm)
    return flat_grads


def train(model, train_set: WindowSet, validation_set: WindowSet,
          config: TrainConfig):
    """Run minibatch epochs until early stopping or max_epochs.

    Per-epoch train_mse is the batch-weighted mean of minibatch losses seen
    during updates (one pass, not a re-evaluation). The returned model
    carries the parameters of the best validation epoch.
    """
    if len(train_set) == 0 or len(validation_set) == 0:
        raise ConfigError("train and validation sets must be nonempty")
    params = model.parameters()
    state = OptimizerState.for_params(
        config.optimizer, sum(p.size for p in params))
    update = adam_update if config.optimizer is Optimizer.ADAM else sgd_update

    history = TrainHistory()
    best_val = np.inf
    best_params = flatten_arrays(params)

    for epoch in range(1, config.max_epochs + 1):
        epoch_loss = 0.0
        epoch_weight = 0.0
        for batch_no, idx in enumerate(minibatch_iter(
                len(train_set), config.batch_size, config.seed, epoch)):
            try:
                loss, grads, weight = _batch_loss_and_grads(
                    model, train_set.windows[idx], train_set.true_hours[idx],
                    config.mask_padding)
                flat = clip_gradients(flatten_arrays(grads), config.clip_norm)
                new_flat, state = update(flatten_arrays(params), flat, state,
                                         config.learning_rate)
            except NumericError as err:
                raise NumericError(
                    f"epoch {epoch} batch {batch_no}: {err}") from err
            write_flat(params, new_flat)
            epoch_loss += loss * weight
            epoch_weight += weight

        val = evaluate_mse(model, validation_set, config.mask_padding,
                           config.batch_size)
        history.train_mse.append(epoch_loss / epoch_weight)
        history.validation_mse.append(val)
        if val < best_val:
            best_val = val
            best_params = flatten_arrays(params)
            history.best_epoch = epoch
        if early_stop_check(history, config.patience):
            history.stopped_early = True
            break

    write_flat(params, best_params)
    return model, history


def write_history_csv(history: TrainHistory, path,
                      manifest_hash: Optional[str] = None) -> None:
    """epoch, train_mse, val_mse rows with round-trip float formatting."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if manifest_hash is not None:
            fh.write(f"# manifest_hash={manifest_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for i, (tr, va) in enumerate(zip(history.train_mse,
                                         history.validation_mse), start=1):
            writer.writerow([i, repr(float(tr)), repr(float(va))])
