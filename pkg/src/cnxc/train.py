"""The training procedure: epoch loop, Adam updates, plateau LR decay, early stop.

Per epoch: shuffle the training split, iterate batches through forward /
BCE loss / backward / Adam, evaluate validation loss and accuracy, then run
the plateau check (LR x0.1 after `patience` non-improving epochs, stop after
`stop_patience`). The parameters with the lowest validation loss are kept
and serialised as the returned checkpoint. History rows record the learning
rate as adjusted at the end of each epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import metrics as M
from .errors import NumericalError
from .model import Model, save_checkpoint
from .optim import AdamState, PlateauState, adam_step, bce_loss, plateau_check
from .rng import Rng


@dataclass
class Hyper:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    patience: int = 3
    lr_factor: float = 0.1
    min_delta: float = 1e-4
    stop_patience: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    augment: bool = True
    threads: int = 1


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


TrainHistory = list


def format_history(history: TrainHistory) -> str:
    lines = ["epoch train_loss train_acc val_loss val_acc lr"]
    for row in history:
        lines.append(
            f"{row.epoch} {row.train_loss:.6f} {row.train_acc:.6f} "
            f"{row.val_loss:.6f} {row.val_acc:.6f} {row.lr:.8g}"
        )
    return "\n".join(lines) + "\n"


def eval_loss_acc(model: Model, batches) -> tuple[float, float]:
    """Mean BCE and accuracy over batches, inference mode."""
    total_loss = 0.0
    correct = 0
    n = 0
    for batch in batches:
        probs, _ = model.forward(batch.inputs, mode="infer")
        loss, _ = bce_loss(batch.labels, probs)
        b = batch.labels.size
        total_loss += loss * b
        correct += int(np.sum((probs > M.THRESHOLD) == (batch.labels > 0.5)))
        n += b
    return total_loss / n, correct / n


def evaluate(model: Model, index: ds.DatasetIndex, split: str, pipe: ds.Pipeline,
             batch_size: int = 32, threads: int = 1) -> M.EvalReport:
    """EvalReport over one split: confusion counts, the four metrics, ROC/AUC."""
    scores, labels = [], []
    for batch in ds.batch_iter(index, split, pipe, batch_size=batch_size, threads=threads):
        probs, _ = model.forward(batch.inputs, mode="infer")
        scores.append(probs.astype(np.float64))
        labels.append(batch.labels.astype(np.int64))
    return M.evaluate_scores(np.concatenate(scores), np.concatenate(labels))


def train(
    model: Model,
    index: ds.DatasetIndex,
    pipe: ds.Pipeline,
    hyper: Hyper,
    rng: Rng,
    val_evaluator=None,
    log=None,
):
    """Run the epoch loop; returns (model at best val loss, history, checkpoint bytes).

    val_evaluator overrides validation measurement (epoch -> (loss, acc));
    the training tests use it to script plateau sequences.
    """
    adam = AdamState(lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2, epsilon=hyper.epsilon)
    plateau = PlateauState(
        patience=hyper.patience,
        factor=hyper.lr_factor,
        min_delta=hyper.min_delta,
        stop_patience=hyper.stop_patience,
    )
    history: TrainHistory = []
    best_val = float("inf")
    best_state = model.copy_state()
    drop_rng = rng.derive("dropout")
    params = model.parameters()

    for epoch in range(1, hyper.epochs + 1):
        epoch_loss = 0.0
        correct = 0
        seen = 0
        batches = ds.batch_iter(
            index,
            "train",
            pipe,
            batch_size=hyper.batch_size,
            shuffle=True,
            rng=rng,
            augment=hyper.augment,
            epoch=epoch,
            threads=hyper.threads,
        )
        for bi, batch in enumerate(batches):
            probs, tape = model.forward(batch.inputs, mode="train", rng=drop_rng)
            loss, grad = bce_loss(batch.labels, probs)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = model.backward(grad, tape)
            try:
                adam_step(params, grads, adam)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {bi}: {exc}") from None
            b = batch.labels.size
            epoch_loss += loss * b
            correct += int(np.sum((probs > M.THRESHOLD) == (batch.labels > 0.5)))
            seen += b

        if val_evaluator is not None:
            val_loss, val_acc = val_evaluator(epoch)
        else:
            val_loss, val_acc = eval_loss_acc(
                model,
                ds.batch_iter(index, "val", pipe, batch_size=hyper.batch_size, threads=hyper.threads),
            )
        new_lr, stop, plateau = plateau_check(plateau, val_loss, adam.lr)
        adam.lr = new_lr
        row = EpochStats(epoch, epoch_loss / seen, correct / seen, val_loss, val_acc, new_lr)
        history.append(row)
        if log:
            log(
                f"epoch {epoch}: train_loss={row.train_loss:.4f} train_acc={row.train_acc:.4f} "
                f"val_loss={val_loss:.4f} val_acc={val_acc:.4f} lr={new_lr:.2e}"
            )
        if val_loss < best_val:
            best_val = val_loss
            best_state = model.copy_state()
        if stop:
            if log:
                log(f"early stop at epoch {epoch} (no improvement for {plateau.stop_patience} epochs)")
            break

    model.load_state(best_state)
    return model, history, save_checkpoint(model)
