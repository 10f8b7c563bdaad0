"""Plain SGD training with a step-decayed learning rate and full determinism.

One iteration = one mini-batch. Batch order is a seeded permutation per
epoch, the update rule is vanilla gradient descent (no momentum), and the
loss trace records the task and orthogonality terms separately so ablation
runs can compare them directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import EmptyInputError
from .model import DimensionModel, TrainConfig, loss_components, lr_at, save_checkpoint


class TrainingDivergedError(RuntimeError):
    """The loss stopped being finite; carries the last finite trace entry."""

    def __init__(self, message: str, last_entry: "TraceEntry | None"):
        super().__init__(message)
        self.last_entry = last_entry


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    l_task: float
    l_orth: float
    lr: float


@dataclass
class TrainResult:
    model: DimensionModel
    trace: list[TraceEntry]


ProgressSink = Callable[[TraceEntry], None]


def sgd_step(model: DimensionModel, lr: float) -> None:
    for _, param in model.net.parameters():
        if param.grad is not None:
            param.data -= lr * param.grad


def train(model: DimensionModel, images: np.ndarray, targets: np.ndarray,
          cfg: TrainConfig, progress: ProgressSink | None = None,
          checkpoint_path=None) -> TrainResult:
    """Train one dimension model in place; returns it with the loss trace.

    ``images`` is (N,C,H,W) scaled to [0,1]; ``targets`` is (N,) on the
    [-2, 2] scale. Stops after ``cfg.epochs`` epochs, or earlier once
    ``cfg.max_iters`` iterations have run. A checkpoint is written at the
    end when ``checkpoint_path`` is given.
    """
    images = np.asarray(images, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = images.shape[0]
    if n == 0:
        raise EmptyInputError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    trace: list[TraceEntry] = []
    lam = cfg.orth_weight

    done = False
    for _epoch in range(cfg.epochs):
        if done:
            break
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            lr = lr_at(model.iteration, cfg)
            task, orth = loss_components(model, images[idx], targets[idx], training=True)
            task_val, orth_val = task.item(), orth.item()
            if not (np.isfinite(task_val) and np.isfinite(orth_val)):
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {model.iteration}",
                    trace[-1] if trace else None)
            loss = task if lam == 0 else ad.add(task, ad.scale(orth, lam))
            ad.backward(loss)
            sgd_step(model, lr)
            entry = TraceEntry(model.iteration, task_val, orth_val, lr)
            trace.append(entry)
            if progress is not None:
                progress(entry)
            model.iteration += 1
            if cfg.max_iters is not None and model.iteration >= cfg.max_iters:
                done = True
                break

    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return TrainResult(model, trace)


def write_trace(trace: list[TraceEntry], path) -> None:
    """Loss trace as CSV: iteration, task loss, orthogonality loss, lr."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("iteration,l_task,l_orth,lr\n")
        for e in trace:
            f.write(f"{e.iteration},{e.l_task!r},{e.l_orth!r},{e.lr!r}\n")
