"""Segment MSE cost, Adam, the plateau learning-rate schedule and the epoch loop."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import save_checkpoint
from .errors import CorpusError, NonFiniteGradientError, ShapeError
from .network import Model, backward, forward
from .schemas import TrainConfig

logger = logging.getLogger(__name__)

SegmentPairs = Tuple[np.ndarray, np.ndarray]


def mse_cost(Z: np.ndarray, S: np.ndarray) -> Tuple[float, np.ndarray]:
    """Per-segment sum of squared errors, averaged over the batch axis.

    Returns the cost and its gradient with respect to ``Z``.
    """
    if Z.shape != S.shape:
        raise ShapeError(f'cost shapes differ: {Z.shape} vs {S.shape}')
    diff = Z - S
    batch = Z.shape[0]
    cost = float(np.sum(np.square(diff, dtype=np.float64)) / batch)
    grad = (2.0 / batch) * diff
    return cost, grad.astype(Z.dtype, copy=False)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> 'AdamState':
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    config: TrainConfig,
) -> Tuple[List[np.ndarray], AdamState]:
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError('params, grads and optimizer state must have the same length')
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ShapeError(f'gradient {i} has shape {g.shape}, parameter has {params[i].shape}')
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NonFiniteGradientError(f'gradient {i} (shape {g.shape}) has {bad} non-finite entries')

    t = state.t + 1
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * np.square(g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params.append((p - step).astype(p.dtype, copy=False))
        new_m.append(m.astype(p.dtype, copy=False))
        new_v.append(v.astype(p.dtype, copy=False))
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def plateau_update(val_costs: Sequence[float], lr: float, config: TrainConfig) -> float:
    """Learning rate for the next epoch given every schedule cost seen so far.

    The patience counter is replayed over the whole history: it resets on a
    strict improvement of the running best and after each reduction. The rate
    drops only when the counter fills on the latest epoch.
    """
    if not val_costs:
        raise ValueError('plateau_update needs at least one cost')
    best = math.inf
    wait = 0
    reduce_now = False
    for cost in val_costs:
        reduce_now = False
        if cost < best:
            best = cost
            wait = 0
        else:
            wait += 1
            if wait >= config.plateau_patience:
                reduce_now = True
                wait = 0
    if reduce_now:
        return max(lr * config.plateau_factor, config.min_lr)
    return lr


@dataclass
class EpochRecord:
    epoch: int
    train_cost: float
    val_cost: Optional[float]
    lr: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    validation_fallback: bool = False
    best_epoch: Optional[int] = None

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['epoch', 'train_cost', 'val_cost', 'lr'])
            for r in self.records:
                val = '' if r.val_cost is None else repr(r.val_cost)
                writer.writerow([r.epoch, repr(r.train_cost), val, repr(r.lr)])
        return path


def evaluate_cost(model: Model, pairs: SegmentPairs, batch_size: int) -> float:
    X, S = pairs
    total = 0.0
    for start in range(0, len(X), batch_size):
        out, _ = forward(model, X[start:start + batch_size])
        cost, _ = mse_cost(out, S[start:start + batch_size].astype(out.dtype, copy=False))
        total += cost * len(out)
    return total / len(X)


def train(
    model: Model,
    train_set: SegmentPairs,
    validation_set: Optional[SegmentPairs],
    config: TrainConfig,
    checkpoint_path: Optional[Path] = None,
    history_path: Optional[Path] = None,
) -> Tuple[Model, TrainHistory]:
    """Minibatch Adam on the segment cost; returns the best-scoring parameters.

    ``model`` is updated in place. With an empty validation set the schedule and
    model selection fall back to the training cost and the history says so.
    """
    history = TrainHistory()
    if config.max_epochs == 0:
        return model, history

    X, S = (np.asarray(a, dtype=model.dtype) for a in train_set)
    if len(X) == 0:
        raise CorpusError('training set is empty')
    if X.shape != S.shape:
        raise ShapeError(f'training inputs {X.shape} and targets {S.shape} differ')

    val: Optional[SegmentPairs] = None
    if validation_set is not None and len(validation_set[0]) > 0:
        val = tuple(np.asarray(a, dtype=model.dtype) for a in validation_set)
    else:
        history.validation_fallback = True
        msg = 'validation set is empty; scheduling on training cost'
        history.warnings.append(msg)
        logger.warning(msg)

    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(model.parameters())
    lr = config.lr0
    schedule_costs: List[float] = []
    best_cost = math.inf
    best_params = [p.copy() for p in model.parameters()]

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            out, cache = forward(model, X[idx])
            cost, grad = mse_cost(out, S[idx])
            grads = backward(model, cache, grad)
            new_params, state = adam_step(model.parameters(), grads.flat(), state, lr, config)
            model.set_parameters(new_params)
            total += cost * len(idx)
        train_cost = total / len(X)

        val_cost = evaluate_cost(model, val, config.batch_size) if val is not None else None
        record = EpochRecord(epoch=epoch, train_cost=train_cost, val_cost=val_cost, lr=lr)
        history.records.append(record)
        schedule_cost = val_cost if val_cost is not None else train_cost
        schedule_costs.append(schedule_cost)
        logger.info('epoch %d: train %.6g, val %s, lr %.3g', epoch, train_cost,
                    'n/a' if val_cost is None else f'{val_cost:.6g}', lr)

        if schedule_cost < best_cost:
            best_cost = schedule_cost
            best_params = [p.copy() for p in model.parameters()]
            history.best_epoch = epoch
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, metadata={
                    'epoch': epoch,
                    'train_cost': train_cost,
                    'val_cost': val_cost,
                    'lr': lr,
                })
        if history_path is not None:
            history.write_csv(history_path)

        new_lr = plateau_update(schedule_costs, lr, config)
        if new_lr < lr:
            logger.info('no improvement for %d epochs, learning rate %.3g -> %.3g',
                        config.plateau_patience, lr, new_lr)
        lr = new_lr

    model.set_parameters(best_params)
    return model, history
