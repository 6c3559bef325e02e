"""Fitting the channel combiner with binary cross-entropy.

The combiner is a logistic model per voxel, so the loss is convex in
``(w, b)`` and plain gradient descent is enough.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError, ParameterError, ValidationError
from .metrics import evaluate
from .spectral import CombinerWeights, SpectralParams, channel_logits, sigmoid
from .tracking import DEFAULT_THRESHOLD, track_sequence
from .volume import as_stack, as_volume

logger = logging.getLogger(__name__)

EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    batch: int = 0  # voxels per step, 0 = full batch
    l2_penalty: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ParameterError(f"epochs must be an integer >= 1, got {self.epochs}")
        if self.batch < 0:
            raise ParameterError(f"batch must be >= 0, got {self.batch}")
        if not self.l2_penalty >= 0:
            raise ParameterError(f"l2_penalty must be >= 0, got {self.l2_penalty}")


def _bce(p: np.ndarray, g: np.ndarray) -> float:
    p = np.clip(p, EPS, 1.0 - EPS)
    return float(np.mean(-(g * np.log(p) + (1.0 - g) * np.log1p(-p))))


def bce_loss(pred, gt) -> float:
    """Mean binary cross-entropy, predictions clipped to [1e-7, 1 - 1e-7]."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch: pred{pred.shape} gt{gt.shape}")
    return _bce(pred, gt)


def _check_pair(cs, gt):
    stack = as_stack(cs)
    g = as_volume(gt, "gt")
    if stack.shape[1:] != g.shape:
        raise ValidationError(f"stack frames {stack.shape[1:]} do not match gt {g.shape}")
    if not np.all((g == 0) | (g == 1)):
        raise ValidationError("ground truth must be binary")
    return stack, g


def combiner_gradient(cs, cw: CombinerWeights, gt, l2_penalty: float = 0.0):
    """Gradient of ``bce_loss(combine_channels(cs, cw), gt) + l2_penalty * |w|^2``.

    Returns ``(grad_w, grad_b)``. Uses the logistic identity
    dL/dz = sigmoid(z) - g, averaged over voxels. Ignores the clipping in
    ``bce_loss``, which only matters for saturated logits.
    """
    stack, g = _check_pair(cs, gt)
    z = channel_logits(stack, cw)
    r = sigmoid(z) - g
    n = r.size
    grad_w = np.tensordot(stack.astype(np.float64), r, axes=([1, 2, 3], [0, 1, 2])) / n
    grad_w = grad_w + 2.0 * l2_penalty * cw.w
    return grad_w, float(r.mean())


def _design(dataset):
    """Flatten a dataset to a (n_voxels, C) feature matrix and target vector."""
    if not dataset:
        raise ValidationError("training dataset is empty")
    feats, targets = [], []
    n_channels = None
    for i, (cs, gt) in enumerate(dataset):
        stack, g = _check_pair(cs, gt)
        if n_channels is None:
            n_channels = stack.shape[0]
        elif stack.shape[0] != n_channels:
            raise ValidationError(
                f"sample {i} has {stack.shape[0]} channels, expected {n_channels}"
            )
        feats.append(stack.reshape(n_channels, -1).T.astype(np.float64))
        targets.append(g.ravel().astype(np.float64))
    return np.concatenate(feats), np.concatenate(targets)


def _objective(X, y, w, b, l2):
    return _bce(sigmoid(X @ w + b), y) + l2 * float(w @ w)


def train_combiner(
    dataset: Sequence,
    cfg: TrainConfig = TrainConfig(),
    init: Optional[CombinerWeights] = None,
    log_every: int = 0,
):
    """Gradient descent on the combiner weights.

    ``dataset`` is a list of ``(channel_stack, gt_volume)`` pairs. Returns
    ``(weights, loss_history)`` where ``loss_history[0]`` is the loss before
    training and ``loss_history[k]`` the full-data loss after epoch ``k``.
    The returned weights are the lowest-loss iterate seen.
    """
    X, y = _design(dataset)
    n, C = X.shape
    if init is None:
        init = CombinerWeights.initial(C)
    if init.channels != C:
        raise ValidationError(f"init has {init.channels} weights for {C} channels")
    w, b = init.w.copy(), init.b
    l2 = cfg.l2_penalty
    rng = np.random.default_rng(cfg.seed)
    batch = n if cfg.batch == 0 else min(cfg.batch, n)

    loss = _objective(X, y, w, b, l2)
    history = [loss]
    best = (loss, w.copy(), b)
    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(n) if batch == n else rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            Xb = X[rows]
            r = sigmoid(Xb @ w + b) - y[rows]
            gw = Xb.T @ r / len(rows) + 2.0 * l2 * w
            gb = r.mean()
            w = w - cfg.learning_rate * gw
            b = b - cfg.learning_rate * gb
        loss = _objective(X, y, w, b, l2)
        if not np.isfinite(loss) or not np.all(np.isfinite(w)):
            raise DivergenceError(f"training diverged at epoch {epoch}", epoch)
        history.append(loss)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d loss %.6f", epoch, loss)
        if loss < best[0]:
            best = (loss, w.copy(), b)
    return CombinerWeights(best[1], best[2]), history


BIAS_OFFSETS = np.arange(-4.0, 4.0 + 1e-9, 0.5)


def fine_tune_bias(
    sequences: Sequence,
    cw: CombinerWeights,
    params=None,
    spectral: bool = True,
    threshold: Optional[float] = None,
    offsets=BIAS_OFFSETS,
):
    """Shift the combiner bias to maximize mean AO of the tracker.

    BCE leaves the combiner calibrated as a probability, which is not what a
    fixed binarization threshold wants. Box extraction is not
    differentiable, so the bias is searched on a grid of ``offsets``.
    ``sequences`` holds ``(channels_per_frame, gt_trajectory)`` pairs. Ties
    go to the smallest shift. Returns ``(weights, offset, mean_ao)``.
    """
    if not sequences:
        raise ValidationError("need at least one sequence to fine-tune on")
    params = params or SpectralParams()
    threshold = DEFAULT_THRESHOLD if threshold is None else threshold
    best = None
    for off in sorted(np.asarray(offsets, dtype=np.float64), key=lambda o: (abs(o), o)):
        cand = CombinerWeights(cw.w, cw.b + off)
        score = float(np.mean([
            evaluate(track_sequence(frames, gt[0], cand, params, threshold, spectral), gt).ao
            for frames, gt in sequences
        ]))
        if best is None or score > best[2]:
            best = (cand, float(off), score)
    return best
