"""Synthetic benchmark suite and the ablation table.

Rows mirror an ablation study at desk scale: the full tracker for each
(channel subset, iteration count), the tracker with refinement replaced by
the plain combiner, and the per-pixel median ensemble.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .io import Sequence, synth_sequence
from .learning import TrainConfig, fine_tune_bias, train_combiner
from .metrics import evaluate, mean_report
from .spectral import CombinerWeights, SpectralParams
from .tracking import DEFAULT_THRESHOLD, track_channel, track_median, track_sequence

logger = logging.getLogger(__name__)

SUITE = dict(T=30, H=32, W=32, C=5, noise=0.3, motion=1.0)
SUITE_SEEDS = tuple(range(10))
TRAIN_SEEDS = tuple(range(1000, 1005))


def make_suite(seeds=SUITE_SEEDS, **overrides) -> list:
    kw = {**SUITE, **overrides}
    return [synth_sequence(s, **kw) for s in seeds]


def _frames(seq: Sequence, channels=None):
    ch = seq.channels if channels is None else seq.channels[:, list(channels)]
    return list(ch)


def fit_weights(
    train: list,
    channels=None,
    cfg: TrainConfig = TrainConfig(),
    params: Optional[SpectralParams] = None,
    spectral: bool = True,
    threshold: float = DEFAULT_THRESHOLD,
    fine_tune: bool = True,
):
    """BCE-train a combiner on ``train`` sequences, then tune its bias for tracking."""
    idx = list(range(train[0].n_channels)) if channels is None else list(channels)
    data = [(s.channel_stack()[idx], s.gt_masks()) for s in train]
    cw, history = train_combiner(data, cfg)
    offset = 0.0
    if fine_tune:
        cw, offset, _ = fine_tune_bias(
            [(_frames(s, idx), s.gt) for s in train], cw, params, spectral, threshold
        )
    return cw, history, offset


def rank_channels(seqs: list, threshold: float = DEFAULT_THRESHOLD) -> list:
    """Channel indices sorted by the AO of their own boxes, best first."""
    C = seqs[0].n_channels
    scores = [
        np.mean([evaluate(track_channel(_frames(s), c, s.init, threshold), s.gt).ao for s in seqs])
        for c in range(C)
    ]
    return sorted(range(C), key=lambda c: (-scores[c], c))


def parse_iters(text) -> list:
    """'3' -> [3], '1..5' -> [1, 2, 3, 4, 5], '1,3' -> [1, 3]."""
    text = str(text).strip()
    m = re.fullmatch(r"(\d+)\s*\.\.\s*(\d+)", text)
    try:
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            values = list(range(lo, hi + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse iteration list {text!r}") from exc
    if not values or min(values) < 1:
        raise ValidationError(f"iteration counts must be >= 1, got {text!r}")
    return values


def parse_subset(name: str, n_channels: int):
    """Map 'best-1', 'top-3', 'all', 'all-5' or 'median' to a channel count."""
    name = name.strip().lower()
    if name == "median":
        return "median", n_channels
    if name == "all" or re.fullmatch(r"all-\d+", name):
        return "all", n_channels
    m = re.fullmatch(r"(best|top)-?(\d+)", name)
    if not m:
        raise ValidationError(f"unknown channel subset {name!r}")
    k = int(m.group(2))
    if not 1 <= k <= n_channels:
        raise ValidationError(f"subset {name!r} needs 1..{n_channels} channels")
    return name, k


@dataclass
class AblationRow:
    name: str
    kind: str
    n_iter: Optional[int]
    channels: list
    report: dict
    per_sequence_ao: list = field(default_factory=list)
    bias_offset: Optional[float] = None


def _row(name, kind, n_iter, channels, trajs, seqs, offset=None) -> AblationRow:
    reports = [evaluate(t, s.gt) for t, s in zip(trajs, seqs)]
    return AblationRow(
        name, kind, n_iter, list(channels), mean_report(reports).summary(),
        [r.ao for r in reports], offset,
    )


def run_ablation(
    seqs: list,
    train: Optional[list] = None,
    iters=(1, 2, 3, 4, 5),
    subsets=("best-1", "top-3", "all", "median"),
    base: SpectralParams = SpectralParams(),
    cfg: TrainConfig = TrainConfig(),
    threshold: float = DEFAULT_THRESHOLD,
    weights: Optional[CombinerWeights] = None,
    fine_tune: bool = True,
) -> list:
    """Evaluate every ablation row on ``seqs``.

    Without ``weights`` each (subset, iteration count) row gets its own
    combiner trained on ``train`` (``seqs`` itself when omitted). Given
    ``weights`` for all channels, a subset keeps its own entries rescaled by
    C / |subset| so the combined logit keeps its range.
    """
    if not seqs:
        raise ValidationError("ablation needs at least one sequence")
    if any(s.gt is None for s in seqs):
        raise ValidationError("ablation needs ground truth for every sequence")
    train = seqs if train is None else train
    C = seqs[0].n_channels
    order = rank_channels(train, threshold)
    rows = []

    def weights_for(idx, params, spectral):
        if weights is not None:
            if weights.channels != C:
                raise ValidationError(f"weights have {weights.channels} channels, data has {C}")
            return CombinerWeights(weights.w[idx] * C / len(idx), weights.b), None
        cw, _, off = fit_weights(train, idx, cfg, params, spectral, threshold, fine_tune)
        return cw, off

    for subset in subsets:
        kind, k = parse_subset(subset, C)
        if kind == "median":
            trajs = [track_median(_frames(s), s.init, threshold) for s in seqs]
            rows.append(_row("median", "median", None, range(C), trajs, seqs))
            continue
        idx = sorted(order[:k])
        for n in iters:
            params = SpectralParams(**{**asdict(base), "n_iter": n})
            cw, off = weights_for(idx, params, True)
            trajs = [track_sequence(_frames(s, idx), s.init, cw, params, threshold) for s in seqs]
            rows.append(_row(f"{subset}/iter{n}", "spectral", n, idx, trajs, seqs, off))
            logger.info("ablation row %s/iter%d ao=%.4f", subset, n, rows[-1].report["ao"])

    idx = list(range(C))
    cw, off = weights_for(idx, base, False)
    trajs = [track_sequence(_frames(s), s.init, cw, base, threshold, spectral=False) for s in seqs]
    rows.append(_row("no-refinement", "combine-only", None, idx, trajs, seqs, off))
    return rows
