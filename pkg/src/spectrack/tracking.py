"""Online sliding-window tracker built on spectral refinement.

Each step pushes the new frame's channel masks into a window of the last
``params.window`` frames, refines the whole window, and reads the box off
the newest refined frame.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import SpectralCollapseError, ValidationError
from .spectral import CombinerWeights, SpectralParams, combine_channels, refine
from .volume import DTYPE, BBox, Trajectory, box_mask

DEFAULT_THRESHOLD = 0.75
_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def bbox_to_softmask(b: BBox, H: int, W: int, feather_sigma: float = 0.0) -> np.ndarray:
    """Box indicator as a (1, H, W) volume, optionally feathered at the edges.

    Feathering blurs the indicator with a 2-D Gaussian and takes the maximum
    with the hard box, so the inside stays exactly 1 and only the outside
    picks up a soft rim.
    """
    if feather_sigma < 0:
        raise ValidationError(f"feather_sigma must be >= 0, got {feather_sigma}")
    hard = box_mask(b, H, W)
    if feather_sigma == 0:
        return hard[None]
    soft = ndimage.gaussian_filter(hard.astype(np.float64), feather_sigma, mode="constant")
    return np.clip(np.maximum(soft, hard), 0.0, 1.0).astype(DTYPE)[None]


def extract_bbox(mask, threshold: float = DEFAULT_THRESHOLD) -> Optional[BBox]:
    """Tight box around the largest 4-connected region above ``threshold``.

    Accepts an (H, W) frame or a single-frame (1, H, W) volume. Ties in
    region area go to the region whose first pixel comes first in raster
    order.
    """
    m = np.asarray(mask)
    if m.ndim == 3:
        if m.shape[0] != 1:
            raise ValidationError(f"expected a single frame, got {m.shape[0]} frames")
        m = m[0]
    if m.ndim != 2:
        raise ValidationError(f"expected an (H, W) mask, got shape {m.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    labels, count = ndimage.label(m >= threshold, structure=_FOUR_CONNECTED)
    if count == 0:
        return None
    areas = np.bincount(labels.ravel())[1:]
    target = int(np.argmax(areas)) + 1
    ys, xs = np.nonzero(labels == target)
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def _as_frame_channels(frame_channels, n_channels=None, hw=None) -> np.ndarray:
    """Normalize one frame's channel masks to a (C, H, W) float32 array."""
    try:
        arr = np.asarray(frame_channels, dtype=DTYPE)
    except ValueError as exc:
        raise ValidationError(f"channel masks differ in shape: {exc}") from exc
    if arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise ValidationError(f"frame channels must be (C, H, W), got shape {arr.shape}")
    if n_channels is not None and arr.shape[0] != n_channels:
        raise ValidationError(f"got {arr.shape[0]} channels, combiner expects {n_channels}")
    if hw is not None and arr.shape[1:] != hw:
        raise ValidationError(f"frame is {arr.shape[1:]}, tracker expects {hw}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("channel masks contain NaN or Inf")
    return arr


@dataclass
class TrackerState:
    params: SpectralParams
    weights: CombinerWeights
    last_box: BBox
    window_channels: deque = field(default_factory=deque)
    threshold: float = DEFAULT_THRESHOLD
    spectral: bool = True
    # Frames where nothing passed the threshold and last_box was reused.
    empty_frames: list = field(default_factory=list)
    frame_index: int = 0

    @property
    def frame_shape(self):
        return self.window_channels[-1].shape[1:] if self.window_channels else None

    def window_stack(self) -> np.ndarray:
        """Window as a (C, N, H, W) channel stack, oldest frame first."""
        return np.stack(list(self.window_channels), axis=1)


def init_tracker(
    first_frame_channels,
    gt_box: BBox,
    weights: CombinerWeights,
    params: SpectralParams = SpectralParams(),
    threshold: float = DEFAULT_THRESHOLD,
    spectral: bool = True,
) -> TrackerState:
    frame = _as_frame_channels(first_frame_channels, weights.channels)
    gt_box.check_within(*frame.shape[1:])
    window = deque(maxlen=params.window)
    window.append(frame)
    return TrackerState(params, weights, gt_box, window, threshold, spectral)


def track_step(state: TrackerState, frame_channels):
    """Advance the tracker by one frame; returns ``(state, box)``.

    ``state`` is updated in place and also returned. When the refined mask
    has no region above the threshold (or the iteration collapses) the
    previous box is returned and the frame is logged in ``state.empty_frames``.
    """
    frame = _as_frame_channels(frame_channels, state.weights.channels, state.frame_shape)
    state.window_channels.append(frame)
    state.frame_index += 1
    stack = state.window_stack()
    try:
        if state.spectral:
            newest = refine(stack, state.weights, state.params)[-1]
        else:
            newest = combine_channels(stack[:, -1:], state.weights)[0]
        box = extract_bbox(newest, state.threshold)
    except SpectralCollapseError:
        box = None
    if box is None:
        state.empty_frames.append(state.frame_index)
        return state, state.last_box
    state.last_box = box
    return state, box


def _frames(channels_per_frame) -> list:
    frames = list(channels_per_frame)
    if not frames:
        raise ValidationError("sequence has no frames")
    return frames


def track_sequence(
    channels_per_frame: Sequence,
    gt_init: BBox,
    weights: CombinerWeights,
    params: SpectralParams = SpectralParams(),
    threshold: float = DEFAULT_THRESHOLD,
    spectral: bool = True,
) -> Trajectory:
    """One-pass tracking: frame 0 is ``gt_init``, later frames come from ``track_step``.

    ``channels_per_frame[t]`` holds frame ``t``'s (C, H, W) channel masks.
    ``spectral=False`` gives the no-refinement ablation: the box is read off
    the combined map of the current frame alone.
    """
    frames = _frames(channels_per_frame)
    state = init_tracker(frames[0], gt_init, weights, params, threshold, spectral)
    traj = [gt_init]
    for frame in frames[1:]:
        state, box = track_step(state, frame)
        traj.append(box)
    return traj


def median_ensemble(frame_channels) -> np.ndarray:
    """Per-pixel median over channels, shape (H, W)."""
    return np.median(_as_frame_channels(frame_channels), axis=0).astype(DTYPE)


def track_median(
    channels_per_frame: Sequence, gt_init: BBox, threshold: float = DEFAULT_THRESHOLD
) -> Trajectory:
    """Median-ensemble baseline with the same box extraction and fallback rule."""
    frames = _frames(channels_per_frame)
    traj = [gt_init]
    last = gt_init
    for frame in frames[1:]:
        box = extract_bbox(median_ensemble(frame), threshold)
        if box is not None:
            last = box
        traj.append(last)
    return traj


def track_channel(
    channels_per_frame: Sequence, channel: int, gt_init: BBox, threshold: float = DEFAULT_THRESHOLD
) -> Trajectory:
    """Boxes read directly off one input channel (used to rank channels)."""
    frames = _frames(channels_per_frame)
    traj = [gt_init]
    last = gt_init
    for frame in frames[1:]:
        box = extract_bbox(_as_frame_channels(frame)[channel], threshold)
        if box is not None:
            last = box
        traj.append(last)
    return traj
