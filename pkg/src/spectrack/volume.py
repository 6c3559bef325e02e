"""Dense space-time volumes, channel stacks and boxes.

A video volume is a ``float32`` numpy array of shape ``(T, H, W)``; numpy's
C order gives exactly the frame-major layout ``index = (t*H + y)*W + x``.
A channel stack is a ``(C, T, H, W)`` array of aligned volumes.
Reductions (norms, dot products) accumulate in ``float64``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateNormError, DimensionError, ValidationError

VideoVolume = np.ndarray
ChannelStack = np.ndarray
Trajectory = list  # list[Optional[BBox]]

DTYPE = np.float32


def new_volume(T: int, H: int, W: int, fill: float = 0.0) -> VideoVolume:
    if min(T, H, W) < 1:
        raise DimensionError(f"volume dimensions must be >= 1, got {(T, H, W)}")
    if not np.isfinite(fill):
        raise ValidationError("fill value must be finite")
    return np.full((T, H, W), fill, dtype=DTYPE)


def as_volume(v, name: str = "volume") -> VideoVolume:
    """Validate ``v`` as a (T, H, W) finite volume and return it as float32."""
    a = np.asarray(v)
    if a.ndim != 3:
        raise DimensionError(f"{name} must be 3-D (T, H, W), got shape {a.shape}")
    if min(a.shape) < 1:
        raise DimensionError(f"{name} has an empty axis: {a.shape}")
    a = a.astype(DTYPE, copy=False)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return a


def as_stack(cs, name: str = "channel stack") -> ChannelStack:
    """Validate a (C, T, H, W) stack, or a sequence of equally shaped volumes."""
    if isinstance(cs, (list, tuple)):
        if not cs:
            raise DimensionError(f"{name} needs at least one channel")
        vols = [as_volume(c, f"{name}[{i}]") for i, c in enumerate(cs)]
        shapes = {v.shape for v in vols}
        if len(shapes) != 1:
            raise DimensionError(f"{name} channels differ in shape: {sorted(shapes)}")
        return np.stack(vols)
    a = np.asarray(cs)
    if a.ndim != 4 or min(a.shape) < 1:
        raise DimensionError(f"{name} must be 4-D (C, T, H, W), got shape {a.shape}")
    a = a.astype(DTYPE, copy=False)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return a


def l2_norm(v) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64).ravel()))


def l2_normalize(v) -> VideoVolume:
    """Scale ``v`` to unit L2 norm.

    Raises DegenerateNormError for an all-zero input: there is no direction
    to keep, and callers running power iteration must treat it as collapse.
    """
    a = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(a.ravel())
    if not norm > 0.0 or not np.isfinite(norm):
        raise DegenerateNormError("cannot normalize a volume with zero norm")
    return (a / norm).astype(DTYPE)


def clamp01(v) -> VideoVolume:
    return np.clip(np.asarray(v, dtype=DTYPE), 0.0, 1.0)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box covering ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"box has non-positive area: {self.as_list()}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Sequence) -> "BBox":
        if len(values) != 4:
            raise ValidationError(f"box needs 4 coordinates, got {len(values)}")
        try:
            coords = [int(c) for c in values]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"box coordinates must be integers: {values!r}") from exc
        if any(float(c) != float(v) for c, v in zip(coords, values)):
            raise ValidationError(f"box coordinates must be integers: {values!r}")
        return cls(*coords)

    def shifted(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def check_within(self, H: int, W: int) -> None:
        if self.x_min < 0 or self.y_min < 0 or self.x_max > W or self.y_max > H:
            raise ValidationError(f"box {self.as_list()} outside a {H}x{W} frame")


def box_mask(b: BBox, H: int, W: int) -> np.ndarray:
    """Hard 0/1 mask of a box, shape (H, W)."""
    b.check_within(H, W)
    m = np.zeros((H, W), dtype=DTYPE)
    m[b.y_min:b.y_max, b.x_min:b.x_max] = 1.0
    return m


def validate_trajectory(traj: Trajectory, n_frames: Optional[int] = None) -> None:
    if n_frames is not None and len(traj) != n_frames:
        raise ValidationError(f"trajectory has {len(traj)} boxes for {n_frames} frames")
    if not traj or traj[0] is None:
        raise ValidationError("trajectory must have a box on frame 0")
