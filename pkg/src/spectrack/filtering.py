"""Truncated separable Gaussian filtering over (T, H, W) volumes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ParameterError, ValidationError
from .volume import DTYPE, as_volume


def gaussian_weights(sigma: float, radius: int) -> np.ndarray:
    """Symmetric 1-D Gaussian taps on ``[-radius, radius]``, summing to one."""
    if not sigma > 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if radius < 0:
        raise ParameterError(f"radius must be >= 0, got {radius}")
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return w / w.sum()


def default_radius(sigma: float) -> int:
    return int(math.ceil(3.0 * sigma))


@dataclass(frozen=True, eq=False)
class GaussianKernel3D:
    sigma_t: float
    sigma_s: float
    radius_t: int
    radius_s: int
    weights_t: np.ndarray
    weights_y: np.ndarray
    weights_x: np.ndarray

    def weight(self, dt: int, dy: int, dx: int) -> float:
        """Product weight at offset (dt, dy, dx); zero outside the support."""
        if abs(dt) > self.radius_t or abs(dy) > self.radius_s or abs(dx) > self.radius_s:
            return 0.0
        return float(
            self.weights_t[dt + self.radius_t]
            * self.weights_y[dy + self.radius_s]
            * self.weights_x[dx + self.radius_s]
        )

    @property
    def center_weight(self) -> float:
        return self.weight(0, 0, 0)

    def dense(self) -> np.ndarray:
        """The full 3-D kernel as an outer product, shape (2rt+1, 2rs+1, 2rs+1)."""
        return np.einsum("i,j,k->ijk", self.weights_t, self.weights_y, self.weights_x)


def build_kernel(
    sigma_t: float = 1.0,
    sigma_s: float = 1.0,
    radius_t: Optional[int] = None,
    radius_s: Optional[int] = None,
) -> GaussianKernel3D:
    if radius_t is None:
        radius_t = default_radius(sigma_t) if sigma_t > 0 else 0
    if radius_s is None:
        radius_s = default_radius(sigma_s) if sigma_s > 0 else 0
    wt = gaussian_weights(sigma_t, int(radius_t))
    ws = gaussian_weights(sigma_s, int(radius_s))
    return GaussianKernel3D(
        float(sigma_t), float(sigma_s), int(radius_t), int(radius_s), wt, ws, ws.copy()
    )


def convolve3d(v, k: GaussianKernel3D) -> np.ndarray:
    """Zero-padded separable convolution: time, then rows, then columns.

    Taps falling outside the volume are dropped, so border voxels see less
    than unit kernel mass. Computed in float64 and returned as float64 so
    chained filtering inside one spectral step does not round in between.
    """
    a = np.asarray(v)
    if a.ndim != 3:
        raise ValidationError(f"expected a (T, H, W) volume, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("cannot filter a volume containing NaN or Inf")
    out = a.astype(np.float64)
    for axis, w in ((0, k.weights_t), (1, k.weights_y), (2, k.weights_x)):
        if len(w) == 1:
            out = out * w[0]
            continue
        # Symmetric taps: correlation equals convolution.
        out = correlate1d(out, w, axis=axis, mode="constant", cval=0.0)
    return out


def filter_volume(v, k: GaussianKernel3D) -> np.ndarray:
    """``convolve3d`` for public callers: validates and returns float32."""
    return convolve3d(as_volume(v), k).astype(DTYPE)
