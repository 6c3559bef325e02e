"""Multi-channel combination and power iteration as 3-D filtering.

The voxel graph has affinities

    M[i, j] = S_i^p * S_j^p * G(i, j) * (1/alpha - (F_i - F_j)^2)

with ``G`` the truncated Gaussian kernel. ``spectral_iteration`` computes
``M @ x`` without building ``M`` by expanding the bracket into three
filtered terms; ``build_dense_adjacency``/``oracle_step`` build ``M``
explicitly and exist to check that expansion on small volumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateNormError,
    GuardError,
    ParameterError,
    SpectralCollapseError,
    ValidationError,
)
from .filtering import GaussianKernel3D, build_kernel, convolve3d
from .volume import DTYPE, as_stack, as_volume, clamp01

DENSE_LIMIT = 4096
# Pre-normalization norms below this are treated as a collapsed iterate.
COLLAPSE_NORM = 1e-20


@dataclass(frozen=True)
class SpectralParams:
    alpha: float = 1.0
    p: float = 1.0
    n_iter: int = 1
    window: int = 5
    sigma_t: float = 1.0
    sigma_s: float = 1.0
    radius_t: Optional[int] = None
    radius_s: Optional[int] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if not self.p >= 0:
            raise ParameterError(f"p must be >= 0, got {self.p}")
        if int(self.n_iter) != self.n_iter or self.n_iter < 1:
            raise ParameterError(f"n_iter must be an integer >= 1, got {self.n_iter}")
        if int(self.window) != self.window or self.window < 1:
            raise ParameterError(f"window must be an integer >= 1, got {self.window}")
        if not (self.sigma_t > 0 and self.sigma_s > 0):
            raise ParameterError("kernel sigmas must be > 0")
        for r in (self.radius_t, self.radius_s):
            if r is not None and r < 0:
                raise ParameterError(f"kernel radius must be >= 0, got {r}")

    @cached_property
    def kernel(self) -> GaussianKernel3D:
        return build_kernel(self.sigma_t, self.sigma_s, self.radius_t, self.radius_s)


@dataclass
class CombinerWeights:
    """Per-channel weights and bias, shared by the unary and pairwise maps."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = np.atleast_1d(np.asarray(self.w, dtype=np.float64)).copy()
        self.b = float(self.b)
        if self.w.ndim != 1 or len(self.w) == 0:
            raise ValidationError("combiner needs one weight per channel")
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise ValidationError("combiner weights must be finite")

    @classmethod
    def initial(cls, n_channels: int) -> "CombinerWeights":
        """Softened average: w = 1/C each, b = 0."""
        if n_channels < 1:
            raise ValidationError("need at least one channel")
        return cls(np.full(n_channels, 1.0 / n_channels), 0.0)

    @property
    def channels(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class DenseAdjacency:
    shape: tuple
    entries: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def channel_logits(cs, cw: CombinerWeights) -> np.ndarray:
    stack = as_stack(cs)
    if stack.shape[0] != cw.channels:
        raise ValidationError(
            f"stack has {stack.shape[0]} channels but combiner has {cw.channels} weights"
        )
    return np.tensordot(cw.w, stack.astype(np.float64), axes=1) + cw.b


def combine_channels(cs, cw: CombinerWeights) -> np.ndarray:
    """sigmoid(sum_i w_i * S_i + b), used as both unary and pairwise map."""
    return sigmoid(channel_logits(cs, cw)).astype(DTYPE)


def _apply_filtered(x, s, f, params: SpectralParams) -> np.ndarray:
    k = params.kernel
    sp = np.power(s, params.p)
    f2 = f * f
    y = sp * x
    out = sp * (1.0 / params.alpha - f2) * convolve3d(y, k)
    out -= sp * convolve3d(f2 * y, k)
    out += 2.0 * sp * f * convolve3d(f * y, k)
    return out


def _normalize_or_collapse(out: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(out.ravel())
    if not np.isfinite(norm):
        raise SpectralCollapseError("spectral iterate overflowed")
    if norm < COLLAPSE_NORM:
        raise SpectralCollapseError(f"spectral iterate collapsed (norm {norm:.3g})")
    return (out / norm).astype(DTYPE)


def spectral_iteration(x, s, f, params: SpectralParams) -> np.ndarray:
    """One normalized power-iteration step computed with three Gaussian filterings."""
    x = as_volume(x, "x").astype(np.float64)
    s = as_volume(s, "s").astype(np.float64)
    f = as_volume(f, "f").astype(np.float64)
    if not (x.shape == s.shape == f.shape):
        raise ValidationError(f"shape mismatch: x{x.shape} s{s.shape} f{f.shape}")
    return _normalize_or_collapse(_apply_filtered(x, s, f, params))


def rescale_to_unary(x, unary) -> np.ndarray:
    """Least-squares fit of each frame of ``x`` onto the unary map.

    The eigenvector only fixes a direction. Frame ``t`` is scaled by
    ``<x_t, u_t> / <x_t, x_t>`` so the refined mask lives on the same
    probability scale as the combined input and a fixed binarization
    threshold stays meaningful. Also absorbs the sign of the eigenvector.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(unary, dtype=np.float64)
    num = np.einsum("thw,thw->t", x, u)
    den = np.einsum("thw,thw->t", x, x)
    scale = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return x * scale[:, None, None]


def refine(cs, cw: CombinerWeights, params: SpectralParams, rescale: bool = True) -> np.ndarray:
    """Combine channels, run ``params.n_iter`` spectral steps seeded with the
    combined map, then map back to [0, 1].

    With ``rescale=False`` the raw eigenvector estimate is clamped directly.
    """
    s = combine_channels(cs, cw)
    x = s
    for _ in range(params.n_iter):
        x = spectral_iteration(x, s, s, params)
    if rescale:
        x = rescale_to_unary(x, s)
    return clamp01(x)


def build_dense_adjacency(s, f, params: SpectralParams) -> DenseAdjacency:
    s = as_volume(s, "s").astype(np.float64)
    f = as_volume(f, "f").astype(np.float64)
    if s.shape != f.shape:
        raise ValidationError(f"shape mismatch: s{s.shape} f{f.shape}")
    T, H, W = s.shape
    n = T * H * W
    if n > DENSE_LIMIT:
        raise GuardError(f"dense adjacency limited to {DENSE_LIMIT} nodes, volume has {n}")
    k = params.kernel
    sp = np.power(s, params.p).ravel()
    fl = f.ravel()
    idx = np.arange(n).reshape(T, H, W)
    M = np.zeros((n, n), dtype=np.float64)
    for dt in range(-k.radius_t, k.radius_t + 1):
        for dy in range(-k.radius_s, k.radius_s + 1):
            for dx in range(-k.radius_s, k.radius_s + 1):
                g = k.weight(dt, dy, dx)
                src = idx[
                    max(0, -dt):T - max(0, dt),
                    max(0, -dy):H - max(0, dy),
                    max(0, -dx):W - max(0, dx),
                ].ravel()
                dst = idx[
                    max(0, dt):T + min(0, dt),
                    max(0, dy):H + min(0, dy),
                    max(0, dx):W + min(0, dx),
                ].ravel()
                if src.size == 0:
                    continue
                diff = fl[src] - fl[dst]
                M[src, dst] = sp[src] * sp[dst] * g * (1.0 / params.alpha - diff * diff)
    return DenseAdjacency((T, H, W), M)


def oracle_step(x, m: DenseAdjacency) -> np.ndarray:
    x = as_volume(x, "x")
    if x.size != m.n:
        raise ValidationError(f"x has {x.size} voxels, adjacency has {m.n} nodes")
    y = m.entries @ x.astype(np.float64).ravel()
    return _normalize_or_collapse(y).reshape(x.shape)


def rayleigh_quotient(x, m: DenseAdjacency) -> float:
    v = np.asarray(x, dtype=np.float64).ravel()
    return float(v @ (m.entries @ v) / (v @ v))


__all__ = [
    "CombinerWeights",
    "DegenerateNormError",
    "DenseAdjacency",
    "SpectralParams",
    "build_dense_adjacency",
    "combine_channels",
    "oracle_step",
    "refine",
    "rescale_to_unary",
    "spectral_iteration",
]
