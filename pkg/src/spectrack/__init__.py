"""Spectral space-time refinement of multi-channel object masks for tracking."""

from .errors import (
    DegenerateNormError,
    DimensionError,
    DivergenceError,
    FormatError,
    GuardError,
    ManifestError,
    ParameterError,
    SpectralCollapseError,
    ValidationError,
)
from .filtering import GaussianKernel3D, build_kernel, convolve3d
from .learning import TrainConfig, bce_loss, combiner_gradient, fine_tune_bias, train_combiner
from .metrics import EvalReport, evaluate, iou
from .spectral import (
    CombinerWeights,
    DenseAdjacency,
    SpectralParams,
    build_dense_adjacency,
    combine_channels,
    oracle_step,
    refine,
    spectral_iteration,
)
from .tracking import (
    TrackerState,
    bbox_to_softmask,
    extract_bbox,
    init_tracker,
    track_median,
    track_sequence,
    track_step,
)
from .volume import BBox, clamp01, l2_normalize, new_volume

__version__ = "0.1.0"
