"""File formats and synthetic data.

Volume file (``.sfvl``), all fields little-endian::

    offset  size  field
    0       4     magic  b"SFVL"
    4       2     version  u16 = 1
    6       1     dtype    u8  = 1 (float32)
    7       12    dims     3 x u32 (T, H, W)
    19      4*T*H*W  payload, float32, frame-major row-major

Weights, trajectories and sequence manifests are JSON; see README.md for
the manifest schema. Relative paths inside a manifest resolve against the
manifest's own directory; absolute paths are used unchanged.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, ManifestError, ParameterError, ValidationError
from .spectral import CombinerWeights
from .volume import DTYPE, BBox, as_volume, box_mask

MAGIC = b"SFVL"
VERSION = 1
DTYPE_F32 = 1
HEADER = struct.Struct("<4sHB3I")

MANIFEST_FORMAT = "spectrack-sequence"


def save_volume(v, path) -> None:
    a = as_volume(v)
    T, H, W = a.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, DTYPE_F32, T, H, W))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_volume(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        if len(head) < 4 or head[:4] != MAGIC:
            raise FormatError("magic", f"{path} is not a volume file")
        if len(head) < HEADER.size:
            raise FormatError("header", f"{path} has a truncated header")
        _, version, dtype, T, H, W = HEADER.unpack(head)
        if version != VERSION:
            raise FormatError("version", f"unsupported version {version}")
        if dtype != DTYPE_F32:
            raise FormatError("dtype", f"unsupported dtype code {dtype}")
        if min(T, H, W) < 1:
            raise FormatError("dims", f"zero dimension in {(T, H, W)}")
        expected = 4 * T * H * W
        actual = os.fstat(fh.fileno()).st_size - HEADER.size
        if actual != expected:
            raise FormatError(
                "payload length", f"expected {expected} bytes for {(T, H, W)}, found {actual}"
            )
        payload = fh.read(expected)
    if len(payload) != expected:
        raise FormatError("payload length", f"expected {expected} bytes, read {len(payload)}")
    a = np.frombuffer(payload, dtype="<f4").astype(DTYPE).reshape(T, H, W)
    if not np.all(np.isfinite(a)):
        raise FormatError("payload values", "volume contains NaN or Inf")
    return a


def load_png_mask(path) -> np.ndarray:
    """8-bit grayscale PNG as a (1, H, W) mask with values value/255."""
    from PIL import Image

    with Image.open(path) as img:
        a = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return a.astype(DTYPE)[None]


def _load_any_volume(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".png":
        return load_png_mask(path)
    return load_volume(path)


def save_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def weights_to_dict(cw: CombinerWeights) -> dict:
    return {"w": [float(v) for v in cw.w], "b": float(cw.b), "channels": cw.channels}


def weights_from_dict(d) -> CombinerWeights:
    try:
        w, b = d["w"], d["b"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"weights document needs 'w' and 'b': {exc}") from exc
    if "channels" in d and d["channels"] != len(w):
        raise ValidationError(f"weights declare {d['channels']} channels but list {len(w)}")
    return CombinerWeights(np.asarray(w, dtype=np.float64), float(b))


def save_weights(cw: CombinerWeights, path) -> None:
    save_json(weights_to_dict(cw), path)


def load_weights(path) -> CombinerWeights:
    return weights_from_dict(load_json(path))


def _parse_box(value, where: str) -> BBox:
    if not isinstance(value, (list, tuple)):
        raise ManifestError(f"{where}: box must be [x_min, y_min, x_max, y_max], got {value!r}")
    try:
        return BBox.from_list(value)
    except ValidationError as exc:
        raise ManifestError(f"{where}: {exc}") from exc


def trajectory_to_dict(traj) -> dict:
    return {"boxes": [None if b is None else b.as_list() for b in traj]}


def trajectory_from_dict(d) -> list:
    boxes = d.get("boxes") if isinstance(d, dict) else None
    if not isinstance(boxes, list):
        raise ValidationError("trajectory document needs a 'boxes' list")
    return [None if b is None else _parse_box(b, f"boxes[{i}]") for i, b in enumerate(boxes)]


def save_trajectory(traj, path) -> None:
    save_json(trajectory_to_dict(traj), path)


def load_trajectory(path) -> list:
    return trajectory_from_dict(load_json(path))


@dataclass
class Sequence:
    """An in-memory tracking sequence.

    ``channels`` has shape (T, C, H, W): frame-major, so ``channels[t]`` is
    what the tracker consumes at frame ``t``.
    """

    channels: np.ndarray
    init: BBox
    gt: Optional[list] = None

    @property
    def n_frames(self):
        return self.channels.shape[0]

    @property
    def n_channels(self):
        return self.channels.shape[1]

    @property
    def frame_shape(self):
        return self.channels.shape[2:]

    def channel_stack(self) -> np.ndarray:
        """Whole sequence as a (C, T, H, W) channel stack."""
        return np.ascontiguousarray(self.channels.transpose(1, 0, 2, 3))

    def gt_masks(self) -> np.ndarray:
        if self.gt is None:
            raise ValidationError("sequence has no ground truth")
        H, W = self.frame_shape
        return np.stack([box_mask(b, H, W) for b in self.gt])


def load_manifest(path) -> Sequence:
    path = Path(path)
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    base = path.parent
    files = doc.get("channel_files")
    if not isinstance(files, list) or not files:
        raise ManifestError(f"{path}: 'channel_files' must be a non-empty list of frames")
    n_frames = doc.get("frames", len(files))
    if n_frames != len(files):
        raise ManifestError(f"{path}: declares {n_frames} frames but lists {len(files)}")
    expected = doc.get("channels", len(files[0]) if isinstance(files[0], list) else None)
    for t, entry in enumerate(files):
        if not isinstance(entry, list) or not entry:
            raise ManifestError(f"frame {t}: channel list must be a non-empty list of paths")
        if len(entry) != expected:
            raise ManifestError(f"frame {t}: lists {len(entry)} channels, expected {expected}")

    frames = []
    shape = None
    for t, entry in enumerate(files):
        chans = []
        for c, rel in enumerate(entry):
            vol = _load_any_volume(base / rel)
            if vol.shape[0] != 1:
                raise ManifestError(f"frame {t} channel {c}: expected one frame, got {vol.shape[0]}")
            if shape is None:
                shape = vol.shape[1:]
            elif vol.shape[1:] != shape:
                raise ManifestError(f"frame {t} channel {c}: size {vol.shape[1:]} != {shape}")
            chans.append(vol[0])
        frames.append(np.stack(chans))
    channels = np.stack(frames)

    gt = None
    if doc.get("gt") is not None:
        if not isinstance(doc["gt"], list) or len(doc["gt"]) != n_frames:
            raise ManifestError(f"{path}: 'gt' must list one box per frame")
        gt = [_parse_box(b, f"gt[{i}]") for i, b in enumerate(doc["gt"])]
    if doc.get("init") is not None:
        init = _parse_box(doc["init"], "init")
    elif gt is not None:
        init = gt[0]
    else:
        raise ManifestError(f"{path}: needs an 'init' box or a 'gt' trajectory")
    H, W = shape
    for where, b in [("init", init)] + [(f"gt[{i}]", b) for i, b in enumerate(gt or [])]:
        try:
            b.check_within(H, W)
        except ValidationError as exc:
            raise ManifestError(f"{where}: {exc}") from exc
    return Sequence(channels, init, gt)


def write_sequence(seq: Sequence, directory, name: str = "manifest.json") -> Path:
    """Write one volume file per frame and channel plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for t in range(seq.n_frames):
        row = []
        for c in range(seq.n_channels):
            fname = f"frame{t:04d}_ch{c}.sfvl"
            save_volume(seq.channels[t, c][None], directory / fname)
            row.append(fname)
        files.append(row)
    H, W = seq.frame_shape
    doc = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "frames": seq.n_frames,
        "height": int(H),
        "width": int(W),
        "channels": seq.n_channels,
        "channel_files": files,
        "init": seq.init.as_list(),
        "gt": None if seq.gt is None else [b.as_list() for b in seq.gt],
    }
    out = directory / name
    save_json(doc, out)
    return out


def reflect(pos: float, span: int) -> float:
    """Fold an unbounded coordinate into [0, span] as a bouncing walk."""
    if span == 0:
        return 0.0
    m = pos % (2 * span)
    return m if m <= span else 2 * span - m


def synth_sequence(
    seed: int,
    T: int,
    H: int,
    W: int,
    C: int,
    noise: float = 0.0,
    motion: float = 1.0,
    blob: Optional[tuple] = None,
    start: Optional[tuple] = None,
    direction: Optional[tuple] = None,
    salt: Optional[float] = None,
) -> Sequence:
    """A rectangle bouncing around the frame, seen through ``C`` noisy channels.

    ``blob`` is (height, width), ``start`` the initial (x, y) corner and
    ``direction`` the (x, y) velocity signs; each defaults to a draw from
    ``seed``. Every channel jitters the box by up to ``noise`` times the box
    size per axis and sprinkles salt pixels with probability ``salt``
    (default ``noise / 20``). ``noise=0`` reproduces the ground truth.
    """
    if min(T, H, W, C) < 1:
        raise ParameterError("T, H, W and C must all be >= 1")
    if noise < 0:
        raise ParameterError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    bh, bw = blob if blob is not None else (max(2, H // 4), max(2, W // 4))
    if bh > H or bw > W or bh < 1 or bw < 1:
        raise ParameterError(f"blob {bh}x{bw} does not fit a {H}x{W} frame")
    span_x, span_y = W - bw, H - bh
    if start is None:
        start = (int(rng.integers(0, span_x + 1)), int(rng.integers(0, span_y + 1)))
    if direction is None:
        direction = tuple(int(v) for v in rng.choice([-1, 1], size=2))
    if salt is None:
        salt = noise / 20.0

    gt = []
    for t in range(T):
        x = int(round(reflect(start[0] + direction[0] * motion * t, span_x)))
        y = int(round(reflect(start[1] + direction[1] * motion * t, span_y)))
        gt.append(BBox(x, y, x + bw, y + bh))

    channels = np.zeros((T, C, H, W), dtype=DTYPE)
    for t, box in enumerate(gt):
        for c in range(C):
            dx = int(round(rng.uniform(-noise * bw, noise * bw))) if noise > 0 else 0
            dy = int(round(rng.uniform(-noise * bh, noise * bh))) if noise > 0 else 0
            x = min(max(box.x_min + dx, 0), span_x)
            y = min(max(box.y_min + dy, 0), span_y)
            m = box_mask(BBox(x, y, x + bw, y + bh), H, W)
            if salt > 0:
                m[rng.random((H, W)) < salt] = 1.0
            channels[t, c] = m
    return Sequence(channels, gt[0], gt)
