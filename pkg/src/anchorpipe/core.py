"""Shared domain types: action-unit/pose vectors, landmarks, frames, configs.

Value conventions used throughout the pipeline:
  * raw AU intensities live in [0, 5], raw pose angles in [-pi/2, pi/2] radians
  * normalized AU in [0, 1], normalized pose in [-1, 1]
  * image pixels are float32 in [-1, 1] (tanh generator range)
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

AU_NAMES = (
    "au01", "au02", "au04", "au05", "au06", "au07", "au09", "au10", "au12",
    "au14", "au15", "au17", "au20", "au23", "au25", "au26", "au45",
)
POSE_NAMES = ("pitch", "yaw", "roll")

AU_DIM = len(AU_NAMES)
POSE_DIM = len(POSE_NAMES)
AUPS_DIM = AU_DIM + POSE_DIM

RAW_AU_MAX = 5.0
RAW_POSE_MAX = math.pi / 2.0

# indices into the AU block for dimensions the oracle renderer animates
IDX_BROW_INNER = AU_NAMES.index("au01")
IDX_BROW_OUTER = AU_NAMES.index("au02")
IDX_SMILE = AU_NAMES.index("au12")
IDX_LIPS_PART = AU_NAMES.index("au25")
IDX_JAW_DROP = AU_NAMES.index("au26")
IDX_BLINK = AU_NAMES.index("au45")

_EPS = 1e-9  # absorbs float dust at range boundaries


class PipelineError(Exception):
    """Base for all data/contract errors raised by the pipeline."""


class RangeError(PipelineError):
    """A component fell outside its declared value range."""


class ShapeError(PipelineError):
    """Mismatched lengths, counts or tensor shapes."""


class FormatError(PipelineError):
    """A file does not follow its declared on-disk format."""


class EmptyInputError(PipelineError):
    """An operation that needs at least one element got none."""


class ContractError(PipelineError):
    """A call violated a stated precondition (e.g. wrong normalization state)."""


def _check_range(arr: np.ndarray, lo: float, hi: float, label: str) -> None:
    bad = np.where((arr < lo - _EPS) | (arr > hi + _EPS) | ~np.isfinite(arr))[0]
    if bad.size:
        k = int(bad[0])
        raise RangeError(f"{label}[{k}]={arr[k]!r} outside [{lo:g}, {hi:g}]")


def _frozen_array(values, shape: tuple, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(shape)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class AUPSVector:
    """17 action-unit intensities plus a (pitch, yaw, roll) head pose."""

    au: np.ndarray
    pose: np.ndarray
    normalized: bool

    def __post_init__(self):
        object.__setattr__(self, "au", _frozen_array(self.au, (AU_DIM,), np.float64))
        object.__setattr__(self, "pose", _frozen_array(self.pose, (POSE_DIM,), np.float64))
        if self.normalized:
            _check_range(self.au, 0.0, 1.0, "au")
            _check_range(self.pose, -1.0, 1.0, "pose")
        else:
            _check_range(self.au, 0.0, RAW_AU_MAX, "au")
            _check_range(self.pose, -RAW_POSE_MAX, RAW_POSE_MAX, "pose")

    def vector(self) -> np.ndarray:
        """Concatenated 20-D view, AU block first."""
        return np.concatenate([self.au, self.pose])

    @staticmethod
    def from_vector(vec: Sequence[float], normalized: bool) -> "AUPSVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (AUPS_DIM,):
            raise ShapeError(f"expected a {AUPS_DIM}-D vector, got shape {vec.shape}")
        return AUPSVector(au=vec[:AU_DIM], pose=vec[AU_DIM:], normalized=normalized)

    @staticmethod
    def zeros(normalized: bool = True) -> "AUPSVector":
        return AUPSVector(np.zeros(AU_DIM), np.zeros(POSE_DIM), normalized)


def normalize_aups(v: AUPSVector) -> AUPSVector:
    """Map raw units into [0,1] (AU) / [-1,1] (pose)."""
    if v.normalized:
        raise ContractError("normalize_aups expects a raw (unnormalized) vector")
    return AUPSVector(v.au / RAW_AU_MAX, v.pose / RAW_POSE_MAX, normalized=True)


def denormalize_aups(v: AUPSVector) -> AUPSVector:
    """Inverse of normalize_aups."""
    if not v.normalized:
        raise ContractError("denormalize_aups expects a normalized vector")
    return AUPSVector(v.au * RAW_AU_MAX, v.pose * RAW_POSE_MAX, normalized=False)


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered 2-D facial keypoints, coordinates in normalized [0,1] image space."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ShapeError(f"landmarks must have shape (L, 2), got {pts.shape}")
        flat = pts.reshape(-1)
        _check_range(flat, 0.0, 1.0, "landmark")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def average_landmarks(sets: Sequence[LandmarkSet]) -> LandmarkSet:
    """Pointwise mean of landmark sets; all sets must share the same point count."""
    sets = list(sets)
    if not sets:
        raise EmptyInputError("average_landmarks needs at least one landmark set")
    counts = {len(s) for s in sets}
    if len(counts) != 1:
        raise ShapeError(f"mismatched landmark counts: {sorted(counts)}")
    stacked = np.stack([s.points for s in sets])
    return LandmarkSet(stacked.mean(axis=0))


@dataclass(frozen=True)
class FrameImage:
    """H x W x 3 float image in [-1, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"frame must have shape (H, W, 3), got {px.shape}")
        if not np.isfinite(px).all():
            raise RangeError("frame contains non-finite pixels")
        if px.min() < -1.0 - _EPS or px.max() > 1.0 + _EPS:
            raise RangeError(
                f"frame pixels outside [-1, 1]: min={px.min():g} max={px.max():g}"
            )
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def hw(self) -> tuple:
        return self.pixels.shape[0], self.pixels.shape[1]

    @staticmethod
    def zeros(h: int, w: int) -> "FrameImage":
        return FrameImage(np.zeros((h, w, 3), dtype=np.float32))


@dataclass(frozen=True)
class SampleRecord:
    """One training sample: text plus aligned per-frame AU+PS and images."""

    id: str
    text: str
    aups_seq: tuple
    frames: tuple

    def __post_init__(self):
        object.__setattr__(self, "aups_seq", tuple(self.aups_seq))
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.aups_seq) != len(self.frames):
            raise ShapeError(
                f"sample {self.id}: {len(self.aups_seq)} AU+PS rows vs "
                f"{len(self.frames)} frames"
            )
        if len(self.aups_seq) < 1:
            raise EmptyInputError(f"sample {self.id} has no frames")

    @property
    def num_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline; the fully-resolved config is echoed to disk."""

    seed: int = 0
    n_prior: int = 2
    image_hw: tuple = (64, 64)
    embed_dim: int = 200
    hidden_size: int = 128
    t_max: int = 120
    lambda_fm: float = 10.0
    lambda_vgg: float = 10.0
    lambda_stop: float = 0.5
    lr_seq2au: float = 1e-3
    lr_gan: float = 2e-4
    gan_beta1: float = 0.5
    gan_beta2: float = 0.999
    batch_seq2au: int = 20
    batch_gan: int = 4
    frames_per_word: int = 4
    landmark_count: int = 12
    heatmap_sigma_px: float = 1.5
    ngf: int = 32
    ndf: int = 32
    gen_res_blocks: int = 4
    disc_scales: int = 2
    gan_mode: str = "vanilla"
    repeat_flm_per_step: bool = False
    teacher_forcing_ratio: float = 1.0
    frame_feedback_prob: float = 0.0
    fine_tune_embeddings: bool = False
    fallback_seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        object.__setattr__(self, "image_hw", tuple(int(x) for x in self.image_hw))
        if self.n_prior < 0:
            raise ContractError("n_prior must be >= 0")
        if self.t_max < 1:
            raise ContractError("t_max must be >= 1")
        if self.embed_dim < 1:
            raise ContractError("embed_dim must be >= 1")
        if self.lambda_fm < 0 or self.lambda_vgg < 0 or self.lambda_stop < 0:
            raise ContractError("loss weights must be nonnegative")
        if self.gan_mode not in ("vanilla", "lsgan"):
            raise ContractError(f"unknown gan_mode {self.gan_mode!r}")
        if not (0.0 <= self.teacher_forcing_ratio <= 1.0):
            raise ContractError("teacher_forcing_ratio must be in [0, 1]")
        if not (0.0 <= self.frame_feedback_prob <= 1.0):
            raise ContractError("frame_feedback_prob must be in [0, 1]")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_hw"] = list(d["image_hw"])
        return d

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        return PipelineConfig(**d)

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"config is not valid JSON: {e}") from e
        return PipelineConfig.from_dict(d)
