"""Builds the generator's spatial conditioning input.

One stack per output frame: broadcast AU+PS maps for the temporal window,
a Gaussian landmark heatmap of the corpus-average face, and the previous
n frames as image channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .core import (
    AUPS_DIM,
    AUPSVector,
    ContractError,
    FrameImage,
    LandmarkSet,
    PipelineConfig,
    ShapeError,
)


def frame_to_chw(frame: FrameImage) -> torch.Tensor:
    """FrameImage (H,W,3) -> float32 tensor (3,H,W)."""
    return torch.from_numpy(np.ascontiguousarray(frame.pixels.transpose(2, 0, 1)))


def chw_to_frame(tensor: torch.Tensor) -> FrameImage:
    arr = tensor.detach().cpu().numpy().transpose(1, 2, 0)
    return FrameImage(arr)


def broadcast_aups(v: AUPSVector, h: int, w: int) -> torch.Tensor:
    """Encode the 20 scalars as 20 spatially-constant channels."""
    if not v.normalized:
        raise ContractError("broadcast_aups expects a normalized AU+PS vector")
    values = torch.from_numpy(v.vector()).to(torch.float32)
    return values.view(AUPS_DIM, 1, 1).expand(AUPS_DIM, h, w).contiguous()


def splat_landmarks(flm: LandmarkSet, h: int, w: int, sigma_px: float) -> torch.Tensor:
    """Rasterize landmarks as a single heatmap channel in (0, 1].

    Each landmark contributes a Gaussian bump exp(-d^2 / (2 sigma^2)) with d in
    pixel units; overlapping bumps combine by max so the channel never exceeds 1.
    Pixel i covers normalized coordinate (i + 0.5) / size.
    """
    ys = (torch.arange(h, dtype=torch.float32) + 0.5) / h
    xs = (torch.arange(w, dtype=torch.float32) + 0.5) / w
    gy = ys.view(h, 1) * h  # pixel-space grid of pixel centers
    gx = xs.view(1, w) * w
    pts = torch.from_numpy(flm.points).to(torch.float32)
    px = pts[:, 0] * w
    py = pts[:, 1] * h
    d2 = (gx.unsqueeze(0) - px.view(-1, 1, 1)) ** 2 + (gy.unsqueeze(0) - py.view(-1, 1, 1)) ** 2
    bumps = torch.exp(-d2 / (2.0 * sigma_px * sigma_px))
    return bumps.max(dim=0).values.unsqueeze(0)


@dataclass(frozen=True)
class ChannelGroup:
    name: str
    start: int
    count: int


@dataclass(frozen=True)
class StackLayout:
    """Ordered channel groups of one conditioning stack."""

    groups: tuple

    def group(self, name: str) -> ChannelGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    @property
    def total_channels(self) -> int:
        return sum(g.count for g in self.groups)


@dataclass(frozen=True)
class ConditioningStack:
    channels: torch.Tensor  # (C, H, W) float32
    layout: StackLayout

    def __post_init__(self):
        if self.channels.shape[0] != self.layout.total_channels:
            raise ShapeError(
                f"stack has {self.channels.shape[0]} channels, layout says "
                f"{self.layout.total_channels}"
            )

    def group(self, name: str) -> torch.Tensor:
        g = self.layout.group(name)
        return self.channels[g.start : g.start + g.count]


def stack_channel_count(n_prior: int, repeat_flm_per_step: bool = False) -> int:
    if repeat_flm_per_step:
        return (AUPS_DIM + 1) * (n_prior + 1) + 3 * n_prior
    return AUPS_DIM * (n_prior + 1) + 1 + 3 * n_prior


def assemble_stack(
    current: AUPSVector,
    priors: Sequence[AUPSVector],
    avg_flm: LandmarkSet,
    prior_frames: Sequence[FrameImage],
    config: PipelineConfig,
    heatmap: Optional[torch.Tensor] = None,
) -> ConditioningStack:
    """Stack = [AU+PS_{t-n} .. AU+PS_t | avg-FLM heatmap | frame_{t-n} .. frame_{t-1}].

    Fewer than n_prior priors is allowed at sequence start: missing slots are
    filled with zero AU+PS vectors and all-zero frames. `heatmap` may carry a
    precomputed splat (it is constant per corpus) to avoid recomputation.
    """
    n = config.n_prior
    h, w = config.image_hw
    if len(priors) != len(prior_frames):
        raise ShapeError(
            f"{len(priors)} prior AU+PS vectors vs {len(prior_frames)} prior frames"
        )
    if len(priors) > n:
        raise ShapeError(f"got {len(priors)} priors but n_prior={n}")
    pad = n - len(priors)
    priors = [AUPSVector.zeros()] * pad + list(priors)
    prior_frames = [FrameImage.zeros(h, w)] * pad + list(prior_frames)
    for v in priors + [current]:
        if not v.normalized:
            raise ContractError("assemble_stack expects normalized AU+PS vectors")

    if heatmap is None:
        heatmap = splat_landmarks(avg_flm, h, w, config.heatmap_sigma_px)

    groups: List[ChannelGroup] = []
    parts: List[torch.Tensor] = []
    cursor = 0

    def push(name: str, tensor: torch.Tensor):
        nonlocal cursor
        groups.append(ChannelGroup(name, cursor, tensor.shape[0]))
        parts.append(tensor)
        cursor += tensor.shape[0]

    for k, v in enumerate(priors):
        push(f"aups_t-{n - k}", broadcast_aups(v, h, w))
        if config.repeat_flm_per_step:
            push(f"avg_flm_t-{n - k}", heatmap)
    push("aups_t", broadcast_aups(current, h, w))
    push("avg_flm", heatmap)
    for k, f in enumerate(prior_frames):
        if f.hw != (h, w):
            raise ShapeError(f"prior frame has size {f.hw}, expected {(h, w)}")
        push(f"frame_t-{n - k}", frame_to_chw(f))

    return ConditioningStack(torch.cat(parts, dim=0), StackLayout(tuple(groups)))
