"""Conditional frame generator and multi-scale sequence discriminator.

The generator maps a conditioning stack to one face frame (tanh head). The
discriminator scores (stack, frame-window) pairs at full and half resolution,
exposing per-patch logits plus intermediate features for feature matching.
The combined objective is adversarial + feature-matching + perceptual, with
nonnegative weights on the last two.
"""
from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ContractError, FrameImage, ShapeError
from .cond_compiler import ConditioningStack, chw_to_frame, frame_to_chw

# one discriminator scale returns (patch score map, feature pyramid)
FeaturePyramid = List[torch.Tensor]
ScaleOutput = Tuple[torch.Tensor, FeaturePyramid]


def seeded_gan_init(module: nn.Module, seed: int) -> None:
    """Conv weights ~ N(0, 0.02), biases zero, drawn from a dedicated generator."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.data.normal_(0.0, 0.02, generator=gen)
                if m.bias is not None:
                    m.bias.data.zero_()


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.norm1 = nn.InstanceNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.norm2 = nn.InstanceNorm2d(channels)

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


class FrameGenerator(nn.Module):
    """Encoder (2 stride-2 downs) -> residual trunk -> decoder (2 ups) -> tanh."""

    def __init__(self, in_channels: int, ngf: int = 32, res_blocks: int = 4,
                 out_channels: int = 3, seed: Optional[int] = None):
        super().__init__()
        self.in_channels = in_channels
        self.stem = nn.Conv2d(in_channels, ngf, 3, 1, 1)
        self.down1 = nn.Conv2d(ngf, ngf * 2, 3, 2, 1)
        self.down2 = nn.Conv2d(ngf * 2, ngf * 4, 3, 2, 1)
        self.trunk = nn.ModuleList(ResidualBlock(ngf * 4) for _ in range(res_blocks))
        self.up1 = nn.ConvTranspose2d(ngf * 4, ngf * 2, 3, 2, 1, output_padding=1)
        self.up2 = nn.ConvTranspose2d(ngf * 2, ngf, 3, 2, 1, output_padding=1)
        self.head = nn.Conv2d(ngf, out_channels, 3, 1, 1)
        self.norms = nn.ModuleList(
            nn.InstanceNorm2d(c) for c in (ngf, ngf * 2, ngf * 4, ngf * 2, ngf)
        )
        if seed is not None:
            seeded_gan_init(self, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"generator expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        x = F.relu(self.norms[0](self.stem(x)))
        x = F.relu(self.norms[1](self.down1(x)))
        x = F.relu(self.norms[2](self.down2(x)))
        for block in self.trunk:
            x = block(x)
        x = F.relu(self.norms[3](self.up1(x)))
        x = F.relu(self.norms[4](self.up2(x)))
        return torch.tanh(self.head(x))


class PatchDiscriminator(nn.Module):
    """One scale: (n_layers - 1) strided convs then a stride-1 patch score head.

    Returns the score map plus the pyramid of every layer output (the score
    map included, as in the feature-matching convention it feeds).
    """

    def __init__(self, in_channels: int, ndf: int = 32, n_layers: int = 4):
        super().__init__()
        if n_layers < 2:
            raise ContractError("discriminator needs at least 2 conv layers")
        convs, norms = [], []
        ch = in_channels
        out = ndf
        for i in range(n_layers - 1):
            convs.append(nn.Conv2d(ch, out, 4, 2, 1))
            norms.append(nn.Identity() if i == 0 else nn.InstanceNorm2d(out))
            ch, out = out, min(out * 2, ndf * 8)
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.score = nn.Conv2d(ch, 1, 4, 1, 1)

    def forward(self, x: torch.Tensor) -> ScaleOutput:
        feats: FeaturePyramid = []
        for conv, norm in zip(self.convs, self.norms):
            x = F.leaky_relu(norm(conv(x)), 0.2)
            feats.append(x)
        score = self.score(x)
        feats.append(score)
        return score, feats


class MultiScaleDiscriminator(nn.Module):
    """Identical patch discriminators applied at 1, 1/2, ... resolution.

    Scale k sees the input average-pooled k times (2x window), so every scale
    scores the same (stack, frames) content.
    """

    def __init__(self, stack_channels: int, window_frames: int, ndf: int = 32,
                 n_scales: int = 2, n_layers: int = 4, seed: Optional[int] = None):
        super().__init__()
        self.stack_channels = stack_channels
        self.window_frames = window_frames
        self.in_channels = stack_channels + 3 * window_frames
        self.scales = nn.ModuleList(
            PatchDiscriminator(self.in_channels, ndf, n_layers) for _ in range(n_scales)
        )
        if seed is not None:
            seeded_gan_init(self, seed)

    def forward(self, x: torch.Tensor) -> List[ScaleOutput]:
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"discriminator expects {self.in_channels} channels, got {x.shape[1]}"
            )
        outputs = []
        for k, scale in enumerate(self.scales):
            outputs.append(scale(x))
            if k + 1 < len(self.scales):
                x = F.avg_pool2d(x, 2)
        return outputs


def generate(stack: ConditioningStack, g: FrameGenerator) -> FrameImage:
    """Deterministic single-frame synthesis (no noise input)."""
    if stack.channels.shape[0] != g.in_channels:
        raise ShapeError(
            f"stack has {stack.channels.shape[0]} channels, generator wants {g.in_channels}"
        )
    with torch.no_grad():
        out = g(stack.channels.unsqueeze(0))[0]
    return chw_to_frame(out)


def discriminate(stack: ConditioningStack, frame_window: Sequence[FrameImage],
                 d: MultiScaleDiscriminator) -> List[ScaleOutput]:
    """Score a (stack, n_prior+1 frame window) pair at every scale."""
    if len(frame_window) != d.window_frames:
        raise ShapeError(
            f"window has {len(frame_window)} frames, discriminator wants {d.window_frames}"
        )
    frames = torch.cat([frame_to_chw(f) for f in frame_window], dim=0)
    x = torch.cat([stack.channels, frames], dim=0).unsqueeze(0)
    return d(x)


def _as_scale_list(logits) -> List[torch.Tensor]:
    if isinstance(logits, torch.Tensor):
        return [logits]
    return list(logits)


def gan_loss(real_logits, fake_logits, mode: str = "vanilla"):
    """Adversarial losses summed over scales.

    vanilla: d = -mean log sigma(real) - mean log(1 - sigma(fake)),
             g = -mean log sigma(fake) (non-saturating), both via softplus
             so saturated logits stay finite.
    lsgan:   least-squares variant with targets 1/0.
    """
    reals, fakes = _as_scale_list(real_logits), _as_scale_list(fake_logits)
    if len(reals) != len(fakes):
        raise ShapeError(f"{len(reals)} real scales vs {len(fakes)} fake scales")
    for t in reals + fakes:
        if not torch.isfinite(t).all():
            raise ContractError("gan_loss got non-finite logits")
    zero = reals[0].new_zeros(())
    d_loss, g_loss = zero.clone(), zero.clone()
    for r, f in zip(reals, fakes):
        if mode == "vanilla":
            d_loss = d_loss + F.softplus(-r).mean() + F.softplus(f).mean()
            g_loss = g_loss + F.softplus(-f).mean()
        elif mode == "lsgan":
            d_loss = d_loss + 0.5 * ((r - 1.0) ** 2).mean() + 0.5 * (f ** 2).mean()
            g_loss = g_loss + ((f - 1.0) ** 2).mean()
        else:
            raise ContractError(f"unknown gan mode {mode!r}")
    return d_loss, g_loss


def _as_pyramid_list(feats) -> List[FeaturePyramid]:
    if feats and isinstance(feats[0], torch.Tensor):
        return [list(feats)]
    return [list(p) for p in feats]


def fm_loss(real_feats, fake_feats) -> torch.Tensor:
    """Mean |real - fake| per layer, averaged over layers and scales.

    Real features are treated as constants: no gradient flows into the
    discriminator through this term.
    """
    real_p, fake_p = _as_pyramid_list(real_feats), _as_pyramid_list(fake_feats)
    if len(real_p) != len(fake_p):
        raise ShapeError(f"{len(real_p)} real pyramids vs {len(fake_p)} fake pyramids")
    total = None
    n = 0
    for rp, fp in zip(real_p, fake_p):
        if len(rp) != len(fp):
            raise ShapeError("pyramid depth mismatch between real and fake")
        for r, f in zip(rp, fp):
            if r.shape != f.shape:
                raise ShapeError(f"feature shape mismatch {tuple(r.shape)} vs {tuple(f.shape)}")
            term = (r.detach() - f).abs().mean()
            total = term if total is None else total + term
            n += 1
    return total / n


class RandomConvFeatureExtractor(nn.Module):
    """Frozen seeded conv pyramid standing in for pretrained perceptual features.

    Any module with the same interface (forward -> list of feature tensors,
    plus a layer_weights attribute) can be plugged into perceptual_loss.
    """

    def __init__(self, channels: Sequence[int] = (8, 16, 32), seed: int = 0,
                 layer_weights: Optional[Sequence[float]] = None):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        ch = 3
        for out in channels:
            conv = nn.Conv2d(ch, out, 3, 2, 1)
            with torch.no_grad():
                # He-style scale keeps feature magnitudes comparable to pixels
                conv.weight.data.normal_(0.0, math.sqrt(2.0 / (ch * 9)), generator=gen)
                conv.bias.data.zero_()
            convs.append(conv)
            ch = out
        self.convs = nn.ModuleList(convs)
        if layer_weights is None:
            layer_weights = [1.0 / len(channels)] * len(channels)
        self.layer_weights = tuple(float(w) for w in layer_weights)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats


def _as_batched_image(img) -> torch.Tensor:
    if isinstance(img, FrameImage):
        return frame_to_chw(img).unsqueeze(0)
    if img.dim() == 3:
        return img.unsqueeze(0)
    return img


def perceptual_loss(fake, real, extractor) -> torch.Tensor:
    """Layer-weighted mean absolute distance in the extractor's feature space."""
    fake_t, real_t = _as_batched_image(fake), _as_batched_image(real)
    if fake_t.shape != real_t.shape:
        raise ShapeError(f"image shape mismatch {tuple(fake_t.shape)} vs {tuple(real_t.shape)}")
    fake_feats = extractor(fake_t)
    real_feats = extractor(real_t)
    weights = extractor.layer_weights
    if len(weights) != len(fake_feats):
        raise ShapeError("extractor returned a pyramid not matching its layer_weights")
    total = None
    for w, ff, rf in zip(weights, fake_feats, real_feats):
        term = w * (ff - rf.detach()).abs().mean()
        total = term if total is None else total + term
    return total


def combined_losses(stacks: torch.Tensor, real_windows: torch.Tensor,
                    g: FrameGenerator, d: MultiScaleDiscriminator,
                    extractor, lambda_fm: float, lambda_vgg: float,
                    gan_mode: str = "vanilla"):
    """Full objective for a batch of conditioning windows.

    stacks: (B, C, H, W); real_windows: (B, n_prior+1, 3, H, W) of ground-truth
    frames, current frame last. The fake window keeps the ground-truth priors
    and swaps in the generated current frame. Returns (g_total, d_total,
    components) where components has exactly d_loss / g_adv / g_fm / g_perc.
    """
    if lambda_fm < 0 or lambda_vgg < 0:
        raise ContractError("loss weights must be nonnegative")
    bsz, win, _, h, w = real_windows.shape
    if win != d.window_frames:
        raise ShapeError(f"window of {win} frames but discriminator wants {d.window_frames}")

    fake = g(stacks)
    real_current = real_windows[:, -1]
    fake_windows = torch.cat([real_windows[:, :-1], fake.unsqueeze(1)], dim=1)

    real_in = torch.cat([stacks, real_windows.reshape(bsz, -1, h, w)], dim=1)
    fake_in = torch.cat([stacks, fake_windows.reshape(bsz, -1, h, w)], dim=1)

    real_out = d(real_in)
    fake_out = d(fake_in)                    # gradients reach the generator
    fake_out_det = d(fake_in.detach())       # discriminator's view of the fake

    real_scores = [s for s, _ in real_out]
    d_loss, _ = gan_loss(real_scores, [s for s, _ in fake_out_det], mode=gan_mode)
    _, g_adv = gan_loss(real_scores, [s for s, _ in fake_out], mode=gan_mode)
    g_fm = fm_loss([f for _, f in real_out], [f for _, f in fake_out])
    g_perc = perceptual_loss(fake, real_current, extractor)

    g_total = g_adv + lambda_fm * g_fm + lambda_vgg * g_perc
    components = {
        "d_loss": d_loss.item(),
        "g_adv": g_adv.item(),
        "g_fm": g_fm.item(),
        "g_perc": g_perc.item(),
    }
    return g_total, d_loss, components
