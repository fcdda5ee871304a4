"""Pseudo-open sample generation.

The learned route mixes two different-class embeddings with per-dimension
weights predicted by :class:`FeatAggNet`. The three image-space functions
are the ad-hoc alternatives it is compared against.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

PATCH_SIZE = 30


class FeatAggNet(nn.Module):
    """``2D -> D`` (ReLU, BatchNorm) ``-> D`` (sigmoid) weighting network."""

    def __init__(self, dim: int, bn_momentum: float = 0.1):
        super().__init__()
        self.dim = dim
        self.fc1 = nn.Linear(2 * dim, dim)
        self.bn = nn.BatchNorm1d(dim, momentum=bn_momentum)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, e1: torch.Tensor, e3: torch.Tensor) -> torch.Tensor:
        h = self.bn(torch.relu(self.fc1(torch.cat([e1, e3], dim=1))))
        alpha = torch.sigmoid(self.fc2(h))
        # keep alpha strictly inside (0, 1) even where the sigmoid saturates
        tiny = torch.finfo(alpha.dtype).eps
        return alpha.clamp(tiny, 1.0 - tiny)


def mix_embeddings(e1: torch.Tensor, e3: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    return alpha * e1 + (1.0 - alpha) * e3


def aggregate_open(
    net: FeatAggNet,
    e1: torch.Tensor,
    e3: torch.Tensor,
    train_mode: bool | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Fuse two different-class embeddings into one pseudo-open embedding.

    Returns ``(alpha * e1 + (1 - alpha) * e3, alpha)``. When ``train_mode`` is
    given the network's batch-norm mode is switched accordingly first.
    """
    if e1.shape != e3.shape:
        raise ValueError(f"embedding shapes differ: {tuple(e1.shape)} vs {tuple(e3.shape)}")
    if e1.dim() != 2 or e1.shape[1] != net.dim:
        raise ValueError(f"expected (N, {net.dim}) embeddings, got {tuple(e1.shape)}")
    if train_mode is not None:
        net.train(train_mode)
    alpha = net(e1, e3)
    return mix_embeddings(e1, e3, alpha), alpha


def _check_pair(x1: torch.Tensor, x3: torch.Tensor) -> None:
    if x1.shape != x3.shape:
        raise ValueError(f"image shapes differ: {tuple(x1.shape)} vs {tuple(x3.shape)}")
    if x1.dim() not in (3, 4):
        raise ValueError("images must be (C, H, W) or (N, C, H, W)")


def baseline_half_crop(x1: torch.Tensor, x3: torch.Tensor) -> torch.Tensor:
    """Left half of ``x1`` joined to the right half of ``x3`` (split at ``W // 2``)."""
    _check_pair(x1, x3)
    split = x1.shape[-1] // 2
    return torch.cat([x1[..., :split], x3[..., split:]], dim=-1)


def baseline_pixel_mean(x1: torch.Tensor, x3: torch.Tensor) -> torch.Tensor:
    _check_pair(x1, x3)
    return 0.5 * (x1 + x3)


def baseline_patch_replace(
    x1: torch.Tensor,
    x3: torch.Tensor,
    patch: int = PATCH_SIZE,
    rng=None,
) -> torch.Tensor:
    """Copy one uniformly placed ``patch x patch`` window of ``x3`` into ``x1``.

    Batched input draws an independent location per image.
    """
    _check_pair(x1, x3)
    h, w = x1.shape[-2:]
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} is smaller than the {patch}x{patch} patch")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    out = x1.clone()
    batched = out.dim() == 4
    n = out.shape[0] if batched else 1
    tops = gen.integers(0, h - patch + 1, size=n)
    lefts = gen.integers(0, w - patch + 1, size=n)
    for i in range(n):
        t, l = int(tops[i]), int(lefts[i])
        if batched:
            out[i, :, t:t + patch, l:l + patch] = x3[i, :, t:t + patch, l:l + patch]
        else:
            out[:, t:t + patch, l:l + patch] = x3[:, t:t + patch, l:l + patch]
    return out


ADHOC_BASELINES = {
    "half_crop": baseline_half_crop,
    "pixel_mean": baseline_pixel_mean,
    "patch_replace": baseline_patch_replace,
}
