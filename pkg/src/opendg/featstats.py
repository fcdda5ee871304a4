"""Instance-level feature statistics, normalization and restyling.

Everything here operates on 4-axis feature maps ``(N, C, H, W)`` and on
per-instance, per-channel style statistics stored as ``(N, C)`` tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

DEFAULT_EPS = 1e-5


class StyleStats(NamedTuple):
    """Per-instance, per-channel ``(mean, std)`` pair, each shaped ``(N, C)``."""

    mean: torch.Tensor
    std: torch.Tensor

    def concat(self) -> torch.Tensor:
        """``[mean; std]`` along the channel axis, shape ``(N, 2C)``."""
        return torch.cat([self.mean, self.std], dim=1)

    @property
    def shape(self):
        return tuple(self.mean.shape)

    def detach(self) -> "StyleStats":
        return StyleStats(self.mean.detach(), self.std.detach())


@dataclass(frozen=True)
class StatsConfig:
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def _eps_value(cfg: StatsConfig | float | None) -> float:
    # A bare float is accepted so that eps=0 is reachable for exactness checks.
    if cfg is None:
        return DEFAULT_EPS
    if isinstance(cfg, StatsConfig):
        return cfg.epsilon
    eps = float(cfg)
    if eps < 0 or not np.isfinite(eps):
        raise ValueError(f"epsilon must be finite and >= 0, got {eps}")
    return eps


def check_feature_map(f: torch.Tensor) -> None:
    if f.dim() != 4:
        raise ValueError(f"feature map must be (N, C, H, W), got shape {tuple(f.shape)}")
    if min(f.shape) < 1:
        raise ValueError(f"feature map has an empty axis: {tuple(f.shape)}")
    if not torch.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")


def _check_stats_match(f: torch.Tensor, s: StyleStats, what: str) -> None:
    expected = tuple(f.shape[:2])
    if tuple(s.mean.shape) != expected or tuple(s.std.shape) != expected:
        raise ValueError(
            f"{what} stats shape {tuple(s.mean.shape)}/{tuple(s.std.shape)} "
            f"does not match feature map (N, C) = {expected}"
        )


def safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    """sqrt with a zero (not NaN) gradient at exactly zero."""
    pos = x > 0
    return torch.where(pos, x.clamp_min(torch.finfo(x.dtype).tiny).sqrt(), torch.zeros_like(x))


def compute_instance_stats(f: torch.Tensor) -> StyleStats:
    """Mean and population std over the spatial positions of every (instance, channel)."""
    check_feature_map(f)
    mean = f.mean(dim=(2, 3))
    var = f.var(dim=(2, 3), unbiased=False)
    return StyleStats(mean, safe_sqrt(var))


def instance_normalize(f: torch.Tensor, s: StyleStats, cfg: StatsConfig | float | None = None) -> torch.Tensor:
    eps = _eps_value(cfg)
    if f.dim() != 4:
        raise ValueError(f"feature map must be (N, C, H, W), got shape {tuple(f.shape)}")
    _check_stats_match(f, s, "original")
    return (f - s.mean[:, :, None, None]) / (s.std[:, :, None, None] + eps)


def restyle(
    f: torch.Tensor,
    original: StyleStats,
    target: StyleStats,
    cfg: StatsConfig | float | None = None,
) -> torch.Tensor:
    """Swap the style of ``f`` from ``original`` to ``target``.

    ``target.mean + target.std * (f - original.mean) / (original.std + eps)``;
    eps only guards the original std, the target std is used as given.
    """
    _check_stats_match(f, target, "target")
    if not (torch.isfinite(target.mean).all() and torch.isfinite(target.std).all()):
        raise ValueError("target style statistics must be finite")
    normed = instance_normalize(f, original, cfg)
    return target.mean[:, :, None, None] + target.std[:, :, None, None] * normed


def _as_rows(a, b):
    a = np.asarray(a.detach().cpu() if isinstance(a, torch.Tensor) else a, dtype=np.float64)
    b = np.asarray(b.detach().cpu() if isinstance(b, torch.Tensor) else b, dtype=np.float64)
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both vector sets must be nonempty")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine distance is undefined for zero-norm vectors")
    return a / na[:, None], b / nb[:, None]


def mean_cosine_distance(a, b, paired: bool = False) -> float:
    """Average ``1 - cos(u, v)`` between two sets of row vectors, in [0, 2].

    By default every cross pair ``u in a``, ``v in b`` counts. ``paired=True``
    compares row ``i`` of ``a`` with row ``i`` of ``b`` only (equal row counts).
    """
    a, b = _as_rows(a, b)
    if paired:
        if a.shape != b.shape:
            raise ValueError(f"paired distance needs equal shapes, got {a.shape} and {b.shape}")
        cos = np.sum(a * b, axis=1)
    else:
        cos = a @ b.T
    return float(np.mean(1.0 - np.clip(cos, -1.0, 1.0)))
