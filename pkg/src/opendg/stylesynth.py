"""Learned style synthesis and its margin objective, plus the MixStyle substitute."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from opendg.featstats import StyleStats


@dataclass(frozen=True)
class NoiseSpec:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"noise std must be >= 0, got {self.std}")


@dataclass(frozen=True)
class StyleBand:
    a: float
    b: float

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ValueError(f"style band needs 0 <= a < b, got [{self.a}, {self.b}]")


DEFAULT_BAND_MU = StyleBand(1.5, 3.5)
DEFAULT_BAND_SIGMA = StyleBand(0.1, 2.0)


@dataclass(frozen=True)
class MixStyleConfig:
    beta_param: float = 0.1

    def __post_init__(self):
        if not self.beta_param > 0:
            raise ValueError(f"beta_param must be > 0, got {self.beta_param}")


def _numpy_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, torch.Generator):
        # draw a child seed so the torch stream stays the single source of randomness
        rng = int(torch.randint(0, 2**31 - 1, (1,), generator=rng))
    return np.random.default_rng(rng)


def _make_generator(rng) -> torch.Generator | None:
    if rng is None or isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(int(rng))
    return g


class StyleSynthNet(nn.Module):
    """Two-layer MLP mapping ``[mu1; sigma1; mu2; sigma2]`` to ``[mu_new; sigma_new]``.

    Widths follow ``4C -> 3C -> 2C`` with a ReLU after each layer, so the
    synthesized std is nonnegative by construction.
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.channels = channels
        self.fc1 = nn.Linear(4 * channels, 3 * channels)
        self.fc2 = nn.Linear(3 * channels, 2 * channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.fc2(F.relu(self.fc1(x))))

    def zero_output_layer(self) -> None:
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)


def synthesize_style(
    net: StyleSynthNet,
    s1: StyleStats,
    s2: StyleStats,
    noise: NoiseSpec = NoiseSpec(),
    rng=None,
) -> StyleStats:
    """Generate a novel style from two (same-class) style descriptors.

    Each of the four input vectors gets its own Gaussian perturbation before
    the network sees them. ``rng`` is a seed or a ``torch.Generator``.
    """
    c = net.channels
    for s in (s1, s2):
        if s.mean.dim() != 2 or s.mean.shape[1] != c or s.std.shape != s.mean.shape:
            raise ValueError(f"style stats {tuple(s.mean.shape)} do not fit a {c}-channel synthesizer")
    if s1.mean.shape != s2.mean.shape:
        raise ValueError("s1 and s2 must have the same shape")
    parts = [s1.mean, s1.std, s2.mean, s2.std]
    if noise.std > 0 or noise.mean != 0:
        gen = _make_generator(rng)
        parts = [
            p + noise.mean + noise.std * torch.randn(p.shape, generator=gen, dtype=p.dtype, device=p.device)
            for p in parts
        ]
    out = net(torch.cat(parts, dim=1))
    return StyleStats(out[:, :c], out[:, c:])


def _band_hinge(d: torch.Tensor, band: StyleBand) -> torch.Tensor:
    # zero inside [a, b], a - d below, d - b above
    return F.relu(band.a - d) + F.relu(d - band.b)


def _l2(x: torch.Tensor) -> torch.Tensor:
    # sqrt with zero gradient at the origin instead of NaN
    sq = (x * x).sum(dim=1)
    return torch.where(sq > 0, sq.clamp_min(torch.finfo(x.dtype).tiny).sqrt(), torch.zeros_like(sq))


def style_margin_terms(
    new: StyleStats,
    s1: StyleStats,
    s2: StyleStats,
    band_mu: StyleBand = DEFAULT_BAND_MU,
    band_sigma: StyleBand = DEFAULT_BAND_SIGMA,
) -> dict[str, torch.Tensor]:
    """Per-instance distances and hinge values for the four (new, input) pairs."""
    out = {}
    for i, s in ((1, s1), (2, s2)):
        if s.mean.shape != new.mean.shape or s.std.shape != new.std.shape:
            raise ValueError("style stats must share one shape")
        d_mu = _l2(new.mean - s.mean)
        d_sigma = _l2(new.std - s.std)
        out[f"d_mu{i}"] = d_mu
        out[f"d_sigma{i}"] = d_sigma
        out[f"hinge_mu{i}"] = _band_hinge(d_mu, band_mu)
        out[f"hinge_sigma{i}"] = _band_hinge(d_sigma, band_sigma)
    return out


def style_margin_loss(
    new: StyleStats,
    s1: StyleStats,
    s2: StyleStats,
    band_mu: StyleBand = DEFAULT_BAND_MU,
    band_sigma: StyleBand = DEFAULT_BAND_SIGMA,
) -> torch.Tensor:
    """Sum of the four band hinges per instance, averaged over the batch."""
    if not isinstance(band_mu, StyleBand) or not isinstance(band_sigma, StyleBand):
        raise TypeError("bands must be StyleBand instances")
    t = style_margin_terms(new, s1, s2, band_mu, band_sigma)
    per_instance = t["hinge_mu1"] + t["hinge_mu2"] + t["hinge_sigma1"] + t["hinge_sigma2"]
    return per_instance.mean()


def mixstyle_baseline(
    s1: StyleStats,
    s2: StyleStats,
    cfg: MixStyleConfig = MixStyleConfig(),
    rng=None,
    lam: torch.Tensor | float | None = None,
) -> StyleStats:
    """Convex mix ``lam * s1 + (1 - lam) * s2`` with ``lam ~ Beta(G, G)`` per instance.

    Passing ``lam`` bypasses sampling.
    """
    if s1.mean.shape != s2.mean.shape or s1.std.shape != s2.std.shape:
        raise ValueError("s1 and s2 must have the same shape")
    n = s1.mean.shape[0]
    if lam is None:
        lam = _numpy_rng(rng).beta(cfg.beta_param, cfg.beta_param, size=n)
    lam = torch.as_tensor(lam, dtype=s1.mean.dtype, device=s1.mean.device)
    if lam.dim() == 0:
        lam = lam.expand(n)
    lam = lam.reshape(n, 1)
    return StyleStats(
        lam * s1.mean + (1 - lam) * s2.mean,
        lam * s1.std + (1 - lam) * s2.std,
    )
