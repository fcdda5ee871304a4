"""Split encoder with a style-injection seam, the C+1-way head and the forward paths.

Two encoder families share one interface:

* ``resnet18``: torchvision's ResNet-18 cut after the stem (``shallow``),
  after ``layer1`` (``default``) or after ``layer2`` (``deep``).
* ``toy``: four small conv blocks for desk-scale runs; the seam sits after
  block 1, 2 or 3 for the same three depth names.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from opendg.featstats import StatsConfig, StyleStats, compute_instance_stats, restyle
from opendg.openmix import FeatAggNet, aggregate_open
from opendg.stylesynth import MixStyleConfig, NoiseSpec, StyleSynthNet, mixstyle_baseline, synthesize_style

SPLIT_DEPTHS = ("shallow", "default", "deep")
ARCHS = ("toy", "resnet18")


class SplitEncoder(nn.Module):
    """``late(early(x))`` with the style seam between the two halves."""

    def __init__(self, early: nn.Module, late: nn.Module, seam_channels: int, embed_dim: int,
                 arch: str, split_depth: str, in_channels: int = 3, min_size: int = 8):
        super().__init__()
        self.early = early
        self.late = late
        self.seam_channels = seam_channels
        self.embed_dim = embed_dim
        self.arch = arch
        self.split_depth = split_depth
        self.in_channels = in_channels
        self.min_size = min_size

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (N, {self.in_channels}, H, W) images, got {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.min_size:
            raise ValueError(f"images must be at least {self.min_size}x{self.min_size}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.late(self.early(x))


TOY_NORMS = ("batch", "group", "none")


def _toy_block(cin: int, cout: int, pool: bool, norm: str = "batch") -> nn.Sequential:
    if norm == "batch":
        layers = [nn.Conv2d(cin, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout)]
    elif norm == "group":
        # per-sample statistics, so train and test behave identically
        layers = [nn.Conv2d(cin, cout, 3, padding=1, bias=False), nn.GroupNorm(min(8, cout), cout)]
    else:
        layers = [nn.Conv2d(cin, cout, 3, padding=1)]
    layers.append(nn.ReLU(inplace=True))
    if pool:
        layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


def build_toy_encoder(split_depth: str = "default", width: int = 32, embed_dim: int = 64,
                      norm: str = "batch") -> SplitEncoder:
    """Two conv blocks, seam, two conv blocks, global pooling (default split).

    ``norm`` picks batch-norm, group-norm or no normalization (LeNet-like).
    """
    if split_depth not in SPLIT_DEPTHS:
        raise ValueError(f"unknown split depth {split_depth!r}")
    if norm not in TOY_NORMS:
        raise ValueError(f"unknown toy norm {norm!r}; expected one of {TOY_NORMS}")
    blocks = [
        _toy_block(3, width, True, norm),
        _toy_block(width, width, False, norm),
        _toy_block(width, embed_dim, True, norm),
        _toy_block(embed_dim, embed_dim, True, norm),
    ]
    widths = [width, width, embed_dim, embed_dim]
    cut = {"shallow": 1, "default": 2, "deep": 3}[split_depth]
    early = nn.Sequential(*blocks[:cut])
    late = nn.Sequential(*blocks[cut:], nn.AdaptiveAvgPool2d(1), nn.Flatten())
    return SplitEncoder(early, late, widths[cut - 1], embed_dim, "toy", split_depth)


def build_resnet18_encoder(split_depth: str = "default", pretrained: bool = False) -> SplitEncoder:
    """ResNet-18 split per the reference layer tables; ``pretrained`` pulls ImageNet weights."""
    import torchvision

    if split_depth not in SPLIT_DEPTHS:
        raise ValueError(f"unknown split depth {split_depth!r}")
    weights = torchvision.models.ResNet18_Weights.IMAGENET1K_V1 if pretrained else None
    net = torchvision.models.resnet18(weights=weights)
    stem = [net.conv1, net.bn1, net.relu, net.maxpool]
    stages = [net.layer1, net.layer2, net.layer3, net.layer4]
    n_early = {"shallow": 0, "default": 1, "deep": 2}[split_depth]
    early = nn.Sequential(*stem, *stages[:n_early])
    late = nn.Sequential(*stages[n_early:], net.avgpool, nn.Flatten())
    seam = {"shallow": 64, "default": 64, "deep": 128}[split_depth]
    return SplitEncoder(early, late, seam, 512, "resnet18", split_depth, min_size=32)


def build_encoder(arch: str = "toy", split_depth: str = "default", **kwargs) -> SplitEncoder:
    if arch == "toy":
        return build_toy_encoder(split_depth, **kwargs)
    if arch == "resnet18":
        return build_resnet18_encoder(split_depth, **kwargs)
    raise ValueError(f"unknown backbone {arch!r}; expected one of {ARCHS}")


class ClassifierHead(nn.Module):
    """Affine map from embeddings to ``C + 1`` logits (``C`` in closed-set mode)."""

    def __init__(self, embed_dim: int, num_known: int, open_set: bool = True):
        super().__init__()
        if num_known < 1:
            raise ValueError("num_known must be >= 1")
        self.num_known = num_known
        self.open_set = open_set
        self.fc = nn.Linear(embed_dim, num_known + 1 if open_set else num_known)

    @property
    def num_outputs(self) -> int:
        return self.fc.out_features

    @property
    def open_index(self) -> int:
        """0-based index of the open class (== ``num_known``)."""
        if not self.open_set:
            raise ValueError("closed-set head has no open class")
        return self.num_known

    def zero_(self) -> "ClassifierHead":
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)
        return self

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.fc(emb)


def posteriors(logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(logits, dim=1)


@dataclass
class StyledBranch:
    """Intermediate values of one pass through the style seam."""

    styled: torch.Tensor  # restyled early features of x1
    s1: StyleStats
    s2: StyleStats
    new: StyleStats


def style_branch(
    f1: torch.Tensor,
    f2: torch.Tensor,
    ssnet: StyleSynthNet | None,
    noise: NoiseSpec = NoiseSpec(),
    rng=None,
    style_mode: str = "ssb",
    mix_cfg: MixStyleConfig = MixStyleConfig(),
    eps: StatsConfig | float | None = None,
    new: StyleStats | None = None,
) -> StyledBranch:
    """Restyle ``f1`` with a style synthesized from ``(f1, f2)``.

    ``style_mode`` picks the learned synthesizer (``"ssb"``) or MixStyle
    interpolation (``"mixstyle"``). ``new`` overrides the synthesized style.
    """
    s1 = compute_instance_stats(f1)
    s2 = compute_instance_stats(f2)
    if new is None:
        if style_mode == "ssb":
            if ssnet is None:
                raise ValueError("style_mode 'ssb' needs a StyleSynthNet")
            new = synthesize_style(ssnet, s1, s2, noise, rng)
        elif style_mode == "mixstyle":
            new = mixstyle_baseline(s1, s2, mix_cfg, rng)
        else:
            raise ValueError(f"unknown style mode {style_mode!r}")
    return StyledBranch(restyle(f1, s1, new, eps), s1, s2, new)


def _check_labels(y_a, y_b, same: bool) -> None:
    if y_a is None or y_b is None:
        return
    y_a = torch.as_tensor(y_a)
    y_b = torch.as_tensor(y_b)
    if same and not torch.equal(y_a, y_b):
        raise ValueError("styled pairs must share their class label")
    if not same and bool((y_a == y_b).any()):
        raise ValueError("open pairs must come from different classes")


def forward_clean(enc: SplitEncoder, head: ClassifierHead, x: torch.Tensor) -> torch.Tensor:
    return posteriors(head(enc(x)))


def forward_styled(
    enc: SplitEncoder,
    head: ClassifierHead,
    ssnet: StyleSynthNet | None,
    x1: torch.Tensor,
    x2: torch.Tensor,
    noise: NoiseSpec = NoiseSpec(),
    rng=None,
    y1=None,
    y2=None,
    **style_kwargs,
) -> torch.Tensor:
    """Posteriors of ``x1`` after its seam features are restyled; ``x1`` keeps its label."""
    _check_labels(y1, y2, same=True)
    enc.check_input(x1)
    enc.check_input(x2)
    br = style_branch(enc.early(x1), enc.early(x2), ssnet, noise, rng, **style_kwargs)
    return posteriors(head(enc.late(br.styled)))


def _route_mask(n: int, prob: float, gen: torch.Generator | None, like: torch.Tensor) -> torch.Tensor:
    if prob <= 0:
        return torch.zeros(n, dtype=torch.bool, device=like.device)
    if prob >= 1:
        return torch.ones(n, dtype=torch.bool, device=like.device)
    return torch.rand(n, generator=gen, dtype=torch.float64) < prob


def open_embeddings(
    enc: SplitEncoder,
    fanet: FeatAggNet,
    e1: torch.Tensor,
    f3: torch.Tensor,
    route_prob: float = 0.0,
    rng: torch.Generator | None = None,
    e1_styled: torch.Tensor | None = None,
    new: StyleStats | None = None,
    eps: StatsConfig | float | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pseudo-open embeddings from ``x1`` embeddings and ``x3`` seam features.

    With probability ``route_prob`` each side is taken from the restyled branch:
    ``x1`` uses its styled embedding, ``x3`` is restyled with the same
    synthesized style. Returns ``(open_embedding, alpha, e3)``.
    """
    n = e1.shape[0]
    if route_prob > 0:
        if e1_styled is None or new is None:
            raise ValueError("style routing needs the styled branch of x1")
        m1 = _route_mask(n, route_prob, rng, e1)
        m3 = _route_mask(n, route_prob, rng, e1)
        e1 = torch.where(m1[:, None], e1_styled, e1)
        f3_styled = restyle(f3, compute_instance_stats(f3), new, eps)
        f3 = torch.where(m3[:, None, None, None], f3_styled, f3)
    e3 = enc.late(f3)
    mixed, alpha = aggregate_open(fanet, e1, e3)
    return mixed, alpha, e3


def forward_open(
    enc: SplitEncoder,
    head: ClassifierHead,
    fanet: FeatAggNet,
    x1: torch.Tensor,
    x3: torch.Tensor,
    style_route_prob: float = 0.0,
    rng=None,
    y1=None,
    y3=None,
    ssnet: StyleSynthNet | None = None,
    x2: torch.Tensor | None = None,
    noise: NoiseSpec = NoiseSpec(),
) -> tuple[torch.Tensor, torch.Tensor]:
    """Posteriors of pseudo-open samples built from different-class pairs, plus alpha."""
    _check_labels(y1, y3, same=False)
    enc.check_input(x1)
    enc.check_input(x3)
    gen = rng
    if rng is not None and not isinstance(rng, torch.Generator):
        gen = torch.Generator()
        gen.manual_seed(int(rng))
    f1 = enc.early(x1)
    e1 = enc.late(f1)
    e1_styled = new = None
    if style_route_prob > 0:
        if ssnet is None or x2 is None:
            raise ValueError("style routing needs ssnet and the same-class partner x2")
        br = style_branch(f1, enc.early(x2), ssnet, noise, gen)
        e1_styled, new = enc.late(br.styled), br.new
    mixed, alpha, _ = open_embeddings(enc, fanet, e1, enc.early(x3), style_route_prob, gen, e1_styled, new)
    return posteriors(head(mixed)), alpha
