"""Model container and the checkpoint archive format."""

from __future__ import annotations

import io
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn

from opendg.backbone import ClassifierHead, SplitEncoder, build_encoder
from opendg.openmix import FeatAggNet
from opendg.stylesynth import StyleSynthNet

CHECKPOINT_FORMAT = "opendg-checkpoint"
CHECKPOINT_VERSION = 1
CHECKPOINT_KEYS = ("encoder", "head", "ssnet", "fanet")


@dataclass
class ModelSpec:
    num_known: int
    arch: str = "toy"
    split_depth: str = "default"
    open_set: bool = True
    width: int = 32  # toy backbone only
    embed_dim: int = 64  # toy backbone only; resnet18 is fixed at 512
    pretrained: bool = False  # resnet18 only
    norm: str = "batch"  # toy backbone only


class OpenSetModel(nn.Module):
    """Encoder, C+1-way head, style synthesizer and feature aggregator in one module."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        if spec.arch == "toy":
            enc = build_encoder("toy", spec.split_depth, width=spec.width, embed_dim=spec.embed_dim, norm=spec.norm)
        else:
            enc = build_encoder(spec.arch, spec.split_depth, pretrained=spec.pretrained)
        self.encoder: SplitEncoder = enc
        self.head = ClassifierHead(enc.embed_dim, spec.num_known, open_set=spec.open_set)
        self.ssnet = StyleSynthNet(enc.seam_channels)
        self.fanet = FeatAggNet(enc.embed_dim)

    @property
    def num_known(self) -> int:
        return self.spec.num_known

    @property
    def embed_dim(self) -> int:
        return self.encoder.embed_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Logits of the clean (test-time) path."""
        return self.head(self.encoder(x))


def build_model(spec: ModelSpec, seed: int | None = None, dtype: torch.dtype = torch.float32) -> OpenSetModel:
    if seed is not None:
        torch.manual_seed(seed)
    return OpenSetModel(spec).to(dtype)


def checkpoint_payload(model: OpenSetModel, extra: dict | None = None) -> dict:
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": asdict(model.spec),
        "num_known": model.num_known,
        "embed_dim": model.embed_dim,
        "seam_channels": model.encoder.seam_channels,
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
    }
    if extra:
        manifest.update(extra)
    return {
        "manifest": manifest,
        "encoder": model.encoder.state_dict(),
        "head": model.head.state_dict(),
        "ssnet": model.ssnet.state_dict(),
        "fanet": model.fanet.state_dict(),
    }


def save_checkpoint(model: OpenSetModel, path, extra: dict | None = None) -> Path:
    """Write atomically: serialize to memory, write a sibling temp file, rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(checkpoint_payload(model, extra), buf)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[OpenSetModel, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    manifest = payload.get("manifest", {})
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an {CHECKPOINT_FORMAT} archive")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    spec = ModelSpec(**manifest["model"])
    dtype = getattr(torch, manifest.get("dtype", "float32"))
    model = OpenSetModel(spec).to(dtype)
    for key in CHECKPOINT_KEYS:
        getattr(model, key).load_state_dict(payload[key])
    model.eval()
    return model, manifest


def state_fingerprint(model: nn.Module) -> dict[str, torch.Tensor]:
    """Detached copy of every parameter and buffer, for exact comparisons."""
    return {k: v.detach().clone() for k, v in model.state_dict().items()}
