"""End-to-end training loop.

One step draws a batch of triplets ``(x1, x2, x3)`` and builds up to three
sample groups for the C+1-way head: clean ``x1`` (label ``y1``), ``x1`` restyled
at the seam (label ``y1``) and a pseudo-open sample from ``(x1, x3)`` (label
``C``). The composite objective is minimized with SGD + momentum.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from opendg.backbone import open_embeddings, posteriors, style_branch
from opendg.data import LabeledImages, build_triplets, iter_triplet_batches
from opendg.losses import LossWeights, loss_ce, loss_disc, loss_total
from opendg.model import OpenSetModel, save_checkpoint
from opendg.openmix import ADHOC_BASELINES
from opendg.stylesynth import DEFAULT_BAND_MU, DEFAULT_BAND_SIGMA, MixStyleConfig, NoiseSpec, StyleBand, style_margin_loss

log = logging.getLogger(__name__)

STYLE_MODES = ("ssb", "mixstyle", "none")
OPEN_MODES = ("fab", "half_crop", "pixel_mean", "patch_replace", "none")
LOSS_COMPONENTS = ("ce", "disc", "sm")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 160
    weights: LossWeights = field(default_factory=LossWeights)
    band_mu: StyleBand = DEFAULT_BAND_MU
    band_sigma: StyleBand = DEFAULT_BAND_SIGMA
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    reshuffle_period: int = 5
    seed: int = 0
    style_mode: str = "ssb"
    open_mode: str = "fab"
    style_route_prob: float = 0.5
    mixstyle_beta: float = 0.1
    epsilon: float = 1e-5
    dtype: str = "float32"
    # w_disc is held at 0 for disc_delay_epochs, then ramped linearly to its full
    # value over disc_warmup_epochs; both 0 applies it from the first step
    disc_delay_epochs: float = 0.0
    disc_warmup_epochs: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.reshuffle_period < 1:
            raise ValueError("epochs, batch_size and reshuffle_period must be >= 1")
        if self.style_mode not in STYLE_MODES:
            raise ValueError(f"style_mode must be one of {STYLE_MODES}")
        if self.open_mode not in OPEN_MODES:
            raise ValueError(f"open_mode must be one of {OPEN_MODES}")
        if not 0 <= self.style_route_prob <= 1:
            raise ValueError("style_route_prob must be in [0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if not (self.disc_warmup_epochs >= 0 and self.disc_delay_epochs >= 0):
            raise ValueError("disc_delay_epochs and disc_warmup_epochs must be >= 0")

    def weights_at(self, step: int, steps_per_epoch: int) -> LossWeights:
        """Loss weights in effect at a global step (only w_disc is ramped)."""
        if self.disc_warmup_epochs <= 0 and self.disc_delay_epochs <= 0:
            return self.weights
        spe = max(steps_per_epoch, 1)
        t = step - self.disc_delay_epochs * spe
        if t < 0:
            frac = 0.0
        elif self.disc_warmup_epochs <= 0:
            frac = 1.0
        else:
            frac = min(1.0, t / (self.disc_warmup_epochs * spe))
        w = self.weights
        return LossWeights(w.w_ce, w.w_disc * frac, w.w_sm)

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    @classmethod
    def erm(cls, **kwargs) -> "TrainConfig":
        """Plain cross-entropy on clean samples: weights (1, 0, 0), no styled or open branch."""
        kwargs.update(weights=LossWeights(1, 0, 0), style_mode="none", open_mode="none")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = [self.weights.w_ce, self.weights.w_disc, self.weights.w_sm]
        d["band_mu"] = [self.band_mu.a, self.band_mu.b]
        d["band_sigma"] = [self.band_sigma.a, self.band_sigma.b]
        d["noise"] = [self.noise.mean, self.noise.std]
        return d


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class StepOutput:
    total: torch.Tensor
    components: dict[str, torch.Tensor]
    groups: dict[str, int]
    alpha: torch.Tensor | None = None


@dataclass
class TrainResult:
    history: list[dict]
    checkpoint: Path | None
    steps: int
    final_loss: float
    train_accuracy: float


def _tensor_stats(t: torch.Tensor) -> dict:
    t = t.detach().double()
    return {
        "shape": list(t.shape),
        "mean": float(t.mean()) if t.numel() else None,
        "std": float(t.std(unbiased=False)) if t.numel() else None,
        "finite_fraction": float(torch.isfinite(t).double().mean()) if t.numel() else None,
    }


def training_step(
    model: OpenSetModel,
    x1: torch.Tensor,
    x2: torch.Tensor,
    x3: torch.Tensor,
    y1: torch.Tensor,
    cfg: TrainConfig,
    gen: torch.Generator,
    np_rng: np.random.Generator,
    weights: LossWeights | None = None,
) -> StepOutput:
    """Forward every active branch and assemble the weighted objective (no backward)."""
    enc, head = model.encoder, model.head
    n = x1.shape[0]
    open_set = head.open_set
    use_style = cfg.style_mode != "none"
    open_mode = cfg.open_mode if open_set else "none"

    imgs = [x1]
    if use_style:
        imgs.append(x2)
    if open_mode != "none":
        imgs.append(x3)
    if open_mode in ADHOC_BASELINES:
        fn = ADHOC_BASELINES[open_mode]
        imgs.append(fn(x1, x3, rng=np_rng) if open_mode == "patch_replace" else fn(x1, x3))
    batch = torch.cat(imgs)
    enc.check_input(batch)
    feats = list(enc.early(batch).split(n))
    f1 = feats.pop(0)
    f2 = feats.pop(0) if use_style else None
    f3 = feats.pop(0) if open_mode != "none" else None
    f_adhoc = feats.pop(0) if open_mode in ADHOC_BASELINES else None

    late_in = [f1]
    br = None
    if use_style:
        br = style_branch(
            f1, f2, model.ssnet, cfg.noise, gen, style_mode=cfg.style_mode,
            mix_cfg=MixStyleConfig(cfg.mixstyle_beta), eps=cfg.epsilon,
        )
        late_in.append(br.styled)
    if f_adhoc is not None:
        late_in.append(f_adhoc)
    emb = list(enc.late(torch.cat(late_in)).split(n))
    e_clean = emb.pop(0)
    e_styled = emb.pop(0) if use_style else None
    e_adhoc = emb.pop(0) if f_adhoc is not None else None

    alpha = None
    if open_mode == "fab":
        route = cfg.style_route_prob if use_style else 0.0
        e_open, alpha, _ = open_embeddings(
            enc, model.fanet, e_clean, f3, route, gen, e_styled,
            br.new if br is not None else None, cfg.epsilon,
        )
    else:
        e_open = e_adhoc

    closed_emb = [e_clean] + ([e_styled] if use_style else [])
    all_emb = closed_emb + ([e_open] if e_open is not None else [])
    post = posteriors(head(torch.cat(all_emb)))
    n_closed = n * len(closed_emb)
    labels = [y1] * len(closed_emb)
    if e_open is not None:
        labels.append(torch.full_like(y1, head.open_index))
    labels = torch.cat(labels)

    groups = {"clean": n, "styled": n if use_style else 0, "open": n if e_open is not None else 0}
    if not bool(torch.isfinite(post.detach()).all()):
        # let the caller's non-finite guard report this batch
        nan = post.new_tensor(float("nan"))
        return StepOutput(nan, {"ce": nan, "disc": nan, "sm": nan}, groups, alpha)

    ce = loss_ce(post, labels)
    zero = ce.new_zeros(())
    # without pseudo-open samples (ERM, closed-set mode) the term is switched off
    disc = loss_disc(post[n_closed:], post[:n_closed]) if e_open is not None else zero
    if cfg.style_mode == "ssb":
        sm = style_margin_loss(br.new, br.s1, br.s2, cfg.band_mu, cfg.band_sigma)
    else:
        sm = zero
    total = loss_total(ce, disc, sm, cfg.weights if weights is None else weights)
    return StepOutput(total, {"ce": ce, "disc": disc, "sm": sm}, groups, alpha)


def _diagnostics(model, batch, out: StepOutput | None, step: int) -> dict:
    d = {"step": step, "x1": _tensor_stats(batch.x1), "x3": _tensor_stats(batch.x3), "labels": batch.y1.tolist()}
    if out is not None:
        d["components"] = {k: float(v) for k, v in out.components.items()}
    with torch.no_grad():
        f = model.encoder.early(batch.x1)
        d["seam_features"] = _tensor_stats(f)
        d["seam_std_min"] = float(f.std(dim=(2, 3), unbiased=False).min())
    d["parameters"] = {k: _tensor_stats(v) for k, v in model.named_parameters()}
    return d


def train(
    model: OpenSetModel,
    source: LabeledImages,
    cfg: TrainConfig,
    out_dir=None,
    save_every_epoch: bool = True,
    manifest_extra: dict | None = None,
) -> TrainResult:
    """Train every parameter of ``model`` on ``source`` (labels already 0..C-1).

    Writes ``loss_log.jsonl`` plus epoch checkpoints and ``checkpoint.pt`` when
    ``out_dir`` is given. Deterministic for a fixed ``cfg.seed``.
    """
    dtype = cfg.torch_dtype
    model.to(dtype)
    images = source.images.to(dtype)
    ds = LabeledImages(images, source.labels, source.domains, source.ids)
    if int(ds.labels.max()) >= model.num_known:
        raise ValueError("source labels must lie in 0..C-1")
    gen = torch.Generator()
    gen.manual_seed(cfg.seed + 7919)
    np_rng = np.random.default_rng([cfg.seed, 17])
    opt = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_tmp = out_dir / "loss_log.jsonl.tmp"
        log_fh = open(log_tmp, "w")
    history: list[dict] = []
    step = 0
    ckpt = None
    steps_per_epoch = sum(1 for s in range(0, len(ds), cfg.batch_size) if min(cfg.batch_size, len(ds) - s) >= 2)
    weights = cfg.weights
    extra = {"train": cfg.to_dict(), **(manifest_extra or {})}
    try:
        for epoch in range(cfg.epochs):
            model.train()
            trip = build_triplets(ds.labels.numpy(), epoch, cfg.reshuffle_period, cfg.seed)
            for batch in iter_triplet_batches(ds, trip, cfg.batch_size):
                if batch.x1.shape[0] < 2:
                    # batch-norm needs two samples; a lone remainder is dropped
                    continue
                weights = cfg.weights_at(step, steps_per_epoch)
                out = training_step(model, batch.x1, batch.x2, batch.x3, batch.y1, cfg, gen, np_rng, weights)
                if not torch.isfinite(out.total):
                    diag = _diagnostics(model, batch, out, step)
                    if out_dir is not None:
                        (out_dir / "nonfinite_diagnostic.json").write_text(json.dumps(diag, indent=2))
                    raise NonFiniteLossError(f"non-finite loss at step {step} (epoch {epoch})", diag)
                opt.zero_grad(set_to_none=True)
                out.total.backward()
                opt.step()
                for name in LOSS_COMPONENTS:
                    rec = {"step": step, "epoch": epoch, "component": name, "value": float(out.components[name].detach())}
                    history.append(rec)
                    if log_fh is not None:
                        log_fh.write(json.dumps(rec) + "\n")
                step += 1
            if out_dir is not None and save_every_epoch:
                save_checkpoint(model, out_dir / "checkpoints" / f"epoch_{epoch:03d}.pt", {**extra, "epoch": epoch})
        model.eval()
        acc = train_accuracy(model, ds)
        if out_dir is not None:
            ckpt = save_checkpoint(model, out_dir / "checkpoint.pt", {**extra, "epoch": cfg.epochs - 1})
    finally:
        if log_fh is not None:
            log_fh.close()
            os.replace(out_dir / "loss_log.jsonl.tmp", out_dir / "loss_log.jsonl")
    final = sum(r["value"] * w for r, w in zip(history[-3:], (weights.w_ce, weights.w_disc, weights.w_sm)))
    return TrainResult(history, ckpt, step, float(final) if history else math.nan, acc)


@torch.no_grad()
def predict(model: OpenSetModel, images: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    """Arg-max class over the clean path, evaluation mode."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for start in range(0, images.shape[0], batch_size):
        out.append(model(images[start:start + batch_size].to(dtype)).argmax(dim=1))
    return torch.cat(out) if out else torch.empty(0, dtype=torch.long)


def train_accuracy(model: OpenSetModel, ds: LabeledImages) -> float:
    pred = predict(model, ds.images)
    return float((pred == ds.labels).double().mean() * 100.0)
