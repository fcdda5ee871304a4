"""Open-set evaluation metrics and the style/open diversity diagnostics."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from opendg.backbone import open_embeddings, style_branch
from opendg.data import LabeledImages, build_triplets
from opendg.featstats import mean_cosine_distance
from opendg.model import OpenSetModel
from opendg.stylesynth import NoiseSpec
from opendg.train import predict

REPORT_COLUMNS = ("acc_k", "acc_u", "acc", "hs")


def hscore(acc_k: float, acc_u: float) -> float:
    """Harmonic mean of known and unknown accuracy; 0 when both are 0."""
    denom = acc_k + acc_u
    if denom == 0:
        return 0.0
    return 2.0 * acc_k * acc_u / denom


@dataclass
class DomainMetrics:
    acc_k: float | None
    acc_u: float | None
    acc: float
    acc_macro: float | None
    hs: float | None
    n_known: int
    n_unknown: int


@dataclass
class EvalReport:
    """Headline metrics are the mean over target domains (an "Average" row)."""

    acc_k: float | None
    acc_u: float | None
    acc: float
    hs: float | None
    acc_macro: float | None
    pooled: DomainMetrics
    per_domain: dict[str, DomainMetrics]
    per_class_counts: dict[str, dict[str, int]]
    num_known: int
    open_set: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        os.replace(tmp, path)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["pooled"] = DomainMetrics(**d["pooled"])
        d["per_domain"] = {k: DomainMetrics(**v) for k, v in d["per_domain"].items()}
        return cls(**d)

    def table(self) -> str:
        """Aligned text table: one row per target domain plus ``Average``."""
        rows = [(name, m) for name, m in self.per_domain.items()]
        rows.append(("Average", self))
        width = max(len("Target"), *(len(r[0]) for r in rows))

        def fmt(v):
            return f"{v:8.2f}" if v is not None else f"{'-':>8}"

        lines = [f"{'Target':<{width}} " + " ".join(f"{c:>8}" for c in REPORT_COLUMNS)]
        for name, m in rows:
            lines.append(f"{name:<{width}} " + " ".join(fmt(getattr(m, c)) for c in REPORT_COLUMNS))
        return "\n".join(lines)


def domain_metrics(pred: np.ndarray, labels: np.ndarray, num_known: int, open_set: bool = True) -> DomainMetrics:
    """Metrics for one pool of predictions; labels use ``num_known`` as the open class."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty target set")
    known = labels < num_known
    n_k = int(known.sum())
    n_u = int((~known).sum())
    correct = pred == labels
    acc_k = float(correct[known].mean() * 100) if n_k else None
    acc_u = float(correct[~known].mean() * 100) if n_u else None
    acc = float(correct.mean() * 100)
    if open_set and acc_k is not None and acc_u is not None:
        hs = hscore(acc_k, acc_u)
        macro = (acc_k + acc_u) / 2
    else:
        hs = macro = None
    return DomainMetrics(acc_k, acc_u, acc, macro, hs, n_k, n_u)


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(model: OpenSetModel, targets: dict[str, LabeledImages], num_known: int | None = None) -> EvalReport:
    """Arg-max over the clean path on each target; labels must already be 0..C (C = open)."""
    if not targets:
        raise ValueError("no target domains to evaluate")
    c = model.num_known
    if num_known is not None and num_known != c:
        raise ValueError(f"checkpoint has C={c} known classes but the split has {num_known}")
    open_set = model.head.open_set
    per_domain = {}
    all_pred, all_y = [], []
    for name, ds in targets.items():
        if len(ds) == 0:
            raise ValueError(f"target domain {name!r} is empty")
        y = ds.labels.numpy()
        if not open_set and (y >= c).any():
            raise ValueError("closed-set model evaluated on data with unknown classes")
        pred = predict(model, ds.images).numpy()
        per_domain[name] = domain_metrics(pred, y, c, open_set)
        all_pred.append(pred)
        all_y.append(y)
    pred = np.concatenate(all_pred)
    y = np.concatenate(all_y)
    counts = {}
    for k in range(c + 1):
        mask = y == k
        if mask.any():
            counts[str(k)] = {"total": int(mask.sum()), "correct": int((pred[mask] == k).sum())}
    doms = list(per_domain.values())
    return EvalReport(
        acc_k=_mean_or_none(m.acc_k for m in doms),
        acc_u=_mean_or_none(m.acc_u for m in doms),
        acc=float(np.mean([m.acc for m in doms])),
        hs=_mean_or_none(m.hs for m in doms),
        acc_macro=_mean_or_none(m.acc_macro for m in doms),
        pooled=domain_metrics(pred, y, c, open_set),
        per_domain=per_domain,
        per_class_counts=counts,
        num_known=c,
        open_set=open_set,
    )


@torch.no_grad()
def style_diversity_report(
    model: OpenSetModel,
    source: LabeledImages,
    n_samples: int = 256,
    seed: int = 0,
    noise: NoiseSpec = NoiseSpec(),
) -> dict:
    """Mean cosine distances: source vs synthesized styles, and closed vs pseudo-open embeddings.

    Each synthesized vector is compared with the source vector it was built
    from (row-paired), so an echoing synthesizer scores 0. A distance that would involve a zero vector is reported as ``None`` with its
    ``degenerate`` flag set.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    trip = build_triplets(source.labels.numpy(), 0, 1, seed)[:n_samples]
    t = torch.as_tensor(trip)
    x1, x2, x3 = (source.images[t[:, i]].to(dtype) for i in range(3))
    enc = model.encoder
    gen = torch.Generator()
    gen.manual_seed(seed)
    f1, f2 = enc.early(x1), enc.early(x2)
    br = style_branch(f1, f2, model.ssnet, noise, gen)
    e1 = enc.late(f1)
    e_open, _, _ = open_embeddings(enc, model.fanet, e1, enc.early(x3))

    out = {"n_samples": int(len(trip))}

    def dist(key, a, b):
        try:
            out[key] = mean_cosine_distance(a, b, paired=True)
            out[f"{key}_degenerate"] = False
        except ValueError:
            out[key] = None
            out[f"{key}_degenerate"] = True

    dist("style_concat", br.s1.concat(), br.new.concat())
    dist("style_mean", br.s1.mean, br.new.mean)
    dist("style_std", br.s1.std, br.new.std)
    dist("open_vs_closed", e1, e_open)
    return out
