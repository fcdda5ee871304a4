"""Experiment runner: build a track's data, train one model per seed, evaluate, write outputs."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from opendg.config import ConfigError, ExperimentConfig
from opendg.data import (
    LabeledImages,
    SyntheticDomainSpec,
    digits_domains,
    generate_synthetic_domains,
    load_manifest,
    split_open,
)
from opendg.evaluate import REPORT_COLUMNS, EvalReport, evaluate
from opendg.model import ModelSpec, build_model
from opendg.train import TrainResult, train

log = logging.getLogger(__name__)


@dataclass
class TrackData:
    source: LabeledImages  # known classes only, labels 0..C-1
    targets: dict[str, LabeledImages]  # labels 0..C, C = unknown
    num_known: int


def _target_view(ds: LabeledImages, known, open_set: bool = True) -> LabeledImages:
    closed, opened = split_open(ds, known)
    # closed-set mode shares the source label space, so unknowns are dropped
    return LabeledImages.concat([closed, opened]) if open_set else closed


def load_domains(cfg: ExperimentConfig) -> dict[str, LabeledImages]:
    d = cfg.data
    if cfg.track == "synthetic":
        spec = SyntheticDomainSpec(image_size=d.image_size, seed=d.synth_seed)
        return generate_synthetic_domains(spec, d.n_domains, d.n_per_class)
    if cfg.track == "digits":
        spec = SyntheticDomainSpec(image_size=d.image_size, seed=d.synth_seed)
        return digits_domains(d.resolved_root(), spec, d.n_domains, d.digits_limit, d.image_size)
    return load_manifest(d.manifest, d.image_size)


def build_track(cfg: ExperimentConfig, domains: dict[str, LabeledImages] | None = None) -> TrackData:
    """Source restricted to known classes; targets keep every class with unknowns collapsed to C."""
    domains = load_domains(cfg) if domains is None else domains
    names = [cfg.data.source, *cfg.eval.targets]
    missing = [n for n in names if n not in domains]
    if missing:
        raise ConfigError(f"domains {missing} not available (have {sorted(domains)})")
    known = cfg.data.known_classes
    source, _ = split_open(domains[cfg.data.source], known)
    if len(source) == 0:
        raise ConfigError(f"source domain {cfg.data.source!r} has no known-class samples")
    targets = {t: _target_view(domains[t], known, cfg.model.open_set) for t in cfg.eval.targets}
    leaked = set(source.ids).intersection(*[set(t.ids) for t in targets.values()]) if targets else set()
    if leaked:
        raise ConfigError(f"{len(leaked)} target samples also appear in the training stream")
    return TrackData(source, targets, len(known))


def model_spec(cfg: ExperimentConfig) -> ModelSpec:
    m = cfg.model
    return ModelSpec(
        num_known=cfg.num_known, arch=m.arch, split_depth=m.split_depth,
        open_set=m.open_set, width=m.width, embed_dim=m.embed_dim, pretrained=m.pretrained,
        norm=m.norm,
    )


@dataclass
class RunResult:
    seed: int
    report: EvalReport
    train: TrainResult
    out_dir: Path | None


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_seed(cfg: ExperimentConfig, seed: int, data: TrackData, out_dir=None) -> RunResult:
    """Train and evaluate one seed; seeds vary both initialization and data order."""
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    dtype = tcfg.torch_dtype
    model = build_model(model_spec(cfg), seed=seed, dtype=dtype)
    result = train(model, data.source, tcfg, out_dir, save_every_epoch=False,
                   manifest_extra={"known_classes": list(cfg.data.known_classes), "track": cfg.track})
    report = evaluate(model, data.targets, data.num_known)
    if out_dir is not None:
        cfg.replace(seeds=[seed], train=tcfg).dump(out_dir / "config.yaml")
        report.to_json(out_dir / "report.json")
        _write_text(out_dir / "report.txt", report.table() + "\n")
    return RunResult(seed, report, result, out_dir)


@dataclass
class Summary:
    """Mean and spread (population std) of each headline metric over seeds."""

    mean: dict[str, float | None]
    std: dict[str, float | None]
    per_seed: dict[int, dict[str, float | None]]
    per_domain_mean: dict[str, dict[str, float | None]]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def table(self) -> str:
        def fmt(m, s):
            if m is None:
                return f"{'-':>14}"
            return f"{m:7.2f} ± {s:4.2f}"

        width = max(len("Target"), *(len(k) for k in self.per_domain_mean), len("Average"))
        lines = [f"{'Target':<{width}} " + " ".join(f"{c:>14}" for c in REPORT_COLUMNS)]
        for name, vals in self.per_domain_mean.items():
            row = " ".join(f"{v:14.2f}" if v is not None else f"{'-':>14}" for v in (vals[c] for c in REPORT_COLUMNS))
            lines.append(f"{name:<{width}} {row}")
        lines.append(f"{'Average':<{width}} " + " ".join(fmt(self.mean[c], self.std[c]) for c in REPORT_COLUMNS))
        return "\n".join(lines)


def _stat(values, fn):
    vals = [v for v in values if v is not None]
    return float(fn(vals)) if vals else None


def summarize(results: list[RunResult]) -> Summary:
    if not results:
        raise ValueError("no runs to summarize")
    per_seed = {r.seed: {c: getattr(r.report, c) for c in REPORT_COLUMNS} for r in results}
    mean = {c: _stat([p[c] for p in per_seed.values()], np.mean) for c in REPORT_COLUMNS}
    std = {c: _stat([p[c] for p in per_seed.values()], np.std) for c in REPORT_COLUMNS}
    domains = list(results[0].report.per_domain)
    per_domain = {
        d: {c: _stat([getattr(r.report.per_domain[d], c) for r in results], np.mean) for c in REPORT_COLUMNS}
        for d in domains
    }
    return Summary(mean, std, per_seed, per_domain)


def run_experiment(cfg: ExperimentConfig, out_dir=None, data: TrackData | None = None) -> tuple[Summary, list[RunResult]]:
    """Every seed in ``cfg.seeds``; writes ``seed_<s>/`` folders and a summary when ``out_dir`` is set."""
    torch.set_num_threads(1)
    data = build_track(cfg) if data is None else data
    out_dir = Path(out_dir) if out_dir is not None else None
    results = []
    for seed in cfg.seeds:
        sub = out_dir / f"seed_{seed}" if out_dir is not None else None
        r = run_seed(cfg, seed, data, sub)
        log.info("seed %d: hs=%s acc=%.2f", seed, r.report.hs, r.report.acc)
        results.append(r)
    summary = summarize(results)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.dump(out_dir / "config.yaml")
        _write_text(out_dir / "summary.json", json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
        _write_text(out_dir / "summary.txt", summary.table() + "\n")
    return summary, results
