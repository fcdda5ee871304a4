"""Ablation sweeps: one train+eval run per cell, grid tables in the familiar layouts."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from opendg.config import ExperimentConfig
from opendg.evaluate import REPORT_COLUMNS
from opendg.losses import LossWeights
from opendg.stylesynth import NoiseSpec, StyleBand

log = logging.getLogger(__name__)

MARGIN_BANDS = ((0.1, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0), (4.0, 5.0))
NOISE_GRID = ((0.0, 1.0), (1.0, 1.0), (0.0, 2.0), (0.0, 3.0))
ADHOC_COLUMNS = ("fab", "half_crop", "pixel_mean", "patch_replace")
DEPTHS = ("shallow", "default", "deep")
KNOWN_METHODS = ("sodg", "mixstyle", "erm")
AXES = ("margin-bands", "noise", "ssb-vs-mixstyle", "fab-vs-adhoc", "split-depth", "loss-ablation", "known-classes")


@dataclass
class Cell:
    axis: str
    key: dict  # labels identifying the cell within the axis
    cfg: ExperimentConfig

    @property
    def name(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.key.items())


def _band_label(b) -> str:
    return f"[{b[0]:g},{b[1]:g}]"


def method_config(cfg: ExperimentConfig, method: str) -> ExperimentConfig:
    """Named method variants shared by the sweeps and the acceptance suite."""
    t = cfg.train
    w = t.weights
    if method in ("sodg", "full"):
        return cfg
    if method == "mixstyle":
        return cfg.with_train(style_mode="mixstyle")
    if method == "no-disc":
        return cfg.with_train(weights=LossWeights(w.w_ce, 0.0, w.w_sm))
    if method == "no-disc-sm":
        return cfg.with_train(weights=LossWeights(w.w_ce, 0.0, 0.0))
    if method == "erm":
        return cfg.with_train(weights=LossWeights(1.0, 0.0, 0.0), style_mode="none", open_mode="none")
    raise ValueError(f"unknown method {method!r}")


def build_cells(axis: str, cfg: ExperimentConfig) -> list[Cell]:
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    cells = []
    if axis == "margin-bands":
        for mu in MARGIN_BANDS:
            for sg in MARGIN_BANDS:
                c = cfg.with_train(band_mu=StyleBand(*mu), band_sigma=StyleBand(*sg))
                cells.append(Cell(axis, {"mu": _band_label(mu), "sigma": _band_label(sg)}, c))
    elif axis == "noise":
        for m, s in NOISE_GRID:
            cells.append(Cell(axis, {"noise": f"N({m:g},{s:g})"}, cfg.with_train(noise=NoiseSpec(m, s))))
    elif axis == "ssb-vs-mixstyle":
        cells.append(Cell(axis, {"style": "SSB"}, cfg.with_train(style_mode="ssb")))
        cells.append(Cell(axis, {"style": "MixStyle"}, cfg.with_train(style_mode="mixstyle")))
    elif axis == "fab-vs-adhoc":
        for mode in ADHOC_COLUMNS:
            cells.append(Cell(axis, {"open": mode}, cfg.with_train(open_mode=mode)))
    elif axis == "split-depth":
        for d in DEPTHS:
            m = dataclasses.replace(cfg.model, split_depth=d)
            cells.append(Cell(axis, {"depth": d}, cfg.replace(model=m)))
    elif axis == "loss-ablation":
        for method in ("full", "no-disc", "no-disc-sm", "erm"):
            cells.append(Cell(axis, {"config": method}, method_config(cfg, method)))
    elif axis == "known-classes":
        for k in cfg.ablation.known_counts:
            data = dataclasses.replace(cfg.data, known_classes=list(range(int(k))))
            for method in KNOWN_METHODS:
                c = method_config(cfg.replace(data=data), method)
                cells.append(Cell(axis, {"known": int(k), "method": method}, c))
    return cells


def _run_cell(cell: Cell, out_dir: str | None) -> dict:
    from opendg.runner import run_experiment

    sub = None
    if out_dir is not None:
        safe = cell.name.replace("/", "_").replace(" ", "")
        sub = Path(out_dir) / "cells" / safe
    try:
        summary, _ = run_experiment(cell.cfg, sub)
        return {"axis": cell.axis, "key": cell.key, "status": "ok",
                "mean": summary.mean, "std": summary.std}
    except Exception as exc:  # noqa: BLE001 - a failed cell is reported, not fatal
        log.error("cell %s failed: %s", cell.name, exc)
        return {"axis": cell.axis, "key": cell.key, "status": "failed",
                "error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc()}


@dataclass
class SweepResult:
    axis: str
    rows: list[dict]

    @property
    def failed(self) -> list[dict]:
        return [r for r in self.rows if r["status"] != "ok"]

    def metric(self, key: dict, name: str):
        for r in self.rows:
            if r["key"] == key and r["status"] == "ok":
                return r["mean"][name]
        return None

    def tsv(self) -> str:
        buf = io.StringIO()
        keys = list(self.rows[0]["key"]) if self.rows else []
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["axis", *keys, *REPORT_COLUMNS, *(f"{c}_std" for c in REPORT_COLUMNS), "status"])
        for r in self.rows:
            vals = [r.get("mean", {}).get(c) for c in REPORT_COLUMNS]
            stds = [r.get("std", {}).get(c) for c in REPORT_COLUMNS]
            w.writerow([self.axis, *(r["key"][k] for k in keys),
                        *("" if v is None else f"{v:.4f}" for v in vals + stds), r["status"]])
        return buf.getvalue()

    def tables(self) -> str:
        return render_tables(self)


def _fmt(v) -> str:
    return f"{v:8.2f}" if v is not None else f"{'-':>8}"


def _grid(result: SweepResult, metric: str) -> str:
    labels = [_band_label(b) for b in MARGIN_BANDS]
    lines = [f"{metric} (rows: mean band, columns: std band)",
             f"{'':>10} " + " ".join(f"{l:>8}" for l in labels)]
    for mu in labels:
        row = [_fmt(result.metric({"mu": mu, "sigma": sg}, metric)) for sg in labels]
        lines.append(f"{mu:>10} " + " ".join(row))
    return "\n".join(lines)


def _columns(result: SweepResult, field: str, columns) -> str:
    lines = [f"{'Metric':<8} " + " ".join(f"{c:>14}" for c in columns)]
    for metric in REPORT_COLUMNS:
        vals = [result.metric({field: c}, metric) for c in columns]
        lines.append(f"{metric:<8} " + " ".join(f"{v:14.2f}" if v is not None else f"{'-':>14}" for v in vals))
    return "\n".join(lines)


def render_tables(result: SweepResult) -> str:
    a = result.axis
    if a == "margin-bands":
        text = _grid(result, "acc") + "\n\n" + _grid(result, "hs")
    elif a == "noise":
        text = _columns(result, "noise", [f"N({m:g},{s:g})" for m, s in NOISE_GRID])
    elif a == "ssb-vs-mixstyle":
        text = _columns(result, "style", ["SSB", "MixStyle"])
    elif a == "fab-vs-adhoc":
        text = _columns(result, "open", ADHOC_COLUMNS)
    elif a == "split-depth":
        text = _columns(result, "depth", DEPTHS)
    elif a == "loss-ablation":
        text = _columns(result, "config", ["full", "no-disc", "no-disc-sm", "erm"])
    else:
        counts = sorted({r["key"]["known"] for r in result.rows})
        head = " ".join(f"{m + ' ' + c:>14}" for m in KNOWN_METHODS for c in ("acc", "hs"))
        lines = [f"{'known':>6} {head}"]
        for k in counts:
            vals = [result.metric({"known": k, "method": m}, c) for m in KNOWN_METHODS for c in ("acc", "hs")]
            lines.append(f"{k:>6} " + " ".join(f"{v:14.2f}" if v is not None else f"{'-':>14}" for v in vals))
        text = "\n".join(lines)
    if result.failed:
        text += "\n\nfailed cells:\n" + "\n".join(
            "  " + ",".join(f"{k}={v}" for k, v in r["key"].items()) + f": {r['error']}" for r in result.failed
        )
    return text


def _write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_sweep(axis: str, cfg: ExperimentConfig, out_dir=None, parallel: int = 1, plots: bool = True) -> SweepResult:
    """Run every cell of ``axis``; sequential unless ``parallel > 1`` (process pool)."""
    cells = build_cells(axis, cfg)
    out = str(out_dir) if out_dir is not None else None
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_run_cell, cells, [out] * len(cells)))
    else:
        rows = [_run_cell(c, out) for c in cells]
    result = SweepResult(axis, rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.dump(out_dir / "config.yaml")
        _write(out_dir / "results.tsv", result.tsv())
        _write(out_dir / "results.json", json.dumps({"axis": axis, "rows": rows}, indent=2, sort_keys=True) + "\n")
        _write(out_dir / "tables.txt", result.tables() + "\n")
        if plots:
            from opendg import plots as _plots

            if axis == "margin-bands":
                _plots.plot_margin_heatmaps(result, out_dir / "margin_heatmaps.png")
            elif axis == "known-classes":
                _plots.plot_known_classes(result, out_dir / "known_classes.png")
    return result
