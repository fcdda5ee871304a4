"""``opendg`` command line: train, eval, ablate, gradcheck, report, synth."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from opendg.config import DATA_ROOT_ENV, ConfigError, ExperimentConfig, load_config
from opendg.losses import LossWeights
from opendg.stylesynth import NoiseSpec, StyleBand

log = logging.getLogger("opendg")

EPILOG = f"""\
environment:
  {DATA_ROOT_ENV}   data root for the digits track when data.root is unset

examples:
  opendg train --config exp.yaml --out-dir runs/full
  opendg train --loss-weights 1,0,0 --out-dir runs/erm
  opendg eval --checkpoint runs/full/seed_0/checkpoint.pt --out-dir runs/full/eval
  opendg ablate --axis margin-bands --parallel 4 --out-dir runs/margins
  opendg gradcheck --out-dir runs/gradcheck
  opendg report --log-dir runs
"""


def _pair(text: str, what: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"{what} expects two comma-separated numbers, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} expects numbers, got {text!r}") from None


def _weights(text: str) -> LossWeights:
    try:
        return LossWeights.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", type=Path, help="experiment YAML (strict keys)")
    p.add_argument("--seed", type=int, action="append", help="seed to run; repeat for several (default: config seeds)")
    p.add_argument("--track", choices=("synthetic", "digits", "custom-manifest"))
    p.add_argument("--loss-weights", type=_weights, metavar="CE,DISC,SM", help="e.g. 1,0,0 for ERM-style weighting")
    p.add_argument("--bands-mu", type=lambda t: _pair(t, "--bands-mu"), metavar="A,B")
    p.add_argument("--bands-sigma", type=lambda t: _pair(t, "--bands-sigma"), metavar="A,B")
    p.add_argument("--noise", type=lambda t: _pair(t, "--noise"), metavar="MEAN,STD")
    p.add_argument("--split-depth", choices=("shallow", "default", "deep"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--out-dir", type=Path, default=Path(out_default))


def effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "track", None):
        cfg = cfg.replace(track=args.track)
    if getattr(args, "seed", None):
        cfg = cfg.replace(seeds=list(args.seed))
    kw = {}
    if getattr(args, "loss_weights", None) is not None:
        kw["weights"] = args.loss_weights
        if args.loss_weights.w_disc == 0 and args.loss_weights.w_sm == 0:
            # (1, 0, 0) is the ERM row: no styled or open branch either
            kw.update(style_mode="none", open_mode="none")
    if getattr(args, "bands_mu", None):
        kw["band_mu"] = StyleBand(*args.bands_mu)
    if getattr(args, "bands_sigma", None):
        kw["band_sigma"] = StyleBand(*args.bands_sigma)
    if getattr(args, "noise", None):
        kw["noise"] = NoiseSpec(*args.noise)
    if getattr(args, "epochs", None):
        kw["epochs"] = args.epochs
    if kw:
        cfg = cfg.with_train(**kw)
    if getattr(args, "split_depth", None):
        cfg = cfg.replace(model=dataclasses.replace(cfg.model, split_depth=args.split_depth))
    return cfg.validate()


def cmd_train(args) -> int:
    from opendg.plots import plot_loss_curves
    from opendg.runner import run_experiment

    cfg = effective_config(args)
    summary, results = run_experiment(cfg, args.out_dir)
    for r in results:
        plot_loss_curves(r.train.history, r.out_dir / "loss_curves.png", f"seed {r.seed}")
    print(summary.table())
    print(f"outputs in {args.out_dir}")
    return 0


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def cmd_eval(args) -> int:
    from opendg.evaluate import evaluate
    from opendg.model import load_checkpoint
    from opendg.runner import build_track

    if not args.checkpoint.is_file():
        print(f"error: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 1
    model, manifest = load_checkpoint(args.checkpoint)
    cfg = effective_config(args)
    known = manifest.get("known_classes")
    if known is not None and args.config is None:
        cfg = cfg.replace(data=dataclasses.replace(cfg.data, known_classes=list(known)))
    if manifest.get("track") and args.config is None and not args.track:
        cfg = cfg.replace(track=manifest["track"]).validate()
    cfg = cfg.replace(model=dataclasses.replace(cfg.model, open_set=model.head.open_set))
    data = build_track(cfg)
    report = evaluate(model, data.targets, data.num_known)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    report.to_json(args.out_dir / "report.json")
    _write_atomic(args.out_dir / "report.txt", report.table() + "\n")
    cfg.dump(args.out_dir / "config.yaml")
    print(report.table())
    return 0


def cmd_ablate(args) -> int:
    from opendg.sweeps import run_sweep

    cfg = effective_config(args)
    axis = args.axis or cfg.ablation.axis
    if not axis:
        print("error: no sweep axis given (--axis or ablation.axis)", file=sys.stderr)
        return 2
    result = run_sweep(axis, cfg, args.out_dir, parallel=args.parallel)
    print(result.tables())
    if result.failed:
        print(f"{len(result.failed)} of {len(result.rows)} cells failed", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    from opendg.gradcheck import COMPONENTS, grad_check

    comps = args.component or list(COMPONENTS)
    reports = [grad_check(c, step_size=args.step, n_samples=args.samples, seed=args.seed_value) for c in comps]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for r in reports:
        _write_atomic(args.out_dir / f"gradcheck_{r.component}.json", r.to_json() + "\n")
        print(r.summary())
    return 0 if all(r.passed for r in reports) else 1


def _find_runs(root: Path) -> list[Path]:
    return sorted(p.parent for p in root.rglob("loss_log.jsonl"))


def cmd_report(args) -> int:
    from opendg.plots import plot_loss_curves

    root = args.log_dir
    runs = _find_runs(root) if root.is_dir() else []
    if not runs:
        print(f"no runs found in {root}", file=sys.stderr)
        return 1
    out = args.out_dir or root
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    lines = ["# Run summary", ""]
    for run in runs:
        rel = run.relative_to(root).as_posix() or "."
        history = [json.loads(l) for l in (run / "loss_log.jsonl").read_text().splitlines() if l.strip()]
        fig = plot_loss_curves(history, out / "figures" / f"{rel.replace('/', '__')}_loss.png", rel)
        metrics = {}
        if (run / "report.json").exists():
            rep = json.loads((run / "report.json").read_text())
            metrics = {k: rep.get(k) for k in ("acc_k", "acc_u", "acc", "hs")}
        final = {}
        for r in history:
            final[r["component"]] = r["value"]
        rows.append((rel, metrics, final, len(history) // 3))
        lines.append(f"## {rel}")
        lines.append("")
        lines.append(f"steps: {len(history) // 3}; final losses: "
                     + ", ".join(f"{k}={v:.4f}" for k, v in final.items()))
        if metrics:
            lines.append("metrics: " + ", ".join(f"{k}={'-' if v is None else f'{v:.2f}'}" for k, v in metrics.items()))
        lines.append(f"![loss curves]({fig.relative_to(out).as_posix()})")
        lines.append("")
    tsv = ["run\tsteps\tce\tdisc\tsm\tacc_k\tacc_u\tacc\ths"]
    for rel, m, f, steps in rows:
        cells = [f"{f.get(c, float('nan')):.6f}" for c in ("ce", "disc", "sm")]
        cells += ["" if m.get(c) is None else f"{m[c]:.4f}" for c in ("acc_k", "acc_u", "acc", "hs")]
        tsv.append("\t".join([rel, str(steps), *cells]))
    _write_atomic(out / "summary.tsv", "\n".join(tsv) + "\n")
    _write_atomic(out / "summary.md", "\n".join(lines))
    print("\n".join(tsv))
    print(f"report written to {out / 'summary.md'}")
    return 0


def cmd_synth(args) -> int:
    from opendg.data import SyntheticDomainSpec, write_synthetic_dataset

    spec = SyntheticDomainSpec(image_size=args.image_size, seed=args.seed_value)
    manifest = write_synthetic_dataset(spec, args.domains, args.per_class, args.out_dir)
    print(f"wrote {manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opendg",
        description="Single-source open-domain generalization: training, evaluation and ablations.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per seed and evaluate it")
    _add_common(p, "runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured targets")
    _add_common(p, "runs/eval")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    _add_common(p, "runs/ablate")
    p.add_argument("--axis", choices=("margin-bands", "noise", "ssb-vs-mixstyle", "fab-vs-adhoc",
                                      "split-depth", "loss-ablation", "known-classes"))
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes (default 1)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--component", action="append", choices=("ssnet", "fanet", "head", "losses"))
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", dest="seed_value", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("runs/gradcheck"))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="summarize run folders with loss-curve plots")
    p.add_argument("--log-dir", type=Path, required=True)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write the synthetic domains as PNG files plus a manifest")
    p.add_argument("--domains", type=int, default=3)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--seed", dest="seed_value", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("data/synthetic"))
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
