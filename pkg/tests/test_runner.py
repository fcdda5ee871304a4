import dataclasses
import json

import pytest

from helpers import tiny_config
from opendg.config import ConfigError
from opendg.runner import build_track, run_experiment


def test_track_shapes():
    cfg = tiny_config()
    data = build_track(cfg)
    assert data.num_known == 6
    assert set(data.source.labels.tolist()) == set(range(6))
    for t in data.targets.values():
        assert set(t.labels.tolist()) == set(range(7))


def test_closed_set_targets_drop_unknowns():
    cfg = tiny_config()
    cfg = cfg.replace(model=dataclasses.replace(cfg.model, open_set=False))
    for t in build_track(cfg).targets.values():
        assert int(t.labels.max()) == 5


def test_missing_domain():
    cfg = tiny_config()
    cfg = cfg.replace(eval=dataclasses.replace(cfg.eval, targets=["domain7"]))
    with pytest.raises(ConfigError, match="domain7"):
        build_track(cfg)


def test_run_experiment_outputs(tmp_path):
    cfg = tiny_config().replace(seeds=[0, 1])
    summary, results = run_experiment(cfg, tmp_path)
    assert len(results) == 2
    for s in (0, 1):
        d = tmp_path / f"seed_{s}"
        for name in ("checkpoint.pt", "loss_log.jsonl", "config.yaml", "report.json", "report.txt"):
            assert (d / name).exists(), name
    data = json.loads((tmp_path / "summary.json").read_text())
    assert set(data["mean"]) == {"acc_k", "acc_u", "acc", "hs"}
    assert "Average" in (tmp_path / "summary.txt").read_text()
