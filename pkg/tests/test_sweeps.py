import json

import pytest

from helpers import tiny_config
from opendg.sweeps import AXES, MARGIN_BANDS, SweepResult, build_cells, method_config, render_tables, run_sweep


@pytest.mark.parametrize("axis,n", [("margin-bands", 25), ("noise", 4), ("ssb-vs-mixstyle", 2),
                                    ("fab-vs-adhoc", 4), ("split-depth", 3), ("loss-ablation", 4)])
def test_cell_counts(axis, n):
    assert len(build_cells(axis, tiny_config())) == n


def test_known_class_cells():
    cells = build_cells("known-classes", tiny_config())
    assert len(cells) == 7 * 3
    erm = [c for c in cells if c.key == {"known": 4, "method": "erm"}][0]
    assert erm.cfg.num_known == 4 and erm.cfg.train.open_mode == "none"


def test_unknown_axis():
    with pytest.raises(ValueError):
        build_cells("width", tiny_config())
    with pytest.raises(ValueError):
        method_config(tiny_config(), "dropout")


def test_method_configs():
    cfg = tiny_config()
    assert method_config(cfg, "no-disc").train.weights.w_disc == 0
    nd = method_config(cfg, "no-disc-sm").train.weights
    assert (nd.w_disc, nd.w_sm) == (0, 0)
    assert method_config(cfg, "mixstyle").train.style_mode == "mixstyle"


def test_margin_tables_are_5x5():
    rows = [{"axis": "margin-bands", "key": c.key, "status": "ok",
             "mean": {"acc_k": 1.0, "acc_u": 2.0, "acc": 3.0, "hs": 4.0}, "std": {}}
            for c in build_cells("margin-bands", tiny_config())]
    text = render_tables(SweepResult("margin-bands", rows))
    acc, hs = text.split("\n\n")
    for block, value in ((acc, "3.00"), (hs, "4.00")):
        lines = block.splitlines()
        assert len(lines) == 2 + len(MARGIN_BANDS)
        for line in lines[2:]:
            assert line.split()[1:] == [value] * 5


def test_margin_sweep_runs(tmp_path):
    res = run_sweep("margin-bands", tiny_config(), tmp_path)
    assert not res.failed
    assert len(res.rows) == 25
    assert (tmp_path / "margin_heatmaps.png").stat().st_size > 0
    assert len((tmp_path / "results.tsv").read_text().splitlines()) == 26


def test_depth_sweep_three_columns(tmp_path):
    res = run_sweep("split-depth", tiny_config(), tmp_path)
    assert not res.failed
    header = res.tables().splitlines()[0].split()
    assert header == ["Metric", "shallow", "default", "deep"]


def test_fab_vs_adhoc_reports_half_crop(tmp_path):
    res = run_sweep("fab-vs-adhoc", tiny_config(), tmp_path)
    assert not res.failed
    assert res.metric({"open": "half_crop"}, "hs") is not None
    saved = json.loads((tmp_path / "results.json").read_text())
    assert {r["key"]["open"] for r in saved["rows"]} == {"fab", "half_crop", "pixel_mean", "patch_replace"}


def test_failed_cell_is_reported():
    cfg = tiny_config()
    cfg = cfg.replace(eval=type(cfg.eval)(targets=["domain9"]))
    res = run_sweep("ssb-vs-mixstyle", cfg)
    assert len(res.failed) == 2
    assert "failed cells" in res.tables()


def test_known_classes_plot(tmp_path):
    from opendg.plots import plot_known_classes

    rows = [{"axis": "known-classes", "key": {"known": k, "method": m}, "status": "ok",
             "mean": {"acc_k": 0, "acc_u": 0, "acc": 10.0 * k, "hs": 5.0 * k}, "std": {}}
            for k in (2, 3) for m in ("sodg", "mixstyle", "erm")]
    path = plot_known_classes(SweepResult("known-classes", rows), tmp_path / "k.png")
    assert path.stat().st_size > 0
