import json

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from opendg.data import LabeledImages
from opendg.evaluate import EvalReport, domain_metrics, evaluate, hscore, style_diversity_report
from opendg.model import ModelSpec, build_model


def test_hscore_reference_value():
    assert abs(hscore(73.96, 83.91) - 78.62) < 0.01


def test_hscore_edges():
    assert hscore(0.0, 0.0) == 0.0
    assert hscore(50.0, 0.0) == 0.0


@given(x=st.floats(0, 100))
def test_property_equal_inputs(x):
    assert hscore(x, x) == pytest.approx(x, abs=1e-9)


@given(a=st.floats(0, 100), b=st.floats(0, 100))
def test_property_between_min_and_mean(a, b):
    h = hscore(a, b)
    assert h == pytest.approx(hscore(b, a))
    assert min(a, b) - 1e-9 <= h <= (a + b) / 2 + 1e-9
    if a == 0 or b == 0:
        assert h == 0


def test_domain_metrics_counts():
    labels = np.array([0, 1, 2, 2, 2])  # C = 2, last three unknown
    pred = np.array([0, 0, 2, 2, 1])
    m = domain_metrics(pred, labels, 2)
    assert m.acc_k == 50.0
    assert m.acc_u == pytest.approx(200 / 3)
    assert m.acc == 60.0
    assert m.hs == pytest.approx(hscore(50.0, 200 / 3))
    assert (m.n_known, m.n_unknown) == (2, 3)


def test_domain_metrics_closed_set_has_no_hs():
    m = domain_metrics(np.array([0, 1]), np.array([0, 0]), 2, open_set=False)
    assert m.hs is None and m.acc_u is None and m.acc == 50.0


def test_domain_metrics_empty():
    with pytest.raises(ValueError):
        domain_metrics(np.array([]), np.array([]), 2)


def _targets(n=12, c=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    out = {}
    for name in ("t1", "t2"):
        y = torch.arange(n) % (c + 1)
        out[name] = LabeledImages(torch.randn(n, 3, 16, 16, generator=g), y, [name] * n,
                                  [f"{name}/{i}" for i in range(n)])
    return out


def test_zero_head_predicts_first_class():
    model = build_model(ModelSpec(num_known=3, width=8, embed_dim=16), seed=0)
    model.head.zero_()
    rep = evaluate(model, _targets())
    # uniform posteriors: arg-max picks index 0
    assert rep.acc_k == pytest.approx(100 / 3)
    assert rep.acc_u == 0.0 and rep.hs == 0.0
    assert rep.per_class_counts["0"] == {"total": 6, "correct": 6}


def test_evaluate_domain_mean_headline(tmp_path):
    model = build_model(ModelSpec(num_known=3, width=8, embed_dim=16), seed=0)
    rep = evaluate(model, _targets())
    mean_acc = np.mean([m.acc for m in rep.per_domain.values()])
    assert rep.acc == pytest.approx(mean_acc)
    rep.to_json(tmp_path / "r.json")
    back = EvalReport.from_dict(json.loads((tmp_path / "r.json").read_text()))
    assert back == rep
    table = rep.table()
    assert table.splitlines()[0].split() == ["Target", "acc_k", "acc_u", "acc", "hs"]
    assert table.splitlines()[-1].startswith("Average")


def test_evaluate_errors():
    model = build_model(ModelSpec(num_known=3, width=8, embed_dim=16), seed=0)
    with pytest.raises(ValueError):
        evaluate(model, {})
    with pytest.raises(ValueError, match="C=3"):
        evaluate(model, _targets(), num_known=4)
    empty = LabeledImages(torch.zeros(0, 3, 16, 16), torch.zeros(0), [], [])
    with pytest.raises(ValueError, match="empty"):
        evaluate(model, {"e": empty})


def _source(n=12, c=3):
    g = torch.Generator().manual_seed(1)
    return LabeledImages(torch.randn(n, 3, 32, 32, generator=g), torch.arange(n) % c, ["s"] * n,
                         [str(i) for i in range(n)])


def test_diversity_zero_ssnet_is_degenerate():
    model = build_model(ModelSpec(num_known=3, width=8, embed_dim=16), seed=0)
    model.ssnet.zero_output_layer()
    rep = style_diversity_report(model, _source(), n_samples=8)
    assert rep["style_concat"] is None and rep["style_concat_degenerate"]
    assert rep["open_vs_closed"] is not None


def test_diversity_echo_ssnet_is_zero():
    from opendg.stylesynth import NoiseSpec

    model = build_model(ModelSpec(num_known=3, width=8, embed_dim=16), seed=0).double()
    c = model.ssnet.channels
    # echo network: output [mu1; sigma1] of the noiseless input
    model.ssnet.forward = lambda x: x[:, : 2 * c]
    src = _source()
    src = LabeledImages(src.images.double(), src.labels, src.domains, src.ids)
    rep = style_diversity_report(model, src, n_samples=8, noise=NoiseSpec(0.0, 0.0))
    assert rep["style_concat"] == pytest.approx(0.0, abs=1e-12)
