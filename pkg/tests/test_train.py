import json

import numpy as np
import pytest
import torch

from opendg.data import LabeledImages
from opendg.losses import LossWeights
from opendg.model import ModelSpec, build_model, load_checkpoint, save_checkpoint, state_fingerprint
from opendg.train import LOSS_COMPONENTS, NonFiniteLossError, TrainConfig, train, train_accuracy, training_step


def _blobs(n_per_class=16, size=16, seed=0):
    # class 0 dark, class 1 bright: linearly separable in mean intensity
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(-1.0, 0.2, (n_per_class, 3, size, size)),
                        rng.normal(1.0, 0.2, (n_per_class, 3, size, size))])
    y = np.repeat([0, 1], n_per_class)
    return LabeledImages(torch.tensor(x, dtype=torch.float32), torch.tensor(y),
                         ["blobs"] * len(y), [str(i) for i in range(len(y))])


def _model(num_known=2, seed=0, **kw):
    return build_model(ModelSpec(num_known=num_known, width=8, embed_dim=16, **kw), seed=seed)


def test_separable_blobs_reach_full_accuracy_in_30_steps():
    ds = _blobs()
    cfg = TrainConfig.erm(learning_rate=0.01, epochs=15, batch_size=16)
    res = train(_model(), ds, cfg)
    assert res.steps == 30
    assert res.train_accuracy == 100.0


def test_history_length_is_steps_times_components(tmp_path):
    ds = _blobs(8)
    cfg = TrainConfig(learning_rate=0.01, epochs=2, batch_size=8)
    res = train(_model(), ds, cfg, tmp_path)
    assert len(res.history) == res.steps * len(LOSS_COMPONENTS) == 4 * 3
    lines = (tmp_path / "loss_log.jsonl").read_text().splitlines()
    assert [json.loads(l) for l in lines] == res.history
    assert (tmp_path / "checkpoint.pt").exists()
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["epoch_000.pt", "epoch_001.pt"]


def test_erm_config_reduces_to_plain_cross_entropy():
    ds = _blobs(4)
    model = _model()
    cfg = TrainConfig.erm()
    gen = torch.Generator().manual_seed(0)
    x, y = ds.images[:6], ds.labels[:6]
    out = training_step(model, x, x, x, y, cfg, gen, np.random.default_rng(0))
    ref = torch.nn.functional.cross_entropy(model(x), y)
    assert out.groups == {"clean": 6, "styled": 0, "open": 0}
    assert float(out.components["disc"].detach()) == 0.0 and float(out.components["sm"].detach()) == 0.0
    assert float(out.total.detach()) == pytest.approx(float(ref.detach()), abs=1e-6)


@pytest.mark.parametrize("open_mode", ["fab", "half_crop", "pixel_mean", "patch_replace"])
@pytest.mark.parametrize("style_mode", ["ssb", "mixstyle"])
def test_training_step_groups(open_mode, style_mode):
    model = _model()
    ds = _blobs(4, size=32)
    cfg = TrainConfig(open_mode=open_mode, style_mode=style_mode)
    x = ds.images
    out = training_step(model, x, x.flip(0), x.flip(0), ds.labels, cfg, torch.Generator().manual_seed(0),
                        np.random.default_rng(0))
    assert out.groups == {"clean": 8, "styled": 8, "open": 8}
    assert torch.isfinite(out.total)
    out.total.backward()


def test_closed_set_mode_has_no_disc():
    model = _model(open_set=False)
    ds = _blobs(4)
    out = training_step(model, ds.images, ds.images, ds.images.flip(0), ds.labels, TrainConfig(),
                        torch.Generator(), np.random.default_rng(0))
    assert out.groups["open"] == 0
    assert float(out.components["disc"]) == 0.0


def test_deterministic_under_seed():
    ds = _blobs(6)
    cfg = TrainConfig(learning_rate=0.01, epochs=2, batch_size=6, seed=3, dtype="float64")
    a, b = _model(seed=1), _model(seed=1)
    ra, rb = train(a, ds, cfg), train(b, ds, cfg)
    assert ra.history == rb.history
    fa, fb = state_fingerprint(a), state_fingerprint(b)
    assert all(torch.equal(fa[k], fb[k]) for k in fa)


def test_disc_schedule():
    cfg = TrainConfig(disc_delay_epochs=2, disc_warmup_epochs=2)
    assert cfg.weights_at(0, 10).w_disc == 0.0
    assert cfg.weights_at(19, 10).w_disc == 0.0
    assert cfg.weights_at(30, 10).w_disc == pytest.approx(0.5)
    assert cfg.weights_at(100, 10).w_disc == 1.0
    assert cfg.weights_at(0, 10).w_ce == 1.0
    assert TrainConfig().weights_at(0, 10) == LossWeights()


def test_config_validation():
    for kw in ({"learning_rate": 0}, {"momentum": 1.0}, {"epochs": 0}, {"style_mode": "x"},
               {"open_mode": "x"}, {"dtype": "float16"}, {"disc_warmup_epochs": -1}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_labels_out_of_range():
    ds = _blobs(2)
    with pytest.raises(ValueError):
        train(_model(num_known=1), ds, TrainConfig(epochs=1))


def test_nonfinite_loss_aborts_with_diagnostics(tmp_path):
    ds = _blobs(4)
    model = _model()
    with torch.no_grad():
        model.head.fc.weight.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as info:
        train(model, ds, TrainConfig.erm(epochs=1, batch_size=8), tmp_path)
    assert "parameters" in info.value.diagnostics
    assert (tmp_path / "nonfinite_diagnostic.json").exists()


def test_checkpoint_roundtrip(tmp_path):
    model = _model(norm="group")
    path = save_checkpoint(model, tmp_path / "c.pt", {"track": "synthetic"})
    loaded, manifest = load_checkpoint(path)
    assert manifest["track"] == "synthetic" and manifest["model"]["norm"] == "group"
    a, b = state_fingerprint(model), state_fingerprint(loaded)
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.pt")
    torch.save({"manifest": {"format": "other"}}, tmp_path / "x.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.pt")


def test_train_accuracy_untrained_is_bounded():
    ds = _blobs(4)
    acc = train_accuracy(_model(), ds)
    assert 0.0 <= acc <= 100.0
