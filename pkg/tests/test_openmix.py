import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from opendg.openmix import (
    ADHOC_BASELINES,
    FeatAggNet,
    aggregate_open,
    baseline_half_crop,
    baseline_patch_replace,
    baseline_pixel_mean,
    mix_embeddings,
)


def _emb(n, d, seed):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(n, d, generator=g, dtype=torch.float64) * 3


def test_fanet_layout():
    net = FeatAggNet(8)
    assert net.fc1.in_features == 16 and net.fc1.out_features == 8
    assert net.fc2.in_features == 8 and net.fc2.out_features == 8
    assert isinstance(net.bn, torch.nn.BatchNorm1d)


def test_aggregate_shapes_and_alpha_range():
    net = FeatAggNet(6).double()
    mixed, alpha = aggregate_open(net, _emb(5, 6, 0), _emb(5, 6, 1), train_mode=True)
    assert mixed.shape == (5, 6) and alpha.shape == (5, 6)
    assert torch.all(alpha > 0) and torch.all(alpha < 1)


def test_mix_endpoints():
    e1, e3 = _emb(2, 3, 0), _emb(2, 3, 1)
    assert torch.equal(mix_embeddings(e1, e3, torch.ones(2, 3, dtype=torch.float64)), e1)
    assert torch.equal(mix_embeddings(e1, e3, torch.zeros(2, 3, dtype=torch.float64)), e3)


def test_saturated_alpha_stays_open_interval():
    net = FeatAggNet(4).double()
    with torch.no_grad():
        net.fc2.bias.fill_(1e4)
    _, alpha = aggregate_open(net, _emb(3, 4, 0), _emb(3, 4, 1), train_mode=False)
    assert torch.all(alpha < 1)


def test_aggregate_shape_errors():
    net = FeatAggNet(4)
    with pytest.raises(ValueError):
        aggregate_open(net, torch.zeros(2, 4), torch.zeros(3, 4))
    with pytest.raises(ValueError):
        aggregate_open(net, torch.zeros(2, 5), torch.zeros(2, 5))


def test_half_crop():
    a = torch.zeros(3, 4, 6)
    b = torch.ones(3, 4, 6)
    out = baseline_half_crop(a, b)
    assert torch.all(out[..., :3] == 0) and torch.all(out[..., 3:] == 1)


def test_pixel_mean():
    a = torch.zeros(2, 3, 4, 4)
    b = torch.full((2, 3, 4, 4), 2.0)
    assert torch.all(baseline_pixel_mean(a, b) == 1.0)


def test_patch_replace_copies_one_window():
    a = torch.zeros(2, 3, 40, 40)
    b = torch.ones(2, 3, 40, 40)
    out = baseline_patch_replace(a, b, rng=0)
    for i in range(2):
        assert int(out[i, 0].sum()) == 30 * 30
    assert torch.all(a == 0)  # input untouched


def test_patch_replace_small_patch_unbatched():
    out = baseline_patch_replace(torch.zeros(3, 8, 8), torch.ones(3, 8, 8), patch=4, rng=1)
    assert int(out[0].sum()) == 16


def test_patch_too_large():
    with pytest.raises(ValueError):
        baseline_patch_replace(torch.zeros(3, 8, 8), torch.ones(3, 8, 8))


def test_baseline_shape_mismatch():
    for fn in (baseline_half_crop, baseline_pixel_mean):
        with pytest.raises(ValueError):
            fn(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


def test_registry():
    assert set(ADHOC_BASELINES) == {"half_crop", "pixel_mean", "patch_replace"}


@given(seed=st.integers(0, 100_000), scale=st.floats(0.01, 1000), train=st.booleans())
def test_property_output_bracketed(seed, scale, train):
    torch.manual_seed(seed)
    net = FeatAggNet(5).double()
    e1, e3 = _emb(4, 5, seed) * scale, _emb(4, 5, seed + 1) * scale
    mixed, alpha = aggregate_open(net, e1, e3, train_mode=train)
    assert torch.all((alpha > 0) & (alpha < 1))
    lo, hi = torch.minimum(e1, e3), torch.maximum(e1, e3)
    tol = 1e-12 * scale
    assert torch.all(mixed >= lo - tol) and torch.all(mixed <= hi + tol)
