import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from opendg.featstats import StyleStats
from opendg.stylesynth import (
    MixStyleConfig,
    NoiseSpec,
    StyleBand,
    StyleSynthNet,
    mixstyle_baseline,
    style_margin_loss,
    style_margin_terms,
    synthesize_style,
)


def _stats(n, c, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return StyleStats(torch.randn(n, c, generator=g, dtype=dtype), torch.rand(n, c, generator=g, dtype=dtype))


def _at_distance(d):
    # one instance, one channel: new mean is d away from both inputs' means, stds in band
    base = StyleStats(torch.zeros(1, 1, dtype=torch.float64), torch.ones(1, 1, dtype=torch.float64))
    new = StyleStats(torch.full((1, 1), d, dtype=torch.float64), torch.full((1, 1), 2.0, dtype=torch.float64))
    return new, base


def test_net_widths():
    net = StyleSynthNet(5)
    assert net.fc1.in_features == 20 and net.fc1.out_features == 15
    assert net.fc2.out_features == 10


def test_synthesize_shapes_and_nonneg_std():
    net = StyleSynthNet(4).double()
    s1, s2 = _stats(6, 4, 1), _stats(6, 4, 2)
    new = synthesize_style(net, s1, s2, rng=0)
    assert new.mean.shape == (6, 4) and new.std.shape == (6, 4)
    assert torch.all(new.std >= 0)


def test_synthesize_deterministic_for_seed():
    net = StyleSynthNet(3).double()
    s1, s2 = _stats(4, 3, 1), _stats(4, 3, 2)
    a = synthesize_style(net, s1, s2, rng=5)
    b = synthesize_style(net, s1, s2, rng=5)
    assert torch.equal(a.mean, b.mean) and torch.equal(a.std, b.std)


def test_zero_noise_is_deterministic_without_rng():
    net = StyleSynthNet(3).double()
    s1, s2 = _stats(4, 3, 1), _stats(4, 3, 2)
    a = synthesize_style(net, s1, s2, NoiseSpec(0.0, 0.0))
    b = synthesize_style(net, s1, s2, NoiseSpec(0.0, 0.0))
    assert torch.equal(a.concat(), b.concat())


def test_noise_perturbs_each_input():
    net = StyleSynthNet(3).double()
    seen = []
    net.forward = lambda x: (seen.append(x.clone()), torch.zeros(x.shape[0], 6, dtype=x.dtype))[1]
    s = _stats(2, 3, 0)
    synthesize_style(net, s, s, NoiseSpec(0.0, 1.0), rng=0)
    x = seen[0]
    # identical inputs, but each of the four slots got its own noise draw
    assert not torch.allclose(x[:, 0:3], x[:, 6:9])


def test_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        synthesize_style(StyleSynthNet(4), _stats(2, 3), _stats(2, 3))


def test_zero_output_layer():
    net = StyleSynthNet(3).double()
    net.zero_output_layer()
    new = synthesize_style(net, _stats(2, 3), _stats(2, 3), rng=0)
    assert torch.all(new.concat() == 0)


@pytest.mark.parametrize("d,expected", [(2.0, 0.0), (1.0, 0.5), (4.0, 0.5)])
def test_margin_hand_cases(d, expected):
    new, base = _at_distance(d)
    band = StyleBand(1.5, 3.5)
    terms = style_margin_terms(new, base, base, band, StyleBand(0.1, 2.0))
    assert float(terms["hinge_mu1"]) == expected
    assert float(terms["hinge_sigma1"]) == 0.0
    # both inputs are identical, so the mean-band hinge is counted twice
    assert float(style_margin_loss(new, base, base, band, StyleBand(0.1, 2.0))) == 2 * expected


def test_margin_zero_inside_bands():
    new, base = _at_distance(2.5)
    assert float(style_margin_loss(new, base, base)) == 0.0


def test_margin_rejects_non_band():
    new, base = _at_distance(2.0)
    with pytest.raises(TypeError):
        style_margin_loss(new, base, base, (1.5, 3.5), StyleBand(0.1, 2.0))


@pytest.mark.parametrize("a,b", [(-1, 2), (3, 3), (4, 2)])
def test_band_validation(a, b):
    with pytest.raises(ValueError):
        StyleBand(a, b)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(0.0, -1.0)


def test_mixstyle_endpoints():
    s1, s2 = _stats(3, 2, 1), _stats(3, 2, 2)
    m1 = mixstyle_baseline(s1, s2, lam=1.0)
    m0 = mixstyle_baseline(s1, s2, lam=0.0)
    assert torch.allclose(m1.concat(), s1.concat())
    assert torch.allclose(m0.concat(), s2.concat())


def test_mixstyle_beta_param():
    with pytest.raises(ValueError):
        MixStyleConfig(0.0)


@given(seed=st.integers(0, 10_000))
def test_property_mixstyle_is_convex(seed):
    s1, s2 = _stats(5, 3, seed), _stats(5, 3, seed + 1)
    m = mixstyle_baseline(s1, s2, rng=seed)
    lo = torch.minimum(s1.concat(), s2.concat()) - 1e-12
    hi = torch.maximum(s1.concat(), s2.concat()) + 1e-12
    assert torch.all(m.concat() >= lo) and torch.all(m.concat() <= hi)


@given(d=st.floats(0, 10), a=st.floats(0, 4), width=st.floats(0.01, 4))
def test_property_hinge_matches_closed_form(d, a, width):
    b = a + width
    new, base = _at_distance(d)
    t = style_margin_terms(new, base, base, StyleBand(a, b), StyleBand(0.1, 2.0))
    expected = max(a - d, 0.0) + max(d - b, 0.0)
    assert math.isclose(float(t["hinge_mu1"]), expected, abs_tol=1e-12)


@given(seed=st.integers(0, 10_000), mean=st.floats(-3, 3), std=st.floats(0, 3))
def test_property_synthesized_std_nonnegative(seed, mean, std):
    torch.manual_seed(seed)
    net = StyleSynthNet(4).double()
    new = synthesize_style(net, _stats(3, 4, seed), _stats(3, 4, seed + 7), NoiseSpec(mean, std), rng=seed)
    assert torch.all(new.std >= 0)
