import math
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from opendg.losses import LossWeights, entropy, loss_ce, loss_disc, loss_total, open_closed_margin


def _p(rows):
    return torch.tensor(rows, dtype=torch.float64)


def test_ce_uniform_is_ln6():
    post = torch.full((4, 6), 1 / 6, dtype=torch.float64)
    assert abs(float(loss_ce(post, torch.tensor([0, 1, 2, 5]))) - math.log(6)) < 1e-9


def test_ce_one_hot_is_zero():
    post = torch.eye(3, dtype=torch.float64)
    assert float(loss_ce(post, torch.arange(3))) == 0.0


def test_ce_half_is_ln2():
    post = _p([[0.5, 0.25, 0.25]])
    assert float(loss_ce(post, torch.tensor([0]))) == pytest.approx(math.log(2), abs=1e-12)


def test_ce_matches_torch_cross_entropy():
    logits = torch.randn(7, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    y = torch.tensor([0, 1, 2, 3, 4, 0, 4])
    ours = loss_ce(torch.softmax(logits, 1), y)
    ref = torch.nn.functional.cross_entropy(logits, y)
    assert float(ours) == pytest.approx(float(ref), abs=1e-12)


def test_ce_errors_and_clamp_warning():
    with pytest.raises(ValueError):
        loss_ce(torch.zeros(0, 3), torch.zeros(0, dtype=torch.long))
    with pytest.raises(ValueError):
        loss_ce(_p([[0.5, 0.5]]), torch.tensor([2]))
    with pytest.warns(RuntimeWarning):
        v = loss_ce(_p([[1.0, 0.0]]), torch.tensor([1]))
    assert math.isfinite(float(v))


def test_disc_worked_example():
    open_post = _p([[0, 0, 0, 0, 0, 1]])
    closed = _p([[0.6, 0.1, 0.1, 0.05, 0.05, 0.1]])
    assert float(loss_disc(open_post, closed)) == pytest.approx(-0.5, abs=1e-12)


def test_disc_uniform_open_no_closed():
    open_post = torch.full((2, 6), 1 / 6, dtype=torch.float64)
    with pytest.warns(RuntimeWarning):
        v = loss_disc(open_post, torch.zeros(0, 6, dtype=torch.float64))
    assert float(v) == pytest.approx(math.log(6), abs=1e-12)


def test_disc_uniform_closed_margin_zero():
    closed = torch.full((1, 6), 1 / 6, dtype=torch.float64)
    assert float(open_closed_margin(closed)[0]) == 0.0


def test_disc_rejects_invalid_simplex():
    with pytest.raises(ValueError):
        loss_disc(_p([[0.5, 0.6]]), _p([[0.5, 0.5]]))
    with pytest.raises(ValueError):
        loss_disc(_p([[-0.5, 1.5]]), _p([[0.5, 0.5]]))


def test_entropy_nats():
    assert float(entropy(_p([[0.5, 0.5]]))[0]) == pytest.approx(math.log(2))
    assert float(entropy(_p([[1.0, 0.0]]))[0]) == 0.0


@pytest.mark.parametrize(
    "w,expected",
    [((1, 1, 1), 1.0), ((1, 0, 0), 1.0), ((0, 0, 0), 0.0), ((2, 1, 0), 1.5)],
)
def test_total(w, expected):
    assert loss_total(1.0, -0.5, 0.5, LossWeights(*w)) == expected


def test_weights_parse_and_validate():
    assert LossWeights.parse("1, 0,0") == LossWeights(1, 0, 0)
    for bad in ("1,2", "a,b,c"):
        with pytest.raises(ValueError):
            LossWeights.parse(bad)
    with pytest.raises(ValueError):
        LossWeights(-1, 0, 0)


def test_disc_fuzz_bounds():
    rng = np.random.default_rng(0)
    for _ in range(10_000 // 100):
        k = int(rng.integers(2, 12))
        logits = torch.as_tensor(rng.normal(size=(100, 2, k)) * rng.uniform(0.1, 20), dtype=torch.float64)
        p = torch.softmax(logits, -1)
        for i in range(100):
            v = float(loss_disc(p[i, :1], p[i, 1:]))
            assert -1 - 1e-12 <= v <= math.log(k) + 1e-12


@given(seed=st.integers(0, 10_000), k=st.integers(2, 10), n=st.integers(1, 6))
def test_property_ce_nonnegative(seed, k, n):
    g = torch.Generator().manual_seed(seed)
    p = torch.softmax(torch.randn(n, k, generator=g, dtype=torch.float64) * 5, 1)
    y = torch.randint(0, k, (n,), generator=g)
    assert float(loss_ce(p, y)) >= 0


@given(seed=st.integers(0, 10_000), k=st.integers(2, 10))
def test_property_margin_in_unit_interval(seed, k):
    g = torch.Generator().manual_seed(seed)
    p = torch.softmax(torch.randn(8, k, generator=g, dtype=torch.float64) * 10, 1)
    m = open_closed_margin(p)
    assert torch.all((m >= 0) & (m <= 1))
    e = entropy(p)
    assert torch.all((e >= -1e-12) & (e <= math.log(k) + 1e-12))
