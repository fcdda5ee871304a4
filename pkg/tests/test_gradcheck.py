import json

import pytest
import torch

from opendg.gradcheck import COMPONENTS, GradCheckReport, check_tensors, grad_check, relative_error


@pytest.mark.parametrize("component", COMPONENTS)
def test_components_pass(component):
    rep = grad_check(component, n_samples=50)
    assert rep.passed, rep.summary()
    assert all(n >= 50 for n in rep.n_sampled.values())
    assert json.loads(rep.to_json())["passed"] is True


def test_unknown_component():
    with pytest.raises(ValueError):
        grad_check("decoder")


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == 0.5


def test_detects_wrong_gradient():
    import numpy as np

    w = torch.randn(10, dtype=torch.float64, requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.ones(10, dtype=torch.float64)

    rep = GradCheckReport("custom", 1e-5, 1e-4)
    check_tensors(lambda: Wrong.apply(w), {"w": w}, 10, 1e-5, np.random.default_rng(0), rep, "w")
    assert not rep.passed and rep.failures
