"""Finite-difference gradient checker for the trainable blocks and the losses."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from opendg.backbone import ClassifierHead, posteriors
from opendg.featstats import compute_instance_stats, restyle
from opendg.losses import loss_ce, loss_disc
from opendg.openmix import FeatAggNet, aggregate_open
from opendg.stylesynth import NoiseSpec, StyleSynthNet, style_margin_loss, synthesize_style

COMPONENTS = ("ssnet", "fanet", "head", "losses")
DEFAULT_STEP = 1e-5
TOLERANCE = 1e-4
# denominators below this are treated as this; keeps exact zeros comparable
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    component: str
    step_size: float
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    n_sampled: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be > 0")

    @property
    def passed(self) -> bool:
        return not self.failures and all(e < self.tolerance for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = [f"{k}={v:.2e} (n={self.n_sampled[k]})" for k, v in self.max_rel_error.items()]
        line = f"{self.component:<7} {status}  " + "  ".join(parts)
        if self.failures:
            line += "\n  " + "\n  ".join(self.failures)
        return line


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), REL_FLOOR)


def check_tensors(
    loss_fn: Callable[[], torch.Tensor],
    tensors: dict[str, torch.Tensor],
    n_samples: int,
    step: float,
    rng: np.random.Generator,
    report: GradCheckReport,
    group: str,
) -> None:
    """Compare autograd with central differences on ``n_samples`` entries drawn across ``tensors``.

    Entries are perturbed in place and restored. The group's result goes into
    ``report`` under ``group``.
    """
    names = list(tensors)
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [tensors[k] for k in names], allow_unused=True)
    grads = {k: (g if g is not None else torch.zeros_like(tensors[k])) for k, g in zip(names, grads)}

    sizes = np.array([tensors[k].numel() for k in names])
    total = int(sizes.sum())
    flat_ids = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for fid in np.sort(flat_ids):
        ti = int(np.searchsorted(offsets, fid, side="right") - 1)
        name = names[ti]
        idx = int(fid - offsets[ti])
        flat = tensors[name].data.view(-1)
        a = float(grads[name].reshape(-1)[idx])
        where = f"{group}:{name}[{idx}]"
        if not math.isfinite(a):
            report.failures.append(f"{where}: non-finite analytic gradient {a}")
            continue
        orig = float(flat[idx])
        with torch.no_grad():
            flat[idx] = orig + step
            up = float(loss_fn())
            flat[idx] = orig - step
            down = float(loss_fn())
            flat[idx] = orig
        n = (up - down) / (2 * step)
        if not math.isfinite(n):
            report.failures.append(f"{where}: non-finite finite difference {n}")
            continue
        err = relative_error(a, n)
        worst = max(worst, err)
        if err >= report.tolerance:
            report.failures.append(f"{where}: analytic {a:.6e} vs numeric {n:.6e} (rel {err:.2e})")
    report.max_rel_error[group] = worst
    report.n_sampled[group] = len(flat_ids)


def _params(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: p for k, p in module.named_parameters()}


def _separated_logits(n: int, k: int, gen: torch.Generator, gap: float = 1e-3) -> torch.Tensor:
    """Random logits whose open-vs-top margin and top-two closed gap avoid the kinks of ``|.|`` and ``max``."""
    out = torch.empty(n, k, dtype=torch.float64)
    filled = 0
    while filled < n:
        z = torch.randn(4 * n, k, generator=gen, dtype=torch.float64) * 2
        p = posteriors(z)
        closed = p[:, :-1].sort(dim=1, descending=True).values
        ok = ((p[:, -1] - closed[:, 0]).abs() > gap) & ((closed[:, 0] - closed[:, 1]) > gap)
        z = z[ok][: n - filled]
        out[filled: filled + len(z)] = z
        filled += len(z)
    return out


def grad_check(
    component: str,
    batch: int = 8,
    step_size: float = DEFAULT_STEP,
    n_samples: int = 64,
    seed: int = 0,
    channels: int = 16,
    embed_dim: int = 32,
    num_known: int = 6,
    tolerance: float = TOLERANCE,
) -> GradCheckReport:
    """Run the check for one component in double precision with batch-norm frozen."""
    if component not in COMPONENTS:
        raise ValueError(f"component must be one of {COMPONENTS}, got {component!r}")
    if batch < 2:
        raise ValueError("batch must be >= 2")
    report = GradCheckReport(component, step_size, tolerance)
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed)
    rng = np.random.default_rng(seed)
    dd = torch.float64

    if component == "ssnet":
        net = StyleSynthNet(channels).to(dd).eval()
        f1 = torch.randn(batch, channels, 6, 6, generator=gen, dtype=dd) * 2 + 1
        f2 = torch.randn(batch, channels, 6, 6, generator=gen, dtype=dd) * 2 - 1
        s1, s2 = compute_instance_stats(f1), compute_instance_stats(f2)
        w = torch.randn(f1.shape, generator=gen, dtype=dd)

        def loss_fn():
            # fixed noise draw so every evaluation sees the same perturbation
            new = synthesize_style(net, s1, s2, NoiseSpec(), seed)
            styled = restyle(f1, s1, new, 1e-5)
            return style_margin_loss(new, s1, s2) + (styled * w).mean()

        check_tensors(loss_fn, _params(net), n_samples, step_size, rng, report, "ssnet")

    elif component == "fanet":
        net = FeatAggNet(embed_dim).to(dd)
        net.bn.running_mean.normal_(0, 0.1, generator=gen)
        net.bn.running_var.uniform_(0.5, 1.5, generator=gen)
        net.eval()
        e1 = torch.randn(batch, embed_dim, generator=gen, dtype=dd)
        e3 = torch.randn(batch, embed_dim, generator=gen, dtype=dd)
        w = torch.randn(batch, embed_dim, generator=gen, dtype=dd)

        def loss_fn():
            mixed, _ = aggregate_open(net, e1, e3, train_mode=False)
            return (mixed * w).mean()

        check_tensors(loss_fn, _params(net), n_samples, step_size, rng, report, "fanet")

    elif component == "head":
        head = ClassifierHead(embed_dim, num_known).to(dd)
        emb = torch.randn(batch, embed_dim, generator=gen, dtype=dd)
        y = torch.randint(0, num_known + 1, (batch,), generator=gen)

        def loss_fn():
            return loss_ce(posteriors(head(emb)), y)

        check_tensors(loss_fn, _params(head), n_samples, step_size, rng, report, "head")

    else:
        k = num_known + 1
        z_open = _separated_logits(batch, k, gen).requires_grad_(True)
        z_closed = _separated_logits(batch, k, gen).requires_grad_(True)

        def loss_fn():
            return loss_disc(posteriors(z_open), posteriors(z_closed))

        check_tensors(loss_fn, {"open_logits": z_open, "closed_logits": z_closed},
                      n_samples, step_size, rng, report, "loss_disc")
        y = torch.randint(0, k, (batch,), generator=gen)
        z = torch.randn(batch, k, generator=gen, dtype=dd).requires_grad_(True)
        check_tensors(lambda: loss_ce(posteriors(z), y), {"logits": z},
                      n_samples, step_size, rng, report, "loss_ce")
    return report


def grad_check_all(**kwargs) -> list[GradCheckReport]:
    return [grad_check(c, **kwargs) for c in COMPONENTS]
