"""Training objective: C+1 cross-entropy, the discriminability term and the weighted total.

Posteriors are ``(N, C+1)`` probability rows; labels are 0-based indices with
``C`` standing for the open class.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import torch

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w_ce: float = 1.0
    w_disc: float = 1.0
    w_sm: float = 1.0

    def __post_init__(self):
        for name in ("w_ce", "w_disc", "w_sm"):
            v = float(getattr(self, name))
            if not (v >= 0 and v != float("inf")):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """``"1,0,0"`` -> ``LossWeights(1, 0, 0)``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated weights, got {text!r}")
        return cls(*(float(p) for p in parts))


def check_simplex(p: torch.Tensor, what: str = "posteriors") -> None:
    if p.dim() != 2:
        raise ValueError(f"{what} must be (N, K), got {tuple(p.shape)}")
    if p.shape[0] == 0:
        return
    tol = 1e-6 if p.dtype == torch.float64 else 1e-4
    with torch.no_grad():
        if not torch.isfinite(p).all():
            raise ValueError(f"{what} contain non-finite values")
        if (p < -tol).any() or (p > 1 + tol).any():
            raise ValueError(f"{what} must lie in [0, 1]")
        if ((p.sum(dim=1) - 1).abs() > tol).any():
            raise ValueError(f"{what} rows must sum to 1")


def loss_ce(post: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log posterior at the true (augmented) label."""
    if post.shape[0] == 0:
        raise ValueError("cross-entropy needs a nonempty batch")
    labels = torch.as_tensor(labels, dtype=torch.long, device=post.device)
    if labels.shape != (post.shape[0],):
        raise ValueError(f"labels shape {tuple(labels.shape)} does not match batch {post.shape[0]}")
    if (labels < 0).any() or (labels >= post.shape[1]).any():
        raise ValueError("label index out of range")
    picked = post.gather(1, labels[:, None]).squeeze(1)
    if bool((picked < PROB_FLOOR).any()):
        warnings.warn(f"posterior below {PROB_FLOOR} at the true label; clamped", RuntimeWarning, stacklevel=2)
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def entropy(post: torch.Tensor) -> torch.Tensor:
    """Row-wise Shannon entropy in nats (``0 log 0 = 0``)."""
    return -torch.special.xlogy(post, post).sum(dim=1)


def open_closed_margin(post: torch.Tensor) -> torch.Tensor:
    """``|p_open - p_top|`` per row; ``p_top`` is the largest closed-class probability.

    Ties in ``p_top`` resolve to the first maximal index, which is where the
    subgradient flows.
    """
    closed = post[:, :-1]
    top = closed.gather(1, closed.argmax(dim=1, keepdim=True)).squeeze(1)
    return (post[:, -1] - top).abs()


def loss_disc(open_post: torch.Tensor, closed_post: torch.Tensor) -> torch.Tensor:
    """Open-sample entropy minus closed-sample open/top margin, both batch means."""
    check_simplex(open_post, "open posteriors")
    check_simplex(closed_post, "closed posteriors")
    ref = open_post if open_post.shape[0] else closed_post
    zero = ref.new_zeros(())
    if open_post.shape[0] == 0:
        warnings.warn("no open samples; entropy term is 0", RuntimeWarning, stacklevel=2)
        term1 = zero
    else:
        term1 = entropy(open_post).mean()
    if closed_post.shape[0] == 0:
        warnings.warn("no closed samples; margin term is 0", RuntimeWarning, stacklevel=2)
        term2 = zero
    else:
        if closed_post.shape[1] < 2:
            raise ValueError("margin term needs at least one closed class and the open class")
        term2 = open_closed_margin(closed_post).mean()
    return term1 - term2


def loss_total(ce, disc, sm, w: LossWeights = LossWeights()):
    return w.w_ce * ce + w.w_disc * disc + w.w_sm * sm
