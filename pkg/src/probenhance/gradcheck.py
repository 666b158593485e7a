"""Central finite-difference checks of autograd gradients on selected parameter entries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from probenhance.losses import LossWeights, RandomConvFeatures, total_loss
from probenhance.network import NetworkConfig, build_model


@dataclass
class GradCheckEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric), 1e-6)
        return abs(self.analytic - self.numeric) / denom


def pick_entries(model: torch.nn.Module, count: int, rng: np.random.Generator,
                 must_include=("posterior_head", "prior_head", "broadcast_a", "broadcast_b")):
    """Random parameter entries; one from each ``must_include`` group comes first."""
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    picks = []
    for prefix in must_include:
        group = [(n, p) for n, p in named if n.startswith(prefix)]
        if group:
            picks.append(group[int(rng.integers(len(group)))])
    while len(picks) < count:
        picks.append(named[int(rng.integers(len(named)))])
    out = []
    for name, p in picks[:count]:
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        out.append((name, p, idx))
    return out


def check_gradients(loss_fn, model: torch.nn.Module, count: int = 20, seed: int = 0,
                    eps: float = 1e-6) -> list[GradCheckEntry]:
    """Compare d loss_fn() / d theta against central differences for ``count`` entries."""
    rng = np.random.default_rng(seed)
    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    entries = []
    for name, p, idx in pick_entries(model, count, rng):
        analytic = float(p.grad[idx]) if p.grad is not None else 0.0
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + eps
            up = float(loss_fn())
            p[idx] = orig - eps
            down = float(loss_fn())
            p[idx] = orig
        entries.append(GradCheckEntry(name, idx, analytic, (up - down) / (2 * eps)))
    return entries


def reduced_model_check(count: int = 20, seed: int = 0, size: int = 16):
    """Gradient check of the full objective on a small double-precision model."""
    cfg = NetworkConfig(base_channels=8, latent_dim=4)
    model = build_model(cfg, seed=seed).double()
    extractor = RandomConvFeatures(seed=seed).double()
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(2, 3, size, size, generator=g, dtype=torch.float64)
    y = torch.rand(2, 3, size, size, generator=g, dtype=torch.float64)
    na = torch.randn(2, cfg.latent_dim, generator=g, dtype=torch.float64)
    nb = torch.randn(2, cfg.latent_dim, generator=g, dtype=torch.float64)

    def loss_fn():
        pred, prior, posterior = model.forward_train(x, y, na, nb)
        return total_loss(pred, y, prior, posterior, LossWeights(), extractor)[0]

    return check_gradients(loss_fn, model, count, seed)
