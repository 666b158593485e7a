"""Per-channel feature statistics, AdaIN and its probabilistic variant."""

from __future__ import annotations

from typing import NamedTuple

import torch

EPS_STAT = 1e-5


class ChannelStats(NamedTuple):
    mean: torch.Tensor  # (B, C)
    std: torch.Tensor  # (B, C)


def channel_stats(f: torch.Tensor, eps: float = EPS_STAT) -> ChannelStats:
    """Spatial mean and population std of every channel of a (B, C, H, W) tensor."""
    if f.dim() != 4:
        raise ValueError(f"expected a (B, C, H, W) tensor, got shape {tuple(f.shape)}")
    if f.shape[2] * f.shape[3] < 1:
        raise ValueError("empty spatial extent")
    flat = f.flatten(2)
    mean = flat.mean(dim=2)
    var = flat.var(dim=2, unbiased=False)
    return ChannelStats(mean, torch.sqrt(var + eps))


def _per_channel(v, x: torch.Tensor, name: str) -> torch.Tensor:
    v = torch.as_tensor(v, dtype=x.dtype, device=x.device)
    if v.dim() == 0:
        v = v.expand(x.shape[1])
    if v.shape[-1] != x.shape[1]:
        raise ValueError(f"{name} has {v.shape[-1]} channels, features have {x.shape[1]}")
    if v.dim() == 1:
        return v.view(1, -1, 1, 1)
    if v.dim() == 2:
        return v.view(v.shape[0], -1, 1, 1)
    raise ValueError(f"{name} must be (C,) or (B, C)")


def padain(x: torch.Tensor, a, b) -> torch.Tensor:
    """Renormalize ``x`` per channel to mean ``a`` and std ``b``.

    ``a`` and ``b`` are per-channel vectors of shape (C,) or (B, C). ``b`` is
    used as given, so a negative value flips the channel's contrast.
    """
    mean, std = channel_stats(x)
    a = _per_channel(a, x, "a")
    b = _per_channel(b, x, "b")
    normalized = (x - mean[:, :, None, None]) / std[:, :, None, None]
    return b * normalized + a


def adain(content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
    """Classic AdaIN: transfer the style tensor's channel statistics onto content."""
    s_mean, s_std = channel_stats(style)
    return padain(content, s_mean, s_std)
