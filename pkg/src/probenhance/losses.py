"""Training objective: pixel MSE, feature-space (perceptual) MSE and the KL terms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from probenhance.distributions import kl_divergence
from probenhance.network import EnhancementDistribution

FeatureExtractor = Callable[[torch.Tensor], Sequence[torch.Tensor]]


class LossError(RuntimeError):
    pass


class ExtractorUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    perceptual: float = 1.0  # lambda
    kl: float = 1.0  # beta

    def __post_init__(self):
        for name in ("perceptual", "kl"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


def mse_loss(pred: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(ref.shape)}")
    return torch.mean((pred - ref) ** 2)


class RandomConvFeatures(nn.Module):
    """Frozen, seeded three-stage conv stack used as the default perceptual feature map."""

    def __init__(self, channels=(16, 32, 64), seed: int = 0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            stages = []
            in_ch = 3
            for i, ch in enumerate(channels):
                stride = 1 if i == 0 else 2
                stages.append(nn.Conv2d(in_ch, ch, 3, stride=stride, padding=1))
                in_ch = ch
        self.stages = nn.ModuleList(stages)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        feats = []
        h = x
        for conv in self.stages:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        return feats


class PretrainedFeatures(nn.Module):
    """Wrap a pretrained classifier trunk, tapping the named layer indices.

    ``trunk`` is an ``nn.Sequential`` such as ``torchvision.models.vgg16().features``.
    Inputs in [0, 1] are normalized with ImageNet statistics first.
    """

    def __init__(self, trunk: nn.Sequential, taps: Sequence[int] = (3, 8, 15)):
        super().__init__()
        self.trunk = trunk[: max(taps) + 1]
        self.taps = set(taps)
        self.register_buffer("shift", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("scale", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        h = (x - self.shift.to(x.dtype)) / self.scale.to(x.dtype)
        feats = []
        for i, layer in enumerate(self.trunk):
            h = layer(h)
            if i in self.taps:
                feats.append(h)
        return feats


def vgg16_extractor(weights_path: str | Path | None, taps: Sequence[int] = (3, 8, 15)):
    """Build a VGG16 feature extractor from a local state-dict file."""
    if weights_path is None or not Path(weights_path).is_file():
        raise ExtractorUnavailable(
            f"VGG16 weights not found at {weights_path!r}; "
            "use perceptual_extractor='random' for the built-in frozen feature map"
        )
    try:
        from torchvision.models import vgg16
    except ImportError as err:  # pragma: no cover - torchvision is optional
        raise ExtractorUnavailable(
            "torchvision is required for the VGG16 extractor; "
            "use perceptual_extractor='random' instead"
        ) from err
    net = vgg16(weights=None)
    net.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
    return PretrainedFeatures(net.features, taps)


def perceptual_loss(pred: torch.Tensor, ref: torch.Tensor, extractor: FeatureExtractor | None):
    """Feature-space MSE summed over the extractor's stages."""
    if extractor is None:
        raise ExtractorUnavailable(
            "no perceptual feature extractor supplied; pass RandomConvFeatures() "
            "or set the perceptual weight to 0"
        )
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(ref.shape)}")
    fp = extractor(pred)
    fr = extractor(ref)
    total = pred.new_zeros(())
    for a, b in zip(fp, fr):
        total = total + torch.mean((a - b) ** 2)
    return total


def combine(l_mse, l_perc, l_m, l_s, weights: LossWeights):
    """Weighted sum ``L_e + beta (L_m + L_s)`` with ``L_e = L_mse + lambda L_perc``."""
    l_e = l_mse + weights.perceptual * l_perc
    return l_e + weights.kl * (l_m + l_s), l_e


def total_loss(pred, ref, prior: EnhancementDistribution, posterior: EnhancementDistribution,
               weights: LossWeights = LossWeights(), extractor: FeatureExtractor | None = None):
    """Full objective. Returns ``(L, parts)``; parts hold detached floats.

    KL terms are taken as KL(prior || posterior), summed over the latent axis and
    averaged over the batch.
    """
    l_mse = mse_loss(pred, ref)
    if weights.perceptual > 0:
        l_perc = perceptual_loss(pred, ref, extractor)
    else:
        l_perc = pred.new_zeros(())
    l_m = kl_divergence(prior.mean_stat, posterior.mean_stat).mean()
    l_s = kl_divergence(prior.std_stat, posterior.std_stat).mean()
    total, l_e = combine(l_mse, l_perc, l_m, l_s, weights)
    # components first so a NaN is attributed to its source rather than the total
    parts = {
        "L_mse": l_mse,
        "L_perc": l_perc,
        "L_m": l_m,
        "L_s": l_s,
        "L_e": l_e,
        "L": total,
    }
    values = {name: float(v.detach()) for name, v in parts.items()}
    for name, v in values.items():
        if not math.isfinite(v):
            dump = ", ".join(f"{k}={x:.6g}" for k, x in values.items())
            raise LossError(f"non-finite loss part {name} = {v} ({dump})")
    return total, values
